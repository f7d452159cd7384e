//! Online Gaussian latent Dirichlet allocation for mining behaviour
//! patterns from utility usage data, together with the data pipeline
//! around it: stream synchronization and alignment, electrical feature
//! extraction, training by stochastic variational inference, held-out
//! perplexity, pattern-regularity matrices, and energy mapping.

pub mod align;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod svi;
pub mod synth;
pub mod time;

pub use align::{AlignedFrame, TimedSeries};
pub use error::{Error, Result};
pub use eval::{EnergyMap, PatternMatrix};
pub use features::{BandSpec, FeatureVector, RawSample, RawWindow};
pub use model::{
    GlobalState, LearningSchedule, LocalState, ModelConfig, NiwNatural, NiwPosterior,
    PatternWindow,
};
pub use synth::SyntheticCorpus;
pub use time::Timestamp;
