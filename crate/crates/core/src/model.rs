//! Model state and hyper-parameter types shared across the crate.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::Timestamp;

/// Symmetry tolerance for prior scale matrices.
const SYMMETRY_TOL: f64 = 1e-12;

/// Hyper-parameters of the mixture model: component count, feature
/// dimension, the Dirichlet concentration over component proportions, the
/// Normal-Inverse-Wishart prior on each Gaussian component, and the corpus
/// size used to scale minibatch statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of Gaussian components K.
    pub k: usize,
    /// Feature dimension F.
    pub f: usize,
    /// Symmetric Dirichlet concentration over proportions, > 0.
    pub alpha: f64,
    /// Prior mean m (length F).
    pub prior_m: DVector<f64>,
    /// Prior scale matrix omega (F x F, symmetric positive-definite).
    pub prior_omega: DMatrix<f64>,
    /// Prior mean-precision scale s > 0.
    pub prior_s: f64,
    /// Prior degrees of freedom v > F - 1.
    pub prior_v: f64,
    /// Corpus size D: the number of documents the stream stands in for.
    pub corpus_size: usize,
}

impl ModelConfig {
    /// Config with the default priors: m = 0, omega = I, s = 1, v = F + 2,
    /// alpha = 1/K.
    pub fn with_defaults(k: usize, f: usize, corpus_size: usize) -> Self {
        ModelConfig {
            k,
            f,
            alpha: 1.0 / k.max(1) as f64,
            prior_m: DVector::zeros(f),
            prior_omega: DMatrix::identity(f, f),
            prior_s: 1.0,
            prior_v: f as f64 + 2.0,
            corpus_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("K must be >= 1"));
        }
        if self.f == 0 {
            return Err(Error::config("F must be >= 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.prior_m.len() != self.f {
            return Err(Error::dimension(format!(
                "prior mean m has length {}, expected F={}",
                self.prior_m.len(),
                self.f
            )));
        }
        if self.prior_omega.nrows() != self.f || self.prior_omega.ncols() != self.f {
            return Err(Error::dimension(format!(
                "prior scale omega is {}x{}, expected {f}x{f}",
                self.prior_omega.nrows(),
                self.prior_omega.ncols(),
                f = self.f
            )));
        }
        check_symmetric(&self.prior_omega, SYMMETRY_TOL)
            .map_err(|m| Error::config(format!("prior scale omega: {m}")))?;
        if Cholesky::new(self.prior_omega.clone()).is_none() {
            return Err(Error::config(
                "prior scale omega is not positive-definite".to_string(),
            ));
        }
        if !(self.prior_s > 0.0) {
            return Err(Error::config(format!("s must be > 0, got {}", self.prior_s)));
        }
        if !(self.prior_v > self.f as f64 - 1.0) {
            return Err(Error::config(format!(
                "v must be > F-1 = {}, got {}",
                self.f as f64 - 1.0,
                self.prior_v
            )));
        }
        if self.corpus_size == 0 {
            return Err(Error::config("D (corpus size) must be >= 1"));
        }
        Ok(())
    }

    /// The prior expressed as a variational posterior.
    pub fn prior_posterior(&self) -> NiwPosterior {
        NiwPosterior {
            qm: self.prior_m.clone(),
            qomega: self.prior_omega.clone(),
            qs: self.prior_s,
            qv: self.prior_v,
        }
    }
}

/// Variational Normal-Inverse-Wishart state of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwPosterior {
    /// Posterior mean location (length F).
    pub qm: DVector<f64>,
    /// Posterior scale matrix (F x F, symmetric positive-definite).
    pub qomega: DMatrix<f64>,
    /// Posterior mean-precision scale, > 0.
    pub qs: f64,
    /// Posterior degrees of freedom, > F - 1.
    pub qv: f64,
}

impl NiwPosterior {
    pub fn dim(&self) -> usize {
        self.qm.len()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.dim();
        if self.qomega.nrows() != f || self.qomega.ncols() != f {
            return Err(Error::dimension(format!(
                "qomega is {}x{}, expected {f}x{f}",
                self.qomega.nrows(),
                self.qomega.ncols()
            )));
        }
        if !(self.qs > 0.0) {
            return Err(Error::numerical(format!("qs must stay > 0, got {}", self.qs)));
        }
        if !(self.qv > f as f64 - 1.0) {
            return Err(Error::numerical(format!(
                "qv must stay > F-1 = {}, got {}",
                f as f64 - 1.0,
                self.qv
            )));
        }
        if Cholesky::new(self.qomega.clone()).is_none() {
            return Err(Error::numerical(
                "qomega is not positive-definite".to_string(),
            ));
        }
        Ok(())
    }

    /// Map to natural coordinates.
    pub fn to_natural(&self) -> NiwNatural {
        NiwNatural {
            s: self.qs,
            v: self.qv,
            lin: &self.qm * self.qs,
            quad: &self.qomega + self.qs * &self.qm * self.qm.transpose(),
        }
    }
}

/// Natural coordinates of a Normal-Inverse-Wishart distribution:
/// `(s, v, s*m, omega + s*m*m^T)`. Conjugate updates and stochastic
/// interpolation are linear in these coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NiwNatural {
    pub s: f64,
    pub v: f64,
    /// First-moment coordinate `s * m` (length F).
    pub lin: DVector<f64>,
    /// Second-moment coordinate `omega + s * m * m^T` (F x F).
    pub quad: DMatrix<f64>,
}

impl NiwNatural {
    /// Map back to moment coordinates. Fails if the implied scale matrix
    /// is not positive-definite; see `to_posterior_with_jitter` for the
    /// recovery path used during training.
    pub fn to_posterior(&self) -> Result<NiwPosterior> {
        self.convert(false)
    }

    /// Like `to_posterior`, but retries once with diagonal jitter
    /// `1e-10 * trace / F` when the scale matrix fails its Cholesky. The
    /// jitter recovers from rounding; a genuinely indefinite matrix still
    /// errors out.
    pub fn to_posterior_with_jitter(&self) -> Result<NiwPosterior> {
        self.convert(true)
    }

    fn convert(&self, jitter: bool) -> Result<NiwPosterior> {
        let f = self.lin.len();
        if !(self.s > 0.0) {
            return Err(Error::numerical(format!(
                "natural scale must stay > 0, got {}",
                self.s
            )));
        }
        let qm = &self.lin / self.s;
        let mut qomega = &self.quad - self.s * &qm * qm.transpose();
        // Symmetrize to shed rounding skew before the definiteness check.
        qomega = (&qomega + qomega.transpose()) * 0.5;
        if Cholesky::new(qomega.clone()).is_none() {
            if !jitter {
                return Err(Error::numerical(
                    "scale matrix lost positive-definiteness".to_string(),
                ));
            }
            let eps = 1e-10 * qomega.trace() / f as f64;
            qomega += DMatrix::identity(f, f) * eps;
            if Cholesky::new(qomega.clone()).is_none() {
                return Err(Error::numerical(
                    "scale matrix lost positive-definiteness beyond jitter recovery".to_string(),
                ));
            }
        }
        let post = NiwPosterior {
            qm,
            qomega,
            qs: self.s,
            qv: self.v,
        };
        if !(post.qv > f as f64 - 1.0) {
            return Err(Error::numerical(format!(
                "degrees of freedom must stay > F-1, got {}",
                post.qv
            )));
        }
        Ok(post)
    }
}

/// The trained model: one posterior per component plus the update counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub components: Vec<NiwPosterior>,
    /// Number of global updates applied so far.
    pub t: u64,
}

impl GlobalState {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, NiwPosterior::dim)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.components.len() != config.k {
            return Err(Error::dimension(format!(
                "state has {} components, config expects K={}",
                self.components.len(),
                config.k
            )));
        }
        for (k, comp) in self.components.iter().enumerate() {
            if comp.dim() != config.f {
                return Err(Error::dimension(format!(
                    "component {k} has dimension {}, config expects F={}",
                    comp.dim(),
                    config.f
                )));
            }
            comp.validate()?;
        }
        Ok(())
    }
}

/// One document: `n` stacked feature vectors spanning a fixed time span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternWindow {
    /// Row-per-observation matrix, n x F.
    pub observations: DMatrix<f64>,
    pub start_time: Timestamp,
    /// Nominal duration covered by the window, in seconds.
    pub span: f64,
}

impl PatternWindow {
    pub fn new(observations: DMatrix<f64>, start_time: Timestamp, span: f64) -> Self {
        PatternWindow {
            observations,
            start_time,
            span,
        }
    }

    /// Number of observations n.
    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.nrows() == 0
    }

    /// Feature dimension F.
    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }
}

/// Per-document variational parameters: Dirichlet parameters over
/// components and per-observation assignment probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalState {
    /// K-vector of Dirichlet parameters, each >= alpha.
    pub gamma: DVector<f64>,
    /// n x K assignment probabilities; every row sums to 1.
    pub phi: DMatrix<f64>,
}

impl LocalState {
    /// Normalized component proportions gamma / sum(gamma).
    pub fn proportions(&self) -> DVector<f64> {
        &self.gamma / self.gamma.sum()
    }
}

/// Robbins-Monro step-size schedule `rho_t = (tau0 + t)^(-kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningSchedule {
    /// Forgetting rate, in (0.5, 1] so the step sizes are square-summable
    /// but not summable.
    pub kappa: f64,
    /// Delay tau0 >= 0, damping early iterations.
    pub tau0: f64,
}

impl LearningSchedule {
    pub fn new(kappa: f64, tau0: f64) -> Result<Self> {
        let schedule = LearningSchedule { kappa, tau0 };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(Error::config(format!(
                "kappa must lie in (0.5, 1], got {}",
                self.kappa
            )));
        }
        if !(self.tau0 >= 0.0) {
            return Err(Error::config(format!("tau0 must be >= 0, got {}", self.tau0)));
        }
        Ok(())
    }
}

/// Relative symmetry check used on matrices that arrive from outside.
pub(crate) fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> std::result::Result<(), String> {
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return Err(format!(
                    "entry ({i},{j})={} differs from ({j},{i})={}",
                    m[(i, j)],
                    m[(j, i)]
                ));
            }
        }
    }
    Ok(())
}
