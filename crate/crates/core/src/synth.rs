//! Seeded synthetic corpus generation following the model's generative
//! process, with the latent draws recorded so tests can score recovery.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PatternWindow};
use crate::time::Timestamp;

/// A generated corpus together with the latent variables that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub docs: Vec<PatternWindow>,
    /// D x K matrix of true component proportions.
    pub true_theta: DMatrix<f64>,
    /// Per-document component assignment of every observation.
    pub true_z: Vec<Vec<usize>>,
    /// The (mean, covariance) pair of every component.
    pub true_components: Vec<(DVector<f64>, DMatrix<f64>)>,
}

/// Draw a corpus of `d` documents with `n` observations each: components
/// from the Normal-Inverse-Wishart prior, proportions from the Dirichlet,
/// assignments from the proportions, observations from the assigned
/// Gaussian. Deterministic given the seed.
pub fn sample_corpus(
    config: &ModelConfig,
    d: usize,
    n: usize,
    seed: u64,
) -> Result<SyntheticCorpus> {
    config.validate()?;
    check_counts(d, n)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let components = draw_components(config, &mut rng)?;
    generate(config, d, n, components, &mut rng)
}

/// Like `sample_corpus`, but with the components pinned instead of drawn,
/// for planted-truth experiments.
pub fn sample_corpus_with_components(
    config: &ModelConfig,
    d: usize,
    n: usize,
    seed: u64,
    components: &[(DVector<f64>, DMatrix<f64>)],
) -> Result<SyntheticCorpus> {
    config.validate()?;
    check_counts(d, n)?;
    if components.len() != config.k {
        return Err(Error::dimension(format!(
            "{} fixed components for K={}",
            components.len(),
            config.k
        )));
    }
    for (k, (mean, cov)) in components.iter().enumerate() {
        if mean.len() != config.f || cov.nrows() != config.f || cov.ncols() != config.f {
            return Err(Error::dimension(format!(
                "fixed component {k} does not match F={}",
                config.f
            )));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::config(format!(
                "fixed component {k} covariance is not positive-definite"
            )));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    generate(config, d, n, components.to_vec(), &mut rng)
}

fn check_counts(d: usize, n: usize) -> Result<()> {
    if d == 0 || n == 0 {
        return Err(Error::config(format!(
            "corpus needs D >= 1 and n >= 1, got D={d}, n={n}"
        )));
    }
    Ok(())
}

fn draw_components(
    config: &ModelConfig,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    (0..config.k)
        .map(|_| {
            let cov = sample_inverse_wishart(&config.prior_omega, config.prior_v, rng)?;
            let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
                Error::numerical("sampled covariance is not positive-definite".to_string())
            })?;
            let z = standard_normal_vector(config.f, rng);
            let mean = &config.prior_m + chol.l() * z / config.prior_s.sqrt();
            Ok((mean, cov))
        })
        .collect()
}

fn generate(
    config: &ModelConfig,
    d: usize,
    n: usize,
    components: Vec<(DVector<f64>, DMatrix<f64>)>,
    rng: &mut ChaCha20Rng,
) -> Result<SyntheticCorpus> {
    let k = config.k;
    let f = config.f;
    let chols: Vec<DMatrix<f64>> = components
        .iter()
        .map(|(_, cov)| {
            Cholesky::new(cov.clone())
                .map(|c| c.l())
                .ok_or_else(|| Error::numerical("component covariance lost definiteness"))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut true_theta = DMatrix::zeros(d, k);
    let mut true_z = Vec::with_capacity(d);
    let mut docs = Vec::with_capacity(d);
    for doc_idx in 0..d {
        let theta = sample_dirichlet(config.alpha, k, rng);
        let mut assignments = Vec::with_capacity(n);
        let mut observations = DMatrix::zeros(n, f);
        for i in 0..n {
            let z = sample_categorical(&theta, rng);
            assignments.push(z);
            let noise = standard_normal_vector(f, rng);
            let x = &components[z].0 + &chols[z] * noise;
            observations.set_row(i, &x.transpose());
        }
        for (j, &p) in theta.iter().enumerate() {
            true_theta[(doc_idx, j)] = p;
        }
        docs.push(PatternWindow::new(
            observations,
            Timestamp::from_secs_f64((doc_idx * n) as f64),
            n as f64,
        ));
        true_z.push(assignments);
    }
    Ok(SyntheticCorpus {
        docs,
        true_theta,
        true_z,
        true_components: components,
    })
}

fn standard_normal_vector(f: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(f, |_, _| StandardNormal.sample(rng))
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
fn sample_dirichlet(alpha: f64, k: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated > 0");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        for v in &mut draws {
            *v /= total;
        }
    } else {
        // All-zero underflow can occur for tiny alpha; fall back to a
        // single category so theta stays a distribution.
        let winner = rng.gen_range(0..k);
        for (i, v) in draws.iter_mut().enumerate() {
            *v = if i == winner { 1.0 } else { 0.0 };
        }
    }
    draws
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Inverse-Wishart draw with scale `omega` and `dof` degrees of freedom,
/// via the Bartlett decomposition of the corresponding Wishart.
fn sample_inverse_wishart(
    omega: &DMatrix<f64>,
    dof: f64,
    rng: &mut ChaCha20Rng,
) -> Result<DMatrix<f64>> {
    let f = omega.nrows();
    let omega_inv = Cholesky::new(omega.clone())
        .ok_or_else(|| Error::config("scale matrix is not positive-definite".to_string()))?
        .inverse();
    let lw = Cholesky::new(omega_inv)
        .ok_or_else(|| Error::numerical("inverse scale lost definiteness".to_string()))?
        .l();

    let mut bartlett = DMatrix::zeros(f, f);
    for j in 0..f {
        let chi = ChiSquared::new(dof - j as f64).map_err(|_| {
            Error::config(format!("degrees of freedom {dof} too small for dimension {f}"))
        })?;
        bartlett[(j, j)] = chi.sample(rng).max(f64::MIN_POSITIVE).sqrt();
        for i in (j + 1)..f {
            bartlett[(i, j)] = StandardNormal.sample(rng);
        }
    }

    // Wishart draw W = (L A)(L A)^T, so the inverse-Wishart sample is
    // W^{-1} = B^{-T} B^{-1} with B = L A.
    let b = &lw * bartlett;
    let b_inv = b
        .solve_lower_triangular(&DMatrix::identity(f, f))
        .ok_or_else(|| Error::numerical("degenerate Bartlett factor".to_string()))?;
    let sample = b_inv.transpose() * b_inv;
    Ok((&sample + sample.transpose()) * 0.5)
}
