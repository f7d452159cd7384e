//! Stochastic variational inference for the Gaussian mixed-membership model.
//!
//! The global posterior over each component's mean and covariance is a
//! Normal-Inverse-Wishart; each document carries a Dirichlet over component
//! proportions and per-observation assignment probabilities. Local inference
//! is closed-form coordinate ascent; global updates interpolate natural
//! parameters toward a minibatch estimate scaled to the corpus size, which is
//! algebraically the same as the four mean-space update formulas but keeps
//! the positive-definite cone closed under the step.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::model::{
    GlobalState, LearningSchedule, LocalState, ModelConfig, NiwNatural, NiwPosterior,
    PatternWindow,
};

/// Stopping threshold for local coordinate ascent: max |delta gamma| / n.
pub const LOCAL_TOL: f64 = 1e-4;
/// Sweep cap for local coordinate ascent.
pub const LOCAL_MAX_ITER: usize = 100;

/// Step size `rho_t = (tau0 + t)^(-kappa)`.
///
/// For kappa in (0.5, 1] the sequence satisfies the Robbins-Monro
/// conditions: the partial sums diverge while the squared sums converge.
pub fn learning_rate(t: u64, schedule: &LearningSchedule) -> Result<f64> {
    let base = schedule.tau0 + t as f64;
    if base <= 0.0 {
        return Err(Error::config(format!(
            "learning rate undefined: tau0 + t = {base} must be > 0"
        )));
    }
    Ok(base.powf(-schedule.kappa))
}

/// Per-component cache for evaluating expected Gaussian log densities.
///
/// Holds the Cholesky factor of each scale matrix together with the terms of
/// the expected log density that do not depend on the observation, so local
/// sweeps pay one triangular solve per (observation, component) pair.
pub struct GaussianExpectations {
    components: Vec<ComponentCache>,
    dim: usize,
}

struct ComponentCache {
    qm: DVector<f64>,
    chol_l: DMatrix<f64>,
    half_qv: f64,
    constant: f64,
}

impl ComponentCache {
    fn new(post: &NiwPosterior) -> Result<Self> {
        let f = post.dim();
        let chol = Cholesky::new(post.qomega.clone()).ok_or_else(|| {
            Error::numerical("scale matrix is not positive-definite".to_string())
        })?;
        let chol_l = chol.l();
        let log_det: f64 = 2.0 * chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let digamma_sum: f64 = (1..=f)
            .map(|j| digamma((post.qv + 1.0 - j as f64) / 2.0))
            .sum();
        let constant = 0.5 * (digamma_sum + f as f64 * LN_2 - log_det)
            - 0.5 * f as f64 * (2.0 * PI).ln()
            - f as f64 / (2.0 * post.qs);
        Ok(ComponentCache {
            qm: post.qm.clone(),
            chol_l,
            half_qv: post.qv / 2.0,
            constant,
        })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.qm;
        let solved = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has positive diagonal");
        self.constant - self.half_qv * solved.norm_squared()
    }
}

impl GaussianExpectations {
    pub fn new(state: &GlobalState) -> Result<Self> {
        let components = state
            .components
            .iter()
            .map(ComponentCache::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianExpectations {
            dim: state.dim(),
            components,
        })
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Expected log density of `x` under component `k`, including the
    /// terms that are constant across components (they cancel when rows
    /// are normalized but matter for the objective).
    pub fn log_density(&self, k: usize, x: &DVector<f64>) -> f64 {
        self.components[k].log_density(x)
    }
}

/// `E_q[log N(x | mu_k, Sigma_k)]` under a Normal-Inverse-Wishart posterior:
///
/// ```text
/// 1/2 [ sum_j psi((qv+1-j)/2) + F ln 2 - ln det(qomega) ]
///   - F/2 ln(2 pi) - qv/2 (x-qm)^T qomega^{-1} (x-qm) - F/(2 qs)
/// ```
pub fn expected_log_gaussian(x: &DVector<f64>, post: &NiwPosterior) -> Result<f64> {
    if x.len() != post.dim() {
        return Err(Error::dimension(format!(
            "observation has length {}, posterior expects {}",
            x.len(),
            post.dim()
        )));
    }
    Ok(ComponentCache::new(post)?.log_density(x))
}

/// Fresh local parameters before any sweep: uniform assignments and the
/// matching Dirichlet parameters `alpha + n/K`.
pub fn init_local(doc: &PatternWindow, k: usize, alpha: f64) -> LocalState {
    let n = doc.len();
    LocalState {
        gamma: DVector::from_element(k, alpha + n as f64 / k as f64),
        phi: DMatrix::from_element(n, k, 1.0 / k as f64),
    }
}

/// One coordinate-ascent sweep: recompute every assignment row from the
/// current gamma, then reset gamma from the new assignments. Returns the
/// largest absolute change in gamma.
pub fn local_sweep(
    doc: &PatternWindow,
    expectations: &GaussianExpectations,
    alpha: f64,
    local: &mut LocalState,
) -> f64 {
    let n = doc.len();
    let k = expectations.num_components();
    let digamma_gamma: Vec<f64> = local.gamma.iter().map(|&g| digamma(g)).collect();
    let mut log_weights = vec![0.0; k];
    for i in 0..n {
        let x = doc.observations.row(i).transpose();
        for (j, lw) in log_weights.iter_mut().enumerate() {
            *lw = digamma_gamma[j] + expectations.log_density(j, &x);
        }
        // Log-sum-exp keeps rows normalizable even when every density
        // underflows.
        let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, lw) in log_weights.iter().enumerate() {
            let w = (lw - max).exp();
            local.phi[(i, j)] = w;
            sum += w;
        }
        for j in 0..k {
            local.phi[(i, j)] /= sum;
        }
    }
    let mut max_change: f64 = 0.0;
    for j in 0..k {
        let new_gamma = alpha + local.phi.column(j).sum();
        max_change = max_change.max((new_gamma - local.gamma[j]).abs());
        local.gamma[j] = new_gamma;
    }
    max_change
}

/// Local coordinate ascent (assignments and proportions) for one document,
/// iterated until the gamma change per observation drops below `tol` or
/// `max_iter` sweeps have run.
pub fn local_step(
    doc: &PatternWindow,
    state: &GlobalState,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LocalState> {
    let expectations = GaussianExpectations::new(state)?;
    local_step_cached(doc, &expectations, alpha, tol, max_iter)
}

/// `local_step` against a prebuilt expectation cache, so a minibatch can
/// share one cache across documents.
pub fn local_step_cached(
    doc: &PatternWindow,
    expectations: &GaussianExpectations,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LocalState> {
    if doc.dim() != expectations.dim() && !doc.is_empty() {
        return Err(Error::dimension(format!(
            "document has dimension {}, state has {}",
            doc.dim(),
            expectations.dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::config(format!("tol must be > 0, got {tol}")));
    }
    let k = expectations.num_components();
    let mut local = init_local(doc, k, alpha);
    let n = doc.len();
    if n == 0 {
        return Ok(local);
    }
    for _ in 0..max_iter {
        let max_change = local_sweep(doc, expectations, alpha, &mut local);
        if max_change / (n as f64) < tol {
            break;
        }
    }
    Ok(local)
}

/// Noisy natural-parameter target for one minibatch: per component, the
/// prior's natural parameters plus the assignment-weighted sufficient
/// statistics scaled by `D / |B|`.
pub fn intermediate_global<D: std::borrow::Borrow<PatternWindow>>(
    docs: &[D],
    locals: &[LocalState],
    config: &ModelConfig,
) -> Result<Vec<NiwNatural>> {
    if docs.is_empty() {
        return Err(Error::config("minibatch must not be empty"));
    }
    if docs.len() != locals.len() {
        return Err(Error::dimension(format!(
            "{} documents but {} local states",
            docs.len(),
            locals.len()
        )));
    }
    if docs.len() > config.corpus_size {
        return Err(Error::config(format!(
            "minibatch of {} exceeds corpus size D={}",
            docs.len(),
            config.corpus_size
        )));
    }
    let f = config.f;
    let k = config.k;
    let scale = config.corpus_size as f64 / docs.len() as f64;

    let mut counts = vec![0.0; k];
    let mut sums = vec![DVector::<f64>::zeros(f); k];
    let mut sq_sums = vec![DMatrix::<f64>::zeros(f, f); k];
    for (doc, local) in docs.iter().zip(locals) {
        let doc = doc.borrow();
        if doc.dim() != f && !doc.is_empty() {
            return Err(Error::dimension(format!(
                "document has dimension {}, config expects F={f}",
                doc.dim()
            )));
        }
        if local.phi.nrows() != doc.len() || local.phi.ncols() != k {
            return Err(Error::dimension(format!(
                "local state is {}x{}, expected {}x{k}",
                local.phi.nrows(),
                local.phi.ncols(),
                doc.len()
            )));
        }
        for i in 0..doc.len() {
            let x = doc.observations.row(i).transpose();
            let outer = &x * x.transpose();
            for j in 0..k {
                let w = local.phi[(i, j)];
                counts[j] += w;
                sums[j].axpy(w, &x, 1.0);
                sq_sums[j] += w * &outer;
            }
        }
    }

    let prior_lin = &config.prior_m * config.prior_s;
    let prior_quad =
        &config.prior_omega + config.prior_s * &config.prior_m * config.prior_m.transpose();
    Ok((0..k)
        .map(|j| NiwNatural {
            s: config.prior_s + scale * counts[j],
            v: config.prior_v + scale * counts[j],
            lin: &prior_lin + scale * &sums[j],
            quad: &prior_quad + scale * &sq_sums[j],
        })
        .collect())
}

/// Stochastic natural-gradient step: interpolate each component's natural
/// parameters toward the minibatch target and advance the update counter.
///
/// `rho = 1` replaces the state with the target outright; `rho = 0` is the
/// identity (outside the training schedule, kept for limit checks).
pub fn global_step(
    state: &GlobalState,
    lambda_hat: &[NiwNatural],
    rho: f64,
) -> Result<GlobalState> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config(format!("rho must lie in [0, 1], got {rho}")));
    }
    if lambda_hat.len() != state.num_components() {
        return Err(Error::dimension(format!(
            "{} natural-parameter tuples for {} components",
            lambda_hat.len(),
            state.num_components()
        )));
    }
    let components = state
        .components
        .iter()
        .zip(lambda_hat)
        .map(|(comp, hat)| {
            let current = comp.to_natural();
            let blended = NiwNatural {
                s: (1.0 - rho) * current.s + rho * hat.s,
                v: (1.0 - rho) * current.v + rho * hat.v,
                lin: (1.0 - rho) * &current.lin + rho * &hat.lin,
                quad: (1.0 - rho) * &current.quad + rho * &hat.quad,
            };
            blended.to_posterior_with_jitter()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalState {
        components,
        t: state.t + 1,
    })
}

/// Per-document contribution to the objective:
/// `E_q[log p(x_d, z_d | beta, theta_d)] + E_q[log p(theta_d)]
///  - E_q[log q(z_d)] - E_q[log q(theta_d)]`.
pub fn doc_elbo(
    doc: &PatternWindow,
    local: &LocalState,
    expectations: &GaussianExpectations,
    alpha: f64,
) -> f64 {
    let k = expectations.num_components();
    let gamma_sum = local.gamma.sum();
    let digamma_sum = digamma(gamma_sum);
    let e_log_theta: Vec<f64> = local
        .gamma
        .iter()
        .map(|&g| digamma(g) - digamma_sum)
        .collect();

    let mut total = 0.0;
    for i in 0..doc.len() {
        let x = doc.observations.row(i).transpose();
        for j in 0..k {
            let w = local.phi[(i, j)];
            if w > 0.0 {
                total += w * (e_log_theta[j] + expectations.log_density(j, &x) - w.ln());
            }
        }
    }
    // E_q[log p(theta)] - E_q[log q(theta)]
    total += ln_gamma(k as f64 * alpha) - k as f64 * ln_gamma(alpha);
    total -= ln_gamma(gamma_sum);
    for j in 0..k {
        total += ln_gamma(local.gamma[j]);
        total += (alpha - local.gamma[j]) * e_log_theta[j];
    }
    total
}

/// KL divergence between two Normal-Inverse-Wishart distributions,
/// `KL(q || p)`, in closed form.
pub fn niw_kl(q: &NiwPosterior, p: &NiwPosterior) -> Result<f64> {
    let f = q.dim();
    if p.dim() != f {
        return Err(Error::dimension(format!(
            "posteriors have dimensions {} and {}",
            f,
            p.dim()
        )));
    }
    let fdim = f as f64;
    let chol_q = Cholesky::new(q.qomega.clone())
        .ok_or_else(|| Error::numerical("q scale matrix is not positive-definite".to_string()))?;
    let chol_p = Cholesky::new(p.qomega.clone())
        .ok_or_else(|| Error::numerical("p scale matrix is not positive-definite".to_string()))?;
    let log_det_q: f64 = 2.0 * chol_q.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det_p: f64 = 2.0 * chol_p.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let digamma_sum_q: f64 = (1..=f)
        .map(|j| digamma((q.qv + 1.0 - j as f64) / 2.0))
        .sum();

    // Conditional Gaussian part, averaged over the q scale distribution.
    let diff = &q.qm - &p.qm;
    let quad_mean = q.qv * diff.dot(&chol_q.solve(&diff));
    let gaussian = 0.5
        * (fdim * (q.qs / p.qs).ln() - fdim + fdim * p.qs / q.qs + p.qs * quad_mean);

    // Inverse-Wishart part.
    let e_log_det_sigma = log_det_q - fdim * LN_2 - digamma_sum_q;
    let trace_term = q.qv * chol_q.solve(&p.qomega).trace();
    let inverse_wishart = 0.5 * q.qv * log_det_q - 0.5 * p.qv * log_det_p
        - 0.5 * (q.qv - p.qv) * fdim * LN_2
        - ln_multivariate_gamma(f, q.qv / 2.0)
        + ln_multivariate_gamma(f, p.qv / 2.0)
        - 0.5 * (q.qv - p.qv) * e_log_det_sigma
        - 0.5 * q.qv * fdim
        + 0.5 * trace_term;

    Ok(gaussian + inverse_wishart)
}

fn ln_multivariate_gamma(f: usize, a: f64) -> f64 {
    let fdim = f as f64;
    fdim * (fdim - 1.0) / 4.0 * PI.ln()
        + (1..=f).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

/// Full variational objective over a document collection: the negated KL
/// from each component posterior to the prior, plus every per-document
/// contribution.
pub fn elbo(
    docs: &[PatternWindow],
    locals: &[LocalState],
    state: &GlobalState,
    config: &ModelConfig,
) -> Result<f64> {
    if docs.len() != locals.len() {
        return Err(Error::dimension(format!(
            "{} documents but {} local states",
            docs.len(),
            locals.len()
        )));
    }
    state.validate(config)?;
    let prior = config.prior_posterior();
    let mut total = 0.0;
    for comp in &state.components {
        total -= niw_kl(comp, &prior)?;
    }
    let expectations = GaussianExpectations::new(state)?;
    for (doc, local) in docs.iter().zip(locals) {
        total += doc_elbo(doc, local, &expectations, config.alpha);
    }
    Ok(total)
}

/// Seeded initialization: every component starts at the prior except its
/// location, which is drawn from `N(m, omega/s)` to break symmetry.
pub fn init_state(config: &ModelConfig, seed: u64) -> Result<GlobalState> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    init_state_with_rng(config, &mut rng)
}

fn init_state_with_rng(config: &ModelConfig, rng: &mut ChaCha20Rng) -> Result<GlobalState> {
    config.validate()?;
    let chol = Cholesky::new(config.prior_omega.clone())
        .ok_or_else(|| Error::numerical("prior scale is not positive-definite".to_string()))?;
    let scale = chol.l() / config.prior_s.sqrt();
    let components = (0..config.k)
        .map(|_| {
            let z = DVector::from_fn(config.f, |_, _| {
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
            });
            NiwPosterior {
                qm: &config.prior_m + &scale * z,
                qomega: config.prior_omega.clone(),
                qs: config.prior_s,
                qv: config.prior_v,
            }
        })
        .collect();
    Ok(GlobalState { components, t: 0 })
}

/// One line of training telemetry.
pub struct IterationLog {
    /// Update counter before the step (the `t` whose `rho_t` was used).
    pub t: u64,
    pub rho: f64,
    /// Corpus indices of the minibatch documents.
    pub batch: Vec<usize>,
    /// Noisy full-objective estimate from this minibatch.
    pub elbo_estimate: f64,
}

/// Train on a window collection with seeded minibatch sampling.
///
/// The corpus is visited in a seeded shuffled order and reshuffled whenever
/// it is exhausted, so any number of iterations can run over a finite
/// window collection. Two calls with the same inputs and seed produce
/// bit-identical states.
pub fn fit_online(
    corpus: &[PatternWindow],
    config: &ModelConfig,
    schedule: &LearningSchedule,
    batch_size: usize,
    iters: u64,
    seed: u64,
) -> Result<GlobalState> {
    fit_online_logged(corpus, config, schedule, batch_size, iters, seed, |_| {})
}

/// `fit_online` with a per-iteration telemetry callback.
pub fn fit_online_logged(
    corpus: &[PatternWindow],
    config: &ModelConfig,
    schedule: &LearningSchedule,
    batch_size: usize,
    iters: u64,
    seed: u64,
    mut log: impl FnMut(&IterationLog),
) -> Result<GlobalState> {
    config.validate()?;
    schedule.validate()?;
    if batch_size == 0 {
        return Err(Error::config("batch size must be >= 1"));
    }
    if corpus.is_empty() {
        return Err(Error::config("corpus must yield at least one window"));
    }
    for (i, doc) in corpus.iter().enumerate() {
        if doc.dim() != config.f && !doc.is_empty() {
            return Err(Error::dimension(format!(
                "window {i} has dimension {}, config expects F={}",
                doc.dim(),
                config.f
            )));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut state = init_state_with_rng(config, &mut rng)?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    let mut cursor = 0usize;

    let prior = config.prior_posterior();
    for _ in 0..iters {
        let mut batch_indices = Vec::with_capacity(batch_size);
        while batch_indices.len() < batch_size {
            if cursor == order.len() {
                rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
                cursor = 0;
            }
            batch_indices.push(order[cursor]);
            cursor += 1;
        }

        let expectations = GaussianExpectations::new(&state)?;
        let docs: Vec<&PatternWindow> = batch_indices.iter().map(|&i| &corpus[i]).collect();
        let locals: Vec<LocalState> = docs
            .par_iter()
            .map(|doc| local_step_cached(doc, &expectations, config.alpha, LOCAL_TOL, LOCAL_MAX_ITER))
            .collect::<Result<Vec<_>>>()?;

        let lambda_hat = intermediate_global(&docs, &locals, config)?;
        let rho = learning_rate(state.t, schedule)?;

        let mut batch_bound = 0.0;
        for (doc, local) in docs.iter().zip(&locals) {
            batch_bound += doc_elbo(doc, local, &expectations, config.alpha);
        }
        let mut kl_total = 0.0;
        for comp in &state.components {
            kl_total += niw_kl(comp, &prior)?;
        }
        let elbo_estimate =
            batch_bound * config.corpus_size as f64 / batch_indices.len() as f64 - kl_total;

        let t_before = state.t;
        state = global_step(&state, &lambda_hat, rho)?;
        log(&IterationLog {
            t: t_before,
            rho,
            batch: batch_indices,
            elbo_estimate,
        });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Timestamp;
    use approx::assert_relative_eq;

    fn schedule(kappa: f64, tau0: f64) -> LearningSchedule {
        LearningSchedule { kappa, tau0 }
    }

    fn doc(rows: &[&[f64]]) -> PatternWindow {
        let f = rows.first().map_or(0, |r| r.len());
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        PatternWindow::new(
            DMatrix::from_row_slice(rows.len(), f, &flat),
            Timestamp::from_nanos(0),
            rows.len() as f64,
        )
    }

    fn scalar_posterior(qm: f64, qomega: f64, qs: f64, qv: f64) -> NiwPosterior {
        NiwPosterior {
            qm: DVector::from_element(1, qm),
            qomega: DMatrix::from_element(1, 1, qomega),
            qs,
            qv,
        }
    }

    #[test]
    fn learning_rate_examples() {
        assert_eq!(learning_rate(0, &schedule(0.5, 1.0)).unwrap(), 1.0);
        assert_eq!(learning_rate(3, &schedule(1.0, 1.0)).unwrap(), 0.25);
        // 1024^(-0.9) = 2^(-9) exactly.
        assert_relative_eq!(
            learning_rate(0, &schedule(0.9, 1024.0)).unwrap(),
            0.001953125,
            max_relative = 1e-15
        );
    }

    #[test]
    fn learning_rate_is_strictly_decreasing() {
        let sched = schedule(0.7, 8.0);
        let mut last = f64::INFINITY;
        for t in 0..100 {
            let rho = learning_rate(t, &sched).unwrap();
            assert!(rho < last && rho > 0.0 && rho <= 1.0);
            last = rho;
        }
    }

    #[test]
    fn learning_rate_rejects_zero_base() {
        assert!(learning_rate(0, &schedule(0.9, 0.0)).is_err());
        assert!(learning_rate(1, &schedule(0.9, 0.0)).is_ok());
    }

    #[test]
    fn expected_log_gaussian_frozen_values() {
        // Oracle: digamma(1) = -0.577215664901533, arithmetic in 30-digit
        // precision gives -1.36097277537546652 at x = 0 and one less at
        // x = 1 (qv/2 times unit squared distance).
        let post = scalar_posterior(0.0, 1.0, 1.0, 2.0);
        let at_zero = expected_log_gaussian(&DVector::from_element(1, 0.0), &post).unwrap();
        assert_relative_eq!(at_zero, -1.3609727753754665, max_relative = 1e-12);
        let at_one = expected_log_gaussian(&DVector::from_element(1, 1.0), &post).unwrap();
        assert_relative_eq!(at_one, -2.3609727753754665, max_relative = 1e-12);
    }

    #[test]
    fn expected_log_gaussian_is_translation_invariant() {
        let x = DVector::from_row_slice(&[0.4, -1.1]);
        let post = NiwPosterior {
            qm: DVector::from_row_slice(&[1.0, 2.0]),
            qomega: DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.9]),
            qs: 3.0,
            qv: 6.0,
        };
        let base = expected_log_gaussian(&x, &post).unwrap();
        for c in [-7.5, 0.25, 1234.0] {
            let shift = DVector::from_element(2, c);
            let mut shifted_post = post.clone();
            shifted_post.qm += &shift;
            let shifted = expected_log_gaussian(&(&x + &shift), &shifted_post).unwrap();
            assert_relative_eq!(base, shifted, max_relative = 1e-9);
        }
    }

    #[test]
    fn expected_log_gaussian_rejects_indefinite_scale() {
        let mut post = scalar_posterior(0.0, 1.0, 1.0, 2.0);
        post.qomega[(0, 0)] = -1.0;
        assert!(expected_log_gaussian(&DVector::zeros(1), &post).is_err());
    }

    #[test]
    fn symmetric_components_share_assignments_evenly() {
        let comp = scalar_posterior(0.5, 2.0, 3.0, 4.0);
        let state = GlobalState {
            components: vec![comp; 3],
            t: 0,
        };
        let alpha = 0.4;
        let d = doc(&[&[1.0], &[2.0], &[-0.5], &[0.0]]);
        let local = local_step(&d, &state, alpha, 1e-8, 50).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_relative_eq!(local.phi[(i, j)], 1.0 / 3.0, epsilon = 1e-12);
            }
        }
        for j in 0..3 {
            assert_relative_eq!(local.gamma[j], alpha + 4.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_document_returns_bare_alpha() {
        let state = GlobalState {
            components: vec![scalar_posterior(0.0, 1.0, 1.0, 2.0); 2],
            t: 0,
        };
        let local = local_step(&doc(&[]), &state, 0.7, 1e-6, 10).unwrap();
        assert_eq!(local.phi.nrows(), 0);
        assert_eq!(local.gamma, DVector::from_element(2, 0.7));
    }

    #[test]
    fn local_step_rows_normalize_and_gamma_dominates_alpha() {
        let state = GlobalState {
            components: vec![
                scalar_posterior(0.0, 1.0, 10.0, 10.0),
                scalar_posterior(5.0, 1.0, 10.0, 10.0),
            ],
            t: 0,
        };
        let alpha = 0.05;
        let d = doc(&[&[0.1], &[4.9], &[2.5], &[-0.2], &[5.2]]);
        let local = local_step(&d, &state, alpha, 1e-6, 100).unwrap();
        for i in 0..5 {
            let sum: f64 = (0..2).map(|j| local.phi[(i, j)]).sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
        assert!(local.gamma.iter().all(|&g| g >= alpha));
        assert_relative_eq!(local.gamma.sum(), 2.0 * alpha + 5.0, epsilon = 1e-9);
    }

    #[test]
    fn local_step_checks_dimensions() {
        let state = GlobalState {
            components: vec![scalar_posterior(0.0, 1.0, 1.0, 2.0)],
            t: 0,
        };
        let d = doc(&[&[1.0, 2.0]]);
        assert!(local_step(&d, &state, 0.5, 1e-6, 10).is_err());
    }

    #[test]
    fn intermediate_global_hand_example() {
        // D = 1, |B| = 1, F = 1, prior s = v = 1, m = 0, omega = 1;
        // one document with x = (1, 3) fully assigned to the only component.
        let mut config = ModelConfig::with_defaults(1, 1, 1);
        config.alpha = 0.5;
        config.prior_v = 1.0;
        let d = doc(&[&[1.0], &[3.0]]);
        let local = LocalState {
            gamma: DVector::from_element(1, 2.5),
            phi: DMatrix::from_element(2, 1, 1.0),
        };
        let hats = intermediate_global(&[d.clone()], &[local.clone()], &config).unwrap();
        assert_eq!(hats.len(), 1);
        assert_relative_eq!(hats[0].s, 3.0, epsilon = 1e-12);
        assert_relative_eq!(hats[0].v, 3.0, epsilon = 1e-12);
        assert_relative_eq!(hats[0].lin[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(hats[0].quad[(0, 0)], 11.0, epsilon = 1e-12);

        // Scaling the corpus size scales only the data part: s = 1 + 10*2.
        config.corpus_size = 10;
        let hats = intermediate_global(&[d], &[local], &config).unwrap();
        assert_relative_eq!(hats[0].s, 21.0, epsilon = 1e-12);
        assert_relative_eq!(hats[0].lin[0], 40.0, epsilon = 1e-12);
    }

    #[test]
    fn unassigned_component_falls_back_to_prior_naturals() {
        let config = ModelConfig::with_defaults(2, 1, 4);
        let d = doc(&[&[2.0], &[3.0]]);
        // All mass on component 0; component 1 sees nothing.
        let local = LocalState {
            gamma: DVector::from_row_slice(&[2.5, 0.5]),
            phi: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
        };
        let hats = intermediate_global(&[d], &[local], &config).unwrap();
        let prior = config.prior_posterior().to_natural();
        assert_eq!(hats[1].s, prior.s);
        assert_eq!(hats[1].v, prior.v);
        assert_eq!(hats[1].lin, prior.lin);
        assert_eq!(hats[1].quad, prior.quad);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let config = ModelConfig::with_defaults(2, 1, 4);
        let docs: Vec<PatternWindow> = Vec::new();
        assert!(intermediate_global(&docs, &[], &config).is_err());
    }

    #[test]
    fn full_step_replaces_and_zero_step_preserves() {
        let state = GlobalState {
            components: vec![scalar_posterior(1.0, 2.0, 2.0, 3.0)],
            t: 5,
        };
        let target = NiwNatural {
            s: 4.0,
            v: 6.0,
            lin: DVector::from_element(1, 8.0),
            quad: DMatrix::from_element(1, 1, 20.0),
        };
        let replaced = global_step(&state, &[target.clone()], 1.0).unwrap();
        let natural = replaced.components[0].to_natural();
        assert_relative_eq!(natural.s, 4.0, epsilon = 1e-12);
        assert_relative_eq!(natural.v, 6.0, epsilon = 1e-12);
        assert_relative_eq!(natural.lin[0], 8.0, epsilon = 1e-12);
        assert_relative_eq!(natural.quad[(0, 0)], 20.0, epsilon = 1e-12);
        assert_eq!(replaced.t, 6);

        // rho = 0 sits outside the training schedule but must be the identity.
        let kept = global_step(&state, &[target], 0.0).unwrap();
        assert_relative_eq!(kept.components[0].qm[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(kept.components[0].qomega[(0, 0)], 2.0, epsilon = 1e-12);
        assert_eq!(kept.components[0].qs, 2.0);
        assert_eq!(kept.components[0].qv, 3.0);
    }

    #[test]
    fn midpoint_interpolation_of_scalar_naturals() {
        let state = GlobalState {
            components: vec![scalar_posterior(0.0, 2.0, 2.0, 2.0)],
            t: 0,
        };
        let target = NiwNatural {
            s: 4.0,
            v: 4.0,
            lin: DVector::zeros(1),
            quad: DMatrix::from_element(1, 1, 4.0),
        };
        let stepped = global_step(&state, &[target], 0.5).unwrap();
        let natural = stepped.components[0].to_natural();
        assert_relative_eq!(natural.s, 3.0, epsilon = 1e-12);
        assert_relative_eq!(natural.v, 3.0, epsilon = 1e-12);
        assert_relative_eq!(natural.quad[(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rho_outside_unit_interval_is_rejected() {
        let state = GlobalState {
            components: vec![scalar_posterior(0.0, 1.0, 1.0, 2.0)],
            t: 0,
        };
        let target = state.components[0].to_natural();
        assert!(global_step(&state, &[target.clone()], -0.1).is_err());
        assert!(global_step(&state, &[target], 1.5).is_err());
    }

    #[test]
    fn kl_between_identical_posteriors_is_zero() {
        let post = NiwPosterior {
            qm: DVector::from_row_slice(&[0.3, -1.0]),
            qomega: DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.1]),
            qs: 2.5,
            qv: 7.0,
        };
        assert_relative_eq!(niw_kl(&post, &post).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn kl_is_positive_between_distinct_posteriors() {
        let p = scalar_posterior(0.0, 1.0, 1.0, 3.0);
        for q in [
            scalar_posterior(1.0, 1.0, 1.0, 3.0),
            scalar_posterior(0.0, 2.0, 1.0, 3.0),
            scalar_posterior(0.0, 1.0, 4.0, 3.0),
            scalar_posterior(0.0, 1.0, 1.0, 9.0),
        ] {
            assert!(niw_kl(&q, &p).unwrap() > 0.0);
        }
    }

    #[test]
    fn elbo_of_prior_on_empty_corpus_is_zero() {
        let config = ModelConfig::with_defaults(3, 2, 5);
        let state = GlobalState {
            components: vec![config.prior_posterior(); 3],
            t: 0,
        };
        let value = elbo(&[], &[], &state, &config).unwrap();
        assert_relative_eq!(value, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn seeded_initialization_is_deterministic_and_symmetry_broken() {
        let config = ModelConfig::with_defaults(4, 3, 10);
        let a = init_state(&config, 42).unwrap();
        let b = init_state(&config, 42).unwrap();
        assert_eq!(a, b);
        let c = init_state(&config, 43).unwrap();
        assert_ne!(a, c);
        // Locations differ between components; everything else is the prior.
        assert_ne!(a.components[0].qm, a.components[1].qm);
        for comp in &a.components {
            assert_eq!(comp.qomega, config.prior_omega);
            assert_eq!(comp.qs, config.prior_s);
            assert_eq!(comp.qv, config.prior_v);
        }
    }

    #[test]
    fn fit_online_with_no_iterations_returns_initialization() {
        let config = ModelConfig::with_defaults(2, 1, 4);
        let sched = schedule(0.9, 16.0);
        let corpus = vec![doc(&[&[0.0], &[1.0]]), doc(&[&[2.0]])];
        let fitted = fit_online(&corpus, &config, &sched, 2, 0, 7).unwrap();
        assert_eq!(fitted, init_state(&config, 7).unwrap());
        assert_eq!(fitted.t, 0);
    }

    #[test]
    fn fit_online_rejects_empty_corpus_and_zero_batch() {
        let config = ModelConfig::with_defaults(2, 1, 4);
        let sched = schedule(0.9, 16.0);
        assert!(fit_online(&[], &config, &sched, 2, 5, 7).is_err());
        let corpus = vec![doc(&[&[0.0]])];
        assert!(fit_online(&corpus, &config, &sched, 0, 5, 7).is_err());
    }
}
