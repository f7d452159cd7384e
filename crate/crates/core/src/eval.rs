//! Model evaluation: a held-out perplexity proxy, component-proportion
//! matrices with their grayscale rendering, and least-squares mapping of
//! patterns to energy consumption.

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{GlobalState, LocalState, ModelConfig, PatternWindow};
use crate::svi::{self, GaussianExpectations, LOCAL_MAX_ITER, LOCAL_TOL};
use crate::time::Timestamp;

/// Component proportions over time: entry `(k, tau)` is component `k`'s
/// share of window `tau`, so every column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMatrix {
    /// K x T proportions.
    pub values: DMatrix<f64>,
    pub window_times: Vec<Timestamp>,
}

impl PatternMatrix {
    pub fn num_components(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_windows(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-component energy attribution from the least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMap {
    /// Energy associated with each component, joules.
    pub w: DVector<f64>,
    /// Euclidean norm of the fit residual.
    pub residual_norm: f64,
}

/// Summed per-document objective over a held-out set with the global
/// posteriors frozen, together with the total observation count.
///
/// Local inference runs to convergence per document; the global KL term is
/// excluded because it does not scale with the held-out size.
pub fn heldout_bound(
    heldout: &[PatternWindow],
    state: &GlobalState,
    config: &ModelConfig,
) -> Result<(f64, usize)> {
    if heldout.is_empty() {
        return Err(Error::config("held-out set must not be empty"));
    }
    state.validate(config)?;
    let expectations = GaussianExpectations::new(state)?;
    let locals: Vec<LocalState> = heldout
        .par_iter()
        .map(|doc| svi::local_step_cached(doc, &expectations, config.alpha, LOCAL_TOL, LOCAL_MAX_ITER))
        .collect::<Result<Vec<_>>>()?;
    let mut bound = 0.0;
    let mut count = 0usize;
    for (doc, local) in heldout.iter().zip(&locals) {
        bound += svi::doc_elbo(doc, local, &expectations, config.alpha);
        count += doc.len();
    }
    if count == 0 {
        return Err(Error::config(
            "held-out set contains no observations".to_string(),
        ));
    }
    Ok((bound, count))
}

/// Held-out perplexity proxy `exp(-B / N)`: the exponentiated negative
/// per-observation bound. Lower is better; with continuous observations
/// the density can exceed one, so values below one are legitimate.
pub fn perplexity(
    heldout: &[PatternWindow],
    state: &GlobalState,
    config: &ModelConfig,
) -> Result<f64> {
    let (bound, count) = heldout_bound(heldout, state, config)?;
    Ok((-bound / count as f64).exp())
}

/// Infer component proportions for a chronological window list: column
/// `tau` is `gamma_tau / sum(gamma_tau)` from converged local inference.
pub fn pattern_matrix(
    docs: &[PatternWindow],
    state: &GlobalState,
    alpha: f64,
) -> Result<PatternMatrix> {
    if docs.is_empty() {
        return Err(Error::config("pattern matrix needs at least one window"));
    }
    let expectations = GaussianExpectations::new(state)?;
    let proportions: Vec<DVector<f64>> = docs
        .par_iter()
        .map(|doc| {
            svi::local_step_cached(doc, &expectations, alpha, LOCAL_TOL, LOCAL_MAX_ITER)
                .map(|local| local.proportions())
        })
        .collect::<Result<Vec<_>>>()?;
    let k = state.num_components();
    let mut values = DMatrix::zeros(k, docs.len());
    for (tau, p) in proportions.iter().enumerate() {
        values.set_column(tau, p);
    }
    Ok(PatternMatrix {
        values,
        window_times: docs.iter().map(|d| d.start_time).collect(),
    })
}

/// Render proportions as an 8-bit binary portable graymap: one row per
/// component, one column per window, probability 0 black and 1 white
/// (gray level `round(255 p)`).
pub fn write_pattern_pgm(matrix: &PatternMatrix, path: &Path) -> Result<()> {
    let (k, t) = (matrix.num_components(), matrix.num_windows());
    let mut bytes = format!("P5\n{t} {k}\n255\n").into_bytes();
    bytes.reserve(k * t);
    for row in 0..k {
        for col in 0..t {
            let p = matrix.values[(row, col)].clamp(0.0, 1.0);
            bytes.push((255.0 * p).round() as u8);
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write proportions as CSV with header `time,c0..c{K-1}`, one row per
/// window.
pub fn write_pattern_csv(matrix: &PatternMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("time");
    for k in 0..matrix.num_components() {
        let _ = write!(out, ",c{k}");
    }
    out.push('\n');
    for (tau, ts) in matrix.window_times.iter().enumerate() {
        let _ = write!(out, "{ts}");
        for k in 0..matrix.num_components() {
            let _ = write!(out, ",{}", matrix.values[(k, tau)]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Minimum-norm least-squares solution of `A w = b` via singular value
/// decomposition, so rank-deficient proportion matrices still yield the
/// smallest consistent energy attribution.
pub fn fit_energy_map(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<EnergyMap> {
    if a.nrows() != b.len() {
        return Err(Error::dimension(format!(
            "proportion matrix has {} rows, energy vector has {}",
            a.nrows(),
            b.len()
        )));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::config("energy map needs a non-empty matrix"));
    }
    let svd = SVD::new(a.clone(), true, true);
    let cutoff = svd.singular_values.max() * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let w = svd
        .solve(b, cutoff)
        .map_err(|msg| Error::numerical(msg.to_string()))?;
    let residual_norm = (a * &w - b).norm();
    Ok(EnergyMap { w, residual_norm })
}

/// Predicted per-window energy `A w`.
pub fn predict_energy(a: &DMatrix<f64>, map: &EnergyMap) -> Result<DVector<f64>> {
    if a.ncols() != map.w.len() {
        return Err(Error::dimension(format!(
            "proportion matrix has {} columns, energy map has {} components",
            a.ncols(),
            map.w.len()
        )));
    }
    Ok(a * &map.w)
}

/// Observed per-window energy in joules: the active-power column summed
/// over each window, times the duration each row covers.
pub fn per_pattern_energy(
    docs: &[PatternWindow],
    power_column: usize,
    row_seconds: f64,
) -> Result<DVector<f64>> {
    if !(row_seconds > 0.0) {
        return Err(Error::config(format!(
            "row duration must be > 0 seconds, got {row_seconds}"
        )));
    }
    let mut energies = DVector::zeros(docs.len());
    for (tau, doc) in docs.iter().enumerate() {
        if power_column >= doc.dim() {
            return Err(Error::dimension(format!(
                "active-power column {power_column} out of range for dimension {}",
                doc.dim()
            )));
        }
        energies[tau] = doc.observations.column(power_column).sum() * row_seconds;
    }
    Ok(energies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NiwPosterior;
    use approx::assert_relative_eq;

    fn uniform_state(k: usize, f: usize) -> GlobalState {
        let post = NiwPosterior {
            qm: DVector::zeros(f),
            qomega: DMatrix::identity(f, f),
            qs: 1.0,
            qv: f as f64 + 2.0,
        };
        GlobalState {
            components: vec![post; k],
            t: 0,
        }
    }

    fn doc_from_rows(rows: &[&[f64]]) -> PatternWindow {
        let f = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        PatternWindow::new(
            DMatrix::from_row_slice(rows.len(), f, &flat),
            Timestamp::from_nanos(0),
            rows.len() as f64,
        )
    }

    #[test]
    fn identical_components_give_uniform_columns() {
        let state = uniform_state(4, 2);
        let docs = vec![
            doc_from_rows(&[&[0.0, 1.0], &[2.0, -1.0]]),
            doc_from_rows(&[&[5.0, 5.0]]),
        ];
        let matrix = pattern_matrix(&docs, &state, 0.5).unwrap();
        for tau in 0..2 {
            for k in 0..4 {
                assert_relative_eq!(matrix.values[(k, tau)], 0.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn columns_sum_to_one() {
        let mut state = uniform_state(3, 1);
        state.components[1].qm[0] = 4.0;
        state.components[2].qm[0] = -3.0;
        let docs: Vec<PatternWindow> = (0..5)
            .map(|i| doc_from_rows(&[&[i as f64], &[-(i as f64)], &[0.5]]))
            .collect();
        let matrix = pattern_matrix(&docs, &state, 0.3).unwrap();
        for tau in 0..matrix.num_windows() {
            let sum: f64 = matrix.values.column(tau).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-10);
            for k in 0..matrix.num_components() {
                let v = matrix.values[(k, tau)];
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn pgm_encoding_maps_probability_to_gray_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pattern.pgm");
        let matrix = PatternMatrix {
            values: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            window_times: vec![Timestamp::from_nanos(0), Timestamp::from_nanos(1)],
        };
        write_pattern_pgm(&matrix, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0u8, 255, 255, 0]);
    }

    #[test]
    fn pattern_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.csv");
        let matrix = PatternMatrix {
            values: DMatrix::from_row_slice(2, 1, &[0.25, 0.75]),
            window_times: vec![Timestamp::from_secs_f64(3.5)],
        };
        write_pattern_csv(&matrix, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "time,c0,c1\n3.5,0.25,0.75\n");
    }

    #[test]
    fn identity_proportions_recover_b_exactly() {
        let a = DMatrix::identity(3, 3);
        let b = DVector::from_row_slice(&[5.0, 7.0, 11.0]);
        let map = fit_energy_map(&a, &b).unwrap();
        assert_relative_eq!((map.w - &b).amax(), 0.0, epsilon = 1e-12);
        assert!(map.residual_norm < 1e-12);
        let predicted = predict_energy(&a, &fit_energy_map(&a, &b).unwrap()).unwrap();
        assert_relative_eq!((predicted - b).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_map_predicts_zero() {
        let a = DMatrix::from_element(4, 2, 0.5);
        let map = EnergyMap {
            w: DVector::zeros(2),
            residual_norm: 0.0,
        };
        assert_eq!(predict_energy(&a, &map).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn minimum_norm_solution_on_rank_deficient_matrix() {
        // Duplicate columns: any w with w0 + w1 = 2 fits; minimum norm is (1, 1).
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let b = DVector::from_row_slice(&[2.0, 4.0]);
        let map = fit_energy_map(&a, &b).unwrap();
        assert_relative_eq!(map.w[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(map.w[1], 1.0, epsilon = 1e-10);
        assert!(map.residual_norm < 1e-10);
    }

    #[test]
    fn per_pattern_energy_is_power_times_time() {
        let docs: Vec<PatternWindow> = [1.0, 2.0, 0.0]
            .iter()
            .map(|&p| {
                let row = [p, 9.0];
                let rows: Vec<&[f64]> = vec![&row; 900];
                doc_from_rows(&rows)
            })
            .collect();
        let b = per_pattern_energy(&docs, 0, 1.0).unwrap();
        assert_relative_eq!(b[0], 900.0, epsilon = 1e-9);
        assert_relative_eq!(b[1], 1800.0, epsilon = 1e-9);
        assert_eq!(b[2], 0.0);
        assert!(per_pattern_energy(&docs, 7, 1.0).is_err());
    }

    #[test]
    fn duplicating_heldout_set_keeps_perplexity() {
        let mut state = uniform_state(2, 1);
        state.components[1].qm[0] = 2.0;
        let config = ModelConfig::with_defaults(2, 1, 10);
        let docs = vec![
            doc_from_rows(&[&[0.1], &[1.9], &[0.4]]),
            doc_from_rows(&[&[2.2], &[-0.3]]),
        ];
        let single = perplexity(&docs, &state, &config).unwrap();
        let mut doubled = docs.clone();
        doubled.extend(docs.iter().cloned());
        let twice = perplexity(&doubled, &state, &config).unwrap();
        assert_relative_eq!(single, twice, max_relative = 1e-12);
        assert!(single > 0.0);
    }

    #[test]
    fn empty_heldout_set_is_an_error() {
        let state = uniform_state(2, 1);
        let config = ModelConfig::with_defaults(2, 1, 10);
        assert!(perplexity(&[], &state, &config).is_err());
    }
}
