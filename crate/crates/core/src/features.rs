//! Electrical feature extraction: active power, reactive power, and RMS
//! spectral band powers over fixed-length sample windows, plus assembly of
//! feature vectors into pattern windows.

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::model::PatternWindow;
use crate::time::Timestamp;

/// One window of synchronously sampled mains voltage and current.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    /// Voltage samples, volts.
    pub voltage: Vec<f64>,
    /// Current samples, amperes.
    pub current: Vec<f64>,
    /// Sample rate, samples per second.
    pub rate: f64,
    pub start_time: Timestamp,
}

impl RawWindow {
    pub fn validate(&self) -> Result<()> {
        if self.voltage.len() != self.current.len() {
            return Err(Error::dimension(format!(
                "voltage has {} samples, current has {}",
                self.voltage.len(),
                self.current.len()
            )));
        }
        if self.voltage.len() < 2 {
            return Err(Error::config(format!(
                "window needs at least 2 samples, got {}",
                self.voltage.len()
            )));
        }
        if !(self.rate > 0.0) {
            return Err(Error::config(format!(
                "sample rate must be > 0, got {}",
                self.rate
            )));
        }
        Ok(())
    }
}

/// Contiguous frequency bands given by ascending edges in hertz; band `j`
/// spans `[edges[j], edges[j+1])`, with the final band closed on the right
/// so a partition of `[0, rate/2]` captures the Nyquist bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    pub edges: Vec<f64>,
}

impl BandSpec {
    pub fn new(edges: Vec<f64>) -> Self {
        BandSpec { edges }
    }

    /// Default band layout: `count` octave-style bands covering
    /// `[0, rate/2]`, with edges at `nyquist / 2^(count-j)` so low
    /// frequencies get fine resolution.
    pub fn log_spaced(count: usize, rate: f64) -> Self {
        let nyquist = rate / 2.0;
        let mut edges = Vec::with_capacity(count + 1);
        edges.push(0.0);
        for j in 1..=count {
            edges.push(nyquist / 2f64.powi((count - j) as i32));
        }
        BandSpec { edges }
    }

    pub fn num_bands(&self) -> usize {
        self.edges.len().saturating_sub(1)
    }

    pub fn validate(&self, rate: f64) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::config(
                "band spec needs at least two edges".to_string(),
            ));
        }
        if !self.edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config(
                "band edges must be strictly ascending".to_string(),
            ));
        }
        if self.edges[0] < 0.0 {
            return Err(Error::config(format!(
                "first band edge must be >= 0, got {}",
                self.edges[0]
            )));
        }
        let nyquist = rate / 2.0;
        let last = *self.edges.last().unwrap();
        if last > nyquist {
            return Err(Error::config(format!(
                "band edge {last} Hz exceeds the Nyquist frequency {nyquist} Hz"
            )));
        }
        Ok(())
    }

    /// Index of the band containing frequency `f`, if any.
    fn band_of(&self, f: f64) -> Option<usize> {
        let last = self.edges.len() - 1;
        for j in 0..last {
            let upper_closed = j == last - 1;
            if f >= self.edges[j] && (f < self.edges[j + 1] || (upper_closed && f == self.edges[j + 1])) {
                return Some(j);
            }
        }
        None
    }
}

/// One extracted observation: electrical features for a sample window plus
/// whatever exogenous (water, gas, sensor) values are aligned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub timestamp: Timestamp,
    /// Mean instantaneous power, watts.
    pub active_power: f64,
    /// Power-triangle magnitude, volt-ampere-reactive.
    pub reactive_power: f64,
    /// One RMS value per frequency band.
    pub band_rms: Vec<f64>,
    /// Aligned non-electricity values.
    pub exogenous: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        2 + self.band_rms.len() + self.exogenous.len()
    }

    /// Flatten into the pattern-window column layout:
    /// active, reactive, bands, exogenous.
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.dim());
        row.push(self.active_power);
        row.push(self.reactive_power);
        row.extend_from_slice(&self.band_rms);
        row.extend_from_slice(&self.exogenous);
        row
    }
}

/// Mean instantaneous power `P = mean(v * i)`, in watts. Negative values
/// indicate reverse power flow.
pub fn active_power(w: &RawWindow) -> Result<f64> {
    w.validate()?;
    let n = w.voltage.len() as f64;
    Ok(w.voltage
        .iter()
        .zip(&w.current)
        .map(|(v, i)| v * i)
        .sum::<f64>()
        / n)
}

/// Reactive power magnitude from the power triangle,
/// `Q = sqrt(max(0, S^2 - P^2))` with `S = V_rms * I_rms`.
///
/// `S^2` is formed from the mean squares directly (not from the two RMS
/// roots) so that in-phase identical waveforms give exactly zero.
pub fn reactive_power(w: &RawWindow) -> Result<f64> {
    w.validate()?;
    let n = w.voltage.len() as f64;
    let mean_sq_v = w.voltage.iter().map(|v| v * v).sum::<f64>() / n;
    let mean_sq_i = w.current.iter().map(|i| i * i).sum::<f64>() / n;
    let p = active_power(w)?;
    Ok((mean_sq_v * mean_sq_i - p * p).max(0.0).sqrt())
}

/// RMS spectral power of the current waveform per frequency band.
///
/// Uses the discrete Fourier transform with one-sided magnitudes corrected
/// for their two-sided counterparts and normalized so that the squared band
/// values of a partition of `[0, rate/2]` sum to the signal's mean square
/// (Parseval). No tapering window is applied: feature windows are long
/// relative to mains cycles, and leakage affects all windows identically.
pub fn rms_band_spectrum(w: &RawWindow, bands: &BandSpec) -> Result<Vec<f64>> {
    w.validate()?;
    bands.validate(w.rate)?;
    let n = w.current.len();
    let mut buffer: Vec<Complex<f64>> = w
        .current
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buffer);

    let mut band_power = vec![0.0; bands.num_bands()];
    let half = n / 2;
    for (k, value) in buffer.iter().enumerate().take(half + 1) {
        let freq = k as f64 * w.rate / n as f64;
        // DC and (for even n) the Nyquist bin have no conjugate twin.
        let weight = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else {
            2.0
        };
        if let Some(j) = bands.band_of(freq) {
            band_power[j] += weight * value.norm_sqr() / (n as f64 * n as f64);
        }
    }
    Ok(band_power.into_iter().map(f64::sqrt).collect())
}

/// One raw electricity sample as read from disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    pub timestamp: Timestamp,
    pub voltage: f64,
    pub current: f64,
}

/// Slice a sample stream into fixed-duration windows and extract one
/// feature vector per complete window; a trailing partial window is
/// dropped. Exogenous values are attached later by stream alignment.
pub fn make_feature_stream(
    samples: &[RawSample],
    rate: f64,
    window_seconds: f64,
    bands: &BandSpec,
) -> Result<Vec<FeatureVector>> {
    if !(window_seconds > 0.0) {
        return Err(Error::config(format!(
            "window length must be > 0 seconds, got {window_seconds}"
        )));
    }
    if !(rate > 0.0) {
        return Err(Error::config(format!("sample rate must be > 0, got {rate}")));
    }
    let per_window = (window_seconds * rate).round() as usize;
    if per_window < 2 {
        return Err(Error::config(format!(
            "window of {window_seconds} s at {rate} Hz holds fewer than 2 samples"
        )));
    }
    let mut features = Vec::with_capacity(samples.len() / per_window);
    for chunk in samples.chunks_exact(per_window) {
        let window = RawWindow {
            voltage: chunk.iter().map(|s| s.voltage).collect(),
            current: chunk.iter().map(|s| s.current).collect(),
            rate,
            start_time: chunk[0].timestamp,
        };
        features.push(FeatureVector {
            timestamp: window.start_time,
            active_power: active_power(&window)?,
            reactive_power: reactive_power(&window)?,
            band_rms: rms_band_spectrum(&window, bands)?,
            exogenous: Vec::new(),
        });
    }
    Ok(features)
}

/// Stack consecutive feature vectors, `per_window` at a time, into pattern
/// windows; a trailing partial group is dropped. All inputs must share one
/// column layout so every emitted window has the same dimension.
pub fn assemble_pattern_windows(
    features: &[FeatureVector],
    per_window: usize,
) -> Result<Vec<PatternWindow>> {
    if per_window == 0 {
        return Err(Error::config("pattern window length n must be >= 1"));
    }
    if let Some(first) = features.first() {
        let dim = first.dim();
        if let Some(bad) = features.iter().position(|fv| fv.dim() != dim) {
            return Err(Error::dimension(format!(
                "feature vector {bad} has dimension {}, expected {dim}",
                features[bad].dim()
            )));
        }
    }
    let mut windows = Vec::with_capacity(features.len() / per_window);
    for chunk in features.chunks_exact(per_window) {
        let dim = chunk[0].dim();
        let rows: Vec<f64> = chunk.iter().flat_map(|fv| fv.to_row()).collect();
        let observations = DMatrix::from_row_slice(per_window, dim, &rows);
        let step = if per_window >= 2 {
            (chunk[1].timestamp.as_nanos() - chunk[0].timestamp.as_nanos()) as f64 / 1e9
        } else {
            0.0
        };
        windows.push(PatternWindow::new(
            observations,
            chunk[0].timestamp,
            step * per_window as f64,
        ));
    }
    Ok(windows)
}
