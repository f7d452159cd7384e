//! Multi-source stream ingestion: clock-shift synchronization, forward-fill
//! alignment onto the union of timestamps, and the CSV contract for series
//! and aligned frames.

use nalgebra::DMatrix;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::PatternWindow;
use crate::time::Timestamp;

/// A named stream of timestamped scalar or vector samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedSeries {
    pub name: String,
    /// Value column names; length gives the sample width.
    pub columns: Vec<String>,
    pub samples: Vec<(Timestamp, Vec<f64>)>,
}

impl TimedSeries {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::config(format!(
                "series {} has no value columns",
                self.name
            )));
        }
        for (i, (_, values)) in self.samples.iter().enumerate() {
            if values.len() != self.columns.len() {
                return Err(Error::dimension(format!(
                    "series {} sample {i} has {} values, expected {}",
                    self.name,
                    values.len(),
                    self.columns.len()
                )));
            }
        }
        if let Some(i) = self
            .samples
            .windows(2)
            .position(|pair| pair[0].0 >= pair[1].0)
        {
            return Err(Error::config(format!(
                "series {} timestamps not strictly increasing at sample {}",
                self.name,
                i + 1
            )));
        }
        Ok(())
    }
}

/// Distribute a total clock shift linearly over a series: sample `i`
/// (zero-based) moves by `i * total_shift / N`, so the first sample is
/// untouched and the drift accumulated across the recording is undone.
///
/// Errors if the shift is large enough to break monotonicity.
pub fn synchronize(series: &TimedSeries, total_shift_seconds: f64) -> Result<TimedSeries> {
    if series.samples.is_empty() {
        return Err(Error::config(format!("series {} is empty", series.name)));
    }
    series.validate()?;
    let n = series.samples.len() as f64;
    let shifted = TimedSeries {
        name: series.name.clone(),
        columns: series.columns.clone(),
        samples: series
            .samples
            .iter()
            .enumerate()
            .map(|(i, (ts, values))| {
                (
                    ts.offset_secs(i as f64 * total_shift_seconds / n),
                    values.clone(),
                )
            })
            .collect(),
    };
    if let Some(i) = shifted
        .samples
        .windows(2)
        .position(|pair| pair[0].0 >= pair[1].0)
    {
        return Err(Error::numerical(format!(
            "shift of {total_shift_seconds} s breaks timestamp order in series {} at sample {}",
            series.name,
            i + 1
        )));
    }
    Ok(shifted)
}

/// A dense timestamped matrix: one row per timestamp, one column per
/// source stream column, nothing missing.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFrame {
    pub timestamps: Vec<Timestamp>,
    pub columns: Vec<String>,
    /// Row-major values; `rows.len() == timestamps.len()` and every row has
    /// `columns.len()` entries.
    pub rows: Vec<Vec<f64>>,
}

impl AlignedFrame {
    pub fn num_rows(&self) -> usize {
        self.timestamps.len()
    }

    /// Chunk rows into pattern windows of `per_window` consecutive rows,
    /// dropping a trailing partial chunk.
    pub fn to_pattern_windows(&self, per_window: usize) -> Result<Vec<PatternWindow>> {
        if per_window == 0 {
            return Err(Error::config("pattern window length n must be >= 1"));
        }
        let dim = self.columns.len();
        let mut windows = Vec::with_capacity(self.num_rows() / per_window);
        let chunks = self.num_rows() / per_window;
        for c in 0..chunks {
            let lo = c * per_window;
            let flat: Vec<f64> = self.rows[lo..lo + per_window]
                .iter()
                .flat_map(|r| r.iter().copied())
                .collect();
            let step = if per_window >= 2 {
                (self.timestamps[lo + 1].as_nanos() - self.timestamps[lo].as_nanos()) as f64 / 1e9
            } else {
                0.0
            };
            windows.push(PatternWindow::new(
                DMatrix::from_row_slice(per_window, dim, &flat),
                self.timestamps[lo],
                step * per_window as f64,
            ));
        }
        Ok(windows)
    }
}

/// Merge streams onto the sorted union of their timestamps with forward
/// fill: each cell takes its stream's most recent value at or before the
/// row timestamp. Rows before the latest first-timestamp are dropped so
/// every cell has a defined predecessor; nothing is back-filled.
pub fn align(streams: &[TimedSeries]) -> Result<AlignedFrame> {
    if streams.is_empty() {
        return Err(Error::config("align needs at least one stream"));
    }
    for s in streams {
        s.validate()?;
        if s.samples.is_empty() {
            return Err(Error::config(format!("series {} is empty", s.name)));
        }
    }

    let mut columns = Vec::new();
    for s in streams {
        if s.width() == 1 {
            columns.push(s.name.clone());
        } else {
            columns.extend(s.columns.iter().cloned());
        }
    }
    for (i, name) in columns.iter().enumerate() {
        if columns[..i].contains(name) {
            return Err(Error::config(format!(
                "aligned frame would contain duplicate column {name}"
            )));
        }
    }

    let start = streams
        .iter()
        .map(|s| s.samples[0].0)
        .max()
        .expect("at least one stream");
    let mut union: Vec<Timestamp> = streams
        .iter()
        .flat_map(|s| s.samples.iter().map(|(ts, _)| *ts))
        .filter(|ts| *ts >= start)
        .collect();
    union.sort_unstable();
    union.dedup();

    let mut cursors = vec![0usize; streams.len()];
    let mut rows = Vec::with_capacity(union.len());
    for &ts in &union {
        let mut row = Vec::with_capacity(columns.len());
        for (s, cursor) in streams.iter().zip(cursors.iter_mut()) {
            while *cursor + 1 < s.samples.len() && s.samples[*cursor + 1].0 <= ts {
                *cursor += 1;
            }
            debug_assert!(s.samples[*cursor].0 <= ts);
            row.extend_from_slice(&s.samples[*cursor].1);
        }
        rows.push(row);
    }
    Ok(AlignedFrame {
        timestamps: union,
        columns,
        rows,
    })
}

fn split_csv_line(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_value(
    field: &str,
    path: &Path,
    line_no: usize,
) -> Result<f64> {
    let value: f64 = field
        .parse()
        .map_err(|_| Error::format(path, line_no, format!("cannot parse value {field:?}")))?;
    if !value.is_finite() {
        return Err(Error::format(
            path,
            line_no,
            format!("non-finite value {field:?}"),
        ));
    }
    Ok(value)
}

/// Read a series CSV with header `timestamp,<col>[,<col>...]`.
///
/// When `schema` is given, the value-column names must match it exactly.
/// Malformed rows are rejected with their line number; timestamps must be
/// strictly increasing. The series takes its name from the file stem.
pub fn read_series_csv(path: &Path, schema: Option<&[&str]>) -> Result<TimedSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "missing header line".to_string()))?;
    let fields = split_csv_line(header);
    if fields.first() != Some(&"timestamp") {
        return Err(Error::format(
            path,
            1,
            format!("header must start with 'timestamp', got {:?}", fields.first().unwrap_or(&"")),
        ));
    }
    if fields.len() < 2 {
        return Err(Error::format(
            path,
            1,
            "header needs at least one value column".to_string(),
        ));
    }
    let columns: Vec<String> = fields[1..].iter().map(|s| s.to_string()).collect();
    if let Some(expected) = schema {
        if columns.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(Error::format(
                path,
                1,
                format!("header columns {columns:?} do not match expected {expected:?}"),
            ));
        }
    }

    let mut samples: Vec<(Timestamp, Vec<f64>)> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() != columns.len() + 1 {
            return Err(Error::format(
                path,
                line_no,
                format!("expected {} fields, got {}", columns.len() + 1, fields.len()),
            ));
        }
        let ts = Timestamp::parse(fields[0]).ok_or_else(|| {
            Error::format(path, line_no, format!("cannot parse timestamp {:?}", fields[0]))
        })?;
        if let Some((last, _)) = samples.last() {
            if ts <= *last {
                return Err(Error::format(
                    path,
                    line_no,
                    format!("timestamp {ts} does not increase past {last}"),
                ));
            }
        }
        let values = fields[1..]
            .iter()
            .map(|f| parse_value(f, path, line_no))
            .collect::<Result<Vec<f64>>>()?;
        samples.push((ts, values));
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".to_string());
    Ok(TimedSeries {
        name,
        columns,
        samples,
    })
}

/// Write an aligned frame as CSV. Values use the shortest decimal
/// representation that round-trips, so read-back is bit-exact for finite
/// doubles; non-finite values are rejected.
pub fn write_frame_csv(frame: &AlignedFrame, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("timestamp");
    for c in &frame.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (ts, row) in frame.timestamps.iter().zip(&frame.rows) {
        let _ = write!(out, "{ts}");
        for v in row {
            if !v.is_finite() {
                return Err(Error::numerical(format!(
                    "refusing to write non-finite value {v} at timestamp {ts}"
                )));
            }
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read back a frame produced by `write_frame_csv` (or any CSV matching
/// the same contract).
pub fn read_frame_csv(path: &Path) -> Result<AlignedFrame> {
    let series = read_series_csv(path, None)?;
    Ok(AlignedFrame {
        timestamps: series.samples.iter().map(|(ts, _)| *ts).collect(),
        columns: series.columns,
        rows: series.samples.into_iter().map(|(_, v)| v).collect(),
    })
}
