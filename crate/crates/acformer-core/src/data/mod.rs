//! CSV ingestion, chronological splitting, train-fitted standardization and
//! sliding-window batch generation.

mod demo;

pub use demo::ett_like_series;

use std::path::Path;

use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv parse failure in {path}: {message}")]
    Csv { path: String, message: String },
    #[error("{path}: unparseable cell at row {row}, column {col}: '{cell}'")]
    BadCell {
        path: String,
        row: usize,
        col: usize,
        cell: String,
    },
    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFinite { path: String, row: usize, col: usize },
    #[error("{path}: no data rows")]
    Empty { path: String },
    #[error("{path}: header must start with a timestamp column followed by at least one numeric column")]
    BadHeader { path: String },
    #[error("split ratio parts must be positive")]
    BadRatio,
    #[error("split '{split}' has {len} rows; needs at least {needed} for one (input, label) window")]
    SplitTooSmall {
        split: &'static str,
        len: usize,
        needed: usize,
    },
}

/// A multivariate series loaded from disk: N rows × C channels, plus the
/// timestamp strings (kept for provenance, never used numerically).
#[derive(Debug, Clone)]
pub struct SeriesDataset {
    pub name: String,
    /// N×C values, row-major.
    pub values: Tensor,
    /// Channel names from the header (timestamp column excluded).
    pub columns: Vec<String>,
    pub timestamps: Vec<String>,
}

impl SeriesDataset {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn from_parts(
        name: impl Into<String>,
        values: Tensor,
        columns: Vec<String>,
        timestamps: Vec<String>,
    ) -> Self {
        assert_eq!(values.shape().len(), 2);
        assert_eq!(values.shape()[1], columns.len());
        assert_eq!(values.shape()[0], timestamps.len());
        SeriesDataset {
            name: name.into(),
            values,
            columns,
            timestamps,
        }
    }
}

/// Parse an ETT-style CSV: header `date,<ch1>,<ch2>,...`, one timestamp
/// string plus C numeric cells per row, no missing cells. Cell positions in
/// errors are 1-based and count the timestamp as column 1.
pub fn load_csv(path: &Path) -> Result<SeriesDataset, DataError> {
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv {
            path: path_str.clone(),
            message: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 {
        return Err(DataError::BadHeader { path: path_str });
    }
    let columns: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let channels = columns.len();

    let mut data = Vec::new();
    let mut timestamps = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::Csv {
            path: path_str.clone(),
            message: e.to_string(),
        })?;
        if record.len() != channels + 1 {
            return Err(DataError::Csv {
                path: path_str.clone(),
                message: format!(
                    "row {row} has {} fields, expected {}",
                    record.len(),
                    channels + 1
                ),
            });
        }
        timestamps.push(record[0].to_string());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| DataError::BadCell {
                path: path_str.clone(),
                row,
                col: j + 2,
                cell: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    path: path_str.clone(),
                    row,
                    col: j + 2,
                });
            }
            data.push(value);
        }
    }
    if timestamps.is_empty() {
        return Err(DataError::Empty { path: path_str });
    }
    let rows = timestamps.len();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| path_str.clone());
    Ok(SeriesDataset {
        name,
        values: Tensor::new(vec![rows, channels], data).expect("consistent row widths"),
        columns,
        timestamps,
    })
}

/// Write a dataset back out in the input CSV format (header
/// `date,<channels...>`, shortest-round-trip float formatting).
pub fn write_csv(ds: &SeriesDataset, path: &Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "date")?;
    for col in &ds.columns {
        write!(out, ",{col}")?;
    }
    writeln!(out)?;
    let (rows, channels) = (ds.rows(), ds.channels());
    for r in 0..rows {
        write!(out, "{}", ds.timestamps[r])?;
        for c in 0..channels {
            write!(out, ",{}", ds.values.data()[r * channels + c])?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Split proportions; normalized by their sum.
#[derive(Debug, Clone, Copy)]
pub struct SplitRatio {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatio {
    /// The 6:2:2 convention used for ETT-class datasets.
    pub const ETT: SplitRatio = SplitRatio {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };
    /// The 7:1:2 convention used for the larger benchmarks.
    pub const LARGE: SplitRatio = SplitRatio {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };
}

/// Chronological split boundaries plus train-fitted standardization
/// statistics.
///
/// Label regions are `[0, train_end)`, `[train_end, val_end)` and
/// `[val_end, N)`; the validation/test *input* windows may reach back up to
/// S steps before their boundary for context, which the segment ranges
/// below account for.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train_end: usize,
    pub val_end: usize,
    pub rows: usize,
    pub input_len: usize,
    pub pred_len: usize,
    /// Per-channel mean fitted on the train rows only.
    pub mean: Vec<f64>,
    /// Per-channel standard deviation fitted on the train rows only
    /// (population; values below 1e-8 replaced by 1.0).
    pub std: Vec<f64>,
}

/// A contiguous range of rows that window generation may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Split chronologically at floor(N·train) and floor(N·(train+val)).
///
/// `input_len`/`pred_len` are needed up front so that every split can be
/// checked to host at least one (S, P) window.
pub fn chronological_split(
    ds: &SeriesDataset,
    ratio: SplitRatio,
    input_len: usize,
    pred_len: usize,
) -> Result<DatasetSplit, DataError> {
    if ratio.train <= 0.0 || ratio.val <= 0.0 || ratio.test <= 0.0 {
        return Err(DataError::BadRatio);
    }
    let n = ds.rows();
    let total = ratio.train + ratio.val + ratio.test;
    let train_end = (n as f64 * ratio.train / total).floor() as usize;
    let val_end = (n as f64 * (ratio.train + ratio.val) / total).floor() as usize;
    let window = input_len + pred_len;

    // Train windows live entirely inside [0, train_end); val/test inputs
    // may start S steps before their boundary.
    let checks = [
        ("train", train_end),
        ("val", val_end - train_end + input_len),
        ("test", n - val_end + input_len),
    ];
    for (split, len) in checks {
        if len < window {
            return Err(DataError::SplitTooSmall {
                split,
                len,
                needed: window,
            });
        }
    }

    let channels = ds.channels();
    let mut mean = vec![0.0; channels];
    for r in 0..train_end {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += ds.values.at(&[r, c]);
        }
    }
    mean.iter_mut().for_each(|m| *m /= train_end as f64);
    let mut std = vec![0.0; channels];
    for r in 0..train_end {
        for (c, s) in std.iter_mut().enumerate() {
            let d = ds.values.at(&[r, c]) - mean[c];
            *s += d * d;
        }
    }
    for s in std.iter_mut() {
        *s = (*s / train_end as f64).sqrt();
        if *s < 1e-8 {
            *s = 1.0;
        }
    }

    Ok(DatasetSplit {
        train_end,
        val_end,
        rows: n,
        input_len,
        pred_len,
        mean,
        std,
    })
}

impl DatasetSplit {
    pub fn train_segment(&self) -> Segment {
        Segment {
            start: 0,
            end: self.train_end,
        }
    }

    /// Validation rows, reaching back `input_len` steps for context.
    pub fn val_segment(&self) -> Segment {
        Segment {
            start: self.train_end - self.input_len,
            end: self.val_end,
        }
    }

    /// Test rows, reaching back `input_len` steps for context.
    pub fn test_segment(&self) -> Segment {
        Segment {
            start: self.val_end - self.input_len,
            end: self.rows,
        }
    }
}

/// Standardize with the split's train-fitted statistics.
pub fn standardize(ds: &SeriesDataset, split: &DatasetSplit) -> SeriesDataset {
    let (rows, channels) = (ds.rows(), ds.channels());
    let values = Tensor::from_fn(&[rows, channels], |i| {
        let c = i % channels;
        (ds.values.data()[i] - split.mean[c]) / split.std[c]
    });
    SeriesDataset {
        name: ds.name.clone(),
        values,
        columns: ds.columns.clone(),
        timestamps: ds.timestamps.clone(),
    }
}

/// One (input, label) pair of windows.
#[derive(Debug, Clone)]
pub struct Batch {
    /// B×S×C
    pub inputs: Tensor,
    /// B×P×C
    pub labels: Tensor,
    /// Absolute start row of each window in the batch.
    pub starts: Vec<usize>,
}

/// Iterator over sliding-window batches of a segment.
///
/// Windows start at every position t with t+S+P ≤ segment length
/// (count = len − S − P + 1). With `shuffle`, the order is a seeded
/// permutation; the final partial batch is always kept.
pub struct WindowBatches<'a> {
    values: &'a Tensor,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    input_len: usize,
    pred_len: usize,
}

pub fn window_batches<'a>(
    ds: &'a SeriesDataset,
    segment: Segment,
    input_len: usize,
    pred_len: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<WindowBatches<'a>, DataError> {
    let window = input_len + pred_len;
    if segment.len() < window {
        return Err(DataError::SplitTooSmall {
            split: "segment",
            len: segment.len(),
            needed: window,
        });
    }
    let count = segment.len() - window + 1;
    let mut order: Vec<usize> = (0..count).map(|t| segment.start + t).collect();
    if shuffle {
        order.shuffle(&mut rng::stream(seed, "shuffle"));
    }
    Ok(WindowBatches {
        values: &ds.values,
        order,
        cursor: 0,
        batch_size,
        input_len,
        pred_len,
    })
}

impl WindowBatches<'_> {
    pub fn window_count(&self) -> usize {
        self.order.len()
    }
}

impl Iterator for WindowBatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let starts: Vec<usize> = self.order[self.cursor..end].to_vec();
        self.cursor = end;

        let channels = self.values.shape()[1];
        let b = starts.len();
        let data = self.values.data();
        let mut inputs = Vec::with_capacity(b * self.input_len * channels);
        let mut labels = Vec::with_capacity(b * self.pred_len * channels);
        for &t in &starts {
            inputs.extend_from_slice(&data[t * channels..(t + self.input_len) * channels]);
            let label_start = t + self.input_len;
            labels.extend_from_slice(
                &data[label_start * channels..(label_start + self.pred_len) * channels],
            );
        }
        Some(Batch {
            inputs: Tensor::new(vec![b, self.input_len, channels], inputs).unwrap(),
            labels: Tensor::new(vec![b, self.pred_len, channels], labels).unwrap(),
            starts,
        })
    }
}
