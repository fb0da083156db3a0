//! CSV ingestion, train-only z-scoring, splits and metrics in original units.
//!
//! The CSV dialect is plain: comma separated, `.` decimals, an optional single
//! header row and no quoting. Empty cells and `NaN` mark missing values; such
//! rows are dropped and counted.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dgp::Predictive;
use crate::error::{GviError, Result};
use crate::linalg::Mat;

/// Smallest dataset accepted by [`normalize_split`].
pub const MIN_ROWS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub header: Option<Vec<String>>,
    pub values: Mat<f64>,
    /// Rows discarded because they contained missing values.
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }
}

/// Which columns hold the regression targets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetColumns {
    #[default]
    Last,
    /// Zero-based column indices.
    Indices(Vec<usize>),
}

impl TargetColumns {
    /// Target indices for a table with `cols` columns.
    pub fn resolve(&self, cols: usize) -> Result<Vec<usize>> {
        let idx = match self {
            TargetColumns::Last => vec![cols.saturating_sub(1)],
            TargetColumns::Indices(v) => v.clone(),
        };
        if cols < 2 {
            return Err(GviError::InvalidModel("table needs at least one feature and one target column".into()));
        }
        if idx.is_empty() || idx.len() >= cols {
            return Err(GviError::InvalidModel(format!(
                "{} target columns leave no features in a {cols}-column table",
                idx.len()
            )));
        }
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != idx.len() {
            return Err(GviError::InvalidModel("duplicate target column".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(GviError::DimensionMismatch {
                context: "target column index",
                expected: cols - 1,
                found: bad,
            });
        }
        Ok(idx)
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() {
        Some(f64::NAN)
    } else {
        t.parse::<f64>().ok()
    }
}

/// Reads a numeric CSV. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<RawTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let header = if has_header {
        lines
            .next()
            .map(|(_, l)| l.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>())
    } else {
        None
    };
    let mut width = header.as_ref().map(Vec::len);
    let mut data = Vec::new();
    let mut rows = 0;
    let mut dropped = 0;
    for (lineno, line) in lines {
        let row = lineno + 1;
        let cells: Vec<&str> = line.split(',').collect();
        let expected = *width.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(GviError::RaggedRow {
                row,
                expected,
                found: cells.len(),
            });
        }
        let mut values = Vec::with_capacity(expected);
        for (c, cell) in cells.iter().enumerate() {
            values.push(parse_cell(cell).ok_or_else(|| GviError::Parse {
                row,
                column: c + 1,
                content: cell.trim().to_string(),
            })?);
        }
        if values.iter().any(|v| v.is_nan()) {
            dropped += 1;
            continue;
        }
        data.extend(values);
        rows += 1;
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows with missing values", path.display());
    }
    if rows == 0 {
        return Err(GviError::EmptyFile(path.to_path_buf()));
    }
    let cols = width.unwrap_or(0);
    Ok(RawTable {
        header,
        values: Mat::from_vec(rows, cols, data)?,
        dropped_rows: dropped,
    })
}

/// Writes `values` with shortest round-trip float formatting.
pub fn write_csv(path: impl AsRef<Path>, values: &Mat<f64>, header: Option<&[String]>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    if let Some(h) = header {
        writeln!(out, "{}", h.join(","))?;
    }
    for i in 0..values.rows() {
        let row: Vec<String> = values.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Per-column mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Stats {
    /// Mean and population standard deviation of each column; constant
    /// columns get std 1.
    pub fn fit(m: &Mat<f64>) -> Self {
        let n = m.rows() as f64;
        let mut mean = Vec::with_capacity(m.cols());
        let mut std = Vec::with_capacity(m.cols());
        for j in 0..m.cols() {
            let col = m.column(j);
            let mu = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            let mut sd = var.sqrt();
            if !(sd > 0.0 && sd.is_finite()) {
                log::warn!("column {j} is constant; using std 1");
                sd = 1.0;
            }
            mean.push(mu);
            std.push(sd);
        }
        Stats { mean, std }
    }

    /// Identity transform for `d` columns.
    pub fn identity(d: usize) -> Self {
        Stats {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn normalize(&self, m: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(m.rows(), m.cols(), |i, j| (m[(i, j)] - self.mean[j]) / self.std[j])
    }

    pub fn denormalize(&self, m: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * self.std[j] + self.mean[j])
    }
}

/// Normalized train/test data with the statistics needed to undo it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x_train: Mat<f64>,
    pub y_train: Mat<f64>,
    pub x_test: Mat<f64>,
    pub y_test: Mat<f64>,
    pub x_stats: Stats,
    pub y_stats: Stats,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.x_train.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.y_train.cols()
    }
}

/// Separates feature and target columns.
pub fn split_columns(table: &Mat<f64>, targets: &TargetColumns) -> Result<(Mat<f64>, Mat<f64>)> {
    let t = targets.resolve(table.cols())?;
    let features: Vec<usize> = (0..table.cols()).filter(|j| !t.contains(j)).collect();
    let x = Mat::from_fn(table.rows(), features.len(), |i, j| table[(i, features[j])]);
    let y = Mat::from_fn(table.rows(), t.len(), |i, j| table[(i, t[j])]);
    Ok((x, y))
}

/// Seeded train/test split followed by z-scoring fitted on the train rows only.
///
/// The test set has `round(n · test_fraction)` rows, at least one and at most `n − 1`.
pub fn normalize_split(table: &RawTable, targets: &TargetColumns, test_fraction: f64, seed: u64) -> Result<Dataset> {
    let (x, y) = split_columns(&table.values, targets)?;
    split_xy(&x, &y, test_fraction, seed)
}

/// [`normalize_split`] for features and targets that are already separated.
pub fn split_xy(x: &Mat<f64>, y: &Mat<f64>, test_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(GviError::InvalidHyperparameter {
            name: "test_fraction",
            value: test_fraction,
            reason: "must lie in the open interval (0, 1)",
        });
    }
    if x.rows() != y.rows() {
        return Err(GviError::DimensionMismatch {
            context: "feature/target rows",
            expected: x.rows(),
            found: y.rows(),
        });
    }
    let n = x.rows();
    if n < MIN_ROWS {
        return Err(GviError::TooFewRows(n));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_idx = perm[..n_test].to_vec();
    let mut train_idx = perm[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let (xtr, ytr) = (x.select_rows(&train_idx), y.select_rows(&train_idx));
    let x_stats = Stats::fit(&xtr);
    let y_stats = Stats::fit(&ytr);
    Ok(Dataset {
        x_train: x_stats.normalize(&xtr),
        y_train: y_stats.normalize(&ytr),
        x_test: x_stats.normalize(&x.select_rows(&test_idx)),
        y_test: y_stats.normalize(&y.select_rows(&test_idx)),
        x_stats,
        y_stats,
        train_idx,
        test_idx,
    })
}

/// Root mean squared error in original target units; inputs are normalized.
pub fn rmse(pred: &Mat<f64>, truth: &Mat<f64>, y_stats: &Stats) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(GviError::DimensionMismatch {
            context: "rmse",
            expected: truth.rows() * truth.cols(),
            found: pred.rows() * pred.cols(),
        });
    }
    if y_stats.std.len() != truth.cols() {
        return Err(GviError::DimensionMismatch {
            context: "rmse statistics",
            expected: truth.cols(),
            found: y_stats.std.len(),
        });
    }
    let mut acc = 0.0;
    for i in 0..pred.rows() {
        for j in 0..pred.cols() {
            acc += ((pred[(i, j)] - truth[(i, j)]) * y_stats.std[j]).powi(2);
        }
    }
    Ok((acc / (pred.rows() * pred.cols()) as f64).sqrt())
}

/// Mean per-point predictive log density in original target units.
pub fn test_log_likelihood(pred: &Predictive, y_test: &Mat<f64>, y_stats: &Stats) -> Result<f64> {
    let ld = pred.log_density(y_test)?;
    let log_jacobian: f64 = y_stats.std.iter().map(|s| s.ln()).sum();
    Ok(ld.iter().sum::<f64>() / ld.len() as f64 - log_jacobian)
}

/// Noisy 1-D sine regression data, `y = sin(3x/2) + x/5 + N(0, noise_sd²)` on `x ∈ [−3, 3]`.
pub fn sine_data(n: usize, noise_sd: f64, seed: u64) -> (Mat<f64>, Mat<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Mat::from_fn(n, 1, |_, _| rng.random_range(-3.0..3.0));
    let y = Mat::from_fn(n, 1, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        sine_truth(x[(i, 0)]) + noise_sd * e
    });
    (x, y)
}

/// Noise-free regression function of [`sine_data`].
pub fn sine_truth(x: f64) -> f64 {
    (1.5 * x).sin() + 0.2 * x
}

/// Shifts a random `fraction` of the rows of `y` by `magnitude` (sign chosen
/// at random) and returns the affected row indices.
pub fn contaminate(y: &mut Mat<f64>, fraction: f64, magnitude: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = (y.rows() as f64 * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..y.rows()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(k);
    idx.sort_unstable();
    for &i in &idx {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for v in y.row_mut(i) {
            *v += sign * magnitude;
        }
    }
    idx
}
