//! Data preparation and the fit/evaluate step shared by `train` and `benchmark`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dgp_gvi::data::{self, contaminate, load_csv, rmse, sine_data, split_columns, split_xy, test_log_likelihood, Dataset};
use dgp_gvi::dgp::{predict, DgpModel};
use dgp_gvi::linalg::Mat;
use dgp_gvi::train::{derive_seed, train, TrainTrace};

use crate::config::{DatasetSpec, MethodSpec, RunConfig};
use crate::error::{CliError, CliResult};

// seed streams, disjoint from the ones used inside training
const STREAM_SPLIT: u64 = 16;
const STREAM_DATA: u64 = 17;
const STREAM_CONTAMINATION: u64 = 18;
const STREAM_INIT: u64 = 19;
const STREAM_TRAIN: u64 = 20;
const STREAM_PREDICT: u64 = 21;

pub const OUTPUT_DIR_ENV: &str = "DGP_GVI_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "dgp-gvi-out";

/// Flag, then config, then environment, then the built-in default.
pub fn output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// Raw features and targets, before any split.
pub struct Source {
    pub x: Mat<f64>,
    pub y: Mat<f64>,
}

pub fn load_source(cfg: &RunConfig) -> CliResult<Source> {
    match &cfg.dataset {
        DatasetSpec::Csv {
            path,
            has_header,
            targets,
        } => {
            let table = load_csv(path, *has_header).map_err(|e| CliError::config(format!("dataset: {e}")))?;
            if table.dropped_rows > 0 {
                log::warn!("dropped {} rows with missing values", table.dropped_rows);
            }
            let (x, y) = split_columns(&table.values, targets).map_err(|e| CliError::config(format!("dataset.targets: {e}")))?;
            if x.rows() < data::MIN_ROWS {
                return Err(CliError::config(format!(
                    "dataset: {} usable rows, at least {} are required",
                    x.rows(),
                    data::MIN_ROWS
                )));
            }
            Ok(Source { x, y })
        }
        DatasetSpec::Sine { n, noise_sd, .. } => {
            let (x, y) = sine_data(*n, *noise_sd, derive_seed(cfg.train.seed, STREAM_DATA, 0));
            Ok(Source { x, y })
        }
    }
}

pub fn split_seed(cfg: &RunConfig, split: usize) -> u64 {
    derive_seed(cfg.train.seed, STREAM_SPLIT, split as u64)
}

/// Normalized split `split`; configured contamination hits training targets only.
pub fn prepare_split(cfg: &RunConfig, src: &Source, split: usize) -> CliResult<Dataset> {
    let seed = split_seed(cfg, split);
    let ds = split_xy(&src.x, &src.y, cfg.test_fraction, seed)?;
    let contamination = match &cfg.dataset {
        DatasetSpec::Sine { contamination, .. } => *contamination,
        DatasetSpec::Csv { .. } => None,
    };
    let Some(c) = contamination else {
        return Ok(ds);
    };
    let mut y_train = src.y.select_rows(&ds.train_idx);
    let hit = contaminate(
        &mut y_train,
        c.fraction,
        c.magnitude,
        derive_seed(cfg.train.seed, STREAM_CONTAMINATION, split as u64),
    );
    log::debug!("split {split}: {} contaminated training targets", hit.len());
    let mut y = src.y.clone();
    for (k, &i) in ds.train_idx.iter().enumerate() {
        y.row_mut(i).copy_from_slice(y_train.row(k));
    }
    // the permutation depends only on n and the seed, so the indices are unchanged
    Ok(split_xy(&src.x, &y, cfg.test_fraction, seed)?)
}

pub struct Fit {
    pub model: DgpModel<f64>,
    pub trace: TrainTrace,
    pub rmse: f64,
    pub nll: f64,
    pub seconds: f64,
}

pub fn fit_and_evaluate(cfg: &RunConfig, ds: &Dataset, method: &MethodSpec, split: usize) -> CliResult<Fit> {
    let start = Instant::now();
    let s = split as u64;
    let base = cfg.train.seed;
    let model = DgpModel::init(&ds.x_train, ds.output_dim(), &cfg.model, derive_seed(base, STREAM_INIT, s))?;
    let mut tc = cfg.train.clone();
    tc.seed = derive_seed(base, STREAM_TRAIN, s);
    let gvi = method.gvi(cfg.model.layers);
    let (model, trace) = train(&model, &ds.x_train, &ds.y_train, &gvi, &tc)?;
    let pred = predict(&model, &ds.x_test, cfg.prediction_samples, derive_seed(base, STREAM_PREDICT, s))?;
    let rmse = rmse(&pred.mean, &ds.y_test, &ds.y_stats)?;
    let nll = -test_log_likelihood(&pred, &ds.y_test, &ds.y_stats)?;
    if !rmse.is_finite() || !nll.is_finite() {
        return Err(CliError::Runtime(format!("non-finite test metrics (rmse {rmse}, nll {nll})")));
    }
    Ok(Fit {
        model,
        trace,
        rmse,
        nll,
        seconds: start.elapsed().as_secs_f64(),
    })
}
