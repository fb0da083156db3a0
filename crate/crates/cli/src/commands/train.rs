use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use dgp_gvi::checkpoint::Checkpoint;
use serde::Serialize;

use super::{create_dir, write_file};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{fit_and_evaluate, load_source, output_dir, prepare_split};

/// Contents of `metrics.json`. Wall-clock time is left out so that
/// repeated runs produce identical files.
#[derive(Debug, Serialize)]
pub struct TrainMetrics {
    pub seed: u64,
    pub method: String,
    pub n_train: usize,
    pub n_test: usize,
    pub iterations: usize,
    pub final_objective: f64,
    pub rmse: f64,
    pub nll: f64,
    pub snapshot: String,
}

pub fn run(cfg: &RunConfig, out_flag: Option<&Path>) -> CliResult<()> {
    if !cfg.compare.is_empty() {
        return Err(CliError::config("compare: only used by the benchmark command"));
    }
    let out = output_dir(out_flag, cfg);
    let src = load_source(cfg)?;
    let ds = prepare_split(cfg, &src, 0)?;
    let method = cfg.primary();
    let fit = fit_and_evaluate(cfg, &ds, &method, 0)?;

    create_dir(&out)?;
    Checkpoint::new(fit.model, cfg.train.seed)
        .with_stats(ds.x_stats.clone(), ds.y_stats.clone())
        .save(out.join("checkpoint.json"))?;
    let trace_file = File::create(out.join("trace.csv"))?;
    fit.trace.write_csv(BufWriter::new(trace_file))?;
    let metrics = TrainMetrics {
        seed: cfg.train.seed,
        method: method.label(),
        n_train: ds.x_train.rows(),
        n_test: ds.x_test.rows(),
        iterations: cfg.train.iterations,
        final_objective: fit.trace.objectives().last().copied().unwrap_or(f64::NAN),
        rmse: fit.rmse,
        nll: fit.nll,
        snapshot: fit.trace.final_snapshot.clone(),
    };
    let json = serde_json::to_string_pretty(&metrics).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&out.join("metrics.json"), &(json + "\n"))?;
    println!(
        "{}: test rmse {:.4}, test nll {:.4} ({} train / {} test rows, {:.1}s)",
        metrics.method, metrics.rmse, metrics.nll, metrics.n_train, metrics.n_test, fit.seconds
    );
    println!("wrote checkpoint.json, trace.csv, metrics.json to {}", out.display());
    Ok(())
}
