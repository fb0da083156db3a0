use std::path::Path;

use dgp_gvi::checkpoint::Checkpoint;
use dgp_gvi::data::{load_csv, write_csv, Stats};
use dgp_gvi::dgp::predict;
use dgp_gvi::linalg::Mat;

use crate::error::{CliError, CliResult};

pub struct PredictArgs<'a> {
    pub checkpoint: &'a Path,
    pub input: &'a Path,
    pub has_header: bool,
    pub output: &'a Path,
    pub samples: usize,
    pub seed: u64,
}

/// Writes the predictive mean and variance of every input row, in original units.
pub fn run(args: &PredictArgs) -> CliResult<()> {
    if args.samples == 0 {
        return Err(CliError::config("samples: must be at least 1"));
    }
    let ck = Checkpoint::load(args.checkpoint).map_err(|e| CliError::config(format!("checkpoint: {e}")))?;
    let table = load_csv(args.input, args.has_header).map_err(|e| CliError::config(format!("input: {e}")))?;
    if table.dropped_rows > 0 {
        log::warn!("skipped {} input rows with missing values", table.dropped_rows);
    }
    let d_in = ck.model.input_dim();
    if table.cols() != d_in {
        return Err(CliError::config(format!(
            "input: {} columns, the model expects {d_in}",
            table.cols()
        )));
    }
    let x_stats = ck.x_stats.clone().unwrap_or_else(|| Stats::identity(d_in));
    let y_stats = ck.y_stats.clone().unwrap_or_else(|| Stats::identity(ck.model.output_dim()));
    let pred = predict(&ck.model, &x_stats.normalize(&table.values), args.samples, args.seed)?;
    let mean = y_stats.denormalize(&pred.mean);
    let d = mean.cols();
    let var = Mat::from_fn(pred.var.rows(), d, |i, j| pred.var[(i, j)] * y_stats.std[j].powi(2));
    let out = Mat::from_fn(mean.rows(), 2 * d, |i, j| if j < d { mean[(i, j)] } else { var[(i, j - d)] });
    let header: Vec<String> = (0..d)
        .map(|j| format!("mean_{j}"))
        .chain((0..d).map(|j| format!("var_{j}")))
        .collect();
    write_csv(args.output, &out, Some(&header))?;
    println!("wrote {} predictions to {}", out.rows(), args.output.display());
    Ok(())
}
