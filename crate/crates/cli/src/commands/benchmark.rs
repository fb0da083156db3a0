//! Repeated seeded splits, one results row per (split, method).

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{create_dir, write_file};
use crate::config::{MethodSpec, RunConfig};
use crate::error::CliResult;
use crate::pipeline::{fit_and_evaluate, load_source, output_dir, prepare_split, split_seed};

pub const RESULTS_HEADER: &str = "split,seed,loss,quantifier,hyperparam,rmse,nll,seconds";

#[derive(Clone, Debug)]
pub struct Row {
    pub split: usize,
    pub seed: u64,
    pub method: usize,
    pub rmse: f64,
    pub nll: f64,
    pub seconds: f64,
}

/// Mean and standard error of the mean; the error is undefined for one value.
pub fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn hyperparam(m: &MethodSpec) -> String {
    fmt_opt(m.loss.hyperparameter())
}

pub fn run(cfg: &RunConfig, out_flag: Option<&Path>) -> CliResult<()> {
    let out = output_dir(out_flag, cfg);
    let src = load_source(cfg)?;
    let methods = cfg.methods();

    // each split is independent; collect keeps split order
    let per_split: Vec<CliResult<Vec<Row>>> = (0..cfg.n_splits)
        .into_par_iter()
        .map(|split| {
            let ds = prepare_split(cfg, &src, split)?;
            methods
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let fit = fit_and_evaluate(cfg, &ds, m, split)?;
                    log::info!("split {split} {}: rmse {:.4} nll {:.4}", m.label(), fit.rmse, fit.nll);
                    Ok(Row {
                        split,
                        seed: split_seed(cfg, split),
                        method: k,
                        rmse: fit.rmse,
                        nll: fit.nll,
                        seconds: fit.seconds,
                    })
                })
                .collect()
        })
        .collect();
    let rows: Vec<Row> = per_split.into_iter().collect::<CliResult<Vec<_>>>()?.into_iter().flatten().collect();

    create_dir(&out)?;
    let mut results = format!("{RESULTS_HEADER}\n");
    for r in &rows {
        let m = &methods[r.method];
        writeln!(
            results,
            "{},{},{},{},{},{},{},{:.3}",
            r.split,
            r.seed,
            m.loss.label(),
            m.quantifier_label(),
            hyperparam(m),
            r.rmse,
            r.nll,
            r.seconds
        )
        .unwrap();
    }
    write_file(&out.join("results.csv"), &results)?;

    let mut aggregate = String::from("loss,quantifier,hyperparam,n_splits,rmse_mean,rmse_se,nll_mean,nll_se\n");
    let mut table = format!("{:<40} {:>22} {:>22}\n", "method", "rmse (mean ± se)", "nll (mean ± se)");
    for (k, m) in methods.iter().enumerate() {
        let mine: Vec<&Row> = rows.iter().filter(|r| r.method == k).collect();
        let (rm, rse) = mean_se(&mine.iter().map(|r| r.rmse).collect::<Vec<_>>());
        let (nm, nse) = mean_se(&mine.iter().map(|r| r.nll).collect::<Vec<_>>());
        writeln!(
            aggregate,
            "{},{},{},{},{rm},{},{nm},{}",
            m.loss.label(),
            m.quantifier_label(),
            hyperparam(m),
            mine.len(),
            fmt_opt(rse),
            fmt_opt(nse)
        )
        .unwrap();
        let pm = |mean: f64, se: Option<f64>| match se {
            Some(se) => format!("{mean:.4} ± {se:.4}"),
            None => format!("{mean:.4}"),
        };
        writeln!(table, "{:<40} {:>22} {:>22}", m.label(), pm(rm, rse), pm(nm, nse)).unwrap();
    }
    write_file(&out.join("aggregate.csv"), &aggregate)?;

    if methods.len() > 1 {
        let mut paired = String::from("split,baseline,method,baseline_rmse,method_rmse,method_wins\n");
        let base = &methods[0];
        for (k, m) in methods.iter().enumerate().skip(1) {
            let mut wins = 0;
            for split in 0..cfg.n_splits {
                let find = |j: usize| rows.iter().find(|r| r.split == split && r.method == j).expect("row per split");
                let (b, c) = (find(0), find(k));
                let won = c.rmse < b.rmse;
                wins += usize::from(won);
                writeln!(paired, "{split},{},{},{},{},{won}", base.label(), m.label(), b.rmse, c.rmse).unwrap();
            }
            writeln!(
                table,
                "{} has lower test rmse than {} on {wins}/{} splits",
                m.label(),
                base.label(),
                cfg.n_splits
            )
            .unwrap();
        }
        write_file(&out.join("paired.csv"), &paired)?;
    }
    write_file(&out.join("summary.txt"), &table)?;
    print!("{table}");
    println!("wrote results.csv, aggregate.csv and summary.txt to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se.unwrap() - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[7.0]), (7.0, None));
    }
}
