use std::path::PathBuf;

use anyhow::anyhow;
use clap::{Args, ValueEnum};
use kpod_core::{complete_case_fit, km_fit, kpod_fit, DataMatrix, FitOptions, FitResult, MaskMatrix};
use serde::Serialize;

use crate::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Kmeans,
    Kpod,
    CompleteCase,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Headerless numeric CSV, one observation per row.
    #[arg(long)]
    data: PathBuf,
    /// Headerless 0/1 CSV of the same shape; 1 marks an observed entry.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum)]
    method: FitMethod,
    #[arg(long, default_value_t = 30)]
    restarts: usize,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for centers.csv, labels.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Summary {
    method: FitMethod,
    n: usize,
    p: usize,
    k: usize,
    seed: u64,
    loss: f64,
    iterations: usize,
    restarts_run: usize,
    best_restart: usize,
    converged: bool,
    repaired_at: Vec<usize>,
    /// Rows used by the fit (the complete cases for `complete-case`).
    rows_used: usize,
    degenerate_cells: Vec<(usize, usize)>,
    all_missing_rows: Vec<usize>,
}

pub fn run(args: FitArgs) -> CliResult {
    let x = DataMatrix::load(&args.data)?;
    let mask = match &args.mask {
        Some(path) => MaskMatrix::load(path)?,
        None => MaskMatrix::ones(x.n(), x.p()),
    };
    if (mask.n(), mask.p()) != (x.n(), x.p()) {
        return Err(Failure::invalid(anyhow!(
            "mask is {}x{} but data is {}x{}",
            mask.n(),
            mask.p(),
            x.n(),
            x.p()
        )));
    }
    let opts = FitOptions::new(args.k)
        .with_restarts(args.restarts)
        .with_max_iters(args.max_iters)
        .with_rel_tol(args.rel_tol)
        .with_seed(args.seed);

    let summary_for = |fit: &FitResult, rows_used: usize| Summary {
        method: args.method,
        n: x.n(),
        p: x.p(),
        k: args.k,
        seed: args.seed,
        loss: fit.loss,
        iterations: fit.iterations,
        restarts_run: fit.restarts_run,
        best_restart: fit.best_restart,
        converged: fit.converged,
        repaired_at: fit.repaired_at.clone(),
        rows_used,
        degenerate_cells: Vec::new(),
        all_missing_rows: Vec::new(),
    };

    let (fit, summary) = match args.method {
        FitMethod::Kmeans => {
            if mask.observed_count() != x.n() * x.p() {
                return Err(Failure::invalid(anyhow!(
                    "kmeans needs complete data; use --method kpod or complete-case with a partial mask"
                )));
            }
            let fit = km_fit(&x, &opts)?;
            let summary = summary_for(&fit, x.n());
            (fit, summary)
        }
        FitMethod::CompleteCase => {
            let (fit, rows) = complete_case_fit(&x, &mask, &opts)?;
            let summary = summary_for(&fit, rows);
            (fit, summary)
        }
        FitMethod::Kpod => {
            let observed = x.masked(&mask)?;
            let res = kpod_fit(&observed, &mask, &opts)?;
            let mut summary = summary_for(&res.fit, x.n());
            summary.degenerate_cells = res.degenerate_cells;
            summary.all_missing_rows = res.all_missing_rows;
            (res.fit, summary)
        }
    };

    let io = |e: std::io::Error| Failure::check(anyhow!(e));
    std::fs::create_dir_all(&args.out).map_err(io)?;
    fit.centers.save(&args.out.join("centers.csv"))?;
    let labels: String = fit
        .assignment
        .labels()
        .iter()
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(args.out.join("labels.csv"), labels).map_err(io)?;
    let json = serde_json::to_string_pretty(&summary).map_err(Failure::check)?;
    std::fs::write(args.out.join("summary.json"), json + "\n").map_err(io)?;
    println!(
        "{:?}: loss={:.6} iterations={} restarts={} rows_used={}",
        args.method, summary.loss, summary.iterations, summary.restarts_run, summary.rows_used
    );
    Ok(())
}
