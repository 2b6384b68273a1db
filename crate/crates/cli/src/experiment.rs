use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::Args;
use kpod_core::experiments::{run_table, run_trend, ExperimentConfig, Mode};
use kpod_core::oracle::ReferenceCache;

use crate::{CliResult, Failure};

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Directory for cached reference centers (overrides the config).
    #[arg(long)]
    reference_cache: Option<PathBuf>,
    /// Record wall-clock times (makes the CSVs non-reproducible).
    #[arg(long)]
    timing: bool,
}

pub fn run(args: ExperimentArgs) -> CliResult {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if args.timing {
        cfg.record_timing = true;
    }
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Failure::invalid(anyhow!("no output directory: pass --out or set `output`")))?;
    let cache = match args.reference_cache.or_else(|| cfg.reference_cache.clone()) {
        Some(dir) => ReferenceCache::persistent(dir),
        None => ReferenceCache::in_memory(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(Failure::invalid)?;

    let started = Instant::now();
    for s in &cfg.settings {
        eprintln!(
            "setting {}: n={:?} rate={:?}",
            s.id.as_deref().or(s.preset.as_deref()).unwrap_or("-"),
            s.n,
            s.missing_rate
        );
    }
    let output = pool.install(|| match cfg.mode {
        Mode::Table => run_table(&cfg, &cache),
        Mode::Trend => run_trend(&cfg, &cache),
    })?;
    output
        .save(&out)
        .with_context(|| format!("writing results to {}", out.display()))
        .map_err(Failure::check)?;
    print!("{}", output.summary_table());
    eprintln!(
        "{} records in {:.1}s -> {}",
        output.records.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}
