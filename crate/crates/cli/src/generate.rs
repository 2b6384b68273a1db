use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use kpod_core::{gen_mask, preset, sample_gmm, McarSpec, RngSeed};

use crate::{CliResult, Failure};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// One of intro, a, b, s1, s2, s3.
    #[arg(long)]
    preset: String,
    /// Sample size (defaults to the preset's).
    #[arg(long)]
    n: Option<usize>,
    /// Equal per-column missing rate, overriding the preset's probabilities.
    #[arg(long)]
    missing_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for data.csv (complete), mask.csv and components.csv.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: GenerateArgs) -> CliResult {
    let setup = preset(&args.preset)?;
    let n = args.n.unwrap_or(setup.default_n);
    let mcar = match args.missing_rate {
        Some(rate) => McarSpec::uniform_missing_rate(setup.gmm.p(), rate)?,
        None => setup.mcar,
    };
    let seed = RngSeed(args.seed);
    let (x, components) = sample_gmm(&setup.gmm, n, seed.derive("data"))?;
    let mask = gen_mask(n, &mcar, seed.derive("mask"))?;
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::check(anyhow!(e)))?;
    x.save(&args.out.join("data.csv"))?;
    mask.save(&args.out.join("mask.csv"))?;
    let labels: String = components.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(args.out.join("components.csv"), labels).map_err(|e| Failure::check(anyhow!(e)))?;
    let complete = (0..n).filter(|&i| mask.is_complete_row(i)).count();
    println!(
        "{}: n={n} p={} complete_cases={complete} -> {}",
        args.preset,
        x.p(),
        args.out.display()
    );
    Ok(())
}
