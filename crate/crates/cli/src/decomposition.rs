use anyhow::anyhow;
use clap::Args;
use kpod_core::metrics::{mc_expected_loss, DECOMPOSITION_TOL};
use kpod_core::{
    decomposition_check, gen_mask, km_loss, CenterMatrix, DataMatrix, GmmSpec, McarSpec, RngSeed,
};
use rand::Rng;

use crate::{CliResult, Failure};

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Observation probability per column (repeat the flag p times, or give
    /// one value for all columns). Random in [0.2, 1] per trial if omitted.
    #[arg(long = "q", num_args = 1..)]
    q: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Monte-Carlo mode: compare the population k-POD loss with
    /// q·(k-means loss) for one-dimensional data.
    #[arg(long)]
    monte_carlo: bool,
    /// Draws per Monte-Carlo estimate.
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
}

fn resolve_q(args: &CheckArgs, p: usize) -> Result<Option<McarSpec>, Failure> {
    match args.q.len() {
        0 => Ok(None),
        1 => Ok(Some(McarSpec::new(vec![args.q[0]; p])?)),
        len if len == p => Ok(Some(McarSpec::new(args.q.clone())?)),
        len => Err(Failure::invalid(anyhow!("got {len} --q values for p={p}"))),
    }
}

pub fn run(args: CheckArgs) -> CliResult {
    if args.n == 0 || args.p == 0 || args.k == 0 || args.trials == 0 {
        return Err(Failure::invalid(anyhow!("--n, --p, --k and --trials must be positive")));
    }
    if args.monte_carlo {
        return monte_carlo(&args);
    }
    let fixed_q = resolve_q(&args, args.p)?;
    let root = RngSeed(args.seed);
    let (mut worst, mut worst_ratio, mut failures) = (0.0f64, 0.0f64, 0usize);
    for t in 0..args.trials {
        let mut rng = root.derive_index("trial", t as u64).rng();
        let (n, p, k) = (args.n, args.p, args.k);
        let x = DataMatrix::new(n, p, (0..n * p).map(|_| rng.gen_range(-5.0..5.0)).collect())?;
        let q = match &fixed_q {
            Some(q) => q.clone(),
            None => McarSpec::new((0..p).map(|_| rng.gen_range(0.2..=1.0)).collect())?,
        };
        let r = gen_mask(n, &q, root.derive_index("mask", t as u64))?;
        let m = CenterMatrix::new(k, p, (0..k * p).map(|_| rng.gen_range(-5.0..5.0)).collect())?;
        let report = decomposition_check(&x, &r, &m)?;
        if r.observed_count() == n * p {
            let km = km_loss(&x, &m)?;
            if report.lhs != km {
                return Err(Failure::check(anyhow!(
                    "trial {t}: full mask but k-POD loss {} != k-means loss {km}",
                    report.lhs
                )));
            }
        }
        worst = worst.max(report.abs_diff);
        worst_ratio = worst_ratio.max(report.abs_diff / (1.0 + report.lhs.abs()));
        if !report.holds() {
            failures += 1;
            eprint!("trial {t} failed:\n{}", report.to_text());
        }
    }
    println!(
        "trials={} max_abs_diff={:.3e} max_rel_diff={:.3e} tolerance={:.0e} failures={}",
        args.trials, worst, worst_ratio, DECOMPOSITION_TOL, failures
    );
    if failures > 0 {
        return Err(Failure::check(anyhow!("{failures} trial(s) exceeded the tolerance")));
    }
    Ok(())
}

fn monte_carlo(args: &CheckArgs) -> CliResult {
    let q = resolve_q(args, 1)?.unwrap_or(McarSpec::new(vec![0.5])?);
    if args.n_mc < 2 {
        return Err(Failure::invalid(anyhow!("--n-mc must be >= 2")));
    }
    let root = RngSeed(args.seed);
    let mut rng = root.derive("mc-setup").rng();
    let k = args.k;
    let means = CenterMatrix::new(k, 1, (0..k).map(|l| 3.0 * l as f64).collect())?;
    let spec = GmmSpec::isotropic(vec![1.0 / k as f64; k], means)?;
    let m = CenterMatrix::new(k, 1, (0..k).map(|_| rng.gen_range(-2.0..6.0)).collect())?;
    let est = mc_expected_loss(&spec, &q, &m, args.n_mc, root.derive("mc"))?;
    let qv = q.q()[0];
    let se = (est.kpod.std_err.powi(2) + (qv * est.kmeans.std_err).powi(2)).sqrt();
    let gap = est.kpod.mean - qv * est.kmeans.mean;
    println!(
        "kpod={:.6} (se {:.2e})  q*kmeans={:.6} (se {:.2e})  gap={:.3e} ({:.2} se)",
        est.kpod.mean,
        est.kpod.std_err,
        qv * est.kmeans.mean,
        qv * est.kmeans.std_err,
        gap,
        gap.abs() / se
    );
    if gap.abs() > 4.0 * se {
        return Err(Failure::check(anyhow!("Monte-Carlo estimates differ by more than 4 se")));
    }
    Ok(())
}
