//! Center-estimation error, Monte-Carlo expected losses, and the
//! pattern-wise decomposition of the k-POD loss.
//!
//! The empirical k-POD loss splits exactly over missingness patterns:
//!
//! ```text
//! L_kpod(M) = Σ_r (n_r / n) · L_km(M | r)
//! ```
//!
//! where `L_km(· | r)` is the k-means loss of the rows with pattern `r`
//! computed on the columns that `r` observes. [`decomposition_check`]
//! evaluates both sides by separate code paths.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kpod::kpod_loss;
use crate::missing::{gen_mask, group_patterns, McarSpec, PatternKey};
use crate::model::{check_shapes, partial_sq_dist, sq_dist, CenterMatrix, DataMatrix, MaskMatrix, RngSeed};
use crate::synthetic::{sample_gmm, GmmSpec};

/// `Σ_l min_{l'} ‖μ̂_l − μ*_{l'}‖²`: every estimated center is matched to its
/// nearest reference center, independently of the others.
pub fn mse_centers(estimate: &CenterMatrix, reference: &CenterMatrix) -> Result<f64> {
    if estimate.p() != reference.p() {
        return Err(Error::dim("center columns", reference.p(), estimate.p()));
    }
    Ok(estimate
        .rows()
        .map(|mu| {
            reference
                .rows()
                .map(|star| sq_dist(mu, star))
                .fold(f64::INFINITY, f64::min)
        })
        .sum())
}

/// Largest k accepted by [`mse_centers_bijective`] (it enumerates k! matchings).
pub const MAX_BIJECTIVE_K: usize = 9;

/// Diagnostic variant of [`mse_centers`] that matches rows one-to-one,
/// minimizing the total over all permutations.
pub fn mse_centers_bijective(estimate: &CenterMatrix, reference: &CenterMatrix) -> Result<f64> {
    if estimate.p() != reference.p() {
        return Err(Error::dim("center columns", reference.p(), estimate.p()));
    }
    if estimate.k() != reference.k() {
        return Err(Error::dim("center rows", reference.k(), estimate.k()));
    }
    let k = estimate.k();
    if k > MAX_BIJECTIVE_K {
        return Err(Error::invalid(format!("bijective matching supports k <= {MAX_BIJECTIVE_K}")));
    }
    let cost: Vec<f64> = (0..k)
        .flat_map(|a| (0..k).map(move |b| (a, b)))
        .map(|(a, b)| sq_dist(estimate.row(a), reference.row(b)))
        .collect();
    let mut perm: Vec<usize> = (0..k).collect();
    let total = |perm: &[usize]| perm.iter().enumerate().map(|(a, &b)| cost[a * k + b]).sum::<f64>();
    let mut best = total(&perm);
    // Heap's algorithm.
    let mut c = vec![0usize; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternTerm {
    pub pattern: PatternKey,
    pub count: usize,
    /// `n_r / n`.
    pub weight: f64,
    /// k-means loss of the pattern's rows on its observed columns.
    pub restricted_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    /// The k-POD loss evaluated directly.
    pub lhs: f64,
    /// The pattern-weighted sum of restricted k-means losses.
    pub rhs: f64,
    pub per_pattern: Vec<PatternTerm>,
    pub abs_diff: f64,
}

/// Relative tolerance of the decomposition identity: `|lhs − rhs| ≤ tol·(1 + |lhs|)`.
pub const DECOMPOSITION_TOL: f64 = 1e-10;

impl DecompositionReport {
    pub fn tolerance(&self) -> f64 {
        DECOMPOSITION_TOL * (1.0 + self.lhs.abs())
    }

    pub fn holds(&self) -> bool {
        self.abs_diff <= self.tolerance()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "direct k-POD loss      {:.17e}", self.lhs);
        let _ = writeln!(s, "pattern-weighted sum   {:.17e}", self.rhs);
        let _ = writeln!(s, "|difference|           {:.3e} (tolerance {:.3e})", self.abs_diff, self.tolerance());
        let _ = writeln!(s, "patterns               {}", self.per_pattern.len());
        for t in &self.per_pattern {
            let _ = writeln!(
                s,
                "  {}  n={:<6} weight={:.6}  loss={:.10}",
                t.pattern, t.count, t.weight, t.restricted_loss
            );
        }
        s
    }

    /// Rows `pattern,count,weight,restricted_loss`, followed by two summary
    /// rows whose pattern field is `lhs` / `rhs`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["pattern", "count", "weight", "restricted_loss"])?;
        for t in &self.per_pattern {
            w.write_record([
                t.pattern.to_string(),
                t.count.to_string(),
                t.weight.to_string(),
                t.restricted_loss.to_string(),
            ])?;
        }
        let n: usize = self.per_pattern.iter().map(|t| t.count).sum();
        for (label, v) in [("lhs", self.lhs), ("rhs", self.rhs)] {
            w.write_record([label.to_string(), n.to_string(), "1".into(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates both sides of the pattern decomposition at centers `m`.
pub fn decomposition_check(x: &DataMatrix, mask: &MaskMatrix, m: &CenterMatrix) -> Result<DecompositionReport> {
    check_shapes(x, mask)?;
    if m.p() != x.p() {
        return Err(Error::dim("center columns", x.p(), m.p()));
    }
    let lhs = kpod_loss(x, mask, m)?;
    let n = x.n() as f64;
    let mut per_pattern = Vec::new();
    for (pattern, rows) in group_patterns(mask)? {
        let cols = pattern.observed_columns();
        let sub: Vec<Vec<f64>> = m.rows().map(|mu| cols.iter().map(|&j| mu[j]).collect()).collect();
        let total: f64 = rows
            .iter()
            .map(|&i| {
                let xi: Vec<f64> = cols.iter().map(|&j| x.get(i, j)).collect();
                sub.iter().map(|mu| sq_dist(&xi, mu)).fold(f64::INFINITY, f64::min)
            })
            .sum();
        let restricted_loss = if cols.is_empty() { 0.0 } else { total / rows.len() as f64 };
        per_pattern.push(PatternTerm {
            pattern,
            count: rows.len(),
            weight: rows.len() as f64 / n,
            restricted_loss,
        });
    }
    let rhs: f64 = per_pattern.iter().map(|t| t.weight * t.restricted_loss).sum();
    Ok(DecompositionReport {
        lhs,
        rhs,
        abs_diff: (lhs - rhs).abs(),
        per_pattern,
    })
}

/// Monte-Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedLosses {
    /// `E[min_l ‖X − μ_l‖²]`.
    pub kmeans: Estimate,
    /// `E[min_l Σ_j R_j (X_j − μ_lj)²]`.
    pub kpod: Estimate,
}

const MC_SHARD: usize = 8192;

#[derive(Default, Clone, Copy)]
struct Moments {
    n: usize,
    sum: [f64; 2],
    sum_sq: [f64; 2],
}

impl Moments {
    fn merge(self, o: Moments) -> Moments {
        Moments {
            n: self.n + o.n,
            sum: [self.sum[0] + o.sum[0], self.sum[1] + o.sum[1]],
            sum_sq: [self.sum_sq[0] + o.sum_sq[0], self.sum_sq[1] + o.sum_sq[1]],
        }
    }

    fn estimate(&self, idx: usize) -> Estimate {
        let n = self.n as f64;
        let mean = self.sum[idx] / n;
        let var = ((self.sum_sq[idx] - n * mean * mean) / (n - 1.0)).max(0.0);
        Estimate {
            mean,
            std_err: (var / n).sqrt(),
        }
    }
}

/// Estimates the population k-means and k-POD losses at `m` from `n_mc`
/// fresh (X, R) draws. Both losses are evaluated on the same draws.
/// Draws are sharded with per-shard seeds and reduced in shard order.
pub fn mc_expected_loss(
    spec: &GmmSpec,
    q: &McarSpec,
    m: &CenterMatrix,
    n_mc: usize,
    seed: RngSeed,
) -> Result<ExpectedLosses> {
    if n_mc < 2 {
        return Err(Error::invalid("n_mc must be >= 2"));
    }
    if spec.p() != m.p() {
        return Err(Error::dim("center columns", spec.p(), m.p()));
    }
    if q.p() != m.p() {
        return Err(Error::dim("observation probabilities", m.p(), q.p()));
    }
    let shards = n_mc.div_ceil(MC_SHARD);
    let parts = (0..shards)
        .into_par_iter()
        .map(|s| {
            let size = MC_SHARD.min(n_mc - s * MC_SHARD);
            let (x, _) = sample_gmm(spec, size, seed.derive_index("mc-data", s as u64))?;
            let r = gen_mask(size, q, seed.derive_index("mc-mask", s as u64))?;
            let mut acc = Moments {
                n: size,
                ..Moments::default()
            };
            for i in 0..size {
                let (row, obs) = (x.row(i), r.row(i));
                let km = m.rows().map(|mu| sq_dist(row, mu)).fold(f64::INFINITY, f64::min);
                let kp = m
                    .rows()
                    .map(|mu| partial_sq_dist(row, obs, mu))
                    .fold(f64::INFINITY, f64::min);
                acc.sum[0] += km;
                acc.sum_sq[0] += km * km;
                acc.sum[1] += kp;
                acc.sum_sq[1] += kp * kp;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<Moments>>>()?;
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    Ok(ExpectedLosses {
        kmeans: total.estimate(0),
        kpod: total.estimate(1),
    })
}
