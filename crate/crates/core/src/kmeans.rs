//! Classical k-means: Lloyd iterations with best-of-restarts selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lloyd::{self, BestRun, Objective};
use crate::model::{sq_dist, Assignment, CenterMatrix, DataMatrix, RngSeed};

/// Rows above which assignment is split across threads.
pub(crate) const PAR_ROWS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: RngSeed,
}

impl FitOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            restarts: 30,
            max_iters: 200,
            rel_tol: 1e-8,
            seed: RngSeed(0),
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_seed(mut self, seed: impl Into<RngSeed>) -> Self {
        self.seed = seed.into();
        self
    }
}

impl From<u64> for RngSeed {
    fn from(s: u64) -> Self {
        RngSeed(s)
    }
}

/// Best restart of a Lloyd-type fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub centers: CenterMatrix,
    pub assignment: Assignment,
    /// Mean per-row loss at `centers`.
    pub loss: f64,
    pub iterations: usize,
    pub restarts_run: usize,
    /// Index of the restart that produced this result.
    pub best_restart: usize,
    /// Loss after each iteration of the winning restart (entry 0: initial centers).
    pub trajectory: Vec<f64>,
    /// Trajectory indices where empty-cluster repair ran; the monotone-descent
    /// guarantee does not cover these steps.
    pub repaired_at: Vec<usize>,
    /// The assignment reached a fixed point (as opposed to stopping on
    /// `rel_tol` or `max_iters`).
    pub converged: bool,
}

impl FitResult {
    pub(crate) fn from_best(best: BestRun) -> Self {
        let k = best.run.centers.k();
        Self {
            assignment: Assignment::new(best.run.labels, k).expect("labels come from assign"),
            centers: best.run.centers,
            loss: best.run.loss,
            iterations: best.run.iterations,
            restarts_run: best.restarts_run,
            best_restart: best.restart,
            trajectory: best.run.trajectory,
            repaired_at: best.run.repaired_at,
            converged: best.run.converged,
        }
    }
}

fn check_cols(x: &DataMatrix, m: &CenterMatrix) -> Result<()> {
    if x.p() != m.p() {
        return Err(Error::dim("center columns", x.p(), m.p()));
    }
    Ok(())
}

fn nearest(row: &[f64], centers: &CenterMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (l, mu) in centers.rows().enumerate() {
        let d = sq_dist(row, mu);
        if d < best.1 {
            best = (l, d);
        }
    }
    best
}

pub(crate) fn dense_assign(x: &DataMatrix, centers: &CenterMatrix) -> (Vec<usize>, Vec<f64>) {
    if x.n() >= PAR_ROWS {
        (0..x.n())
            .into_par_iter()
            .map(|i| nearest(x.row(i), centers))
            .unzip()
    } else {
        x.rows().map(|row| nearest(row, centers)).unzip()
    }
}

/// `(1/n) Σ_i min_l ‖x_i − μ_l‖²`.
pub fn km_loss(x: &DataMatrix, centers: &CenterMatrix) -> Result<f64> {
    check_cols(x, centers)?;
    let (_, losses) = dense_assign(x, centers);
    Ok(losses.iter().sum::<f64>() / x.n() as f64)
}

/// Nearest-center labels, ties to the lowest center index.
pub fn km_assign(x: &DataMatrix, centers: &CenterMatrix) -> Result<Assignment> {
    check_cols(x, centers)?;
    let (labels, _) = dense_assign(x, centers);
    Assignment::new(labels, centers.k())
}

/// Cluster means over a row-major value buffer with `prev.p()` columns.
pub(crate) fn dense_update(
    values: &[f64],
    labels: &[usize],
    prev: &CenterMatrix,
) -> (CenterMatrix, Vec<bool>) {
    let (k, p) = (prev.k(), prev.p());
    let mut sums = vec![0.0; k * p];
    let mut counts = vec![0usize; k];
    for (row, &l) in values.chunks_exact(p).zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l * p..(l + 1) * p].iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut held = vec![false; k * p];
    for l in 0..k {
        let cell = l * p..(l + 1) * p;
        if counts[l] == 0 {
            sums[cell.clone()].copy_from_slice(prev.row(l));
            held[cell].iter_mut().for_each(|h| *h = true);
        } else {
            let c = counts[l] as f64;
            sums[cell].iter_mut().for_each(|s| *s /= c);
        }
    }
    (CenterMatrix::new(k, p, sums).expect("means of finite data"), held)
}

/// Lloyd mean step: row `l` becomes the mean of rows labelled `l`; empty
/// clusters keep `prev`'s row.
pub fn km_update(
    x: &DataMatrix,
    assignment: &Assignment,
    k: usize,
    prev: &CenterMatrix,
) -> Result<CenterMatrix> {
    check_cols(x, prev)?;
    if prev.k() != k || assignment.k() != k {
        return Err(Error::dim("cluster count", k, prev.k()));
    }
    if assignment.len() != x.n() {
        return Err(Error::dim("assignment length", x.n(), assignment.len()));
    }
    Ok(dense_update(x.values(), assignment.labels(), prev).0)
}

pub(crate) struct DenseObjective<'a> {
    pub x: &'a DataMatrix,
}

impl Objective for DenseObjective<'_> {
    type State = ();

    fn rows(&self) -> usize {
        self.x.n()
    }

    fn cols(&self) -> usize {
        self.x.p()
    }

    fn new_state(&self) {}

    fn center_from_row(&self, row: usize) -> Vec<f64> {
        self.x.row(row).to_vec()
    }

    fn assign(&self, _: &mut (), centers: &CenterMatrix) -> (Vec<usize>, Vec<f64>) {
        dense_assign(self.x, centers)
    }

    fn update(&self, _: &mut (), labels: &[usize], prev: &CenterMatrix) -> (CenterMatrix, Vec<bool>) {
        dense_update(self.x.values(), labels, prev)
    }
}

/// Best-of-restarts Lloyd k-means on a complete matrix.
pub fn km_fit(x: &DataMatrix, opts: &FitOptions) -> Result<FitResult> {
    let best = lloyd::fit(&DenseObjective { x }, opts)?;
    Ok(FitResult::from_best(best))
}
