//! k-POD: k-means whose loss ignores missing entries,
//! `min_{U,M} ‖P_Ω(X − UM)‖²_F`, minimized by alternating over U and M.
//!
//! Two routes are provided. [`kpod_fit`] works on the observed entries
//! directly (partial distances, masked means). [`kpod_fit_imputed_form`]
//! carries a completed matrix `Y` with `P_Ω(Y) = P_Ω(X)`, fills its missing
//! entries from the current fit and takes ordinary k-means steps on it. Both
//! descend the same objective and visit the same iterates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kmeans::{dense_update, FitOptions, FitResult, PAR_ROWS};
use crate::lloyd::{self, Objective};
use crate::model::{check_shapes, partial_sq_dist, sq_dist, Assignment, CenterMatrix, DataMatrix, MaskMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct KpodFitResult {
    /// Centers, labels, loss (the k-POD loss) and iteration bookkeeping.
    pub fit: FitResult,
    /// (cluster, column) cells that never left their initial value because
    /// the cluster had no observed entry in that column.
    pub degenerate_cells: Vec<(usize, usize)>,
    /// Rows with no observed entry. They carry label 0 and zero loss.
    pub all_missing_rows: Vec<usize>,
}

fn check_centers(x: &DataMatrix, m: &CenterMatrix) -> Result<()> {
    if x.p() != m.p() {
        return Err(Error::dim("center columns", x.p(), m.p()));
    }
    Ok(())
}

fn nearest_partial(row: &[f64], r: &[bool], centers: &CenterMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (l, mu) in centers.rows().enumerate() {
        let d = partial_sq_dist(row, r, mu);
        if d < best.1 {
            best = (l, d);
        }
    }
    best
}

fn masked_assign(x: &DataMatrix, mask: &MaskMatrix, centers: &CenterMatrix) -> (Vec<usize>, Vec<f64>) {
    let one = |i: usize| nearest_partial(x.row(i), mask.row(i), centers);
    if x.n() >= PAR_ROWS {
        (0..x.n()).into_par_iter().map(one).unzip()
    } else {
        (0..x.n()).map(one).unzip()
    }
}

fn masked_update(
    x: &DataMatrix,
    mask: &MaskMatrix,
    labels: &[usize],
    prev: &CenterMatrix,
) -> (CenterMatrix, Vec<bool>) {
    let (k, p) = (prev.k(), prev.p());
    let mut sums = vec![0.0; k * p];
    let mut counts = vec![0usize; k * p];
    for ((row, r), &l) in x.rows().zip(mask.rows()).zip(labels) {
        let cell = l * p..(l + 1) * p;
        for ((s, c), (&v, &obs)) in sums[cell.clone()]
            .iter_mut()
            .zip(&mut counts[cell])
            .zip(row.iter().zip(r))
        {
            if obs {
                *s += v;
                *c += 1;
            }
        }
    }
    let held: Vec<bool> = counts.iter().map(|&c| c == 0).collect();
    for (idx, (s, &c)) in sums.iter_mut().zip(&counts).enumerate() {
        if c == 0 {
            *s = prev.values()[idx];
        } else {
            *s /= c as f64;
        }
    }
    (CenterMatrix::new(k, p, sums).expect("means of finite data"), held)
}

fn held_cells(held: &[bool], p: usize) -> Vec<(usize, usize)> {
    held.iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(idx, _)| (idx / p, idx % p))
        .collect()
}

/// `(1/n) Σ_i min_l Σ_j R_ij (X_ij − μ_lj)²`.
pub fn kpod_loss(x: &DataMatrix, mask: &MaskMatrix, centers: &CenterMatrix) -> Result<f64> {
    check_shapes(x, mask)?;
    check_centers(x, centers)?;
    let (_, losses) = masked_assign(x, mask, centers);
    Ok(losses.iter().sum::<f64>() / x.n() as f64)
}

/// Nearest center under the partial distance. Also returns the rows with no
/// observed entry; those tie across all centers and get label 0.
pub fn kpod_assign(
    x: &DataMatrix,
    mask: &MaskMatrix,
    centers: &CenterMatrix,
) -> Result<(Assignment, Vec<usize>)> {
    check_shapes(x, mask)?;
    check_centers(x, centers)?;
    let (labels, _) = masked_assign(x, mask, centers);
    let flagged = (0..x.n()).filter(|&i| mask.is_empty_row(i)).collect();
    Ok((Assignment::new(labels, centers.k())?, flagged))
}

/// Masked mean step: `μ_lj` is the mean of the observed `X_ij` with label `l`.
/// Cells with no such entry keep `prev` and are returned as `(l, j)` pairs.
pub fn kpod_update(
    x: &DataMatrix,
    mask: &MaskMatrix,
    assignment: &Assignment,
    prev: &CenterMatrix,
) -> Result<(CenterMatrix, Vec<(usize, usize)>)> {
    check_shapes(x, mask)?;
    check_centers(x, prev)?;
    if assignment.len() != x.n() {
        return Err(Error::dim("assignment length", x.n(), assignment.len()));
    }
    if assignment.k() != prev.k() {
        return Err(Error::dim("cluster count", prev.k(), assignment.k()));
    }
    let (centers, held) = masked_update(x, mask, assignment.labels(), prev);
    Ok((centers, held_cells(&held, x.p())))
}

/// Observed-entry mean of each column (0 for a column with none).
fn observed_column_means(x: &DataMatrix, mask: &MaskMatrix) -> Vec<f64> {
    let p = x.p();
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    for (row, r) in x.rows().zip(mask.rows()) {
        for j in 0..p {
            if r[j] {
                sums[j] += row[j];
                counts[j] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

fn row_with_fill(x: &DataMatrix, mask: &MaskMatrix, fill: &[f64], i: usize) -> Vec<f64> {
    x.row(i)
        .iter()
        .zip(mask.row(i))
        .zip(fill)
        .map(|((&v, &obs), &f)| if obs { v } else { f })
        .collect()
}

struct MaskedObjective<'a> {
    x: &'a DataMatrix,
    mask: &'a MaskMatrix,
    column_means: Vec<f64>,
}

impl<'a> MaskedObjective<'a> {
    fn new(x: &'a DataMatrix, mask: &'a MaskMatrix) -> Self {
        Self {
            x,
            mask,
            column_means: observed_column_means(x, mask),
        }
    }
}

impl Objective for MaskedObjective<'_> {
    type State = ();

    fn rows(&self) -> usize {
        self.x.n()
    }

    fn cols(&self) -> usize {
        self.x.p()
    }

    fn new_state(&self) {}

    fn center_from_row(&self, row: usize) -> Vec<f64> {
        row_with_fill(self.x, self.mask, &self.column_means, row)
    }

    fn assign(&self, _: &mut (), centers: &CenterMatrix) -> (Vec<usize>, Vec<f64>) {
        masked_assign(self.x, self.mask, centers)
    }

    fn update(&self, _: &mut (), labels: &[usize], prev: &CenterMatrix) -> (CenterMatrix, Vec<bool>) {
        masked_update(self.x, self.mask, labels, prev)
    }
}

/// Inner (M, Y) alternation stops once no center coordinate moves by more
/// than this fraction of the largest coordinate magnitude.
const IMPUTE_TOL: f64 = 1e-13;
const IMPUTE_MAX_SWEEPS: usize = 100_000;

/// Completed-matrix route. The state is `Y`, which agrees with `X` on Ω.
struct ImputedObjective<'a> {
    x: &'a DataMatrix,
    mask: &'a MaskMatrix,
    column_means: Vec<f64>,
}

impl ImputedObjective<'_> {
    fn impute(&self, y: &mut [f64], labels: &[usize], centers: &CenterMatrix) {
        let p = self.x.p();
        for (i, (yrow, &l)) in y.chunks_exact_mut(p).zip(labels).enumerate() {
            let mu = centers.row(l);
            for (j, v) in yrow.iter_mut().enumerate() {
                if !self.mask.is_observed(i, j) {
                    *v = mu[j];
                }
            }
        }
    }
}

impl Objective for ImputedObjective<'_> {
    type State = Vec<f64>;

    fn rows(&self) -> usize {
        self.x.n()
    }

    fn cols(&self) -> usize {
        self.x.p()
    }

    fn new_state(&self) -> Vec<f64> {
        self.x
            .masked(self.mask)
            .expect("shapes checked on entry")
            .values()
            .to_vec()
    }

    fn center_from_row(&self, row: usize) -> Vec<f64> {
        row_with_fill(self.x, self.mask, &self.column_means, row)
    }

    /// Minimizes `‖Y − UM‖²` jointly over U and the free entries of Y: for
    /// each candidate center the row is completed from that center, and the
    /// best completed row is written back to Y.
    fn assign(&self, y: &mut Vec<f64>, centers: &CenterMatrix) -> (Vec<usize>, Vec<f64>) {
        let p = self.x.p();
        let mut completed = vec![0.0; p];
        let mut labels = Vec::with_capacity(self.x.n());
        for i in 0..self.x.n() {
            let (x, r) = (self.x.row(i), self.mask.row(i));
            let mut best = (0, f64::INFINITY);
            for (l, mu) in centers.rows().enumerate() {
                for j in 0..p {
                    completed[j] = if r[j] { x[j] } else { mu[j] };
                }
                let d = sq_dist(&completed, mu);
                if d < best.1 {
                    best = (l, d);
                }
            }
            labels.push(best.0);
        }
        self.impute(y, &labels, centers);
        let losses = y
            .chunks_exact(p)
            .zip(&labels)
            .map(|(row, &l)| sq_dist(row, centers.row(l)))
            .collect();
        (labels, losses)
    }

    /// Minimizes over M and the free entries of Y for fixed U by alternating
    /// plain cluster means of Y with re-imputation until the centers stop moving.
    fn update(&self, y: &mut Vec<f64>, labels: &[usize], prev: &CenterMatrix) -> (CenterMatrix, Vec<bool>) {
        let (k, p) = (prev.k(), prev.p());
        let mut observed = vec![false; k * p];
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..p {
                observed[l * p + j] |= self.mask.is_observed(i, j);
            }
        }
        let held: Vec<bool> = observed.iter().map(|o| !o).collect();

        let mut centers = prev.clone();
        for _ in 0..IMPUTE_MAX_SWEEPS {
            let (next, _) = dense_update(y, labels, &centers);
            self.impute(y, labels, &next);
            let scale = next.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let moved = next
                .values()
                .iter()
                .zip(centers.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            centers = next;
            if moved <= IMPUTE_TOL * scale {
                break;
            }
        }
        // A cell with no observed entry only ever averages copies of its own
        // value; pin it so rounding cannot drift it.
        let mut values = centers.values().to_vec();
        for (idx, &h) in held.iter().enumerate() {
            if h {
                values[idx] = prev.values()[idx];
            }
        }
        let centers = CenterMatrix::new(k, p, values).expect("finite centers");
        self.impute(y, labels, &centers);
        (centers, held)
    }
}

fn finish(best: lloyd::BestRun, x: &DataMatrix, mask: &MaskMatrix) -> KpodFitResult {
    let untouched: Vec<bool> = best.run.touched.iter().map(|t| !t).collect();
    let degenerate_cells = held_cells(&untouched, x.p());
    KpodFitResult {
        fit: FitResult::from_best(best),
        degenerate_cells,
        all_missing_rows: (0..x.n()).filter(|&i| mask.is_empty_row(i)).collect(),
    }
}

/// Best-of-restarts k-POD by block-coordinate descent on the observed entries.
pub fn kpod_fit(x: &DataMatrix, mask: &MaskMatrix, opts: &FitOptions) -> Result<KpodFitResult> {
    check_shapes(x, mask)?;
    let best = lloyd::fit(&MaskedObjective::new(x, mask), opts)?;
    Ok(finish(best, x, mask))
}

/// k-POD through the completed-matrix formulation
/// `min ‖Y − UM‖²_F` subject to `P_Ω(Y) = P_Ω(X)`.
/// Uses the same initializations as [`kpod_fit`] for a given seed.
pub fn kpod_fit_imputed_form(
    x: &DataMatrix,
    mask: &MaskMatrix,
    opts: &FitOptions,
) -> Result<KpodFitResult> {
    check_shapes(x, mask)?;
    let obj = ImputedObjective {
        x,
        mask,
        column_means: observed_column_means(x, mask),
    };
    let best = lloyd::fit(&obj, opts)?;
    Ok(finish(best, x, mask))
}
