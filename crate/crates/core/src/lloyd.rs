//! Alternating assign/update driver shared by k-means and both k-POD routes.
//!
//! An [`Objective`] supplies the two block minimizers; the driver owns
//! initialization, empty-cluster repair, the stopping rule and restarts.

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kmeans::FitOptions;
use crate::model::CenterMatrix;

pub(crate) trait Objective: Sync {
    /// Per-restart scratch (the imputed matrix for the Y-form).
    type State: Send;

    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn new_state(&self) -> Self::State;

    /// Center placed on data row `row`, used both to initialize and to
    /// repair empty clusters.
    fn center_from_row(&self, row: usize) -> Vec<f64>;

    /// Labels and per-row losses for fixed centers. Ties go to the lowest index.
    fn assign(&self, state: &mut Self::State, centers: &CenterMatrix) -> (Vec<usize>, Vec<f64>);

    /// Centers minimizing the loss for fixed labels. The second value marks
    /// (row-major, k×p) the cells that kept their value from `prev`.
    fn update(
        &self,
        state: &mut Self::State,
        labels: &[usize],
        prev: &CenterMatrix,
    ) -> (CenterMatrix, Vec<bool>);
}

/// Outcome of one initialization run to termination.
#[derive(Debug, Clone)]
pub(crate) struct RestartRun {
    pub centers: CenterMatrix,
    pub labels: Vec<usize>,
    pub loss: f64,
    pub iterations: usize,
    /// Loss after each iteration; entry 0 is the loss of the initial centers.
    pub trajectory: Vec<f64>,
    /// Trajectory indices at which empty-cluster repair ran.
    pub repaired_at: Vec<usize>,
    /// Stopped because the assignment reached a fixed point.
    pub converged: bool,
    /// k×p flags: cell changed from its initial value at least once.
    pub touched: Vec<bool>,
}

#[derive(Debug, Clone)]
pub(crate) struct BestRun {
    pub run: RestartRun,
    pub restart: usize,
    pub restarts_run: usize,
}

fn mean_loss(point_losses: &[f64]) -> f64 {
    point_losses.iter().sum::<f64>() / point_losses.len() as f64
}

/// Moves the centers of empty clusters onto the rows with the largest point
/// losses and reassigns once. Returns whether anything moved.
fn repair_empty<O: Objective>(
    obj: &O,
    state: &mut O::State,
    centers: &mut CenterMatrix,
    touched: &mut [bool],
    labels: &mut Vec<usize>,
    point_losses: &mut Vec<f64>,
) -> bool {
    let k = centers.k();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    let empty: Vec<usize> = (0..k).filter(|&l| sizes[l] == 0).collect();
    if empty.is_empty() {
        return false;
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| point_losses[b].total_cmp(&point_losses[a]).then(a.cmp(&b)));
    let p = centers.p();
    for (&l, &row) in empty.iter().zip(&order) {
        centers.row_mut(l).copy_from_slice(&obj.center_from_row(row));
        touched[l * p..(l + 1) * p].iter_mut().for_each(|t| *t = true);
    }
    let (new_labels, new_losses) = obj.assign(state, centers);
    *labels = new_labels;
    *point_losses = new_losses;
    true
}

pub(crate) fn run_restart<O: Objective>(
    obj: &O,
    init_rows: &[usize],
    max_iters: usize,
    rel_tol: f64,
) -> RestartRun {
    let k = init_rows.len();
    let p = obj.cols();
    let init: Vec<f64> = init_rows.iter().flat_map(|&i| obj.center_from_row(i)).collect();
    let mut centers = CenterMatrix::new(k, p, init).expect("initial centers are finite");
    let mut state = obj.new_state();
    let mut touched = vec![false; k * p];
    let mut repaired_at = Vec::new();

    let (mut labels, mut point_losses) = obj.assign(&mut state, &centers);
    if repair_empty(obj, &mut state, &mut centers, &mut touched, &mut labels, &mut point_losses) {
        repaired_at.push(0);
    }
    let mut loss = mean_loss(&point_losses);
    let mut trajectory = vec![loss];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        iterations += 1;
        let (new_centers, held) = obj.update(&mut state, &labels, &centers);
        for (t, h) in touched.iter_mut().zip(&held) {
            *t |= !h;
        }
        centers = new_centers;
        let (mut new_labels, mut new_losses) = obj.assign(&mut state, &centers);
        if repair_empty(obj, &mut state, &mut centers, &mut touched, &mut new_labels, &mut new_losses) {
            repaired_at.push(iterations);
        }
        let prev_loss = loss;
        loss = mean_loss(&new_losses);
        trajectory.push(loss);
        let unchanged = new_labels == labels;
        labels = new_labels;
        if unchanged {
            converged = true;
            break;
        }
        if prev_loss - loss <= rel_tol * prev_loss {
            break;
        }
    }

    RestartRun {
        centers,
        labels,
        loss,
        iterations,
        trajectory,
        repaired_at,
        converged,
        touched,
    }
}

pub(crate) fn validate(opts: &FitOptions, n: usize) -> Result<()> {
    if opts.k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if opts.k > n {
        return Err(Error::invalid(format!("k={} exceeds row count n={n}", opts.k)));
    }
    if opts.restarts == 0 {
        return Err(Error::invalid("restarts must be >= 1"));
    }
    if opts.max_iters == 0 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    if !(opts.rel_tol >= 0.0) {
        return Err(Error::invalid("rel_tol must be a nonnegative number"));
    }
    Ok(())
}

/// Row indices used to initialize restart `r`: k distinct rows, uniformly.
pub(crate) fn init_rows(opts: &FitOptions, n: usize, r: usize) -> Vec<usize> {
    let mut rng = opts.seed.derive_index("restart", r as u64).rng();
    index::sample(&mut rng, n, opts.k).into_vec()
}

/// Relative width of the band in which restart losses are treated as equal.
const TIE_RTOL: f64 = 1e-12;

/// Runs every restart (in parallel) and keeps the lowest loss; ties go to
/// the earliest restart so the result is schedule independent.
pub(crate) fn fit<O: Objective>(obj: &O, opts: &FitOptions) -> Result<BestRun> {
    let n = obj.rows();
    validate(opts, n)?;
    let runs: Vec<RestartRun> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| run_restart(obj, &init_rows(opts, n, r), opts.max_iters, opts.rel_tol))
        .collect();
    // Restarts that reach the same optimum can differ in the last few ulps
    // depending on summation order, so near-equal losses count as ties and
    // go to the earliest restart.
    let min = runs.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
    let band = TIE_RTOL * (1.0 + min.abs());
    let best = runs
        .iter()
        .position(|r| r.loss <= min + band)
        .expect("at least one restart");
    let run = runs.into_iter().nth(best).expect("at least one restart");
    Ok(BestRun {
        run,
        restart: best,
        restarts_run: opts.restarts,
    })
}
