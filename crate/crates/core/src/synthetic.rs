//! Gaussian-mixture data generation and the named simulation presets.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::missing::McarSpec;
use crate::model::{fingerprint, CenterMatrix, DataMatrix, RngSeed};

#[derive(Debug, Clone, PartialEq)]
enum Covariance {
    Identity,
    /// Lower Cholesky factor, row-major p×p, alongside the matrix itself.
    Full { matrix: Vec<f64>, chol: Vec<f64> },
}

/// Mixture `Σ_l π_l N(μ_l, Σ_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    weights: Vec<f64>,
    means: CenterMatrix,
    covariances: Vec<Covariance>,
}

fn cholesky(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|m| l[i * p + m] * l[j * p + m]).sum();
            if i == j {
                let d = a[i * p + i] - dot;
                if !(d > 0.0) {
                    return None;
                }
                l[i * p + i] = d.sqrt();
            } else {
                l[i * p + j] = (a[i * p + j] - dot) / l[j * p + j];
            }
        }
    }
    Some(l)
}

fn check_weights(weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != k {
        return Err(Error::dim("mixture weights", k, weights.len()));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("mixture weights must be positive"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
    }
    Ok(())
}

impl GmmSpec {
    /// Mixture with identity covariance in every component.
    pub fn isotropic(weights: Vec<f64>, means: CenterMatrix) -> Result<Self> {
        check_weights(&weights, means.k())?;
        Ok(Self {
            covariances: vec![Covariance::Identity; means.k()],
            weights,
            means,
        })
    }

    /// Mixture with explicit covariances (row-major p×p each), which must be
    /// symmetric positive definite.
    pub fn new(weights: Vec<f64>, means: CenterMatrix, covariances: Vec<Vec<f64>>) -> Result<Self> {
        let (k, p) = (means.k(), means.p());
        check_weights(&weights, k)?;
        if covariances.len() != k {
            return Err(Error::dim("covariance count", k, covariances.len()));
        }
        let covariances = covariances
            .into_iter()
            .enumerate()
            .map(|(l, matrix)| {
                if matrix.len() != p * p {
                    return Err(Error::dim("covariance size", p * p, matrix.len()));
                }
                for i in 0..p {
                    for j in 0..i {
                        let (a, b) = (matrix[i * p + j], matrix[j * p + i]);
                        if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                            return Err(Error::invalid(format!("covariance {l} is not symmetric")));
                        }
                    }
                }
                let chol = cholesky(&matrix, p).ok_or_else(|| {
                    Error::invalid(format!("covariance {l} is not positive definite"))
                })?;
                Ok(Covariance::Full { matrix, chol })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    pub fn k(&self) -> usize {
        self.means.k()
    }

    pub fn p(&self) -> usize {
        self.means.p()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &CenterMatrix {
        &self.means
    }

    /// Covariance of component `l` as a row-major p×p matrix.
    pub fn covariance(&self, l: usize) -> Vec<f64> {
        let p = self.p();
        match &self.covariances[l] {
            Covariance::Identity => {
                let mut m = vec![0.0; p * p];
                (0..p).for_each(|i| m[i * p + i] = 1.0);
                m
            }
            Covariance::Full { matrix, .. } => matrix.clone(),
        }
    }

    /// Stable fingerprint of every parameter, for cache keys.
    pub fn fingerprint(&self) -> u64 {
        let covs = (0..self.k()).flat_map(|l| self.covariance(l));
        fingerprint(
            [self.k() as f64, self.p() as f64]
                .into_iter()
                .chain(self.weights.iter().copied())
                .chain(self.means.values().iter().copied())
                .chain(covs),
        )
    }
}

/// Draws `n` rows: component from the weights, then a Gaussian draw from it.
/// Also returns the latent component of every row.
pub fn sample_gmm(spec: &GmmSpec, n: usize, seed: RngSeed) -> Result<(DataMatrix, Vec<usize>)> {
    if n == 0 {
        return Err(Error::invalid("sample size must be >= 1"));
    }
    let p = spec.p();
    let components = WeightedIndex::new(&spec.weights)
        .map_err(|e| Error::invalid(format!("mixture weights: {e}")))?;
    let mut rng = seed.rng();
    let mut values = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; p];
    for _ in 0..n {
        let l = components.sample(&mut rng);
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(&mut rng);
        }
        let mu = spec.means.row(l);
        match &spec.covariances[l] {
            Covariance::Identity => values.extend(mu.iter().zip(&z).map(|(m, e)| m + e)),
            Covariance::Full { chol, .. } => values.extend((0..p).map(|i| {
                mu[i] + (0..=i).map(|j| chol[i * p + j] * z[j]).sum::<f64>()
            })),
        }
        labels.push(l);
    }
    Ok((DataMatrix::new(n, p, values)?, labels))
}

/// Named simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Two-dimensional, two-component illustration with `q = (1/3, 2/3)`.
    Intro,
    /// Trend setting, p = 2, `q_j = 2/3`.
    A,
    /// Trend setting, p = 5, `q_j = 2/3`.
    B,
    /// Table setting, p = 2.
    S1,
    /// Table setting, p = 5.
    S2,
    /// Table setting, p = 50.
    S3,
}

pub const PRESETS: [Preset; 6] = [
    Preset::Intro,
    Preset::A,
    Preset::B,
    Preset::S1,
    Preset::S2,
    Preset::S3,
];

/// Half the distance between the two intro-preset means, which sit at `(±c, 0)`.
pub const INTRO_HALF_SEPARATION: f64 = 1.5;

/// Missing rate the table presets fall back to when none is supplied.
pub const DEFAULT_TABLE_MISSING_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PresetSetup {
    pub gmm: GmmSpec,
    pub mcar: McarSpec,
    pub default_n: usize,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Intro => "intro",
            Preset::A => "a",
            Preset::B => "b",
            Preset::S1 => "s1",
            Preset::S2 => "s2",
            Preset::S3 => "s3",
        }
    }

    pub fn setup(self) -> PresetSetup {
        let triangle = |p: usize| {
            let mut rows = vec![vec![0.0; p]; 3];
            rows[1][0] = 3.0;
            rows[2][0] = 1.5;
            rows[2][1] = 6.75f64.sqrt();
            CenterMatrix::from_rows(&rows).expect("valid means")
        };
        let third = vec![1.0 / 3.0; 3];
        let two_thirds = |p: usize| McarSpec::new(vec![2.0 / 3.0; p]).expect("valid q");
        let table_q = |p: usize| {
            McarSpec::uniform_missing_rate(p, DEFAULT_TABLE_MISSING_RATE).expect("valid rate")
        };
        let (gmm, mcar, default_n) = match self {
            Preset::Intro => {
                let c = INTRO_HALF_SEPARATION;
                let means = CenterMatrix::from_rows(&[vec![-c, 0.0], vec![c, 0.0]]).expect("valid means");
                (
                    GmmSpec::isotropic(vec![0.5, 0.5], means),
                    McarSpec::new(vec![1.0 / 3.0, 2.0 / 3.0]).expect("valid q"),
                    10_000,
                )
            }
            Preset::A => (GmmSpec::isotropic(third, triangle(2)), two_thirds(2), 10_000),
            Preset::B => (GmmSpec::isotropic(third, triangle(5)), two_thirds(5), 10_000),
            Preset::S1 => (GmmSpec::isotropic(third, triangle(2)), table_q(2), 3_000),
            Preset::S2 => (GmmSpec::isotropic(third, triangle(5)), table_q(5), 5_000),
            Preset::S3 => (GmmSpec::isotropic(third, triangle(50)), table_q(50), 10_000),
        };
        PresetSetup {
            gmm: gmm.expect("preset weights are valid"),
            mcar,
            default_n,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "intro" => Ok(Preset::Intro),
            "a" => Ok(Preset::A),
            "b" => Ok(Preset::B),
            "s1" | "1" => Ok(Preset::S1),
            "s2" | "2" => Ok(Preset::S2),
            "s3" | "3" => Ok(Preset::S3),
            other => Err(Error::invalid(format!("unknown preset {other:?}"))),
        }
    }
}

pub fn preset(name: &str) -> Result<PresetSetup> {
    Ok(name.parse::<Preset>()?.setup())
}
