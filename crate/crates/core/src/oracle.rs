//! Reference centers standing in for the population k-means minimizer:
//! k-means fitted on one large fresh sample.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::Result;
use crate::kmeans::{km_fit, FitOptions};
use crate::model::{CenterMatrix, RngSeed};
use crate::synthetic::{sample_gmm, GmmSpec};

/// Sample size used for reference centers unless configured otherwise.
pub const DEFAULT_REFERENCE_N: usize = 100_000;

/// Fits k-means (with `opts`, `k` overriding `opts.k`) to `n_large` fresh
/// draws from `spec` and returns the centers with rows sorted
/// lexicographically.
pub fn estimate_reference(
    spec: &GmmSpec,
    k: usize,
    n_large: usize,
    opts: &FitOptions,
) -> Result<CenterMatrix> {
    let (x, _) = sample_gmm(spec, n_large, opts.seed.derive("reference-sample"))?;
    let opts = FitOptions {
        k,
        seed: opts.seed.derive("reference-fit"),
        ..opts.clone()
    };
    Ok(km_fit(&x, &opts)?.centers.sorted_rows())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ReferenceKey {
    spec: u64,
    k: usize,
    n_large: usize,
    seed: RngSeed,
}

impl ReferenceKey {
    fn file_name(&self) -> String {
        format!(
            "reference-{:016x}-k{}-n{}-s{:016x}.csv",
            self.spec, self.k, self.n_large, self.seed.0
        )
    }
}

/// Memoizes [`estimate_reference`] in memory and, optionally, as CSV files
/// in a directory. Lookups and computations are serialized.
#[derive(Debug, Default)]
pub struct ReferenceCache {
    dir: Option<PathBuf>,
    entries: Mutex<HashMap<ReferenceKey, CenterMatrix>>,
}

impl ReferenceCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn persistent(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            entries: Mutex::default(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get_or_compute(
        &self,
        spec: &GmmSpec,
        k: usize,
        n_large: usize,
        opts: &FitOptions,
    ) -> Result<CenterMatrix> {
        let key = ReferenceKey {
            spec: spec.fingerprint(),
            k,
            n_large,
            seed: opts.seed,
        };
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(hit) = entries.get(&key) {
            return Ok(hit.clone());
        }
        let path = self.dir.as_ref().map(|d| d.join(key.file_name()));
        if let Some(path) = path.as_ref().filter(|p| p.exists()) {
            let centers = CenterMatrix::load(path)?;
            if centers.k() == k && centers.p() == spec.p() {
                entries.insert(key, centers.clone());
                return Ok(centers);
            }
        }
        let centers = estimate_reference(spec, k, n_large, opts)?;
        if let Some(path) = path {
            std::fs::create_dir_all(path.parent().expect("joined path has a parent"))?;
            centers.save(&path)?;
        }
        entries.insert(key, centers.clone());
        Ok(centers)
    }
}
