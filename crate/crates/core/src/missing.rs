//! MCAR masks, complete-case extraction and missingness-pattern grouping.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kmeans::{km_fit, FitOptions, FitResult};
use crate::model::{check_shapes, DataMatrix, MaskMatrix, RngSeed};

/// Per-column observation probabilities for an MCAR mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct McarSpec {
    q: Vec<f64>,
}

impl McarSpec {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::invalid("observation probabilities must be non-empty"));
        }
        if let Some(bad) = q.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::invalid(format!(
                "observation probability {bad} outside (0, 1]"
            )));
        }
        Ok(Self { q })
    }

    /// Every column missing independently with probability `rate` in `[0, 1)`.
    pub fn uniform_missing_rate(p: usize, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("missing rate {rate} outside [0, 1)")));
        }
        Self::new(vec![1.0 - rate; p])
    }

    pub fn full(p: usize) -> Self {
        Self { q: vec![1.0; p] }
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> usize {
        self.q.len()
    }

    /// Probability that a row is fully observed, `Π q_j`.
    pub fn complete_probability(&self) -> f64 {
        self.q.iter().product()
    }

    /// Average per-column missing rate.
    pub fn mean_missing_rate(&self) -> f64 {
        self.q.iter().map(|q| 1.0 - q).sum::<f64>() / self.q.len() as f64
    }
}

/// Draws an n×p mask with independent entries, column j ~ Bernoulli(q_j).
/// Draw order is row-major from a single stream seeded by `seed`.
pub fn gen_mask(n: usize, spec: &McarSpec, seed: RngSeed) -> Result<MaskMatrix> {
    if n == 0 {
        return Err(Error::invalid("mask needs n >= 1"));
    }
    let mut rng = seed.rng();
    let p = spec.p();
    let mut bits = Vec::with_capacity(n * p);
    for _ in 0..n {
        for &q in spec.q() {
            bits.push(rng.gen::<f64>() < q);
        }
    }
    MaskMatrix::new(n, p, bits)
}

/// Rows with every entry observed, in their original order. The result may
/// have zero rows.
pub fn complete_cases(x: &DataMatrix, mask: &MaskMatrix) -> Result<DataMatrix> {
    check_shapes(x, mask)?;
    let mut values = Vec::new();
    let mut rows = 0;
    for i in 0..x.n() {
        if mask.is_complete_row(i) {
            values.extend_from_slice(x.row(i));
            rows += 1;
        }
    }
    DataMatrix::with_rows(rows, x.p(), values)
}

/// k-means on the complete cases. Fails with [`Error::InsufficientData`]
/// when fewer than k rows are complete.
pub fn complete_case_fit(
    x: &DataMatrix,
    mask: &MaskMatrix,
    opts: &FitOptions,
) -> Result<(FitResult, usize)> {
    let cc = complete_cases(x, mask)?;
    if cc.n() < opts.k.max(1) {
        return Err(Error::InsufficientData {
            rows: cc.n(),
            k: opts.k,
        });
    }
    Ok((km_fit(&cc, opts)?, cc.n()))
}

/// A missingness pattern packed into a bit set; bit j set means column j observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PatternKey {
    bits: u64,
    p: u8,
}

/// Widest mask a [`PatternKey`] can represent.
pub const MAX_PATTERN_COLUMNS: usize = 64;

impl PatternKey {
    pub fn from_row(row: &[bool]) -> Result<Self> {
        if row.len() > MAX_PATTERN_COLUMNS {
            return Err(Error::invalid(format!(
                "pattern keys support at most {MAX_PATTERN_COLUMNS} columns, got {}",
                row.len()
            )));
        }
        let bits = row
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &b)| if b { acc | (1 << j) } else { acc });
        Ok(Self {
            bits,
            p: row.len() as u8,
        })
    }

    pub fn p(&self) -> usize {
        usize::from(self.p)
    }

    pub fn is_observed(&self, j: usize) -> bool {
        j < self.p() && self.bits & (1 << j) != 0
    }

    pub fn is_complete(&self) -> bool {
        (0..self.p()).all(|j| self.is_observed(j))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.p()).map(|j| self.is_observed(j)).collect()
    }

    pub fn observed_columns(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.is_observed(j)).collect()
    }
}

impl fmt::Display for PatternKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.p() {
            f.write_str(if self.is_observed(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Row indices grouped by exact missingness pattern. Buckets partition `0..n`
/// and each bucket lists its rows in increasing order.
pub fn group_patterns(mask: &MaskMatrix) -> Result<BTreeMap<PatternKey, Vec<usize>>> {
    let mut groups: BTreeMap<PatternKey, Vec<usize>> = BTreeMap::new();
    for (i, row) in mask.rows().enumerate() {
        groups.entry(PatternKey::from_row(row)?).or_default().push(i);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_probabilities() {
        assert!(McarSpec::new(vec![0.5, 0.0]).is_err());
        assert!(McarSpec::new(vec![1.2]).is_err());
        assert!(McarSpec::new(vec![f64::NAN]).is_err());
        assert!(McarSpec::uniform_missing_rate(2, 1.0).is_err());
        assert_eq!(McarSpec::uniform_missing_rate(2, 0.3).unwrap().q(), &[0.7, 0.7]);
    }

    #[test]
    fn all_ones_probabilities_give_full_mask() {
        let r = gen_mask(500, &McarSpec::full(4), RngSeed(1)).unwrap();
        assert_eq!(r, MaskMatrix::ones(500, 4));
    }

    #[test]
    fn column_rates_match_setting_a() {
        let n = 100_000;
        let q = 2.0 / 3.0;
        let r = gen_mask(n, &McarSpec::new(vec![q, q]).unwrap(), RngSeed(20)).unwrap();
        let bound = 3.0 * (q * (1.0 - q) / n as f64).sqrt();
        for j in 0..2 {
            let mean = (0..n).filter(|&i| r.is_observed(i, j)).count() as f64 / n as f64;
            assert!((mean - q).abs() < bound, "column {j}: {mean}");
        }
    }

    #[test]
    fn intro_complete_case_count() {
        let spec = McarSpec::new(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let n = 10_000;
        let expected = n as f64 * spec.complete_probability();
        assert!((expected - 2222.2).abs() < 0.1);
        let r = gen_mask(n, &spec, RngSeed(3)).unwrap();
        let count = (0..n).filter(|&i| r.is_complete_row(i)).count() as f64;
        let sd = (expected * (1.0 - spec.complete_probability())).sqrt();
        assert!((count - expected).abs() < 4.0 * sd, "{count}");
    }

    #[test]
    fn complete_cases_examples() {
        let x = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(complete_cases(&x, &MaskMatrix::ones(3, 2)).unwrap(), x);

        let r = MaskMatrix::from_rows(&[vec![1, 1], vec![1, 0], vec![1, 1]]).unwrap();
        let cc = complete_cases(&x, &r).unwrap();
        assert_eq!(cc.rows().collect::<Vec<_>>(), vec![&[1.0, 2.0][..], &[5.0, 6.0][..]]);

        let none = MaskMatrix::from_rows(&[vec![0, 1], vec![1, 0], vec![0, 0]]).unwrap();
        let cc = complete_cases(&x, &none).unwrap();
        assert!(cc.is_empty());
        assert!(matches!(
            complete_case_fit(&x, &none, &FitOptions::new(2)),
            Err(Error::InsufficientData { rows: 0, k: 2 })
        ));
    }

    #[test]
    fn group_patterns_examples() {
        let r = MaskMatrix::ones(4, 3);
        let g = group_patterns(&r).unwrap();
        assert_eq!(g.len(), 1);
        let (key, rows) = g.iter().next().unwrap();
        assert!(key.is_complete());
        assert_eq!(rows, &vec![0, 1, 2, 3]);

        let r = MaskMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 0]]).unwrap();
        let g = group_patterns(&r).unwrap();
        let k10 = PatternKey::from_row(&[true, false]).unwrap();
        let k01 = PatternKey::from_row(&[false, true]).unwrap();
        assert_eq!(g[&k10], vec![0, 2]);
        assert_eq!(g[&k01], vec![1]);
        assert_eq!(k10.to_string(), "10");
    }

    #[test]
    fn pattern_keys_cap_at_64_columns() {
        assert!(PatternKey::from_row(&[true; 64]).is_ok());
        assert!(PatternKey::from_row(&[true; 65]).is_err());
    }

    proptest! {
        #[test]
        fn patterns_partition_rows(n in 1usize..200, p in 1usize..6, seed in any::<u64>(), q in 0.05f64..1.0) {
            let r = gen_mask(n, &McarSpec::new(vec![q; p]).unwrap(), RngSeed(seed)).unwrap();
            let g = group_patterns(&r).unwrap();
            let mut seen: Vec<usize> = g.values().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for (key, rows) in &g {
                for &i in rows {
                    prop_assert_eq!(key.to_bools(), r.row(i).to_vec());
                }
            }
            let x = DataMatrix::new(n, p, vec![1.0; n * p]).unwrap();
            let complete_bucket = g.iter().find(|(k, _)| k.is_complete()).map_or(0, |(_, v)| v.len());
            prop_assert_eq!(complete_cases(&x, &r).unwrap().n(), complete_bucket);
        }

        #[test]
        fn mask_is_seed_deterministic(n in 1usize..100, seed in any::<u64>()) {
            let spec = McarSpec::new(vec![0.3, 0.9, 0.6]).unwrap();
            prop_assert_eq!(gen_mask(n, &spec, RngSeed(seed)).unwrap(), gen_mask(n, &spec, RngSeed(seed)).unwrap());
        }
    }
}
