//! Numeric containers shared by every algorithm, the masked squared-distance
//! kernel, and deterministic seed derivation.
//!
//! Matrices are dense and row-major. Masked entries of a [`DataMatrix`] hold
//! a placeholder (0 by convention); nothing downstream may depend on its value.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// An n×p matrix of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::invalid(format!(
                "data matrix must be at least 1x1, got {n}x{p}"
            )));
        }
        Self::with_rows(n, p, values)
    }

    /// Like [`DataMatrix::new`] but permits zero rows. Only row filters
    /// (complete-case extraction) produce such matrices.
    pub(crate) fn with_rows(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("data matrix needs at least one column"));
        }
        if values.len() != n * p {
            return Err(Error::dim("data values", n * p, values.len()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, column {}",
                pos / p,
                pos % p
            )));
        }
        Ok(Self { n, p, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * p);
        for row in rows {
            if row.len() != p {
                return Err(Error::dim("row length", p, row.len()));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), p, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.p)
    }

    /// Copy with every unobserved entry replaced by `0.0`.
    pub fn masked(&self, mask: &MaskMatrix) -> Result<Self> {
        check_shapes(self, mask)?;
        let values = self
            .values
            .iter()
            .zip(&mask.bits)
            .map(|(&v, &b)| if b { v } else { 0.0 })
            .collect();
        Ok(Self {
            n: self.n,
            p: self.p,
            values,
        })
    }

    pub fn read_csv<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        let rows = read_numeric_rows(reader, source_name)?;
        Self::from_rows(&rows).map_err(|e| Error::Parse {
            source_name: source_name.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_numeric_rows(writer, self.rows())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Response indicators: `true` where the entry is observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    n: usize,
    p: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn new(n: usize, p: usize, bits: Vec<bool>) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("mask needs at least one column"));
        }
        if bits.len() != n * p {
            return Err(Error::dim("mask bits", n * p, bits.len()));
        }
        Ok(Self { n, p, bits })
    }

    pub fn ones(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            bits: vec![true; n * p],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut bits = Vec::with_capacity(rows.len() * p);
        for row in rows {
            if row.len() != p {
                return Err(Error::dim("mask row length", p, row.len()));
            }
            for &b in row {
                match b {
                    0 => bits.push(false),
                    1 => bits.push(true),
                    other => return Err(Error::invalid(format!("mask entry {other} is not 0/1"))),
                }
            }
        }
        Self::new(rows.len(), p, bits)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.p + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> + '_ {
        self.bits.chunks_exact(self.p)
    }

    pub fn is_complete_row(&self, i: usize) -> bool {
        self.row(i).iter().all(|&b| b)
    }

    pub fn is_empty_row(&self, i: usize) -> bool {
        !self.row(i).iter().any(|&b| b)
    }

    pub fn observed_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn read_csv<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_owned(),
            message,
        };
        let rows = read_numeric_rows(reader, source_name)?;
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .map(|v| match v {
                        v if v == 0.0 => Ok(0u8),
                        v if v == 1.0 => Ok(1u8),
                        other => Err(parse_err(format!("row {i}: mask entry {other} is not 0/1"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(parse_err("empty mask".into()));
        }
        Self::from_rows(&rows).map_err(|e| parse_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for row in self.rows() {
            w.write_record(row.iter().map(|&b| if b { "1" } else { "0" }))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub(crate) fn check_shapes(data: &DataMatrix, mask: &MaskMatrix) -> Result<()> {
    if data.n != mask.n {
        return Err(Error::dim("mask rows", data.n, mask.n));
    }
    if data.p != mask.p {
        return Err(Error::dim("mask columns", data.p, mask.p));
    }
    Ok(())
}

/// A k×p matrix of cluster centers, one center per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterMatrix {
    k: usize,
    p: usize,
    values: Vec<f64>,
}

impl CenterMatrix {
    pub fn new(k: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || p == 0 {
            return Err(Error::invalid(format!(
                "center matrix must be at least 1x1, got {k}x{p}"
            )));
        }
        if values.len() != k * p {
            return Err(Error::dim("center values", k * p, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite center value"));
        }
        Ok(Self { k, p, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * p);
        for row in rows {
            if row.len() != p {
                return Err(Error::dim("center row length", p, row.len()));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), p, values)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, l: usize) -> &[f64] {
        &self.values[l * self.p..(l + 1) * self.p]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.values[l * self.p..(l + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.p)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Rows sorted lexicographically, giving a label-free canonical form.
    pub fn sorted_rows(&self) -> Self {
        let mut rows = self.to_rows();
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Self {
            k: self.k,
            p: self.p,
            values: rows.concat(),
        }
    }

    /// Columns reordered so that output column `j` is input column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let values = self
            .rows()
            .flat_map(|row| perm.iter().map(move |&j| row[j]))
            .collect();
        Self {
            k: self.k,
            p: self.p,
            values,
        }
    }

    pub fn read_csv<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        let rows = read_numeric_rows(reader, source_name)?;
        Self::from_rows(&rows).map_err(|e| Error::Parse {
            source_name: source_name.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_numeric_rows(writer, self.rows())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Cluster labels, one per row, each in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    labels: Vec<usize>,
    k: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("assignment needs k >= 1"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for k={k}")));
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// The n×k binary membership matrix, row-major.
    pub fn one_hot(&self) -> Vec<u8> {
        let mut u = vec![0u8; self.labels.len() * self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            u[i * self.k + l] = 1;
        }
        u
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }
}

/// Root of a deterministic seed tree.
///
/// Children are derived by hashing the parent with a context label, so a
/// given sequence of labels always reproduces the same random stream no
/// matter how work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn derive(self, label: &str) -> Self {
        let mut h = fnv1a(FNV_OFFSET, &self.0.to_le_bytes());
        h = fnv1a(h, label.as_bytes());
        RngSeed(splitmix64(h))
    }

    pub fn derive_index(self, label: &str, index: u64) -> Self {
        let RngSeed(s) = self.derive(label);
        RngSeed(splitmix64(fnv1a(s, &index.to_le_bytes())))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit fingerprint of a sequence of floats (bit patterns).
pub(crate) fn fingerprint(values: impl IntoIterator<Item = f64>) -> u64 {
    let mut h = FNV_OFFSET;
    for v in values {
        h = fnv1a(h, &v.to_bits().to_le_bytes());
    }
    splitmix64(h)
}

/// `Σ_j r_j (x_j − μ_j)²`: squared distance over observed coordinates only.
pub fn masked_sq_dist(x: &[f64], r: &[bool], mu: &[f64]) -> Result<f64> {
    if r.len() != x.len() {
        return Err(Error::dim("mask length", x.len(), r.len()));
    }
    if mu.len() != x.len() {
        return Err(Error::dim("center length", x.len(), mu.len()));
    }
    Ok(partial_sq_dist(x, r, mu))
}

#[inline]
pub(crate) fn partial_sq_dist(x: &[f64], r: &[bool], mu: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&xj, &rj), &mj) in x.iter().zip(r).zip(mu) {
        if rj {
            let d = xj - mj;
            acc += d * d;
        }
    }
    acc
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], mu: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&xj, &mj) in x.iter().zip(mu) {
        let d = xj - mj;
        acc += d * d;
    }
    acc
}

fn read_numeric_rows<R: Read>(reader: R, source_name: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    source_name: source_name.to_owned(),
                    message: format!("row {i}, column {j}: {field:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_numeric_rows<'a, W: Write>(
    writer: W,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in rows {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}
