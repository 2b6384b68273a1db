//! Repetition harness: sample complete data, mask it, fit the three methods,
//! score each against large-sample reference centers, aggregate.
//!
//! Every random draw comes from a seed derived from
//! `(master seed, setting id, n, repetition, stage)`, so results do not
//! depend on thread count or on which other settings are in the config.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{km_fit, FitOptions};
use crate::kpod::kpod_fit;
use crate::metrics::{decomposition_check, mse_centers};
use crate::missing::{complete_case_fit, gen_mask, McarSpec};
use crate::model::{CenterMatrix, RngSeed};
use crate::oracle::{ReferenceCache, DEFAULT_REFERENCE_N};
use crate::synthetic::{sample_gmm, GmmSpec, Preset};

pub const RECORD_HEADER: &str =
    "setting,n,p,k,missing_rate,rep,method,mse,loss,iterations,complete_case_count,status,wall_time_ms";
pub const AGGREGATE_HEADER: &str = "setting,n,missing_rate,method,mse_mean,mse_std,fail_frac";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Table,
    Trend,
}

/// Lloyd settings for one method; `k` and the seed come from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    pub restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        let d = FitOptions::new(1);
        Self {
            restarts: d.restarts,
            max_iters: d.max_iters,
            rel_tol: d.rel_tol,
        }
    }
}

impl FitSettings {
    fn options(&self, k: usize, seed: RngSeed) -> FitOptions {
        FitOptions {
            k,
            restarts: self.restarts,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSettings {
    pub oracle: FitSettings,
    pub complete_case: FitSettings,
    pub kpod: FitSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSettings {
    pub n_large: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        Self {
            n_large: DEFAULT_REFERENCE_N,
            restarts: 10,
            max_iters: 300,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineGmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major p×p per component; identity when omitted.
    #[serde(default)]
    pub covariances: Option<Vec<Vec<f64>>>,
}

/// A scalar or a list in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingConfig {
    /// Label in the output; defaults to the preset name.
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub gmm: Option<InlineGmm>,
    /// Sample size(s); defaults to the preset's.
    #[serde(default)]
    pub n: Option<OneOrMany<usize>>,
    /// Equal per-column missing rate(s) in `[0, 1)`.
    #[serde(default)]
    pub missing_rate: Option<OneOrMany<f64>>,
    /// Explicit per-column observation probabilities (instead of `missing_rate`).
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    /// Cluster count; defaults to the mixture's component count.
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub mode: Mode,
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub fit: MethodSettings,
    #[serde(default)]
    pub reference: ReferenceSettings,
    pub settings: Vec<SettingConfig>,
    /// Directory for `records.csv` / `aggregate.csv` (CLI `--out` wins).
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory for cached reference centers.
    #[serde(default)]
    pub reference_cache: Option<PathBuf>,
    /// Fill `wall_time_ms`. Off by default because timings make the output
    /// non-reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_repetitions() -> usize {
    100
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.plan()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Validates and expands the settings into runnable form.
    pub fn plan(&self) -> Result<Vec<Setting>> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if self.settings.is_empty() {
            return Err(Error::Config("no settings".into()));
        }
        for (label, f) in [
            ("oracle", &self.fit.oracle),
            ("complete_case", &self.fit.complete_case),
            ("kpod", &self.fit.kpod),
        ] {
            if f.restarts == 0 || f.max_iters == 0 || !(f.rel_tol >= 0.0) {
                return Err(Error::Config(format!("invalid fit settings for {label}")));
            }
        }
        if self.reference.n_large == 0 || self.reference.restarts == 0 {
            return Err(Error::Config("invalid reference settings".into()));
        }
        let settings = self
            .settings
            .iter()
            .enumerate()
            .map(|(i, s)| s.resolve(i).map_err(|e| Error::Config(format!("setting {i}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut ids: Vec<&str> = settings.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("setting ids must be unique".into()));
        }
        Ok(settings)
    }
}

/// One validated setting: a mixture, its sample sizes and missingness levels.
#[derive(Debug, Clone)]
pub struct Setting {
    pub id: String,
    pub gmm: GmmSpec,
    pub k: usize,
    pub n: Vec<usize>,
    pub masks: Vec<MissingLevel>,
}

#[derive(Debug, Clone)]
pub struct MissingLevel {
    /// Value written to the `missing_rate` column (mean rate for a q-vector).
    pub rate: f64,
    pub mcar: McarSpec,
}

impl SettingConfig {
    fn resolve(&self, index: usize) -> Result<Setting> {
        let preset = self.preset.as_deref().map(str::parse::<Preset>).transpose()?;
        let (gmm, preset_mcar, default_n) = match (preset, &self.gmm) {
            (Some(p), None) => {
                let s = p.setup();
                (s.gmm, Some(s.mcar), s.default_n)
            }
            (None, Some(g)) => {
                let means = CenterMatrix::from_rows(&g.means)?;
                let gmm = match &g.covariances {
                    None => GmmSpec::isotropic(g.weights.clone(), means)?,
                    Some(c) => GmmSpec::new(g.weights.clone(), means, c.clone())?,
                };
                (gmm, None, 0)
            }
            _ => return Err(Error::invalid("exactly one of `preset` and `gmm` is required")),
        };
        let p = gmm.p();
        let id = match (&self.id, preset) {
            (Some(id), _) => id.clone(),
            (None, Some(p)) => p.name().to_owned(),
            (None, None) => format!("setting{index}"),
        };
        if id.is_empty() || id.contains([',', '"', '\n']) {
            return Err(Error::invalid(format!("setting id {id:?} is not CSV-safe")));
        }
        let n = match &self.n {
            Some(n) => n.to_vec(),
            None if default_n > 0 => vec![default_n],
            None => return Err(Error::invalid("`n` is required for an inline mixture")),
        };
        if n.is_empty() || n.contains(&0) {
            return Err(Error::invalid("sample sizes must be >= 1"));
        }
        let masks = match (&self.missing_rate, &self.q) {
            (Some(rates), None) => rates
                .to_vec()
                .into_iter()
                .map(|rate| {
                    Ok(MissingLevel {
                        rate,
                        mcar: McarSpec::uniform_missing_rate(p, rate)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            (None, Some(q)) => {
                if q.len() != p {
                    return Err(Error::dim("q length", p, q.len()));
                }
                let mcar = McarSpec::new(q.clone())?;
                vec![MissingLevel {
                    rate: mcar.mean_missing_rate(),
                    mcar,
                }]
            }
            (None, None) => {
                let mcar = preset_mcar.ok_or_else(|| {
                    Error::invalid("`missing_rate` or `q` is required for an inline mixture")
                })?;
                vec![MissingLevel {
                    rate: mcar.mean_missing_rate(),
                    mcar,
                }]
            }
            (Some(_), Some(_)) => return Err(Error::invalid("give `missing_rate` or `q`, not both")),
        };
        if masks.is_empty() {
            return Err(Error::invalid("no missing rates"));
        }
        let k = self.k.unwrap_or(gmm.k());
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if let Some(&small) = n.iter().find(|&&v| v < k) {
            return Err(Error::invalid(format!("n={small} is smaller than k={k}")));
        }
        Ok(Setting {
            id,
            gmm,
            k,
            n,
            masks,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// k-means on the complete data before masking.
    Oracle,
    /// k-means on the fully observed rows only.
    CompleteCase,
    Kpod,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Oracle, Method::CompleteCase, Method::Kpod];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::CompleteCase => "complete_case",
            Method::Kpod => "kpod",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Fewer complete rows than clusters.
    Insufficient,
    /// The pattern decomposition failed to reproduce the k-POD loss.
    DecompositionMismatch,
    Error,
}

/// One CSV row: a method's outcome on one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: String,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub missing_rate: f64,
    pub rep: usize,
    pub method: Method,
    pub mse: Option<f64>,
    pub loss: Option<f64>,
    pub iterations: Option<usize>,
    pub complete_case_count: usize,
    pub status: Status,
    pub wall_time_ms: Option<f64>,
}

/// Mean and sample standard deviation (n − 1 denominator) of the MSE over
/// repetitions with status `ok`; `fail_frac` is the share of the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub setting: String,
    pub n: usize,
    pub missing_rate: f64,
    pub method: Method,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub fail_frac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
}

struct Job<'a> {
    order: usize,
    setting: &'a Setting,
    reference: &'a CenterMatrix,
    n: usize,
    rep: usize,
}

fn elapsed_ms(start: Instant, on: bool) -> Option<f64> {
    on.then(|| start.elapsed().as_secs_f64() * 1e3)
}

fn rate_label(rate: f64) -> String {
    format!("rate:{:016x}", rate.to_bits())
}

fn run_job(cfg: &ExperimentConfig, job: &Job<'_>) -> Vec<(usize, RunRecord)> {
    let s = job.setting;
    let timing = cfg.record_timing;
    let base = RngSeed(cfg.seed)
        .derive(&format!("setting:{}", s.id))
        .derive_index("n", job.n as u64)
        .derive_index("rep", job.rep as u64);
    let record = |rate: f64, method, cc: usize| RunRecord {
        setting: s.id.clone(),
        n: job.n,
        p: s.gmm.p(),
        k: s.k,
        missing_rate: rate,
        rep: job.rep,
        method,
        mse: None,
        loss: None,
        iterations: None,
        complete_case_count: cc,
        status: Status::Error,
        wall_time_ms: None,
    };
    let mut out = Vec::new();

    let x = match sample_gmm(&s.gmm, job.n, base.derive("data")) {
        Ok((x, _)) => x,
        Err(_) => {
            for level in &s.masks {
                for m in Method::ALL {
                    out.push((job.order, record(level.rate, m, 0)));
                }
            }
            return out;
        }
    };

    let start = Instant::now();
    let oracle = km_fit(&x, &cfg.fit.oracle.options(s.k, base.derive("fit:oracle")))
        .and_then(|fit| Ok((mse_centers(&fit.centers, job.reference)?, fit)));
    let oracle_ms = elapsed_ms(start, timing);

    for level in &s.masks {
        let level_seed = base.derive(&rate_label(level.rate));
        let mask = match gen_mask(job.n, &level.mcar, level_seed.derive("mask")) {
            Ok(m) => m,
            Err(_) => {
                for m in Method::ALL {
                    out.push((job.order, record(level.rate, m, 0)));
                }
                continue;
            }
        };
        let cc_count = (0..job.n).filter(|&i| mask.is_complete_row(i)).count();

        let mut rec = record(level.rate, Method::Oracle, cc_count);
        if let Ok((mse, fit)) = &oracle {
            rec.mse = Some(*mse);
            rec.loss = Some(fit.loss);
            rec.iterations = Some(fit.iterations);
            rec.status = Status::Ok;
        }
        rec.wall_time_ms = oracle_ms;
        out.push((job.order, rec));

        let start = Instant::now();
        let mut rec = record(level.rate, Method::CompleteCase, cc_count);
        let cc_opts = cfg.fit.complete_case.options(s.k, level_seed.derive("fit:complete_case"));
        match complete_case_fit(&x, &mask, &cc_opts)
            .and_then(|(fit, _)| Ok((mse_centers(&fit.centers, job.reference)?, fit)))
        {
            Ok((mse, fit)) => {
                rec.mse = Some(mse);
                rec.loss = Some(fit.loss);
                rec.iterations = Some(fit.iterations);
                rec.status = Status::Ok;
            }
            Err(Error::InsufficientData { .. }) => rec.status = Status::Insufficient,
            Err(_) => rec.status = Status::Error,
        }
        rec.wall_time_ms = elapsed_ms(start, timing);
        out.push((job.order, rec));

        let start = Instant::now();
        let mut rec = record(level.rate, Method::Kpod, cc_count);
        let kp_opts = cfg.fit.kpod.options(s.k, level_seed.derive("fit:kpod"));
        let outcome = x.masked(&mask).and_then(|observed| {
            let fit = kpod_fit(&observed, &mask, &kp_opts)?;
            let mse = mse_centers(&fit.fit.centers, job.reference)?;
            let decomposition = decomposition_check(&observed, &mask, &fit.fit.centers)?;
            Ok((mse, fit, decomposition.holds()))
        });
        if let Ok((mse, fit, holds)) = outcome {
            rec.mse = Some(mse);
            rec.loss = Some(fit.fit.loss);
            rec.iterations = Some(fit.fit.iterations);
            rec.status = if holds { Status::Ok } else { Status::DecompositionMismatch };
        }
        rec.wall_time_ms = elapsed_ms(start, timing);
        out.push((job.order, rec));
    }
    out
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match values.len() {
        0 => (None, None),
        1 => (Some(values[0]), None),
        len => {
            let mean = values.iter().sum::<f64>() / len as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1) as f64;
            (Some(mean), Some(var.sqrt()))
        }
    }
}

/// Groups records by (setting, n, missing rate, method), preserving the
/// order in which groups first appear.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: Vec<((String, usize, u64, Method), Vec<&RunRecord>)> = Vec::new();
    let mut index: BTreeMap<(String, usize, u64, Method), usize> = BTreeMap::new();
    for r in records {
        let key = (r.setting.clone(), r.n, r.missing_rate.to_bits(), r.method);
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(r);
    }
    groups
        .into_iter()
        .map(|((setting, n, _, method), rows)| {
            let ok: Vec<f64> = rows
                .iter()
                .filter(|r| r.status == Status::Ok)
                .filter_map(|r| r.mse)
                .collect();
            let (mse_mean, mse_std) = mean_std(&ok);
            AggregateRow {
                setting,
                n,
                missing_rate: rows[0].missing_rate,
                method,
                mse_mean,
                mse_std,
                fail_frac: (rows.len() - ok.len()) as f64 / rows.len() as f64,
            }
        })
        .collect()
}

/// Runs every (setting, n, repetition) on the current rayon pool. Output is
/// ordered by setting (config order), n, missing rate, repetition, method.
pub fn run_experiment(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<ExperimentOutput> {
    let settings = cfg.plan()?;
    let references = settings
        .iter()
        .map(|s| {
            let opts = FitOptions {
                k: s.k,
                restarts: cfg.reference.restarts,
                max_iters: cfg.reference.max_iters,
                rel_tol: cfg.reference.rel_tol,
                seed: RngSeed(cfg.seed).derive(&format!("setting:{}", s.id)).derive("reference"),
            };
            cache.get_or_compute(&s.gmm, s.k, cfg.reference.n_large, &opts)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for (si, (setting, reference)) in settings.iter().zip(&references).enumerate() {
        for (ni, &n) in setting.n.iter().enumerate() {
            for rep in 0..cfg.repetitions {
                jobs.push(Job {
                    order: (si << 20) | (ni << 10),
                    setting,
                    reference,
                    n,
                    rep,
                });
            }
        }
    }
    let mut tagged: Vec<(usize, RunRecord)> =
        jobs.par_iter().flat_map_iter(|job| run_job(cfg, job)).collect();
    let level_of = |r: &RunRecord, s: &Setting| {
        s.masks
            .iter()
            .position(|l| l.rate.to_bits() == r.missing_rate.to_bits())
            .unwrap_or(0)
    };
    tagged.sort_by_key(|(order, r)| {
        let s = &settings[order >> 20];
        (*order, level_of(r, s), r.rep, r.method)
    });
    let records: Vec<RunRecord> = tagged.into_iter().map(|(_, r)| r).collect();
    let aggregates = aggregate(&records);
    Ok(ExperimentOutput {
        records,
        aggregates,
    })
}

/// One MSE row per (setting, missing rate).
pub fn run_table(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<ExperimentOutput> {
    run_experiment(cfg, cache)
}

/// Per-n rows; each setting's sample sizes must be strictly ascending.
pub fn run_trend(cfg: &ExperimentConfig, cache: &ReferenceCache) -> Result<ExperimentOutput> {
    for s in &cfg.settings {
        if let Some(n) = &s.n {
            if n.to_vec().windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("trend sample sizes must be strictly ascending".into()));
            }
        }
    }
    run_experiment(cfg, cache)
}

impl ExperimentOutput {
    pub fn write_records<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(RECORD_HEADER.split(','))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.aggregates {
            w.serialize(r)?;
        }
        if self.aggregates.is_empty() {
            w.write_record(AGGREGATE_HEADER.split(','))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `records.csv` and `aggregate.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_records(std::fs::File::create(dir.join("records.csv"))?)?;
        self.write_aggregates(std::fs::File::create(dir.join("aggregate.csv"))?)?;
        Ok(())
    }

    pub fn aggregate_for(&self, setting: &str, n: usize, rate: f64, method: Method) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| {
            a.setting == setting && a.n == n && a.method == method && (a.missing_rate - rate).abs() < 1e-12
        })
    }

    /// Fixed-width summary with one line per (setting, n, rate).
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>7} {:>6}  {:>17} {:>17} {:>17}\n",
            "setting", "n", "rate", "oracle", "complete_case", "kpod"
        );
        let mut seen = Vec::new();
        for a in &self.aggregates {
            let key = (a.setting.clone(), a.n, a.missing_rate.to_bits());
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            out.push_str(&format!("{:<10} {:>7} {:>6.3}", a.setting, a.n, a.missing_rate));
            for m in Method::ALL {
                let cell = match self.aggregate_for(&a.setting, a.n, a.missing_rate, m) {
                    Some(AggregateRow { mse_mean: Some(mean), mse_std, fail_frac, .. }) => {
                        let sd = mse_std.map_or("-".to_owned(), |s| format!("{s:.3}"));
                        let flag = if *fail_frac > 0.0 { "*" } else { "" };
                        format!("{mean:.3} ({sd}){flag}")
                    }
                    Some(_) => "n/a".to_owned(),
                    None => "".to_owned(),
                };
                out.push_str(&format!("  {cell:>17}"));
            }
            out.push('\n');
        }
        out
    }
}
