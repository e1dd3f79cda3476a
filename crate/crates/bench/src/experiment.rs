//! Monte-Carlo experiments over a grid of sizes and SNRs.
//!
//! Every (size, SNR, run) cell draws one data set from a seed derived from
//! the root seed and the cell coordinates, and all configured algorithms
//! run on that same data. Per-run records go to a line-delimited JSON file,
//! aggregates to a plain-text table, and plot data to CSV.

use crate::metrics::{cp_model_fit, match_factors};
use crate::synth::{add_noise, gen_cp_model, gen_tucker_tensor, FactorDist};
use anyhow::{anyhow, bail, Context};
use bigtensor_core::cp::{cp_decompose, cp_reconstruct, CpModel, CpOutcome, UpdateRule};
use bigtensor_core::tensor::fit;
use bigtensor_core::tucker::reconstruct;
use bigtensor_core::{
    ffcp, hosvd, rand_tucker, rand_tucker_2i, tucker_cp, Constraint, DenseTensor, SeedSpec, StopRule,
    TuckerModel,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

const DATA_TAG: u64 = 0x64_6174_61; // "data"
const ALGO_TAG: u64 = 0x61_6c67_6f; // "algo"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    CpGaussian,
    CpExponentialSparse,
    TuckerGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmId {
    Hosvd,
    Randtucker,
    Randtucker2i,
    CpAls,
    CpMu,
    CpHals,
    Ffcp,
    TuckerCp,
}

impl AlgorithmId {
    fn is_tucker(self) -> bool {
        matches!(self, Self::Hosvd | Self::Randtucker | Self::Randtucker2i)
    }
}

/// Tucker compressor used in front of FFCP and Tucker+CP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compressor {
    Hosvd,
    Randtucker,
    Randtucker2i,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub id: AlgorithmId,
    /// Display name in reports; defaults to the id plus constraint.
    #[serde(default)]
    pub label: Option<String>,
    /// FFCP constraint: none, nonneg_mu, nonneg_hals or sparse.
    #[serde(default)]
    pub constraint: Option<String>,
    #[serde(default)]
    pub sparsity_c: f64,
}

impl AlgorithmSpec {
    pub fn new(id: AlgorithmId) -> Self {
        Self { id, label: None, constraint: None, sparsity_c: 0.0 }
    }

    pub fn ffcp(constraint: &str) -> Self {
        Self { constraint: Some(constraint.into()), ..Self::new(AlgorithmId::Ffcp) }
    }

    pub fn name(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let id = serde_json::to_value(self.id).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        match &self.constraint {
            Some(c) if c != "none" => format!("{id}:{c}"),
            _ => id,
        }
    }

    fn constraint(&self) -> bigtensor_core::Result<Constraint> {
        Constraint::parse(self.constraint.as_deref().unwrap_or("none"), self.sparsity_c)
    }
}

/// One value or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::One(v) => vec![*v],
            Self::Many(v) => v.clone(),
        }
    }
}

fn default_snr() -> OneOrMany {
    OneOrMany::One(f64::INFINITY)
}
fn default_runs() -> usize {
    10
}
fn default_max_iters() -> usize {
    1000
}
fn default_fit_tol() -> f64 {
    1e-6
}
fn default_oversample() -> usize {
    10
}
fn default_exp_mean() -> f64 {
    10.0
}
fn default_zero_fraction() -> f64 {
    0.1
}
fn default_compressor() -> Compressor {
    Compressor::Randtucker2i
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub generator: Generator,
    pub dims: Vec<usize>,
    /// Optional size sweep: each value replaces every entry of `dims`.
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    /// CP rank of the ground truth and of the CP algorithms.
    #[serde(default)]
    pub rank: Option<usize>,
    /// Multilinear rank for Tucker generation and compression; defaults to
    /// the CP rank in every mode.
    #[serde(default)]
    pub mlrank: Option<Vec<usize>>,
    /// SNR in dB; `inf` means noise-free.
    #[serde(default = "default_snr")]
    pub snr_db: OneOrMany,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default = "default_compressor")]
    pub compressor: Compressor,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_fit_tol")]
    pub fit_tol: f64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_exp_mean")]
    pub exp_mean: f64,
    #[serde(default = "default_zero_fraction")]
    pub zero_fraction: f64,
    /// Hand FFCP and Tucker+CP the exact Tucker form of the CP ground truth
    /// instead of a compressed full tensor (noise-free only); the full tensor
    /// is never formed.
    #[serde(default)]
    pub tucker_format: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.runs == 0 {
            bail!("runs must be at least 1");
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            bail!("dims must be nonempty and positive, got {:?}", self.dims);
        }
        if self.sizes.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
            bail!("sizes must be nonempty and positive");
        }
        if self.algorithms.is_empty() {
            bail!("no algorithms configured");
        }
        if self.snr_db.values().iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            bail!("SNR values must be finite or inf");
        }
        let needs_cp = self.generator != Generator::TuckerGaussian
            || self.algorithms.iter().any(|a| !a.id.is_tucker());
        if needs_cp && self.rank.unwrap_or(0) == 0 {
            bail!("a positive rank is required");
        }
        if self.generator == Generator::TuckerGaussian && self.mlrank.is_none() {
            bail!("the tucker_gaussian generator needs mlrank");
        }
        if let Some(m) = &self.mlrank {
            if m.len() != self.dims.len() {
                bail!("mlrank has {} entries for an order-{} tensor", m.len(), self.dims.len());
            }
        }
        if self.tucker_format {
            if self.generator == Generator::TuckerGaussian {
                bail!("tucker_format needs a CP generator");
            }
            if self.snr_db.values().iter().any(|s| s.is_finite()) {
                bail!("tucker_format inputs are noise-free; set snr_db = inf");
            }
            if self.algorithms.iter().any(|a| !matches!(a.id, AlgorithmId::Ffcp | AlgorithmId::TuckerCp)) {
                bail!("tucker_format supports only ffcp and tucker_cp");
            }
        }
        for a in &self.algorithms {
            a.constraint().map_err(|e| anyhow!("{}: {e}", a.name()))?;
        }
        StopRule::new(self.max_iters, self.fit_tol)?;
        Ok(())
    }

    fn size_grid(&self) -> Vec<Vec<usize>> {
        match &self.sizes {
            Some(sizes) => sizes.iter().map(|&s| vec![s; self.dims.len()]).collect(),
            None => vec![self.dims.clone()],
        }
    }

    fn mlrank_for(&self, dims: &[usize]) -> Vec<usize> {
        match &self.mlrank {
            Some(m) => m.clone(),
            None => dims.iter().map(|&d| self.rank.unwrap_or(1).min(d)).collect(),
        }
    }

    fn factor_dist(&self) -> FactorDist {
        match self.generator {
            Generator::CpExponentialSparse => FactorDist::Exponential {
                mean: self.exp_mean,
                zero_fraction: self.zero_fraction,
            },
            _ => FactorDist::Normal,
        }
    }
}

/// One algorithm on one data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub dims: Vec<usize>,
    /// `None` for noise-free data.
    pub snr_db: Option<f64>,
    pub run: usize,
    pub fit_truth: Option<f64>,
    pub fit_obs: Option<f64>,
    /// Wall time of the engine call, compression included.
    pub seconds: Option<f64>,
    pub compress_seconds: Option<f64>,
    pub iterations: Option<usize>,
    pub sir_mean: Option<f64>,
    pub sir_min: Option<f64>,
    pub error: Option<String>,
}

/// Mean and sample standard deviation over the successful runs of one
/// (algorithm, dims, SNR) grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub algorithm: String,
    pub dims: Vec<usize>,
    pub snr_db: Option<f64>,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub fit_mean: f64,
    pub fit_std: f64,
    pub fit_obs_mean: f64,
    pub seconds_mean: f64,
    pub seconds_total: f64,
    pub iterations_mean: f64,
    pub sir_min_mean: f64,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

pub(crate) enum Truth {
    Cp(CpModel),
    Tucker,
}

pub(crate) struct Data {
    truth: Truth,
    clean: Option<DenseTensor>,
    pub(crate) observed: Option<DenseTensor>,
    tucker_form: Option<TuckerModel>,
}

pub(crate) fn make_data(cfg: &ExperimentConfig, dims: &[usize], snr: f64, seed: SeedSpec) -> anyhow::Result<Data> {
    let (truth, clean) = match cfg.generator {
        Generator::TuckerGaussian => {
            let (y, _) = gen_tucker_tensor(dims, &cfg.mlrank_for(dims), seed)?;
            (Truth::Tucker, y)
        }
        _ => {
            let model = gen_cp_model(dims, cfg.rank.unwrap_or(1), cfg.factor_dist(), seed)?;
            if cfg.tucker_format {
                let form = TuckerModel::from_cp(&model)?;
                return Ok(Data { truth: Truth::Cp(model), clean: None, observed: None, tucker_form: Some(form) });
            }
            let y = cp_reconstruct(&model)?;
            (Truth::Cp(model), y)
        }
    };
    let observed = add_noise(&clean, snr, seed)?;
    Ok(Data { truth, clean: Some(clean), observed: Some(observed), tucker_form: None })
}

fn compress(c: Compressor, y: &DenseTensor, ranks: &[usize], p: usize, seed: SeedSpec) -> bigtensor_core::Result<TuckerModel> {
    match c {
        Compressor::Hosvd => hosvd(y, ranks),
        Compressor::Randtucker => rand_tucker(y, ranks, p, seed),
        Compressor::Randtucker2i => rand_tucker_2i(y, ranks, p, seed),
    }
}

enum Estimate {
    Tucker(TuckerModel),
    Cp(CpOutcome),
}

struct Timed {
    estimate: Estimate,
    seconds: f64,
    compress_seconds: Option<f64>,
}

fn execute(
    cfg: &ExperimentConfig,
    spec: &AlgorithmSpec,
    data: &Data,
    dims: &[usize],
    seed: SeedSpec,
) -> anyhow::Result<Timed> {
    let ranks = cfg.mlrank_for(dims);
    let rank = cfg.rank.unwrap_or(1);
    let stop = StopRule::new(cfg.max_iters, cfg.fit_tol)?;
    let observed = || data.observed.as_ref().ok_or_else(|| anyhow!("no full tensor in tucker_format mode"));
    let p = cfg.oversample;
    if spec.id.is_tucker() {
        let y = observed()?;
        let start = Instant::now();
        let m = match spec.id {
            AlgorithmId::Hosvd => hosvd(y, &ranks)?,
            AlgorithmId::Randtucker => rand_tucker(y, &ranks, p, seed)?,
            _ => rand_tucker_2i(y, &ranks, p, seed)?,
        };
        return Ok(Timed { estimate: Estimate::Tucker(m), seconds: start.elapsed().as_secs_f64(), compress_seconds: None });
    }
    match spec.id {
        AlgorithmId::CpAls | AlgorithmId::CpMu | AlgorithmId::CpHals => {
            let y = observed()?;
            let rule = match spec.id {
                AlgorithmId::CpAls => UpdateRule::Als,
                AlgorithmId::CpMu => UpdateRule::Mu,
                _ => UpdateRule::Hals { project: true },
            };
            // multiplicative updates need nonnegative data; noise is clipped
            let clipped;
            let input = if rule == UpdateRule::Mu && y.min_entry() < 0.0 {
                clipped = DenseTensor::new(y.shape().to_vec(), y.data().iter().map(|v| v.max(0.0)).collect())?;
                &clipped
            } else {
                y
            };
            let start = Instant::now();
            let out = cp_decompose(input, rank, rule, stop, seed, None)?;
            Ok(Timed { estimate: Estimate::Cp(out), seconds: start.elapsed().as_secs_f64(), compress_seconds: None })
        }
        _ => {
            let start = Instant::now();
            let (model, compress_seconds) = match &data.tucker_form {
                Some(form) => (form.clone(), None),
                None => {
                    let m = compress(cfg.compressor, observed()?, &ranks, p, seed)?;
                    (m, Some(start.elapsed().as_secs_f64()))
                }
            };
            let out = if spec.id == AlgorithmId::TuckerCp {
                tucker_cp(&model, rank, stop, seed)?
            } else {
                ffcp(&model, rank, spec.constraint()?, stop, seed)?
            };
            Ok(Timed { estimate: Estimate::Cp(out), seconds: start.elapsed().as_secs_f64(), compress_seconds })
        }
    }
}

fn score(
    cfg: &ExperimentConfig,
    spec: &AlgorithmSpec,
    data: &Data,
    dims: &[usize],
    seed: SeedSpec,
    record: &mut RunRecord,
) -> anyhow::Result<()> {
    let timed = execute(cfg, spec, data, dims, seed)?;
    record.seconds = Some(timed.seconds);
    record.compress_seconds = timed.compress_seconds;
    let dense = match &timed.estimate {
        Estimate::Tucker(m) => Some(reconstruct(m)?),
        Estimate::Cp(out) => {
            record.iterations = Some(out.iterations());
            // dense reconstruction only when a full tensor exists to compare with
            data.observed.as_ref().map(|_| cp_reconstruct(&out.model)).transpose()?
        }
    };
    if let (Some(y), Some(d)) = (&data.observed, &dense) {
        record.fit_obs = Some(fit(y, d)?);
    }
    match (&data.truth, &timed.estimate) {
        (Truth::Cp(truth), Estimate::Cp(out)) => {
            record.fit_truth = Some(cp_model_fit(truth, &out.model)?);
            // a component collapsed to a constant has no SIR; the fit still counts
            if let Some(m) = (out.model.rank() == truth.rank())
                .then(|| match_factors(truth, &out.model).ok())
                .flatten()
            {
                record.sir_mean = Some(m.mean_sir);
                record.sir_min = Some(m.min_sir);
            }
        }
        _ => {
            if let (Some(clean), Some(d)) = (&data.clean, &dense) {
                record.fit_truth = Some(fit(clean, d)?);
            }
        }
    }
    Ok(())
}

/// Runs the whole grid. Failed runs are recorded with their error message.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<Report> {
    run_experiment_with(cfg, |_| {})
}

/// As [`run_experiment`], calling `progress` after every record.
pub fn run_experiment_with(cfg: &ExperimentConfig, mut progress: impl FnMut(&RunRecord)) -> anyhow::Result<Report> {
    cfg.validate()?;
    let root = SeedSpec::new(cfg.seed);
    let snrs = cfg.snr_db.values();
    let mut records = Vec::new();
    for (si, dims) in cfg.size_grid().iter().enumerate() {
        for (ni, &snr) in snrs.iter().enumerate() {
            for run in 0..cfg.runs {
                let cell = |tag: u64| root.derive(tag).derive(si as u64).derive(ni as u64).derive(run as u64);
                let data = make_data(cfg, dims, snr, cell(DATA_TAG));
                for spec in &cfg.algorithms {
                    let mut record = RunRecord {
                        algorithm: spec.name(),
                        dims: dims.clone(),
                        snr_db: snr.is_finite().then_some(snr),
                        run,
                        fit_truth: None,
                        fit_obs: None,
                        seconds: None,
                        compress_seconds: None,
                        iterations: None,
                        sir_mean: None,
                        sir_min: None,
                        error: None,
                    };
                    let outcome = match &data {
                        Ok(d) => score(cfg, spec, d, dims, cell(ALGO_TAG), &mut record),
                        Err(e) => Err(anyhow!("data generation failed: {e}")),
                    };
                    if let Err(e) = outcome {
                        record.error = Some(format!("{e:#}"));
                    }
                    progress(&record);
                    records.push(record);
                }
            }
        }
    }
    let aggregates = aggregate(&records);
    Ok(Report { config: cfg.clone(), records, aggregates })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn mean_of(records: &[&RunRecord], f: impl Fn(&RunRecord) -> Option<f64>) -> f64 {
    mean_std(&records.iter().filter_map(|r| f(r)).collect::<Vec<_>>()).0
}

/// Aggregates in order of first appearance of each grid point.
pub fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut order: Vec<(String, Vec<usize>, Option<u64>)> = Vec::new();
    let mut groups: BTreeMap<(String, Vec<usize>, Option<u64>), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.algorithm.clone(), r.dims.clone(), r.snr_db.map(f64::to_bits));
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let all = &groups[&key];
            let ok: Vec<&RunRecord> = all.iter().copied().filter(|r| r.error.is_none()).collect();
            let fits: Vec<f64> = ok.iter().filter_map(|r| r.fit_truth).collect();
            let (fit_mean, fit_std) = mean_std(&fits);
            Aggregate {
                algorithm: key.0.clone(),
                dims: key.1.clone(),
                snr_db: key.2.map(f64::from_bits),
                runs_ok: ok.len(),
                runs_failed: all.len() - ok.len(),
                fit_mean,
                fit_std,
                fit_obs_mean: mean_of(&ok, |r| r.fit_obs),
                seconds_mean: mean_of(&ok, |r| r.seconds),
                seconds_total: ok.iter().filter_map(|r| r.seconds).sum(),
                iterations_mean: mean_of(&ok, |r| r.iterations.map(|i| i as f64)),
                sir_min_mean: mean_of(&ok, |r| r.sir_min),
            }
        })
        .collect()
}

fn snr_label(snr: Option<f64>) -> String {
    snr.map_or_else(|| "inf".to_string(), |s| format!("{s}"))
}

fn dims_label(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn summary_table(aggregates: &[Aggregate]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>14} {:>6} {:>17} {:>8} {:>10} {:>8} {:>9} {:>6}",
        "algorithm", "dims", "snr", "fit (truth)", "fit obs", "seconds", "iters", "min SIR", "failed"
    );
    for a in aggregates {
        let _ = writeln!(
            out,
            "{:<22} {:>14} {:>6} {:>8.4} ± {:<6.4} {:>8.4} {:>10.3} {:>8.1} {:>9.1} {:>6}",
            a.algorithm,
            dims_label(&a.dims),
            snr_label(a.snr_db),
            a.fit_mean,
            a.fit_std,
            a.fit_obs_mean,
            a.seconds_mean,
            a.iterations_mean,
            a.sir_min_mean,
            a.runs_failed
        );
    }
    out
}

pub fn write_records(records: &[RunRecord], path: &Path) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> anyhow::Result<Vec<RunRecord>> {
    BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

#[derive(Serialize)]
struct FitRow<'a> {
    algorithm: &'a str,
    dims: String,
    snr_db: String,
    fit_mean: f64,
    fit_std: f64,
    runs: usize,
}

#[derive(Serialize)]
struct TimeRow<'a> {
    algorithm: &'a str,
    size: usize,
    seconds_mean: f64,
    runs: usize,
}

/// Writes `records.jsonl`, `summary.txt`, `fit_vs_snr.csv` (one row per
/// algorithm, dims and SNR) and `time_vs_size.csv` (one row per algorithm
/// and size, averaged over SNRs).
pub fn write_report(report: &Report, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records(&report.records, &dir.join("records.jsonl"))?;
    std::fs::write(dir.join("summary.txt"), summary_table(&report.aggregates))?;

    let mut w = csv::Writer::from_path(dir.join("fit_vs_snr.csv"))?;
    for a in &report.aggregates {
        w.serialize(FitRow {
            algorithm: &a.algorithm,
            dims: dims_label(&a.dims),
            snr_db: snr_label(a.snr_db),
            fit_mean: a.fit_mean,
            fit_std: a.fit_std,
            runs: a.runs_ok,
        })?;
    }
    w.flush()?;

    let mut times: Vec<((String, usize), Vec<f64>)> = Vec::new();
    for r in report.records.iter().filter(|r| r.error.is_none()) {
        let key = (r.algorithm.clone(), r.dims[0]);
        let Some(s) = r.seconds else { continue };
        match times.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(s),
            None => times.push((key, vec![s])),
        }
    }
    let mut w = csv::Writer::from_path(dir.join("time_vs_size.csv"))?;
    for ((algorithm, size), v) in &times {
        w.serialize(TimeRow { algorithm, size: *size, seconds_mean: mean_std(v).0, runs: v.len() })?;
    }
    w.flush()?;
    Ok(())
}
