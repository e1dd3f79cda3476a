//! Distributed compression runs compared against the single-node compressors
//! on the same data and seed.

use crate::experiment::{make_data, ExperimentConfig, Generator};
use anyhow::{anyhow, bail};
use bigtensor_core::linalg::subspace_distance;
use bigtensor_core::tensor::fit;
use bigtensor_core::tucker::reconstruct;
use bigtensor_core::{rand_tucker, rand_tucker_2i, SeedSpec};
use bigtensor_dist::{dist_rand_tucker, dist_rand_tucker_2i, export_log, partition, DistOutcome, GridSpec, MsgKind};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Serialize)]
pub struct DistRecord {
    pub variant: String,
    pub run: usize,
    pub workers: usize,
    pub fit_dist: f64,
    pub fit_single: f64,
    /// Largest principal-angle sine over all factor pairs.
    pub max_angle_sine: f64,
    pub messages: BTreeMap<MsgKind, usize>,
    pub peak_entries_max: usize,
    pub block_entries_max: usize,
    pub seconds: f64,
}

/// Runs both distributed compressors for every run of `cfg` (first SNR
/// value, no size sweep). When `out` is given, records and the message logs
/// of the last run are written there.
pub fn run_dist_bench(cfg: &ExperimentConfig, grid: &GridSpec, out: Option<&Path>) -> anyhow::Result<Vec<DistRecord>> {
    cfg.validate()?;
    if cfg.tucker_format {
        bail!("dist-bench needs full tensors");
    }
    let dims = &cfg.dims;
    grid.validate(dims)?;
    let ranks = match (&cfg.mlrank, cfg.rank) {
        (Some(m), _) => m.clone(),
        (None, Some(r)) => dims.iter().map(|&d| r.min(d)).collect(),
        (None, None) => bail!("rank or mlrank required"),
    };
    if cfg.generator == Generator::TuckerGaussian && cfg.mlrank.is_none() {
        bail!("mlrank required");
    }
    let snr = cfg.snr_db.values()[0];
    let root = SeedSpec::new(cfg.seed);
    let mut records = Vec::new();
    let mut last_logs = Vec::new();
    for run in 0..cfg.runs {
        let data = make_data(cfg, dims, snr, root.derive(run as u64))?;
        let y = data.observed.ok_or_else(|| anyhow!("no full tensor"))?;
        let blocks = partition(&y, grid)?;
        let seed = root.derive(u64::MAX).derive(run as u64);
        last_logs.clear();
        for variant in ["randtucker", "randtucker2i"] {
            let start = Instant::now();
            let outcome: DistOutcome = if variant == "randtucker" {
                dist_rand_tucker(&blocks, &ranks, cfg.oversample, seed)?
            } else {
                dist_rand_tucker_2i(&blocks, &ranks, cfg.oversample, seed)?
            };
            let seconds = start.elapsed().as_secs_f64();
            let single = if variant == "randtucker" {
                rand_tucker(&y, &ranks, cfg.oversample, seed)?
            } else {
                rand_tucker_2i(&y, &ranks, cfg.oversample, seed)?
            };
            let mut max_angle_sine = 0.0f64;
            for (a, b) in outcome.model.factors.iter().zip(&single.factors) {
                max_angle_sine = max_angle_sine.max(subspace_distance(a, b)?);
            }
            let mut messages = BTreeMap::new();
            for m in &outcome.log {
                *messages.entry(m.kind).or_insert(0) += 1;
            }
            records.push(DistRecord {
                variant: variant.into(),
                run,
                workers: blocks.worker_count(),
                fit_dist: fit(&y, &reconstruct(&outcome.model)?)?,
                fit_single: fit(&y, &reconstruct(&single)?)?,
                max_angle_sine,
                messages,
                peak_entries_max: outcome.memory.iter().map(|m| m.peak_entries).max().unwrap_or(0),
                block_entries_max: blocks.blocks().iter().map(|b| b.numel()).max().unwrap_or(0),
                seconds,
            });
            last_logs.push((variant, outcome.log));
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("dist_records.jsonl"))?);
        for r in &records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        for (variant, log) in &last_logs {
            export_log(log, BufWriter::new(File::create(dir.join(format!("messages_{variant}.jsonl")))?))?;
        }
    }
    Ok(records)
}
