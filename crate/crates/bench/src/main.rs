use anyhow::{bail, Context, Result};
use bigtensor_bench::dist_bench::run_dist_bench;
use bigtensor_bench::experiment::{run_experiment_with, summary_table, write_report, ExperimentConfig};
use bigtensor_bench::synth::{add_noise, gen_cp_tensor, FactorDist};
use bigtensor_core::cp::{cp_decompose, cp_reconstruct, UpdateRule};
use bigtensor_core::io::{load_cp, load_tensor, load_tucker, save_cp, save_tensor, save_tucker};
use bigtensor_core::tensor::fit;
use bigtensor_core::tucker::reconstruct;
use bigtensor_core::{
    ffcp, hosvd, rand_tucker, rand_tucker_2i, Constraint, CpOutcome, DenseTensor, SeedSpec, StopRule,
    TuckerModel,
};
use bigtensor_dist::GridSpec;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Tensor decompositions through Tucker compression.
#[derive(Parser)]
#[command(name = "bigtensor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic CP tensor (.dten), optionally with noise.
    Gen(GenArgs),
    /// Truncated HOSVD of a .dten file.
    Tucker(TuckerArgs),
    /// One-pass randomized Tucker compression.
    Randtucker(TuckerArgs),
    /// Two-pass randomized Tucker compression.
    Randtucker2i(TuckerArgs),
    /// Direct CP decomposition of a .dten file.
    Cp(CpArgs),
    /// CP decomposition of a Tucker model (.tkr), or of a .dten compressed first.
    Ffcp(CpArgs),
    /// Fit of an estimate (.dten, .tkr or .cpm) against a reference.
    Fit { reference: PathBuf, estimate: PathBuf },
    /// Run an experiment config (TOML).
    Bench(BenchArgs),
    /// Distributed compression runs on a block grid (TOML) against single-node.
    DistBench {
        grid: PathBuf,
        #[command(flatten)]
        bench: BenchArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Normal,
    Exponential,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintArg {
    None,
    NonnegMu,
    NonnegHals,
    Sparse,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long)]
    rank: usize,
    #[arg(long, value_enum, default_value = "normal")]
    dist: DistArg,
    #[arg(long, default_value_t = 10.0)]
    exp_mean: f64,
    #[arg(long, default_value_t = 0.1)]
    zero_fraction: f64,
    /// SNR in dB; omit for noise-free data.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the ground-truth factors (.cpm).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct TuckerArgs {
    input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    mlrank: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    oversample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CpArgs {
    input: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long, value_enum, default_value = "none")]
    constraint: ConstraintArg,
    #[arg(long, default_value_t = 0.0)]
    sparsity_c: f64,
    /// Compression rank when `ffcp` is given a .dten; defaults to the CP rank.
    #[arg(long, value_delimiter = ',')]
    mlrank: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    oversample: usize,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    fit_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    config: PathBuf,
    /// Override the number of Monte-Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn extension(path: &Path) -> &str {
    path.extension().and_then(|e| e.to_str()).unwrap_or("")
}

fn load_full(path: &Path) -> Result<DenseTensor> {
    let t = match extension(path) {
        "dten" => load_tensor(path)?,
        "tkr" => reconstruct(&load_tucker(path)?)?,
        "cpm" => cp_reconstruct(&load_cp(path)?)?,
        other => bail!("unknown file type '.{other}' for {}", path.display()),
    };
    Ok(t)
}

fn constraint(c: ConstraintArg, sparsity: f64) -> Result<Constraint> {
    let name = match c {
        ConstraintArg::None => "none",
        ConstraintArg::NonnegMu => "nonneg_mu",
        ConstraintArg::NonnegHals => "nonneg_hals",
        ConstraintArg::Sparse => "sparse",
    };
    Ok(Constraint::parse(name, sparsity)?)
}

fn report_cp(out: &CpOutcome, seconds: f64, path: &Path) -> Result<()> {
    save_cp(path, &out.model)?;
    println!(
        "rank {} fit {:.6} after {} sweeps in {seconds:.3}s -> {}",
        out.model.rank(),
        out.final_fit(),
        out.iterations(),
        path.display()
    );
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let dist = match a.dist {
        DistArg::Normal => FactorDist::Normal,
        DistArg::Exponential => FactorDist::Exponential { mean: a.exp_mean, zero_fraction: a.zero_fraction },
    };
    let seed = SeedSpec::new(a.seed);
    let (clean, truth) = gen_cp_tensor(&a.dims, a.rank, dist, seed)?;
    let y = match a.snr {
        Some(snr) => add_noise(&clean, snr, seed)?,
        None => clean,
    };
    save_tensor(&a.out, &y)?;
    if let Some(p) = &a.truth {
        save_cp(p, &truth)?;
    }
    println!("{:?} tensor, rank {} -> {}", a.dims, a.rank, a.out.display());
    Ok(())
}

fn tucker(a: TuckerArgs, which: &str) -> Result<()> {
    let y = load_tensor(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let seed = SeedSpec::new(a.seed);
    let start = Instant::now();
    let m: TuckerModel = match which {
        "hosvd" => hosvd(&y, &a.mlrank)?,
        "randtucker" => rand_tucker(&y, &a.mlrank, a.oversample, seed)?,
        _ => rand_tucker_2i(&y, &a.mlrank, a.oversample, seed)?,
    };
    let seconds = start.elapsed().as_secs_f64();
    save_tucker(&a.out, &m)?;
    println!(
        "{which} ranks {:?} fit {:.6} in {seconds:.3}s -> {}",
        m.ranks(),
        fit(&y, &reconstruct(&m)?)?,
        a.out.display()
    );
    Ok(())
}

fn cp(a: CpArgs) -> Result<()> {
    let rule = match a.constraint {
        ConstraintArg::None => UpdateRule::Als,
        ConstraintArg::NonnegMu => UpdateRule::Mu,
        ConstraintArg::NonnegHals => UpdateRule::Hals { project: true },
        ConstraintArg::Sparse => bail!("the sparse constraint is available for ffcp only"),
    };
    let y = load_tensor(&a.input)?;
    let start = Instant::now();
    let out = cp_decompose(&y, a.rank, rule, StopRule::new(a.max_iters, a.fit_tol)?, SeedSpec::new(a.seed), None)?;
    report_cp(&out, start.elapsed().as_secs_f64(), &a.out)
}

fn run_ffcp(a: CpArgs) -> Result<()> {
    let seed = SeedSpec::new(a.seed);
    let start = Instant::now();
    let model = match extension(&a.input) {
        "tkr" => load_tucker(&a.input)?,
        "dten" => {
            let y = load_tensor(&a.input)?;
            let ranks = a
                .mlrank
                .clone()
                .unwrap_or_else(|| y.shape().iter().map(|&d| a.rank.min(d)).collect());
            rand_tucker_2i(&y, &ranks, a.oversample, seed)?
        }
        other => bail!("ffcp reads .tkr or .dten, got '.{other}'"),
    };
    let c = constraint(a.constraint, a.sparsity_c)?;
    let out = ffcp(&model, a.rank, c, StopRule::new(a.max_iters, a.fit_tol)?, seed)?;
    report_cp(&out, start.elapsed().as_secs_f64(), &a.out)
}

fn load_config(b: &BenchArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&b.config)?;
    if let Some(r) = b.runs {
        cfg.runs = r;
    }
    if let Some(s) = b.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn bench(b: BenchArgs) -> Result<()> {
    let cfg = load_config(&b)?;
    let report = run_experiment_with(&cfg, |r| {
        let status = match &r.error {
            Some(e) => format!("failed: {e}"),
            None => format!("fit {:.4} in {:.3}s", r.fit_truth.unwrap_or(f64::NAN), r.seconds.unwrap_or(f64::NAN)),
        };
        eprintln!("{} {:?} snr {:?} run {}: {status}", r.algorithm, r.dims, r.snr_db, r.run);
    })?;
    write_report(&report, &b.out)?;
    print!("{}", summary_table(&report.aggregates));
    Ok(())
}

fn dist_bench(grid: PathBuf, b: BenchArgs) -> Result<()> {
    let cfg = load_config(&b)?;
    let grid = GridSpec::load(&grid)?;
    let records = run_dist_bench(&cfg, &grid, Some(&b.out))?;
    for r in &records {
        println!(
            "{} run {}: {} workers, fit {:.6} (single-node {:.6}), max angle sine {:.1e}, {} messages, peak {} entries",
            r.variant,
            r.run,
            r.workers,
            r.fit_dist,
            r.fit_single,
            r.max_angle_sine,
            r.messages.values().sum::<usize>(),
            r.peak_entries_max
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Tucker(a) => tucker(a, "hosvd"),
        Command::Randtucker(a) => tucker(a, "randtucker"),
        Command::Randtucker2i(a) => tucker(a, "randtucker2i"),
        Command::Cp(a) => cp(a),
        Command::Ffcp(a) => run_ffcp(a),
        Command::Fit { reference, estimate } => {
            let f = fit(&load_full(&reference)?, &load_full(&estimate)?)?;
            println!("{f:.10}");
            Ok(())
        }
        Command::Bench(b) => bench(b),
        Command::DistBench { grid, bench } => dist_bench(grid, bench),
    }
}
