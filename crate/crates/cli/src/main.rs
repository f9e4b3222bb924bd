//! `pkm`: benchmarks, synthetic experiments and checks for the product memory.
//!
//! Every command writes its table (CSV or JSON) first, to `--out` or stdout,
//! and only then a short human-readable summary on stderr.

mod settings;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use product_kanerva::episodes::{
    binding_experiment, capacity_curve, gen_random_episode, CapacityRow, ExperimentConfig,
};
use product_kanerva::numerics::cosine_similarity;
use product_kanerva::oracle::equivalence_sweep;
use product_kanerva::product::{query_episode, write_episode, EpisodeLog, ProductConfig, ProductState};
use product_kanerva::report::{
    read_bench_csv, write_bench_csv, write_binding_csv, write_capacity_csv, write_episode_log_csv,
};
use product_kanerva::scaling::{fit_scaling, run_bench, BenchConfig, StepKind};
use product_kanerva::snapshot::{self, SnapshotFormat};
use product_kanerva::Vector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use settings::{Format, Opts};

/// Largest product/oracle disagreement `oracle-check` tolerates.
const ORACLE_TOLERANCE: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "pkm", version, about = "Product Kanerva Machine experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time write (and optionally read) steps for each k.
    BenchScaling {
        #[command(flatten)]
        opts: Opts,
        /// Also time reads.
        #[arg(long)]
        reads: bool,
    },
    /// Fit c + a·k + b·(m/k)³ to a bench CSV.
    FitScaling {
        #[command(flatten)]
        opts: Opts,
        /// Bench CSV produced by bench-scaling.
        #[arg(long)]
        input: PathBuf,
    },
    /// Store/recall error against episode length.
    Capacity {
        #[command(flatten)]
        opts: Opts,
    },
    /// Masked-channel pattern completion.
    Binding {
        #[command(flatten)]
        opts: Opts,
    },
    /// Compare the product write with exact joint conditioning.
    OracleCheck {
        #[command(flatten)]
        opts: Opts,
    },
    /// Write one random episode and log γ and ‖Δ‖ per step.
    Demo {
        #[command(flatten)]
        opts: Opts,
        /// Also save the final memory here.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Save or inspect memory snapshots.
    Snapshot {
        #[command(subcommand)]
        action: SnapshotAction,
    },
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum SnapshotAction {
    /// Write a (prior or episode-filled) memory to `--out`; `--format json`
    /// selects JSON, binary otherwise.
    Save {
        #[command(flatten)]
        opts: Opts,
    },
    /// Print a JSON summary of a snapshot file.
    Load {
        #[arg(long)]
        input: PathBuf,
        /// Re-save the loaded memory in the other format.
        #[arg(long)]
        convert: Option<PathBuf>,
    },
}

fn output(opts: &Opts) -> Result<Box<dyn Write>> {
    Ok(match &opts.out {
        Some(path) => {
            Box::new(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_json<T: Serialize>(opts: &Opts, value: &T) -> Result<()> {
    let mut out = output(opts)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn experiment(opts: &Opts, m: usize, k: usize, c: usize, lambda: f64, sigma: f64) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(opts.m.unwrap_or(m), k, opts.c.unwrap_or(c));
    cfg.lambda = opts.lambda.unwrap_or(lambda);
    cfg.sigma = opts.sigma.unwrap_or(sigma);
    if let Some(psi) = opts.psi {
        cfg.psi = psi;
    }
    if let Some(trials) = opts.trials {
        cfg.trials = trials;
    }
    cfg.seed = opts.seed();
    cfg.policy = opts.policy()?;
    Ok(cfg)
}

fn bench_scaling(opts: Opts, reads: bool) -> Result<()> {
    let m = opts.m.unwrap_or(240);
    let mut cfg = BenchConfig::new(m, opts.k_values(&[1, 2, 3, 4, 6, 8, 12]));
    cfg.c = opts.c.unwrap_or(8);
    cfg.trials = opts.trials.unwrap_or(9);
    cfg.steps = opts.steps.unwrap_or(20);
    cfg.threads = Some(opts.threads.unwrap_or(1));
    cfg.seed = opts.seed();
    if reads {
        cfg.kinds.push(StepKind::Read);
    }
    let records = run_bench(&cfg)?;
    match opts.format() {
        Format::Csv => {
            let mut out = output(&opts)?;
            write_bench_csv(&mut out, &records)?;
            out.flush()?;
        }
        Format::Json => emit_json(&opts, &records)?,
    }
    let writes: Vec<_> = records.iter().filter(|r| r.kind == StepKind::Write).collect();
    if let Some(best) = writes.iter().min_by(|a, b| a.mean_seconds.total_cmp(&b.mean_seconds)) {
        eprintln!("m = {m}: fastest write at k = {} ({:.3e} s/step)", best.k, best.mean_seconds);
    }
    if let Ok(fit) = fit_scaling(&records.iter().filter(|r| r.kind == StepKind::Write).cloned().collect::<Vec<_>>(), m)
    {
        eprintln!("fit: R² = {:.4}, k_opt = {:.2}", fit.r_squared, fit.k_opt);
    }
    Ok(())
}

fn fit(opts: Opts, input: PathBuf) -> Result<()> {
    let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let records: Vec<_> = read_bench_csv(file)?.into_iter().filter(|r| r.kind == StepKind::Write).collect();
    let m = match opts.m {
        Some(m) => m,
        None => {
            let first = records.first().context("bench file has no write records")?.m;
            if records.iter().any(|r| r.m != first) {
                bail!("bench file mixes several m values; pass --m");
            }
            first
        }
    };
    let fit = fit_scaling(&records, m)?;
    match opts.format.unwrap_or(Format::Json) {
        Format::Json => emit_json(&opts, &fit)?,
        Format::Csv => {
            let mut out = output(&opts)?;
            writeln!(out, "a,b,c,r_squared,k_opt")?;
            writeln!(out, "{},{},{},{},{}", fit.a, fit.b, fit.c, fit.r_squared, fit.k_opt)?;
            out.flush()?;
        }
    }
    eprintln!("t(k) = {:.3e} + {:.3e}·k + {:.3e}·(m/k)³, R² = {:.4}", fit.c, fit.a, fit.b, fit.r_squared);
    Ok(())
}

fn capacity(opts: Opts) -> Result<()> {
    let ts = opts.t_values(&[5, 15, 30, 60, 90]);
    let mut rows: Vec<CapacityRow> = Vec::new();
    for k in opts.k_values(&[1, 2, 3, 5]) {
        let cfg = experiment(&opts, 30, k, 50, 0.1, 0.3)?;
        rows.extend(capacity_curve(&cfg, &ts)?);
    }
    match opts.format() {
        Format::Csv => {
            let mut out = output(&opts)?;
            write_capacity_csv(&mut out, &rows)?;
            out.flush()?;
        }
        Format::Json => emit_json(&opts, &rows)?,
    }
    let last = *ts.last().expect("non-empty");
    for r in rows.iter().filter(|r| r.t == last) {
        eprintln!("k = {}: T = {last} mse {:.4}, cosine {:.4}", r.k, r.mse, r.cosine);
    }
    Ok(())
}

fn binding(opts: Opts) -> Result<()> {
    let channels = opts.channels.unwrap_or(3);
    let mut rows = Vec::new();
    for k in opts.k_values(&[1, 2]) {
        let cfg = experiment(&opts, 60, k, 30, 100.0, 0.05)?;
        for t in opts.t_values(&[5, 180]) {
            rows.push(binding_experiment(&cfg, t, channels)?);
        }
    }
    match opts.format() {
        Format::Csv => {
            let mut out = output(&opts)?;
            write_binding_csv(&mut out, &rows)?;
            out.flush()?;
        }
        Format::Json => emit_json(&opts, &rows)?,
    }
    for r in &rows {
        eprintln!("k = {}, T = {}: masked-channel cosine {:.3}", r.k, r.t, r.masked_cosine);
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleOutput {
    instances: usize,
    max_mean_deviation: f64,
    max_cov_deviation: f64,
    max_deviation: f64,
    tolerance: f64,
    pass: bool,
}

fn oracle_check(opts: Opts) -> Result<bool> {
    let report = equivalence_sweep(opts.trials.unwrap_or(10), opts.seed())?;
    let result = OracleOutput {
        instances: report.instances,
        max_mean_deviation: report.max_mean_deviation,
        max_cov_deviation: report.max_cov_deviation,
        max_deviation: report.max_deviation(),
        tolerance: ORACLE_TOLERANCE,
        pass: report.max_deviation() <= ORACLE_TOLERANCE,
    };
    match opts.format.unwrap_or(Format::Json) {
        Format::Json => emit_json(&opts, &result)?,
        Format::Csv => {
            let mut out = output(&opts)?;
            writeln!(out, "instances,max_mean_deviation,max_cov_deviation,max_deviation")?;
            writeln!(
                out,
                "{},{},{},{}",
                result.instances, result.max_mean_deviation, result.max_cov_deviation, result.max_deviation
            )?;
            out.flush()?;
        }
    }
    eprintln!(
        "{} instances, max deviation {:.3e} ({})",
        result.instances,
        result.max_deviation,
        if result.pass { "ok" } else { "exceeds tolerance" }
    );
    Ok(result.pass)
}

/// Prior memory, optionally filled with one random episode of length `T`.
fn build_memory(opts: &Opts, default_t: usize) -> Result<(ProductState, Vec<Vector>, EpisodeLog)> {
    let seed = opts.seed();
    let c = opts.c.unwrap_or(50);
    let k = opts.k.unwrap_or(3);
    let mut cfg = ProductConfig::new(c, opts.m.unwrap_or(30), k)?;
    if let Some(lambda) = opts.lambda {
        cfg = cfg.with_lambda(lambda);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = ProductState::prior(cfg, opts.psi.unwrap_or(1.0), opts.sigma.unwrap_or(0.3), &mut rng)?;
    let t = opts.t_values(&[default_t])[0];
    let items = gen_random_episode(t, c, seed.wrapping_add(1)).items;
    let (written, log) = write_episode(&state, &items, &opts.policy()?, &mut rng)?;
    Ok((written, items, log))
}

fn demo(opts: Opts, snapshot_path: Option<PathBuf>) -> Result<()> {
    let (state, items, log) = build_memory(&opts, 20)?;
    match opts.format() {
        Format::Csv => {
            let mut out = output(&opts)?;
            write_episode_log_csv(&mut out, &log)?;
            out.flush()?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Step<'a> {
                t: usize,
                gamma: &'a [f64],
                delta_norm: f64,
            }
            let steps: Vec<_> =
                log.steps.iter().map(|s| Step { t: s.t, gamma: &s.weights.gamma, delta_norm: s.delta_norm }).collect();
            emit_json(&opts, &steps)?;
        }
    }
    if let Some(path) = snapshot_path {
        snapshot::save(BufWriter::new(File::create(&path)?), &state, SnapshotFormat::Binary)?;
        eprintln!("saved memory to {}", path.display());
    }
    let recalled = query_episode(&state, &items, &opts.policy()?, &log.history)?;
    let mean_cos = items.iter().zip(&recalled).map(|(z, r)| cosine_similarity(z, &r.mu_z)).sum::<f64>()
        / items.len().max(1) as f64;
    eprintln!("wrote {} items into k = {} machines; mean recall cosine {mean_cos:.4}", items.len(), state.k());
    Ok(())
}

fn snapshot_save(opts: Opts) -> Result<()> {
    let path = opts.out.clone().context("snapshot save needs --out")?;
    let (state, items, _) = build_memory(&opts, 0)?;
    let format = match opts.format {
        Some(Format::Json) => SnapshotFormat::Json,
        Some(Format::Csv) => bail!("snapshots are binary or json"),
        None => SnapshotFormat::Binary,
    };
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    snapshot::save(&mut out, &state, format)?;
    out.flush()?;
    eprintln!("saved k = {} memory holding {} items to {}", state.k(), items.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct SnapshotSummary {
    machines: usize,
    code_size: usize,
    columns_per_machine: usize,
    lambda: f64,
    sigmas: Vec<f64>,
    cov_traces: Vec<f64>,
}

fn snapshot_load(input: PathBuf, convert: Option<PathBuf>) -> Result<()> {
    let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
    let state = snapshot::load(bytes.as_slice())?;
    let cfg = state.config();
    let summary = SnapshotSummary {
        machines: cfg.machines,
        code_size: cfg.code_size,
        columns_per_machine: cfg.columns_per_machine,
        lambda: cfg.lambda,
        sigmas: state.sigmas(),
        cov_traces: state.machines().iter().map(|m| m.cov().as_matrix().trace()).collect(),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(path) = convert {
        let format = if bytes.starts_with(&snapshot::MAGIC) { SnapshotFormat::Json } else { SnapshotFormat::Binary };
        let mut out = BufWriter::new(File::create(&path)?);
        snapshot::save(&mut out, &state, format)?;
        out.flush()?;
        eprintln!("converted to {:?} at {}", format, path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::BenchScaling { opts, reads } => bench_scaling(opts.resolve()?, reads)?,
        Command::FitScaling { opts, input } => fit(opts.resolve()?, input)?,
        Command::Capacity { opts } => capacity(opts.resolve()?)?,
        Command::Binding { opts } => binding(opts.resolve()?)?,
        Command::OracleCheck { opts } => return oracle_check(opts.resolve()?),
        Command::Demo { opts, snapshot } => demo(opts.resolve()?, snapshot)?,
        Command::Snapshot { action } => match action {
            SnapshotAction::Save { opts } => snapshot_save(opts.resolve()?)?,
            SnapshotAction::Load { input, convert } => snapshot_load(input, convert)?,
        },
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
