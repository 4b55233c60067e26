//! Command-line driver: `train` runs a configured eigenpair search and
//! writes its artifacts (effective config, error-history CSV, density CSV,
//! checkpoints, summary) into an output directory; `reference` solves
//! separable operators spectrally and prints/exports eigenpairs;
//! `evaluate` recomputes validation metrics from a saved checkpoint.
//!
//! Exit codes: 0 success, 1 usage or configuration problems, 2 numerical
//! failure (blow-up or degeneracy) during compute.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use eigenfk::autodiff::{Shape, Tape};
use eigenfk::checkpoint::{Checkpoint, CheckpointError};
use eigenfk::config::{ConfigError, RunConfig, Scale, PRESET_NAMES};
use eigenfk::linalg::Mat;
use eigenfk::metrics::{self, MetricsError, ValidationSet};
use eigenfk::network::Params;
use eigenfk::reference::{
    kth_tensor_eigenpair, solve_1d_all, Eigenpair1d, FourierProblem1d, ReferenceError,
};
use eigenfk::rng::RunRng;
use eigenfk::sde::SdeError;
use eigenfk::trainer::{TrainError, TrainEvent, TrainRecord, Trainer};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

/// Numerical failures exit 2; everything else is a usage/config problem.
fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Train(
            TrainError::NonFiniteLoss { .. }
            | TrainError::NonFiniteState { .. }
            | TrainError::DegenerateNormalizer { .. }
            | TrainError::Sde(SdeError::NonFinite { .. }),
        ) => EXIT_NUMERICAL,
        CliError::Metrics(MetricsError::ZeroRms) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

#[derive(Parser)]
#[command(
    name = "eigenfk",
    version,
    about = "Neural eigensolver for second-order differential operators on the periodic box",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an eigenpair and write run artifacts to an output directory
    Train(TrainArgs),
    /// Solve reference eigenpairs of separable operators spectrally
    Reference(ReferenceArgs),
    /// Recompute validation metrics from a saved checkpoint
    Evaluate(EvaluateArgs),
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    s.parse::<Scale>().map_err(|e| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file (TOML)
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset name (see --preset help for the list)
    #[arg(long, value_name = "NAME", help = preset_help())]
    preset: Option<String>,
    /// Output directory, created if missing
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured iteration count (0 = initial metrics only)
    #[arg(long)]
    iterations: Option<u64>,
    /// Run scale: `paper` (as configured) or `desk` (shrunk for quick runs)
    #[arg(long, default_value = "paper", value_parser = parse_scale)]
    scale: Scale,
    /// Worker threads for path simulation and loss shards
    #[arg(long)]
    workers: Option<usize>,
    /// Resume from a checkpoint written by an identical configuration
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct ReferenceArgs {
    /// Per-dimension potential coefficients, comma separated (their count
    /// sets the dimension)
    #[arg(long, value_delimiter = ',', required = true)]
    c: Vec<f64>,
    /// Cosine frequency of the potential: 1 for cos(x), 2 for cos(2x)
    #[arg(long, default_value_t = 1)]
    freq: u8,
    /// 1-based eigenpair indices, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1")]
    k: Vec<usize>,
    /// Fourier basis cut-off (modes -nbasis..=nbasis per dimension)
    #[arg(long, default_value_t = 64)]
    nbasis: usize,
    /// Export eigenvalues (and, in one dimension, eigenfunctions) as CSV
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Grid points for the one-dimensional eigenfunction export
    #[arg(long, default_value_t = 256)]
    grid: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint file to evaluate
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Run configuration file (TOML)
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset name
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Scale the configuration the same way the training run did
    #[arg(long, default_value = "paper", value_parser = parse_scale)]
    scale: Scale,
    /// Directory for metrics and density CSV exports
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn preset_help() -> String {
    format!("Bundled preset name [available: {}]", PRESET_NAMES.join(", "))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Reference(args) => cmd_reference(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn load_config(config: &Option<PathBuf>, preset: &Option<String>) -> Result<RunConfig, CliError> {
    match (config, preset) {
        (Some(path), None) => Ok(RunConfig::from_path(path)?),
        (None, Some(name)) => Ok(RunConfig::preset(name)?),
        _ => Err(CliError::Usage(
            "pass exactly one of --config <FILE> or --preset <NAME>".into(),
        )),
    }
}

fn init_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        // Errors only if a pool already exists (repeat calls in tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Both network heads evaluated numerically on a point batch.
fn net_fields(params: &Params, points: &Mat) -> (Vec<f64>, Mat) {
    let mut tape = Tape::new();
    let bound = params.bind_const(&mut tape);
    let x = tape.constant(points.as_slice(), Shape::Mat(points.rows(), points.cols()));
    let psi = bound.psi(&mut tape, x);
    let grad = bound.scaled_grad(&mut tape, x);
    let psi_vals = tape.value(psi).to_vec();
    let grad_vals = Mat::from_vec(points.rows(), points.cols(), tape.value(grad).to_vec());
    (psi_vals, grad_vals)
}

fn write_density_csv(
    path: &Path,
    net_psi: &[f64],
    z: f64,
    vset: &ValidationSet,
) -> Result<(), CliError> {
    let (net, reference) = metrics::aligned_normalized_psi(net_psi, z, &vset.ref_psi)?;
    let (net_hist, ref_hist) = metrics::density_overlay(&net, &reference, 100)?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "bin_center,net_density,ref_density")?;
    for i in 0..net_hist.density.len() {
        writeln!(
            out,
            "{},{},{}",
            net_hist.bin_center(i),
            net_hist.density[i],
            ref_hist.density[i]
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary {
    seed: u64,
    iterations: u64,
    lambda: f64,
    z: f64,
    final_loss: f64,
    clip_events: u64,
    /// Number of history records averaged into the final errors.
    summary_records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    err_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    err_psi_l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    err_psi_inf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    err_grad: Option<f64>,
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    init_workers(args.workers);
    let mut cfg = load_config(&args.config, &args.preset)?;
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    }
    if let Some(iterations) = args.iterations {
        cfg.training.iterations = iterations;
    }
    cfg.apply_scale(args.scale);
    cfg.fill_defaults();
    let run = cfg.assemble()?;

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), cfg.to_toml_string()?)?;

    let resume = match &args.resume {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };

    let mut train_cfg = run.train.clone();
    // The final checkpoint is always written; 0 means "only that one".
    if train_cfg.checkpoint_every == 0 {
        train_cfg.checkpoint_every = train_cfg.iterations.max(1);
    }
    let iterations = train_cfg.iterations;
    let seed = train_cfg.seed;
    let validation_size = train_cfg.validation_size;
    let validation_step = if train_cfg.validation_fixed { 0 } else { iterations };

    let trainer = Trainer {
        problem: &run.problem,
        spec: run.spec.clone(),
        config: train_cfg,
        reference: Some(run.reference.clone()),
        supervised: run.supervised,
        initial_params: None,
    };

    let history_path = args.out.join("history.csv");
    let mut csv = BufWriter::new(File::create(&history_path)?);
    writeln!(csv, "{}", TrainRecord::csv_header())?;
    let rolling_path = args.out.join("checkpoint.ckpt");
    let final_path = args.out.join("final.ckpt");
    let mut sink_error: Option<CliError> = None;
    let outcome = trainer.train(resume, |event| match event {
        TrainEvent::Record(rec) => {
            log::info!(
                "step {:>7}  loss {:>12.5e}  lambda {:>12.6}  Z {:>8.4}",
                rec.step,
                rec.loss,
                rec.lambda,
                rec.z
            );
            if let Err(e) = writeln!(csv, "{}", rec.to_csv_row()) {
                sink_error.get_or_insert(e.into());
            }
        }
        TrainEvent::Checkpoint(cp) => {
            let path = if cp.step == iterations { &final_path } else { &rolling_path };
            if let Err(e) = cp.save(path) {
                sink_error.get_or_insert(e.into());
            }
        }
    })?;
    if let Some(err) = sink_error {
        return Err(err);
    }
    csv.flush()?;

    if iterations == 0 {
        // No optimizer steps happened, so synthesize the initial checkpoint.
        let n = outcome.params.num_params();
        Checkpoint {
            seed,
            step: 0,
            z: outcome.z,
            spec: run.spec.clone(),
            params: outcome.params.to_flat(),
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            adam_t: 0,
        }
        .save(&final_path)?;
    }

    // Density overlay of the final eigenfunction against the reference, on
    // the same validation batch as the last history record.
    let vset = ValidationSet::sample(
        &run.problem,
        &run.reference,
        validation_size,
        &RunRng::new(seed),
        validation_step,
    );
    let (psi_vals, _) = net_fields(&outcome.params, &vset.points);
    write_density_csv(&args.out.join("density.csv"), &psi_vals, outcome.z, &vset)?;

    let summary = Summary {
        seed,
        iterations,
        lambda: outcome.lambda,
        z: outcome.z,
        final_loss: outcome.history.last().map(|r| r.loss).unwrap_or(f64::NAN),
        clip_events: outcome.clip_events,
        summary_records: outcome.summary.as_ref().map(|s| s.records).unwrap_or(0),
        err_lambda: outcome.summary.as_ref().and_then(|s| s.err_lambda),
        err_psi_l2: outcome.summary.as_ref().and_then(|s| s.err_psi_l2),
        err_psi_inf: outcome.summary.as_ref().and_then(|s| s.err_psi_inf),
        err_grad: outcome.summary.as_ref().and_then(|s| s.err_grad),
    };
    let summary_text = toml::to_string(&summary).map_err(ConfigError::Emit)?;
    std::fs::write(args.out.join("summary.toml"), &summary_text)?;

    println!("lambda = {}", outcome.lambda);
    println!("z = {}", outcome.z);
    if let Some(s) = &outcome.summary {
        if let (Some(el), Some(ep), Some(ei), Some(eg)) =
            (s.err_lambda, s.err_psi_l2, s.err_psi_inf, s.err_grad)
        {
            println!("err_lambda = {el:.6e}");
            println!("err_psi_l2 = {ep:.6e}");
            println!("err_psi_inf = {ei:.6e}");
            println!("err_grad = {eg:.6e}");
        }
    }
    println!("artifacts: {}", args.out.display());
    Ok(())
}

fn cmd_reference(args: ReferenceArgs) -> Result<(), CliError> {
    if args.c.is_empty() {
        return Err(CliError::Usage("--c needs at least one coefficient".into()));
    }
    if args.freq != 1 && args.freq != 2 {
        return Err(CliError::Usage("--freq must be 1 or 2".into()));
    }
    if args.k.iter().any(|&k| k == 0) {
        return Err(CliError::Usage("--k indices are 1-based".into()));
    }
    if args.nbasis == 0 {
        return Err(CliError::Usage("--nbasis must be at least 1".into()));
    }
    let per_dim: Vec<Vec<Eigenpair1d>> = args
        .c
        .iter()
        .map(|&c| solve_1d_all(FourierProblem1d { c, freq: args.freq, nbasis: args.nbasis }))
        .collect::<Result<_, _>>()?;

    let mut pairs = Vec::with_capacity(args.k.len());
    for &k in &args.k {
        let pair = kth_tensor_eigenpair(&per_dim, k)?;
        println!("{k}\t{}", pair.lambda);
        pairs.push((k, pair));
    }

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let mut values = BufWriter::new(File::create(dir.join("eigenvalues.csv"))?);
        writeln!(values, "k,lambda")?;
        for (k, pair) in &pairs {
            writeln!(values, "{k},{}", pair.lambda)?;
        }
        values.flush()?;
        if args.c.len() == 1 && args.grid > 0 {
            for (k, pair) in &pairs {
                let mut f = BufWriter::new(File::create(dir.join(format!("psi_{k}.csv")))?);
                writeln!(f, "x,psi,dpsi")?;
                for i in 0..args.grid {
                    let x = std::f64::consts::TAU * i as f64 / args.grid as f64;
                    writeln!(f, "{x},{},{}", pair.psi(&[x]), pair.grad(&[x])[0])?;
                }
                f.flush()?;
            }
        }
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config, &args.preset)?;
    cfg.apply_scale(args.scale);
    cfg.fill_defaults();
    let run = cfg.assemble()?;
    let cp = Checkpoint::load(&args.checkpoint)?;
    if cp.spec != run.spec {
        return Err(CliError::Usage(format!(
            "checkpoint architecture {:?} does not match the configuration {:?}",
            cp.spec, run.spec
        )));
    }
    let mut params = Params::zeros(&run.spec);
    params.set_flat(&cp.params);

    // Address the validation stream exactly as the training run did at the
    // checkpointed step, so evaluate-after-train reproduces its metrics.
    let vstep = if run.train.validation_fixed { 0 } else { cp.step };
    let vset = ValidationSet::sample(
        &run.problem,
        &run.reference,
        run.train.validation_size,
        &RunRng::new(cp.seed),
        vstep,
    );
    let (psi_vals, grad_vals) = net_fields(&params, &vset.points);
    let errors = metrics::evaluate(&psi_vals, cp.z, &grad_vals, &vset)?;
    let err_lambda = (params.lambda - run.reference.lambda()).abs();

    println!("step = {}", cp.step);
    println!("lambda = {}", params.lambda);
    println!("z = {}", cp.z);
    println!("err_lambda = {err_lambda}");
    println!("err_psi_l2 = {}", errors.psi_l2);
    println!("err_psi_inf = {}", errors.psi_inf);
    println!("err_grad = {}", errors.grad);

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let mut f = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        writeln!(f, "step,lambda,z,err_lambda,err_psi_l2,err_psi_inf,err_grad")?;
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            cp.step, params.lambda, cp.z, err_lambda, errors.psi_l2, errors.psi_inf, errors.grad
        )?;
        f.flush()?;
        write_density_csv(&dir.join("density.csv"), &psi_vals, cp.z, &vset)?;
    }
    Ok(())
}
