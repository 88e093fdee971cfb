//! `biopepad`: check, explore, simulate and translate Bio-PEPAd models.
//!
//! Exit codes: 0 success, 1 validation or semantic error, 2 I/O error,
//! 3 truncated result, 4 numeric failure.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use biopepad::dde::{derive_dde, solve_dde, DdeError};
use biopepad::dssa::{DssaError, Recording, Simulator};
use biopepad::model::ModelError;
use biopepad::parser::ParsedModel;
use biopepad::semantics::{explore, to_dot, to_json, CapacityRule, ExploreOptions, StateIdentity};
use biopepad::{parse_model, ModelSource};
use clap::{Parser, Subcommand, ValueEnum};

use manifest::{OutputDigest, RunManifest};

const OUTPUT_DIR_VAR: &str = "BIOPEPAD_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "biopepad", version, about = "Bio-PEPA with delays: semantics, DSSA and DDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a model.
    Check { model: PathBuf },
    /// Build the stochastic labelled transition system.
    Explore {
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = GraphFormat::Dot)]
        format: GraphFormat,
        #[arg(long, default_value_t = 1_000_000)]
        max_states: usize,
        #[arg(long, default_value_t = 64)]
        max_pending: usize,
        #[arg(long, value_enum, default_value_t = Capacity::Strict)]
        capacity: Capacity,
        #[arg(long, value_enum, default_value_t = Identity::Reduced)]
        identity: Identity,
        /// Output file; defaults to `<model>.slts.<ext>` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delay stochastic simulation.
    Simulate {
        model: PathBuf,
        #[arg(long, value_parser = nonnegative)]
        t_end: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        runs: u64,
        /// Grid spacing; required for ensembles, optional for single runs.
        #[arg(long, value_parser = positive)]
        grid: Option<f64>,
        #[arg(long, value_enum, default_value_t = Capacity::Strict)]
        capacity: Capacity,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive the DDE system and optionally solve it.
    Dde {
        model: PathBuf,
        #[arg(long, value_parser = nonnegative, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, value_parser = positive, default_value_t = 0.01)]
        step: f64,
        #[arg(long, conflicts_with = "export_only")]
        solve: bool,
        #[arg(long)]
        export_only: bool,
        #[arg(long, value_enum, default_value_t = EquationFormat::Text)]
        format: EquationFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the command recorded in a manifest and compare output digests.
    Replay { manifest: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GraphFormat {
    Dot,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EquationFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Capacity {
    Strict,
    Literal,
}

impl From<Capacity> for CapacityRule {
    fn from(c: Capacity) -> Self {
        match c {
            Capacity::Strict => CapacityRule::Strict,
            Capacity::Literal => CapacityRule::Literal,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Identity {
    Reduced,
    Structural,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a nonnegative number")),
    }
}

/// A failure with its exit code.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Io(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Io(_) => 2,
            Failure::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Io(m) | Failure::Numeric(m) => m,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::BadRate { .. } => Failure::Numeric(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    }
}

fn load(path: &Path) -> Result<ParsedModel, Failure> {
    let src = ModelSource::from_file(path).map_err(|e| io_error(path, e))?;
    match parse_model(&src) {
        Ok(m) => {
            for w in &m.warnings {
                eprintln!("{}:{w}", path.display());
            }
            Ok(m)
        }
        Err(diags) => {
            let lines: Vec<String> = diags.iter().map(|d| format!("{}:{d}", path.display())).collect();
            Err(Failure::Validation(lines.join("\n")))
        }
    }
}

fn output_path(out: &Option<PathBuf>, model: &Path, suffix: &str) -> PathBuf {
    if let Some(p) = out {
        return p.clone();
    }
    let dir = std::env::var_os(OUTPUT_DIR_VAR).map_or_else(|| PathBuf::from("."), PathBuf::from);
    let stem = model.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    dir.join(format!("{stem}.{suffix}"))
}

fn write_output(path: &Path, contents: &str) -> Result<OutputDigest, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_error(path, e))?;
    Ok(OutputDigest::of(path, contents.as_bytes()))
}

struct Outcome {
    outputs: Vec<OutputDigest>,
    seed: Option<u64>,
    truncated: bool,
}

fn run(command: &Command) -> Result<Outcome, Failure> {
    let done = |outputs, seed| Outcome {
        outputs,
        seed,
        truncated: false,
    };
    match command {
        Command::Check { model } => {
            load(model)?;
            println!("{}: ok", model.display());
            Ok(done(vec![], None))
        }
        Command::Explore {
            model,
            format,
            max_states,
            max_pending,
            capacity,
            identity,
            out,
        } => {
            let spec = load(model)?.spec;
            let opts = ExploreOptions {
                max_states: *max_states,
                max_pending_per_species: *max_pending,
                capacity: (*capacity).into(),
                identity: match identity {
                    Identity::Reduced => StateIdentity::Reduced,
                    Identity::Structural => StateIdentity::Structural,
                },
            };
            let slts = explore(&spec, &opts).map_err(|e| Failure::Numeric(e.to_string()))?;
            let (text, ext) = match format {
                GraphFormat::Dot => (to_dot(&slts, &spec), "dot"),
                GraphFormat::Json => (to_json(&slts, &spec), "json"),
            };
            let path = output_path(out, model, &format!("slts.{ext}"));
            let digest = write_output(&path, &text)?;
            println!("{} states, {} transitions", slts.states.len(), slts.edges.len());
            if let Some(t) = &slts.truncated {
                println!("truncated: {t}");
            }
            Ok(Outcome {
                outputs: vec![digest],
                seed: None,
                truncated: slts.truncated.is_some(),
            })
        }
        Command::Simulate {
            model,
            t_end,
            seed,
            runs,
            grid,
            capacity,
            jobs,
            out,
        } => {
            let spec = load(model)?.spec;
            let sim = Simulator::new(&spec, (*capacity).into()).map_err(dssa_failure)?;
            let (text, suffix) = if *runs == 1 {
                let recording = grid.map_or(Recording::AllEvents, Recording::Grid);
                let tr = sim.simulate(*t_end, *seed, recording).map_err(dssa_failure)?;
                (tr.to_csv(), "trajectory.csv")
            } else {
                let dt = grid.unwrap_or(*t_end / 100.0);
                if !(dt > 0.0) {
                    return Err(Failure::Validation("ensembles need a positive --grid".into()));
                }
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs.unwrap_or(0))
                    .build()
                    .map_err(|e| Failure::Validation(e.to_string()))?;
                let stats = pool
                    .install(|| sim.ensemble(*t_end, *runs as usize, *seed, dt))
                    .map_err(dssa_failure)?;
                (stats.to_csv(), "ensemble.csv")
            };
            let path = output_path(out, model, suffix);
            let digest = write_output(&path, &text)?;
            println!("wrote {}", path.display());
            Ok(done(vec![digest], Some(*seed)))
        }
        Command::Dde {
            model,
            t_end,
            step,
            solve,
            export_only: _,
            format,
            out,
        } => {
            let spec = load(model)?.spec;
            let sys = derive_dde(&spec).map_err(dde_failure)?;
            match format {
                EquationFormat::Text => print!("{}", sys.to_text()),
                EquationFormat::Json => println!("{}", sys.to_json()),
            }
            if !*solve {
                return Ok(done(vec![], None));
            }
            let grid = solve_dde(&sys, *t_end, *step).map_err(dde_failure)?;
            if grid.step != *step {
                eprintln!("step adjusted to {} to divide every delay", grid.step);
            }
            let path = output_path(out, model, "dde.csv");
            let digest = write_output(&path, &grid.to_csv())?;
            eprintln!("wrote {}", path.display());
            Ok(done(vec![digest], None))
        }
        Command::Replay { .. } => unreachable!("handled in main"),
    }
}

fn dssa_failure(e: DssaError) -> Failure {
    match e {
        DssaError::Model(m) => model_failure(m),
        DssaError::Argument(m) => Failure::Validation(m),
        other => Failure::Numeric(other.to_string()),
    }
}

fn dde_failure(e: DdeError) -> Failure {
    match e {
        DdeError::Model(m) => model_failure(m),
        DdeError::BlowUp { .. } | DdeError::History { .. } => Failure::Numeric(e.to_string()),
        other => Failure::Validation(other.to_string()),
    }
}

fn model_of(command: &Command) -> Option<&Path> {
    match command {
        Command::Check { model }
        | Command::Explore { model, .. }
        | Command::Simulate { model, .. }
        | Command::Dde { model, .. } => Some(model),
        Command::Replay { .. } => None,
    }
}

fn execute(args: &[String]) -> Result<(Outcome, RunManifest), Failure> {
    let cli = Cli::try_parse_from(std::iter::once("biopepad".to_string()).chain(args.iter().cloned()))
        .map_err(|e| Failure::Validation(e.to_string()))?;
    let started = Instant::now();
    let outcome = run(&cli.command)?;
    let model = model_of(&cli.command).expect("replay is not recorded");
    let model_text = std::fs::read(model).map_err(|e| io_error(model, e))?;
    let manifest = RunManifest {
        command: args.first().cloned().unwrap_or_default(),
        args: args.to_vec(),
        model: model.display().to_string(),
        model_sha256: manifest::sha256_hex(&model_text),
        seed: outcome.seed,
        rng: outcome.seed.map(|_| biopepad::dssa::RngStream::ALGORITHM.to_string()),
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_ms: started.elapsed().as_secs_f64() * 1e3,
        outputs: outcome.outputs.clone(),
    };
    Ok((outcome, manifest))
}

fn replay(path: &Path) -> Result<(), Failure> {
    let recorded = RunManifest::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let (_, fresh) = execute(&recorded.args)?;
    let mut mismatched = Vec::new();
    for (old, new) in recorded.outputs.iter().zip(&fresh.outputs) {
        if old.sha256 != new.sha256 {
            mismatched.push(old.path.clone());
        }
    }
    if recorded.outputs.len() != fresh.outputs.len() || !mismatched.is_empty() {
        return Err(Failure::Validation(format!("outputs differ from the manifest: {mismatched:?}")));
    }
    println!("reproduced {} output(s)", fresh.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let parsed = Cli::try_parse_from(std::iter::once("biopepad".to_string()).chain(args.iter().cloned()));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Replay { manifest } => replay(manifest).map(|()| false),
        _ => execute(&args).and_then(|(outcome, manifest)| {
            if let Some(first) = manifest.outputs.first() {
                let path = PathBuf::from(format!("{}.manifest.json", first.path));
                manifest.write(&path).map_err(|e| io_error(&path, e))?;
            }
            Ok(outcome.truncated)
        }),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(f) => {
            eprintln!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}
