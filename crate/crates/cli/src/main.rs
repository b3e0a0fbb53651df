use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;
use trisim::cases::CaseStudyId;
use trisim::ensemble::{
    load_ensemble, load_trajectory, run_ensemble, Engine, EnsembleError, EnsembleSpec, ModelSource, RunSpec,
};
use trisim::stats::{
    detect_extrema, fit_curve, two_stage_compare, CompareOptions, CurveFamily, ExtremaKind, StatsError,
};
use trisim::ModelSpec;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Ensemble(e) if e.is_validation() => 1,
            CliError::Stats(
                StatsError::UnknownSpecies(_)
                | StatsError::InvalidArgument(_)
                | StatsError::SeriesTooShort { .. }
                | StatsError::InsufficientPoints { .. },
            ) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "trisim",
    version,
    about = "ODE, Gillespie and agent-based tumour-immune simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List the built-in models.
    ListModels,
    /// Run one trajectory and write it as CSV.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded ensemble into a directory.
    Ensemble {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Seed of run 0; run i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (defaults to all CPUs).
        #[arg(long, env = "TRISIM_JOBS")]
        jobs: Option<usize>,
    },
    /// Compare two ensemble directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        curve: CurveArgs,
        /// Extinction is counted up to this time (default: the horizon).
        #[arg(long)]
        by_time: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// Time at which raw values are compared with the rank-sum test; repeatable.
        #[arg(long = "slice")]
        slices: Vec<f64>,
        /// Report file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a curve family to the extrema of one trajectory.
    Fit {
        input: PathBuf,
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the local extrema of one trajectory as CSV.
    Extrema {
        input: PathBuf,
        #[command(flatten)]
        detect: DetectArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Built-in name (`case2`, `case1:3`) or path to a model file.
    #[arg(long)]
    model: String,
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long, default_value = "ssa-nrm")]
    engine: String,
    /// Parameter or initial amount override, `name=value`; repeatable.
    #[arg(long = "set", value_parser = parse_assignment)]
    overrides: Vec<(String, f64)>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Sampling interval (and time step for the agent engine).
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Maxima,
    Minima,
}

impl From<KindArg> for ExtremaKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Maxima => ExtremaKind::Maxima,
            KindArg::Minima => ExtremaKind::Minima,
        }
    }
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long, default_value = "T")]
    species: String,
    #[arg(long, value_enum, default_value = "maxima")]
    kind: KindArg,
    /// Moving-average window in samples (odd).
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 20.0)]
    min_separation: f64,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[command(flatten)]
    detect: DetectArgs,
    /// reciprocal5, parab_up, parab_down, parab_zero or parab_anchored:<c0>.
    #[arg(long, default_value = "parab_up")]
    family: String,
    /// Starting values, `name=value`; give every parameter or none (a
    /// linearised guess per run).
    #[arg(long = "init", value_parser = parse_assignment)]
    init: Vec<(String, f64)>,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("bad number in `{s}`"))?;
    Ok((k.trim().to_string(), v))
}

fn model_source_arg(model: &str, scenario: Option<u8>) -> Result<ModelSource, CliError> {
    let path = Path::new(model);
    if path.is_file() {
        if scenario.is_some() {
            return Err(CliError::Usage("--scenario applies to built-in models only".into()));
        }
        return Ok(ModelSource::File(path.to_path_buf()));
    }
    let id = match (model.split_once(':'), scenario) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give the scenario once".into())),
        (Some(_), None) => model.parse::<CaseStudyId>(),
        (None, sc) => CaseStudyId::resolve(model, sc),
    }
    .map_err(|e| CliError::Usage(format!("{e}; not a file either")))?;
    Ok(ModelSource::builtin(id))
}

fn run_spec(sim: &SimArgs) -> Result<RunSpec, CliError> {
    let engine: Engine = sim.engine.parse()?;
    let mut spec = RunSpec::new(model_source_arg(&sim.model, sim.scenario)?, engine);
    spec.overrides = sim.overrides.clone();
    spec.horizon = sim.horizon;
    spec.dt = sim.dt;
    if let Some(n) = sim.max_steps {
        spec.max_internal_steps = n;
    }
    Ok(spec)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn family_and_init(curve: &CurveArgs) -> Result<(CurveFamily, Option<Vec<f64>>), CliError> {
    let family: CurveFamily = curve.family.parse()?;
    if curve.init.is_empty() {
        return Ok((family, None));
    }
    let names = family.param_names();
    for (k, _) in &curve.init {
        if !names.contains(&k.as_str()) {
            return Err(CliError::Usage(format!(
                "`{k}` is not a parameter of {family} ({names:?})"
            )));
        }
    }
    let values = names
        .iter()
        .map(|n| {
            curve
                .init
                .iter()
                .find(|(k, _)| k == n)
                .map(|(_, v)| *v)
                .ok_or_else(|| CliError::Usage(format!("--init needs every parameter of {family}: {names:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((family, Some(values)))
}

fn list_models() -> String {
    let mut out = String::from("name\tspecies\thorizon\tdescription\n");
    for id in CaseStudyId::ALL {
        let m: ModelSpec = trisim::builtin_model::<&str>(id, &[]).expect("built-in models are valid");
        let label = match id.scenario() {
            Some(s) => format!("{}:{s}", id.name()),
            None => id.name().to_string(),
        };
        out.push_str(&format!(
            "{label}\t{}\t{}\t{}\n",
            m.species_names().join(","),
            m.horizon(),
            id.description()
        ));
    }
    out
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::ListModels => emit(None, &list_models()),
        Command::Run { sim, seed, out } => {
            let spec = run_spec(&sim)?;
            let traj = spec.run(seed)?;
            emit(out.as_deref(), &traj.to_csv())
        }
        Command::Ensemble {
            sim,
            runs,
            seed,
            out,
            jobs,
        } => {
            let spec = EnsembleSpec {
                run: run_spec(&sim)?,
                n_runs: runs,
                base_seed: seed,
                out_dir: out,
                jobs,
            };
            let manifest = run_ensemble(&spec)?;
            eprintln!(
                "{} {} run(s) of {} in {:.2} s -> {}",
                manifest.n_runs,
                manifest.engine,
                manifest.model,
                manifest.wall_time_s,
                spec.out_dir.display()
            );
            Ok(())
        }
        Command::Compare {
            a,
            b,
            curve,
            by_time,
            threshold,
            slices,
            out,
        } => {
            let (family, init) = family_and_init(&curve)?;
            let (_, runs_a) = load_ensemble(&a)?;
            let (_, runs_b) = load_ensemble(&b)?;
            let mut opts = CompareOptions::new(curve.detect.species.clone(), family, curve.detect.kind.into());
            opts.smoothing_window = curve.detect.window;
            opts.min_separation = curve.detect.min_separation;
            opts.init = init;
            opts.time_slices = slices;
            opts.extinction_threshold = threshold;
            opts.extinction_by = by_time;
            let report = two_stage_compare(&runs_a, &runs_b, &opts)?;
            emit(out.as_deref(), &(report.to_json() + "\n"))
        }
        Command::Fit { input, curve, out } => {
            let (family, init) = family_and_init(&curve)?;
            let traj = load_trajectory(&input)?;
            let d = &curve.detect;
            let seq = detect_extrema(&traj, &d.species, d.kind.into(), d.window, d.min_separation)?;
            let init = init.unwrap_or_else(|| family.initial_guess(&seq.points));
            let fit = fit_curve(family, &seq.points, &init)?;
            let json = serde_json::json!({ "family": family.to_string(), "extrema": seq, "fit": fit });
            emit(
                out.as_deref(),
                &(serde_json::to_string_pretty(&json).expect("json") + "\n"),
            )
        }
        Command::Extrema { input, detect, out } => {
            let traj = load_trajectory(&input)?;
            let seq = detect_extrema(
                &traj,
                &detect.species,
                detect.kind.into(),
                detect.window,
                detect.min_separation,
            )?;
            let mut csv = format!("t,{}\n", detect.species);
            for (t, v) in &seq.points {
                csv.push_str(&format!("{},{v}\n", trisim::trajectory::format_time(*t)));
            }
            emit(out.as_deref(), &csv)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
