//! Seeded ensembles on any engine, written to disk as per-run CSV files,
//! their pointwise mean and a JSON manifest.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abm::{simulate_abm, AbmConfig};
use crate::cases::{builtin_model, world_from_model, CaseError, CaseStudyId};
use crate::model::{load_model, ModelError, ModelSpec};
use crate::ode::{integrate, IntegratorConfig};
use crate::rng::replicate_seed;
use crate::ssa::{simulate, SsaConfig, SsaMethod};
use crate::trajectory::{Trajectory, TrajectoryError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MEAN_FILE: &str = "mean.csv";

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("run with seed {seed} failed: {message}")]
    RunFailed { seed: u64, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl EnsembleError {
    /// Bad input as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            EnsembleError::Invalid(_) | EnsembleError::Case(_) | EnsembleError::Model(_)
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EnsembleError + '_ {
    move |source| EnsembleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Ode,
    SsaDirect,
    SsaNrm,
    Abm,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Ode, Engine::SsaDirect, Engine::SsaNrm, Engine::Abm];

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Ode => "ode",
            Engine::SsaDirect => "ssa-direct",
            Engine::SsaNrm => "ssa-nrm",
            Engine::Abm => "abm",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Engine::Ode)
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Engine::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| EnsembleError::Invalid(format!("unknown engine `{s}` (ode, ssa-direct, ssa-nrm, abm)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Builtin { name: String, scenario: Option<u8> },
    File(PathBuf),
}

impl ModelSource {
    pub fn builtin(id: CaseStudyId) -> Self {
        ModelSource::Builtin {
            name: id.name().to_string(),
            scenario: id.scenario(),
        }
    }

    pub fn case_id(&self) -> Result<Option<CaseStudyId>, EnsembleError> {
        match self {
            ModelSource::Builtin { name, scenario } => Ok(Some(CaseStudyId::resolve(name, *scenario)?)),
            ModelSource::File(_) => Ok(None),
        }
    }
}

impl fmt::Display for ModelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSource::Builtin {
                name,
                scenario: Some(s),
            } => write!(f, "{name}:{s}"),
            ModelSource::Builtin { name, scenario: None } => f.write_str(name),
            ModelSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Everything that determines a run apart from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub source: ModelSource,
    pub engine: Engine,
    pub overrides: Vec<(String, f64)>,
    pub horizon: Option<f64>,
    /// Sampling interval; for the agent engine also the time step.
    pub dt: Option<f64>,
    pub max_internal_steps: u64,
}

impl RunSpec {
    pub fn new(source: ModelSource, engine: Engine) -> Self {
        Self {
            source,
            engine,
            overrides: Vec::new(),
            horizon: None,
            dt: None,
            max_internal_steps: SsaConfig::DEFAULT_MAX_INTERNAL_STEPS,
        }
    }

    /// The model after overrides and time settings.
    pub fn resolve_model(&self) -> Result<ModelSpec, EnsembleError> {
        let base = match &self.source {
            ModelSource::Builtin { .. } => {
                let id = self.source.case_id()?.expect("builtin source");
                builtin_model(id, &self.overrides)?
            }
            ModelSource::File(path) => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                load_model(&text)?.with_overrides(&self.overrides)?
            }
        };
        let horizon = self.horizon.unwrap_or(base.horizon());
        let dt = self.dt.unwrap_or(base.sample_interval());
        Ok(base.with_times(horizon, dt)?)
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<(), EnsembleError> {
        if self.engine == Engine::Abm && matches!(self.source, ModelSource::File(_)) {
            return Err(EnsembleError::Invalid(
                "the agent engine needs a built-in model (agent classes are defined per case study)".into(),
            ));
        }
        if self.max_internal_steps == 0 {
            return Err(EnsembleError::Invalid("max_internal_steps must be at least 1".into()));
        }
        if !(model.horizon() > 0.0) {
            return Err(EnsembleError::Invalid(format!(
                "horizon must be positive, got {}",
                model.horizon()
            )));
        }
        Ok(())
    }

    fn abm_config(&self, model: &ModelSpec, seed: u64) -> AbmConfig {
        AbmConfig {
            dt: model.sample_interval(),
            horizon: model.horizon(),
            seed,
        }
    }

    fn ssa_config(&self, model: &ModelSpec, method: SsaMethod, seed: u64) -> SsaConfig {
        SsaConfig {
            max_internal_steps: self.max_internal_steps,
            ..SsaConfig::for_model(model, method, seed)
        }
    }

    /// One trajectory of an already resolved model.
    pub fn run_resolved(&self, model: &ModelSpec, seed: u64) -> Result<Trajectory, EnsembleError> {
        let failed = |message: String| EnsembleError::RunFailed { seed, message };
        match self.engine {
            Engine::Ode => integrate(model, &IntegratorConfig::default()).map_err(|e| failed(e.to_string())),
            Engine::SsaDirect | Engine::SsaNrm => {
                let method = if self.engine == Engine::SsaDirect {
                    SsaMethod::Direct
                } else {
                    SsaMethod::NextReaction
                };
                simulate(model, &self.ssa_config(model, method, seed))
                    .map(|r| r.trajectory)
                    .map_err(|e| failed(e.to_string()))
            }
            Engine::Abm => {
                let id = self
                    .source
                    .case_id()?
                    .ok_or_else(|| EnsembleError::Invalid("the agent engine needs a built-in model".into()))?;
                let world = world_from_model(id, model, self.abm_config(model, seed))?;
                simulate_abm(&world).map_err(|e| failed(e.to_string()))
            }
        }
    }

    /// Resolves the model and runs once.
    pub fn run(&self, seed: u64) -> Result<Trajectory, EnsembleError> {
        let model = self.resolve_model()?;
        self.validate(&model)?;
        self.run_resolved(&model, seed)
    }

    fn config_record(&self, model: &ModelSpec) -> RunConfig {
        let ode = IntegratorConfig::<f64>::default();
        RunConfig {
            horizon: model.horizon(),
            dt: model.sample_interval(),
            max_internal_steps: matches!(self.engine, Engine::SsaDirect | Engine::SsaNrm)
                .then_some(self.max_internal_steps),
            rtol: (self.engine == Engine::Ode).then_some(ode.rtol),
            atol: (self.engine == Engine::Ode).then_some(ode.atol),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub run: RunSpec,
    pub n_runs: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses every available CPU.
    pub jobs: Option<usize>,
}

impl EnsembleSpec {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_runs as u64)
            .map(|i| replicate_seed(self.base_seed, i))
            .collect()
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.n_runs == 0 {
            return Err(EnsembleError::Invalid("n_runs must be at least 1".into()));
        }
        if self.run.engine == Engine::Ode && self.n_runs != 1 {
            return Err(EnsembleError::Invalid(format!(
                "the ode engine is deterministic; n_runs must be 1, got {}",
                self.n_runs
            )));
        }
        if self.jobs == Some(0) {
            return Err(EnsembleError::Invalid("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: f64,
    pub dt: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_internal_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rtol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub atol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelSource,
    pub model_hash: String,
    pub engine: Engine,
    pub species: Vec<String>,
    pub overrides: Vec<(String, f64)>,
    pub config: RunConfig,
    pub n_runs: usize,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub runs: Vec<String>,
    pub mean: String,
    pub wall_time_s: f64,
}

pub fn run_file_name(i: usize) -> String {
    format!("run_{i}.csv")
}

/// Removes files this ensemble created, and the directory if it created that
/// too and left it empty.
fn cleanup(dir: &Path, created_dir: bool, n_runs: usize) {
    for i in 0..n_runs {
        let _ = fs::remove_file(dir.join(run_file_name(i)));
    }
    let _ = fs::remove_file(dir.join(MEAN_FILE));
    let _ = fs::remove_file(dir.join(MANIFEST_FILE));
    if created_dir {
        let _ = fs::remove_dir(dir);
    }
}

/// Runs every replicate, writes `run_<i>.csv`, `mean.csv` and
/// `manifest.json` into the output directory.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<Manifest, EnsembleError> {
    spec.validate()?;
    let model = spec.run.resolve_model()?;
    spec.run.validate(&model)?;
    let dir = &spec.out_dir;
    let created_dir = !dir.exists();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let started = Instant::now();
    let result = write_runs(spec, &model);
    let runs = match result {
        Ok(runs) => runs,
        Err(e) => {
            cleanup(dir, created_dir, spec.n_runs);
            return Err(e);
        }
    };
    let finish = || -> Result<Manifest, EnsembleError> {
        let mean = Trajectory::mean(&runs).map_err(|e| EnsembleError::Invalid(e.to_string()))?;
        let mean_path = dir.join(MEAN_FILE);
        fs::write(&mean_path, mean.to_csv()).map_err(io_err(&mean_path))?;
        let manifest = Manifest {
            model: spec.run.source.clone(),
            model_hash: model.content_hash(),
            engine: spec.run.engine,
            species: model.species_names(),
            overrides: spec.run.overrides.clone(),
            config: spec.run.config_record(&model),
            n_runs: spec.n_runs,
            base_seed: spec.base_seed,
            seeds: spec.seeds(),
            runs: (0..spec.n_runs).map(run_file_name).collect(),
            mean: MEAN_FILE.to_string(),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(&path, json + "\n").map_err(io_err(&path))?;
        Ok(manifest)
    };
    finish().inspect_err(|_| cleanup(dir, created_dir, spec.n_runs))
}

fn write_runs(spec: &EnsembleSpec, model: &ModelSpec) -> Result<Vec<Trajectory>, EnsembleError> {
    let seeds = spec.seeds();
    let work = || {
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| {
                let traj = spec.run.run_resolved(model, seed)?;
                let path = spec.out_dir.join(run_file_name(i));
                fs::write(&path, traj.to_csv()).map_err(io_err(&path))?;
                Ok(traj)
            })
            .collect::<Result<Vec<_>, EnsembleError>>()
    };
    match spec.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| EnsembleError::Invalid(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Reads a manifest and its run CSVs back.
pub fn load_ensemble(dir: &Path) -> Result<(Manifest, Vec<Trajectory>), EnsembleError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| EnsembleError::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let runs = manifest
        .runs
        .iter()
        .map(|name| load_trajectory(&dir.join(name)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, runs))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, EnsembleError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Trajectory::from_csv(&text).map_err(|e: TrajectoryError| EnsembleError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
