//! Exact stochastic simulation of a reaction network: the direct method and
//! the next-reaction method, both sampled onto a uniform grid by zero-order
//! hold.

mod deps;
mod queue;

pub use deps::DependencyGraph;
pub use queue::IndexedMinQueue;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSpec, Network};
use crate::rng::{rng_from_seed, SimRng};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsaMethod {
    Direct,
    NextReaction,
}

#[derive(Debug, Error)]
pub enum SsaError {
    #[error("more than {limit} events within one sample interval (reached t = {time})")]
    StepBudget { limit: u64, time: f64 },
    #[error("initial amount of `{species}` is {value}, not a non-negative integer")]
    NonIntegerInitial { species: String, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Settings for one stochastic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsaConfig {
    pub method: SsaMethod,
    /// Largest number of events allowed between two consecutive sample
    /// points.
    pub max_internal_steps: u64,
    pub sample_interval: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Keep every `(time, channel)` firing. Debug aid; large.
    pub record_events: bool,
}

impl SsaConfig {
    pub const DEFAULT_MAX_INTERNAL_STEPS: u64 = 1_000_000;

    /// Configuration using the model's horizon and sampling interval.
    pub fn for_model(m: &ModelSpec, method: SsaMethod, seed: u64) -> Self {
        Self {
            method,
            max_internal_steps: Self::DEFAULT_MAX_INTERNAL_STEPS,
            sample_interval: m.sample_interval(),
            horizon: m.horizon(),
            seed,
            record_events: false,
        }
    }

    pub fn validate(&self) -> Result<(), SsaError> {
        if self.max_internal_steps < 1 {
            return Err(SsaError::Config("max_internal_steps must be at least 1".into()));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(SsaError::Config(format!(
                "sample interval must be positive, got {}",
                self.sample_interval
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(SsaError::Config(format!("bad horizon {}", self.horizon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub channel: usize,
}

#[derive(Debug, Clone)]
pub struct SsaRun {
    pub trajectory: Trajectory,
    pub events: u64,
    pub event_log: Option<Vec<Event>>,
}

/// A stochastic simulation algorithm, split into proposing the next event
/// and committing it so the caller can sample the pre-event state.
pub trait SsaEngine {
    /// Time and channel of the next event, or `None` when every propensity
    /// is zero.
    fn next_event(&mut self) -> Result<Option<Event>, SsaError>;
    /// Applies a proposed event and updates propensities.
    fn fire(&mut self, event: Event) -> Result<(), SsaError>;
    fn state(&self) -> &[f64];
}

/// Integer initial counts of a model.
pub fn initial_counts(m: &ModelSpec) -> Result<Vec<f64>, SsaError> {
    m.species()
        .iter()
        .map(|s| {
            if s.initial.fract() == 0.0 && s.initial >= 0.0 {
                Ok(s.initial)
            } else {
                Err(SsaError::NonIntegerInitial {
                    species: s.name.clone(),
                    value: s.initial,
                })
            }
        })
        .collect()
}

fn draw_exp(rng: &mut SimRng) -> f64 {
    rng.sample(Exp1)
}

fn apply(net: &Network, channel: usize, state: &mut [f64]) {
    for &(s, k) in &net.channels[channel].delta {
        state[s] += k as f64;
    }
}

/// Gillespie's direct method.
pub struct DirectMethod<'a> {
    net: &'a Network,
    deps: DependencyGraph,
    state: Vec<f64>,
    props: Vec<f64>,
    time: f64,
    rng: SimRng,
}

impl<'a> DirectMethod<'a> {
    pub fn new(net: &'a Network, state: Vec<f64>, seed: u64) -> Result<Self, SsaError> {
        let props = (0..net.channels.len())
            .map(|c| net.propensity(c, &state))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            net,
            deps: DependencyGraph::new(net),
            state,
            props,
            time: 0.0,
            rng: rng_from_seed(seed),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn propensities(&self) -> &[f64] {
        &self.props
    }
}

impl SsaEngine for DirectMethod<'_> {
    fn next_event(&mut self) -> Result<Option<Event>, SsaError> {
        let a0: f64 = self.props.iter().sum();
        if a0 <= 0.0 {
            return Ok(None);
        }
        let time = self.time + draw_exp(&mut self.rng) / a0;
        let target = self.rng.random::<f64>() * a0;
        let mut acc = 0.0;
        let mut channel = None;
        for (c, &p) in self.props.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                channel = Some(c);
                if target < acc {
                    break;
                }
            }
        }
        // Rounding can leave `target` just above the final partial sum; the
        // last enabled channel is then the right pick.
        Ok(channel.map(|channel| Event { time, channel }))
    }

    fn fire(&mut self, event: Event) -> Result<(), SsaError> {
        apply(self.net, event.channel, &mut self.state);
        self.time = event.time;
        for &d in self.deps.affected(event.channel) {
            self.props[d] = self.net.propensity(d, &self.state)?;
        }
        Ok(())
    }

    fn state(&self) -> &[f64] {
        &self.state
    }
}

/// Gibson–Bruck next-reaction method.
pub struct NextReactionMethod<'a> {
    net: &'a Network,
    deps: DependencyGraph,
    state: Vec<f64>,
    props: Vec<f64>,
    queue: IndexedMinQueue,
    time: f64,
    rng: SimRng,
}

impl<'a> NextReactionMethod<'a> {
    pub fn new(net: &'a Network, state: Vec<f64>, seed: u64) -> Result<Self, SsaError> {
        let mut rng = rng_from_seed(seed);
        let props: Vec<f64> = (0..net.channels.len())
            .map(|c| net.propensity(c, &state))
            .collect::<Result<_, _>>()?;
        let times = props
            .iter()
            .map(|&a| if a > 0.0 { draw_exp(&mut rng) / a } else { f64::INFINITY })
            .collect();
        Ok(Self {
            net,
            deps: DependencyGraph::new(net),
            state,
            props,
            queue: IndexedMinQueue::new(times),
            time: 0.0,
            rng,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn propensities(&self) -> &[f64] {
        &self.props
    }

    /// Absolute putative firing time per channel (infinite when disabled).
    pub fn putative_times(&self) -> &[f64] {
        self.queue.keys()
    }

    pub fn queue(&self) -> &IndexedMinQueue {
        &self.queue
    }
}

impl SsaEngine for NextReactionMethod<'_> {
    fn next_event(&mut self) -> Result<Option<Event>, SsaError> {
        Ok(self
            .queue
            .peek()
            .filter(|(_, t)| t.is_finite())
            .map(|(channel, time)| Event { time, channel }))
    }

    fn fire(&mut self, event: Event) -> Result<(), SsaError> {
        let t = event.time;
        apply(self.net, event.channel, &mut self.state);
        self.time = t;
        let affected = self.deps.affected(event.channel);
        for &d in self.deps.dependents(event.channel) {
            let a_old = self.props[d];
            let a_new = if d == event.channel && affected.binary_search(&d).is_err() {
                a_old
            } else {
                self.net.propensity(d, &self.state)?
            };
            let next = if a_new <= 0.0 {
                f64::INFINITY
            } else if d == event.channel {
                t + draw_exp(&mut self.rng) / a_new
            } else if a_new == a_old {
                continue;
            } else if a_old > 0.0 {
                t + (a_old / a_new) * (self.queue.key(d) - t)
            } else {
                t + draw_exp(&mut self.rng) / a_new
            };
            self.props[d] = a_new;
            self.queue.update(d, next);
        }
        Ok(())
    }

    fn state(&self) -> &[f64] {
        &self.state
    }
}

/// Drives an engine to the horizon, sampling by zero-order hold.
pub fn run_engine<E: SsaEngine>(engine: &mut E, species: Vec<String>, cfg: &SsaConfig) -> Result<SsaRun, SsaError> {
    cfg.validate()?;
    let n = Trajectory::grid_len(cfg.horizon, cfg.sample_interval);
    let mut traj = Trajectory::with_capacity(species, cfg.sample_interval, n);
    let mut log = cfg.record_events.then(Vec::new);
    let mut total = 0u64;
    let mut in_interval = 0u64;
    // Grid point `k` holds the state after every event with time <= t_k.
    let grid_time = |k: usize| k as f64 * cfg.sample_interval;
    while traj.len() < n {
        let Some(event) = engine.next_event()? else { break };
        if event.time > cfg.horizon {
            break;
        }
        while traj.len() < n && grid_time(traj.len()) < event.time {
            traj.push(engine.state().to_vec());
            in_interval = 0;
        }
        engine.fire(event)?;
        total += 1;
        in_interval += 1;
        if in_interval > cfg.max_internal_steps {
            return Err(SsaError::StepBudget {
                limit: cfg.max_internal_steps,
                time: event.time,
            });
        }
        if let Some(log) = log.as_mut() {
            log.push(event);
        }
    }
    while traj.len() < n {
        traj.push(engine.state().to_vec());
    }
    Ok(SsaRun {
        trajectory: traj,
        events: total,
        event_log: log,
    })
}

/// Runs the method selected in `cfg`.
pub fn simulate(m: &ModelSpec, cfg: &SsaConfig) -> Result<SsaRun, SsaError> {
    cfg.validate()?;
    let net = m.network()?;
    let x0 = initial_counts(m)?;
    match cfg.method {
        SsaMethod::Direct => run_engine(&mut DirectMethod::new(&net, x0, cfg.seed)?, net.species.clone(), cfg),
        SsaMethod::NextReaction => run_engine(
            &mut NextReactionMethod::new(&net, x0, cfg.seed)?,
            net.species.clone(),
            cfg,
        ),
    }
}

pub fn simulate_direct(m: &ModelSpec, cfg: &SsaConfig) -> Result<Trajectory, SsaError> {
    let cfg = SsaConfig {
        method: SsaMethod::Direct,
        ..cfg.clone()
    };
    simulate(m, &cfg).map(|r| r.trajectory)
}

pub fn simulate_next_reaction(m: &ModelSpec, cfg: &SsaConfig) -> Result<Trajectory, SsaError> {
    let cfg = SsaConfig {
        method: SsaMethod::NextReaction,
        ..cfg.clone()
    };
    simulate(m, &cfg).map(|r| r.trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model;

    fn death() -> ModelSpec {
        load_model("species X = 10\nparam mu = 1\nreaction death: X -> @ mu*X\nhorizon 5\n").unwrap()
    }

    fn both(m: &ModelSpec, seed: u64) -> [Trajectory; 2] {
        [SsaMethod::Direct, SsaMethod::NextReaction]
            .map(|method| simulate(m, &SsaConfig::for_model(m, method, seed)).unwrap().trajectory)
    }

    #[test]
    fn pure_death_is_monotone_and_absorbs() {
        let m = death();
        for seed in 0..50 {
            for traj in both(&m, seed) {
                let x = traj.column("X").unwrap();
                assert!(x.windows(2).all(|w| w[1] <= w[0]));
                assert!(x.iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
                assert_eq!(traj.len(), 51);
            }
        }
        // With a long enough horizon every run ends at zero.
        let long = m.with_times(60.0, 1.0).unwrap();
        for seed in 0..20 {
            for traj in both(&long, seed) {
                assert_eq!(traj.last_row().unwrap(), &[0.0]);
            }
        }
    }

    #[test]
    fn pure_death_mean() {
        let m = death().with_times(1.0, 0.1).unwrap();
        for method in [SsaMethod::Direct, SsaMethod::NextReaction] {
            let mean: f64 = (0..2000)
                .map(|seed| {
                    let r = simulate(&m, &SsaConfig::for_model(&m, method, seed)).unwrap();
                    r.trajectory.last_row().unwrap()[0]
                })
                .sum::<f64>()
                / 2000.0;
            assert!((mean - 10.0 * (-1.0f64).exp()).abs() <= 0.15, "{method:?}: {mean}");
        }
    }

    #[test]
    fn influx_counts_are_poisson() {
        let m = load_model("species E = 0\nparam s = 0.318\ninflux E @ s\nhorizon 100\n").unwrap();
        let finals: Vec<f64> = (0..1000)
            .map(|seed| {
                let cfg = SsaConfig::for_model(&m, SsaMethod::Direct, seed);
                simulate(&m, &cfg).unwrap().trajectory.last_row().unwrap()[0]
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / 1000.0;
        let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((mean - 31.8).abs() <= 1.7, "mean {mean}");
        assert!((var / 31.8 - 1.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let m = load_model(
            "species X = 20\nspecies Y = 5\nparam k = 0.3\n\
             reaction pred: X + Y -> 2 Y @ k*X*Y/10\nreaction die: Y -> @ k*Y\n\
             reaction grow: X -> 2 X @ k*X\nhorizon 20\n",
        )
        .unwrap();
        assert_eq!(both(&m, 9), both(&m, 9));
        assert_ne!(both(&m, 9)[0], both(&m, 10)[0]);
    }

    #[test]
    fn first_firing_time_is_exponential() {
        // Single channel: the first event time has mean 1/a0 under both
        // methods.
        let m = load_model("species X = 4\nparam k = 0.5\nreaction d: X -> @ k*X\n").unwrap();
        let net = m.network().unwrap();
        for method in [SsaMethod::Direct, SsaMethod::NextReaction] {
            let mean = (0..4000)
                .map(|seed| {
                    let x0 = vec![4.0];
                    let e = match method {
                        SsaMethod::Direct => DirectMethod::new(&net, x0, seed).unwrap().next_event(),
                        SsaMethod::NextReaction => NextReactionMethod::new(&net, x0, seed).unwrap().next_event(),
                    };
                    e.unwrap().unwrap().time
                })
                .sum::<f64>()
                / 4000.0;
            // a0 = 2, sd of the mean = 0.5/sqrt(4000) ~ 0.008
            assert!((mean - 0.5).abs() < 0.03, "{method:?}: {mean}");
        }
    }

    #[test]
    fn queue_minimum_is_true_minimum_after_every_firing() {
        let m = load_model(
            "species A = 3\nspecies B = 0\nparam k = 1\n\
             reaction ab: A -> B @ k*A\nreaction ba: B -> A @ 2*k*B\n\
             reaction gate: B -> ; A @ k*B*(A-2)\ninflux A @ 0.5\n",
        )
        .unwrap();
        let net = m.network().unwrap();
        let mut nrm = NextReactionMethod::new(&net, vec![3.0, 0.0], 4).unwrap();
        let mut reentered = 0;
        for _ in 0..5000 {
            let Some(e) = nrm.next_event().unwrap() else { break };
            let before: Vec<bool> = nrm.propensities().iter().map(|&a| a > 0.0).collect();
            nrm.fire(e).unwrap();
            assert!(nrm.queue().is_consistent());
            let true_min = nrm.putative_times().iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(nrm.queue().peek().unwrap().1, true_min);
            for (c, &a) in nrm.propensities().iter().enumerate() {
                assert_eq!(a == 0.0, nrm.putative_times()[c].is_infinite());
                assert!(nrm.putative_times()[c] >= nrm.time());
                if !before[c] && a > 0.0 {
                    reentered += 1;
                }
            }
            assert!(nrm.state().iter().all(|&v| v >= 0.0));
        }
        assert!(reentered > 0);
    }

    #[test]
    fn exhausted_propensities_hold_final_state() {
        let m = load_model("species X = 2\nreaction d: X -> @ 100*X\nhorizon 1\n").unwrap();
        let traj = simulate_next_reaction(&m, &SsaConfig::for_model(&m, SsaMethod::NextReaction, 1)).unwrap();
        assert_eq!(traj.len(), 11);
        assert_eq!(traj.last_row().unwrap(), &[0.0]);
    }

    #[test]
    fn step_budget_is_an_error() {
        let m = load_model("species X = 0\ninflux X @ 1000\nhorizon 1\n").unwrap();
        let mut cfg = SsaConfig::for_model(&m, SsaMethod::Direct, 0);
        cfg.max_internal_steps = 10;
        assert!(matches!(
            simulate(&m, &cfg),
            Err(SsaError::StepBudget { limit: 10, .. })
        ));
        cfg.max_internal_steps = 0;
        assert!(matches!(simulate(&m, &cfg), Err(SsaError::Config(_))));
    }

    #[test]
    fn fractional_initial_rejected() {
        let m = load_model("species X = 2.5\nreaction d: X -> @ X\n").unwrap();
        let cfg = SsaConfig::for_model(&m, SsaMethod::Direct, 0);
        assert!(matches!(simulate(&m, &cfg), Err(SsaError::NonIntegerInitial { .. })));
    }

    #[test]
    fn event_log_matches_count() {
        let m = death();
        let mut cfg = SsaConfig::for_model(&m, SsaMethod::NextReaction, 3);
        cfg.record_events = true;
        let run = simulate(&m, &cfg).unwrap();
        let log = run.event_log.unwrap();
        assert_eq!(log.len() as u64, run.events);
        assert!(log.windows(2).all(|w| w[0].time <= w[1].time));
    }
}
