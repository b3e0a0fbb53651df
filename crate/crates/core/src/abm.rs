//! Discrete-time agent-based engine.
//!
//! Agents carry only their statechart state, and every transition rate
//! depends only on aggregate counts, so a population is stored as a count per
//! class and state. Within one step all agents of a (class, state) cell face
//! the same firing probabilities; the per-agent Bernoulli trials are drawn as
//! binomial counts, which has the same joint law as drawing them one by one.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Hypergeometric, Poisson};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{CompiledExpr, Expr, Slot};
use crate::rng::{rng_from_seed, SimRng};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbmError {
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error("unknown agent class `{0}`")]
    UnknownClass(String),
    #[error("unknown symbol `{symbol}` in {context}")]
    UnknownSymbol { symbol: String, context: String },
    #[error("rate of `{transition}` in class `{class}` is not finite at t = {time}")]
    NonFiniteRate {
        class: String,
        transition: String,
        time: f64,
    },
}

/// What happens when a transition fires.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// The agent moves to the terminal state and is removed.
    Die,
    /// One new agent of the same class.
    Clone,
    /// `count` new agents of another class.
    Spawn { class: String, count: u32 },
    /// Kills a uniformly chosen living agent of `target`.
    SendKill { target: String },
    /// Signed rate: `positive` fires when the rate is above zero, `negative`
    /// when below, each with intensity `|rate|`.
    Branch {
        positive: Box<Effect>,
        negative: Box<Effect>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbmTransition {
    pub name: String,
    pub from_state: String,
    /// Per-agent rate over parameters and `Total<Class>` aggregates.
    pub rate: Expr,
    pub effect: Effect,
}

impl AbmTransition {
    pub fn new(name: &str, from_state: &str, rate: &str, effect: Effect) -> Result<Self, AbmError> {
        let rate = Expr::parse(rate).map_err(|e| AbmError::Invalid(format!("rate of `{name}`: {e}")))?;
        Ok(Self {
            name: name.to_string(),
            from_state: from_state.to_string(),
            rate,
            effect,
        })
    }

    /// Branch transitions use the sign of their rate.
    pub fn signed(&self) -> bool {
        matches!(self.effect, Effect::Branch { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentClass {
    pub name: String,
    /// Column name used in trajectories.
    pub species: String,
    pub states: Vec<String>,
    pub initial_state: String,
    pub terminal_state: Option<String>,
    pub transitions: Vec<AbmTransition>,
}

impl AgentClass {
    /// Class with the usual two states, `alive` (initial) and `dead`
    /// (terminal).
    pub fn alive_dead(name: &str, species: &str) -> Self {
        Self {
            name: name.to_string(),
            species: species.to_string(),
            states: vec!["alive".into(), "dead".into()],
            initial_state: "alive".into(),
            terminal_state: Some("dead".into()),
            transitions: Vec::new(),
        }
    }

    pub fn with(mut self, transition: AbmTransition) -> Self {
        self.transitions.push(transition);
        self
    }

    /// Name of the aggregate symbol counting this class.
    pub fn total_symbol(&self) -> String {
        format!("Total{}", self.name)
    }

    fn state_index(&self, state: &str) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }
}

/// Poisson arrival stream of new agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AbmInflux {
    pub class: String,
    pub rate: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbmConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for AbmConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 100.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AbmDiagnostics {
    pub steps: u64,
    /// Non-branch transitions whose rate came out negative and was treated
    /// as zero.
    pub negative_rate_clamps: u64,
    /// Kill messages that hit an already targeted agent or found no target.
    pub dissipated_messages: u64,
}

#[derive(Debug, Clone)]
enum Action {
    Die,
    Birth { class: usize, count: u64 },
    Kill { target: usize },
}

#[derive(Debug, Clone)]
struct CompiledTransition {
    state: usize,
    rate: CompiledExpr,
    positive: Action,
    negative: Option<Action>,
}

#[derive(Debug, Clone)]
pub struct AbmWorld {
    classes: Vec<AgentClass>,
    params: Vec<(String, f64)>,
    influxes: Vec<AbmInflux>,
    /// `populations[class][state]`; terminal states always hold zero.
    populations: Vec<Vec<u64>>,
    config: AbmConfig,
    time: f64,
    diagnostics: AbmDiagnostics,
    compiled: Vec<Vec<CompiledTransition>>,
    influx_rates: Vec<(usize, CompiledExpr)>,
}

impl AbmWorld {
    pub fn new(
        classes: Vec<AgentClass>,
        params: Vec<(String, f64)>,
        influxes: Vec<AbmInflux>,
        config: AbmConfig,
    ) -> Result<Self, AbmError> {
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(AbmError::Invalid(format!("dt must be positive, got {}", config.dt)));
        }
        if !(config.horizon >= 0.0 && config.horizon.is_finite()) {
            return Err(AbmError::Invalid(format!("bad horizon {}", config.horizon)));
        }
        let class_index = |name: &str| {
            classes
                .iter()
                .position(|c| c.name == name)
                .ok_or_else(|| AbmError::UnknownClass(name.to_string()))
        };
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].iter().any(|o| o.name == c.name) {
                return Err(AbmError::Invalid(format!("duplicate class `{}`", c.name)));
            }
            if c.state_index(&c.initial_state).is_none() {
                return Err(AbmError::Invalid(format!(
                    "class `{}`: initial state `{}` is not declared",
                    c.name, c.initial_state
                )));
            }
            if let Some(term) = &c.terminal_state {
                if c.state_index(term).is_none() {
                    return Err(AbmError::Invalid(format!(
                        "class `{}`: terminal state `{term}` is not declared",
                        c.name
                    )));
                }
                if term == &c.initial_state {
                    return Err(AbmError::Invalid(format!(
                        "class `{}`: initial state cannot be terminal",
                        c.name
                    )));
                }
            }
        }

        let resolve = |name: &str| {
            if let Some(i) = classes.iter().position(|c| c.total_symbol() == name) {
                return Some(Slot::Var(i));
            }
            params.iter().find(|(p, _)| p == name).map(|(_, v)| Slot::Const(*v))
        };
        let compile = |e: &Expr, context: String| {
            e.compile(resolve).map_err(|err| match err {
                crate::expr::ExprError::Unbound(symbol) => AbmError::UnknownSymbol { symbol, context },
                other => AbmError::Invalid(format!("{context}: {other}")),
            })
        };
        let lower = |owner: usize, effect: &Effect| -> Result<Action, AbmError> {
            Ok(match effect {
                Effect::Die => Action::Die,
                Effect::Clone => Action::Birth { class: owner, count: 1 },
                Effect::Spawn { class, count } => Action::Birth {
                    class: class_index(class)?,
                    count: u64::from(*count),
                },
                Effect::SendKill { target } => Action::Kill {
                    target: class_index(target)?,
                },
                Effect::Branch { .. } => {
                    return Err(AbmError::Invalid("branches cannot be nested".into()));
                }
            })
        };

        let mut compiled = Vec::with_capacity(classes.len());
        for (ci, c) in classes.iter().enumerate() {
            let mut list = Vec::with_capacity(c.transitions.len());
            for t in &c.transitions {
                let state = c.state_index(&t.from_state).ok_or_else(|| {
                    AbmError::Invalid(format!(
                        "class `{}`, transition `{}`: unknown state `{}`",
                        c.name, t.name, t.from_state
                    ))
                })?;
                if c.terminal_state.as_deref() == Some(t.from_state.as_str()) {
                    return Err(AbmError::Invalid(format!(
                        "class `{}`: terminal state has outgoing transition `{}`",
                        c.name, t.name
                    )));
                }
                let (positive, negative) = match &t.effect {
                    Effect::Branch { positive, negative } => (lower(ci, positive)?, Some(lower(ci, negative)?)),
                    e => (lower(ci, e)?, None),
                };
                if matches!(positive, Action::Die) || matches!(negative, Some(Action::Die)) {
                    if c.terminal_state.is_none() {
                        return Err(AbmError::Invalid(format!(
                            "class `{}` has no terminal state for `{}`",
                            c.name, t.name
                        )));
                    }
                }
                list.push(CompiledTransition {
                    state,
                    rate: compile(&t.rate, format!("rate of `{}.{}`", c.name, t.name))?,
                    positive,
                    negative,
                });
            }
            compiled.push(list);
        }
        let mut influx_rates = Vec::with_capacity(influxes.len());
        for inf in &influxes {
            influx_rates.push((
                class_index(&inf.class)?,
                compile(&inf.rate, format!("influx of `{}`", inf.class))?,
            ));
        }
        let populations = classes.iter().map(|c| vec![0; c.states.len()]).collect();
        Ok(Self {
            classes,
            params,
            influxes,
            populations,
            config,
            time: 0.0,
            diagnostics: AbmDiagnostics::default(),
            compiled,
            influx_rates,
        })
    }

    pub fn classes(&self) -> &[AgentClass] {
        &self.classes
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn influxes(&self) -> &[AbmInflux] {
        &self.influxes
    }

    pub fn config(&self) -> &AbmConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn diagnostics(&self) -> &AbmDiagnostics {
        &self.diagnostics
    }

    pub fn populations(&self) -> &[Vec<u64>] {
        &self.populations
    }

    pub fn class_index(&self, name: &str) -> Result<usize, AbmError> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| AbmError::UnknownClass(name.to_string()))
    }

    /// Sets the number of agents of `class` in its initial state.
    pub fn set_population(&mut self, class: &str, count: u64) -> Result<(), AbmError> {
        let ci = self.class_index(class)?;
        let si = self.classes[ci]
            .state_index(&self.classes[ci].initial_state)
            .expect("validated");
        self.populations[ci][si] = count;
        Ok(())
    }

    pub fn set_state_count(&mut self, class: &str, state: &str, count: u64) -> Result<(), AbmError> {
        let ci = self.class_index(class)?;
        let c = &self.classes[ci];
        let si = c
            .state_index(state)
            .ok_or_else(|| AbmError::Invalid(format!("class `{class}` has no state `{state}`")))?;
        if c.terminal_state.as_deref() == Some(state) && count > 0 {
            return Err(AbmError::Invalid("terminal agents are not stored".into()));
        }
        self.populations[ci][si] = count;
        Ok(())
    }

    pub fn with_config(mut self, config: AbmConfig) -> Result<Self, AbmError> {
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(AbmError::Invalid(format!("dt must be positive, got {}", config.dt)));
        }
        self.config = config;
        Ok(self)
    }

    /// Living agents of a class.
    pub fn total(&self, class: &str) -> Result<u64, AbmError> {
        Ok(self.populations[self.class_index(class)?].iter().sum())
    }

    /// Living agents per class, in class order.
    pub fn totals(&self) -> Vec<f64> {
        self.populations.iter().map(|p| p.iter().sum::<u64>() as f64).collect()
    }

    /// Signed per-agent rate of a transition given aggregate counts (one
    /// entry per class).
    pub fn transition_rate(&self, class: &str, transition: &str, totals: &[f64]) -> Result<f64, AbmError> {
        let ci = self.class_index(class)?;
        let ti = self.classes[ci]
            .transitions
            .iter()
            .position(|t| t.name == transition)
            .ok_or_else(|| AbmError::Invalid(format!("class `{class}` has no transition `{transition}`")))?;
        Ok(self.compiled[ci][ti].rate.eval(totals))
    }

    /// Rate of an influx stream given aggregate counts.
    pub fn influx_rate(&self, index: usize, totals: &[f64]) -> f64 {
        self.influx_rates[index].1.eval(totals)
    }

    /// Advances the world by one time step.
    pub fn step(&mut self, rng: &mut SimRng) -> Result<(), AbmError> {
        let dt = self.config.dt;
        let totals = self.totals();
        let n_classes = self.classes.len();
        let mut deaths: Vec<Vec<u64>> = self.populations.iter().map(|p| vec![0; p.len()]).collect();
        let mut births = vec![0u64; n_classes];
        let mut messages = vec![0u64; n_classes];

        for ci in 0..n_classes {
            for si in 0..self.populations[ci].len() {
                let n = self.populations[ci][si];
                if n == 0 {
                    continue;
                }
                // Sum of die intensities; an agent hit by several dies once.
                let mut die_intensity = 0.0;
                for (ti, t) in self.compiled[ci].iter().enumerate() {
                    if t.state != si {
                        continue;
                    }
                    let r = t.rate.eval(&totals);
                    if !r.is_finite() {
                        return Err(AbmError::NonFiniteRate {
                            class: self.classes[ci].name.clone(),
                            transition: self.classes[ci].transitions[ti].name.clone(),
                            time: self.time,
                        });
                    }
                    let (action, intensity) = match &t.negative {
                        Some(neg) if r < 0.0 => (neg, -r),
                        Some(_) => (&t.positive, r),
                        None if r < 0.0 => {
                            self.diagnostics.negative_rate_clamps += 1;
                            continue;
                        }
                        None => (&t.positive, r),
                    };
                    if intensity == 0.0 {
                        continue;
                    }
                    if let Action::Die = action {
                        die_intensity += intensity;
                        continue;
                    }
                    let fired = binomial(rng, n, fire_probability(intensity, dt));
                    match *action {
                        Action::Birth { class, count } => births[class] += fired * count,
                        Action::Kill { target } => messages[target] += fired,
                        Action::Die => unreachable!(),
                    }
                }
                if die_intensity > 0.0 {
                    deaths[ci][si] = binomial(rng, n, fire_probability(die_intensity, dt));
                }
            }
        }

        for (target, &m) in messages.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let living: u64 = self.populations[target].iter().sum();
            let hit = distinct_targets(rng, m, living);
            self.diagnostics.dissipated_messages += m - hit;
            // Spread the hit agents over states, then remove those that were
            // already dying of their own transitions.
            let mut pool = living;
            let mut left = hit;
            for si in 0..self.populations[target].len() {
                let n = self.populations[target][si];
                let k = hypergeometric(rng, pool, n, left);
                pool -= n;
                left -= k;
                let own = deaths[target][si];
                let overlap = hypergeometric(rng, n, own, k);
                deaths[target][si] = own + k - overlap;
            }
        }

        for ci in 0..n_classes {
            for (pop, d) in self.populations[ci].iter_mut().zip(&deaths[ci]) {
                *pop -= d;
            }
            let init = self.classes[ci]
                .state_index(&self.classes[ci].initial_state)
                .expect("validated");
            self.populations[ci][init] += births[ci];
        }

        for (class, rate) in &self.influx_rates {
            let lambda = rate.eval(&totals).max(0.0) * dt;
            if lambda > 0.0 {
                let arrivals = Poisson::new(lambda)
                    .map_err(|e| AbmError::Invalid(format!("influx rate: {e}")))?
                    .sample(rng) as u64;
                let c = &self.classes[*class];
                let init = c.state_index(&c.initial_state).expect("validated");
                self.populations[*class][init] += arrivals;
            }
        }

        self.diagnostics.steps += 1;
        self.time = self.diagnostics.steps as f64 * dt;
        Ok(())
    }

    /// Species columns and living counts per class.
    fn row(&self) -> Vec<f64> {
        self.totals()
    }
}

/// Probability that an exponential clock with the given intensity rings
/// within `dt`.
#[inline]
pub fn fire_probability(intensity: f64, dt: f64) -> f64 {
    -(-intensity * dt).exp_m1()
}

fn binomial(rng: &mut SimRng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("probability in (0, 1)").sample(rng)
}

/// Successes when drawing `draws` items without replacement from `total`
/// items of which `marked` are marked.
fn hypergeometric(rng: &mut SimRng, total: u64, marked: u64, draws: u64) -> u64 {
    if draws == 0 || marked == 0 {
        return 0;
    }
    if marked == total {
        return draws;
    }
    if draws == total {
        return marked;
    }
    Hypergeometric::new(total, marked, draws)
        .expect("valid hypergeometric parameters")
        .sample(rng)
}

/// Number of distinct agents hit when `messages` are each sent to a
/// uniformly chosen agent among `living`.
fn distinct_targets(rng: &mut SimRng, messages: u64, living: u64) -> u64 {
    if living == 0 {
        return 0;
    }
    let mut hit = 0u64;
    for _ in 0..messages {
        if hit == living {
            break;
        }
        // The next message lands on a new agent with probability
        // (living - hit) / living.
        if rng.random_range(0..living) >= hit {
            hit += 1;
        }
    }
    hit
}

/// One step applied to a copy of the world.
pub fn abm_step(world: &AbmWorld, rng: &mut SimRng) -> Result<AbmWorld, AbmError> {
    let mut next = world.clone();
    next.step(rng)?;
    Ok(next)
}

/// Runs the world to its horizon from its current populations, recording
/// living counts on the step grid. The last partial step is dropped.
pub fn simulate_abm(world: &AbmWorld) -> Result<Trajectory, AbmError> {
    Ok(simulate_abm_with_diagnostics(world)?.0)
}

pub fn simulate_abm_with_diagnostics(world: &AbmWorld) -> Result<(Trajectory, AbmDiagnostics), AbmError> {
    let mut w = world.clone();
    let mut rng = rng_from_seed(w.config.seed);
    let n = Trajectory::grid_len(w.config.horizon, w.config.dt);
    let species = w.classes.iter().map(|c| c.species.clone()).collect();
    let mut traj = Trajectory::with_capacity(species, w.config.dt, n);
    traj.push(w.row());
    for _ in 1..n {
        w.step(&mut rng)?;
        traj.push(w.row());
    }
    Ok((traj, w.diagnostics))
}
