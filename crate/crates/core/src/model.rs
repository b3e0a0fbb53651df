//! Reaction-network models with expression rate laws.
//!
//! A [`ModelSpec`] is the single description consumed by all three engines:
//! the SSA reads propensities off it, the ODE integrator sums
//! `(produced - consumed) * rate` over reactions, and the agent-based builders
//! take their parameters and initial populations from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::{Bindings, CompiledExpr, Expr, ExprError, Slot};

pub const DEFAULT_HORIZON: f64 = 100.0;
pub const DEFAULT_SAMPLE_INTERVAL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<ModelError>,
    },
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("unknown symbol `{symbol}` in {context}")]
    UnknownSymbol { symbol: String, context: String },
    #[error("duplicate declaration of `{0}`")]
    Duplicate(String),
    #[error("negative initial value {value} for species `{name}`")]
    NegativeInitial { name: String, value: f64 },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("unknown override `{0}` (not a parameter or species)")]
    UnknownOverride(String),
    #[error("reaction `{reaction}` needs {needed} of `{species}` but only {available} present")]
    InsufficientCopies {
        reaction: String,
        species: String,
        needed: u32,
        available: f64,
    },
    #[error("rate of `{context}`: {source}")]
    Eval {
        context: String,
        #[source]
        source: ExprError,
    },
}

impl ModelError {
    fn at_line(self, line: usize) -> Self {
        ModelError::AtLine {
            line,
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesDecl {
    pub name: String,
    /// Initial amount; stochastic engines round it to an integer count.
    pub initial: f64,
}

/// One reaction channel. `A -> B ; C` reads `C` in the rate without changing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub name: String,
    pub consumed: BTreeMap<String, u32>,
    pub produced: BTreeMap<String, u32>,
    pub modifiers: BTreeSet<String>,
    pub rate: Expr,
}

impl Reaction {
    /// Net stoichiometric change per species; zero entries are omitted.
    pub fn net_change(&self) -> BTreeMap<String, i64> {
        let mut net: BTreeMap<String, i64> = BTreeMap::new();
        for (s, k) in &self.consumed {
            *net.entry(s.clone()).or_default() -= i64::from(*k);
        }
        for (s, k) in &self.produced {
            *net.entry(s.clone()).or_default() += i64::from(*k);
        }
        net.retain(|_, v| *v != 0);
        net
    }
}

/// Constant-rate arrival of new individuals of one species (treatment terms).
#[derive(Debug, Clone, PartialEq)]
pub struct InfluxEvent {
    pub species: String,
    pub rate: Expr,
}

/// A validated model. Construct through [`ModelSpec::new`] or
/// [`ModelSpec::parse`]; the fields are read-only afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    species: Vec<SpeciesDecl>,
    params: Vec<(String, f64)>,
    reactions: Vec<Reaction>,
    influxes: Vec<InfluxEvent>,
    horizon: f64,
    sample_interval: f64,
}

/// Unvalidated pieces of a model.
#[derive(Debug, Clone, Default)]
pub struct ModelParts {
    pub species: Vec<SpeciesDecl>,
    pub params: Vec<(String, f64)>,
    pub reactions: Vec<Reaction>,
    pub influxes: Vec<InfluxEvent>,
    pub horizon: Option<f64>,
    pub sample_interval: Option<f64>,
}

impl ModelSpec {
    pub fn new(parts: ModelParts) -> Result<Self, ModelError> {
        let m = ModelSpec {
            species: parts.species,
            params: parts.params,
            reactions: parts.reactions,
            influxes: parts.influxes,
            horizon: parts.horizon.unwrap_or(DEFAULT_HORIZON),
            sample_interval: parts.sample_interval.unwrap_or(DEFAULT_SAMPLE_INTERVAL),
        };
        m.check_declarations()?;
        for r in &m.reactions {
            m.check_reaction(r)?;
        }
        for inf in &m.influxes {
            m.check_influx(inf)?;
        }
        m.check_times()?;
        Ok(m)
    }

    /// Parses the line-oriented model format. Errors carry the 1-based line.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        load_model(text)
    }

    pub fn species(&self) -> &[SpeciesDecl] {
        &self.species
    }

    pub fn species_names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn influxes(&self) -> &[InfluxEvent] {
        &self.influxes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn reaction(&self, name: &str) -> Option<&Reaction> {
        self.reactions.iter().find(|r| r.name == name)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.species.iter().map(|s| s.initial).collect()
    }

    /// Returns a copy with horizon and sampling interval replaced.
    pub fn with_times(&self, horizon: f64, sample_interval: f64) -> Result<Self, ModelError> {
        let mut m = self.clone();
        m.horizon = horizon;
        m.sample_interval = sample_interval;
        m.check_times()?;
        Ok(m)
    }

    /// Replaces parameter values or species initial amounts by name.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[(S, f64)]) -> Result<Self, ModelError> {
        let mut m = self.clone();
        for (name, value) in overrides {
            let name = name.as_ref();
            if let Some(p) = m.params.iter_mut().find(|(n, _)| n == name) {
                p.1 = *value;
            } else if let Some(s) = m.species.iter_mut().find(|s| s.name == name) {
                if *value < 0.0 {
                    return Err(ModelError::NegativeInitial {
                        name: name.to_string(),
                        value: *value,
                    });
                }
                s.initial = *value;
            } else {
                return Err(ModelError::UnknownOverride(name.to_string()));
            }
        }
        for inf in &m.influxes {
            m.check_influx(inf)?;
        }
        Ok(m)
    }

    /// Bindings of every parameter plus the given species values.
    pub fn bindings(&self, state: &[f64]) -> Bindings<f64> {
        let mut b: Bindings<f64> = self.params.iter().map(|(n, v)| (n.clone(), *v)).collect();
        for (s, v) in self.species.iter().zip(state) {
            b.set(s.name.clone(), *v);
        }
        b
    }

    /// Stochastic propensity: the rate law at `state`, clamped at zero.
    pub fn propensity(&self, reaction: &Reaction, state: &[f64]) -> Result<f64, ModelError> {
        let v = reaction
            .rate
            .eval(&self.bindings(state))
            .map_err(|source| ModelError::Eval {
                context: reaction.name.clone(),
                source,
            })?;
        Ok(v.max(0.0))
    }

    /// Fires `reaction` once: subtracts reactants, adds products.
    pub fn apply_reaction(&self, reaction: &Reaction, state: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut next = state.to_vec();
        for (s, k) in &reaction.consumed {
            let i = self.species_index(s).expect("validated species");
            if next[i] < f64::from(*k) {
                return Err(ModelError::InsufficientCopies {
                    reaction: reaction.name.clone(),
                    species: s.clone(),
                    needed: *k,
                    available: next[i],
                });
            }
            next[i] -= f64::from(*k);
        }
        for (s, k) in &reaction.produced {
            let i = self.species_index(s).expect("validated species");
            next[i] += f64::from(*k);
        }
        Ok(next)
    }

    /// Deterministic right-hand side: `sum_r (produced - consumed) * rate_r`
    /// plus influxes. Rate laws are used with their sign.
    pub fn ode_rhs(&self, state: &[f64]) -> Result<Vec<f64>, ModelError> {
        let b = self.bindings(state);
        let mut out = vec![0.0; self.species.len()];
        for r in &self.reactions {
            let rate = r.rate.eval(&b).map_err(|source| ModelError::Eval {
                context: r.name.clone(),
                source,
            })?;
            for (s, k) in r.net_change() {
                out[self.species_index(&s).expect("validated species")] += k as f64 * rate;
            }
        }
        for inf in &self.influxes {
            let rate = inf.rate.eval(&b).map_err(|source| ModelError::Eval {
                context: format!("influx {}", inf.species),
                source,
            })?;
            out[self.species_index(&inf.species).expect("validated species")] += rate;
        }
        Ok(out)
    }

    /// Lowers rate laws against this model's parameters for the engines.
    pub fn network(&self) -> Result<Network, ModelError> {
        Network::new(self)
    }

    /// SHA-256 of the canonical text rendering.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn is_symbol(&self, name: &str) -> bool {
        self.species_index(name).is_some() || self.param(name).is_some()
    }

    fn check_declarations(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for s in &self.species {
            if !seen.insert(s.name.as_str()) {
                return Err(ModelError::Duplicate(s.name.clone()));
            }
            if !(s.initial >= 0.0) || !s.initial.is_finite() {
                return Err(ModelError::NegativeInitial {
                    name: s.name.clone(),
                    value: s.initial,
                });
            }
        }
        for (p, v) in &self.params {
            if !seen.insert(p.as_str()) {
                return Err(ModelError::Duplicate(p.clone()));
            }
            if !v.is_finite() {
                return Err(ModelError::Invalid(format!("parameter `{p}` is not finite")));
            }
        }
        let mut names = BTreeSet::new();
        for r in &self.reactions {
            if !names.insert(r.name.as_str()) {
                return Err(ModelError::Duplicate(r.name.clone()));
            }
        }
        Ok(())
    }

    fn check_reaction(&self, r: &Reaction) -> Result<(), ModelError> {
        let context = format!("reaction `{}`", r.name);
        if r.consumed.is_empty() && r.produced.is_empty() {
            return Err(ModelError::Invalid(format!(
                "{context} has neither reactants nor products"
            )));
        }
        for s in r.consumed.keys().chain(r.produced.keys()).chain(r.modifiers.iter()) {
            if self.species_index(s).is_none() {
                return Err(ModelError::UnknownSymbol {
                    symbol: s.clone(),
                    context: context.clone(),
                });
            }
        }
        for (s, k) in r.consumed.iter().chain(r.produced.iter()) {
            if *k == 0 {
                return Err(ModelError::Invalid(format!("{context}: zero stoichiometry for `{s}`")));
            }
        }
        for sym in r.rate.free_symbols() {
            if !self.is_symbol(&sym) {
                return Err(ModelError::UnknownSymbol {
                    symbol: sym,
                    context: format!("rate of {context}"),
                });
            }
            if self.species_index(&sym).is_some()
                && !r.consumed.contains_key(&sym)
                && !r.produced.contains_key(&sym)
                && !r.modifiers.contains(&sym)
            {
                return Err(ModelError::Invalid(format!(
                    "{context}: rate reads species `{sym}` that is not a reactant, product or modifier"
                )));
            }
        }
        Ok(())
    }

    fn check_influx(&self, inf: &InfluxEvent) -> Result<(), ModelError> {
        let context = format!("influx of `{}`", inf.species);
        if self.species_index(&inf.species).is_none() {
            return Err(ModelError::UnknownSymbol {
                symbol: inf.species.clone(),
                context,
            });
        }
        let syms = inf.rate.free_symbols();
        for sym in &syms {
            if !self.is_symbol(sym) {
                return Err(ModelError::UnknownSymbol {
                    symbol: sym.clone(),
                    context: format!("rate of {context}"),
                });
            }
        }
        if syms.iter().all(|s| self.param(s).is_some()) {
            let v = inf.rate.eval(&self.bindings(&[])).map_err(|source| ModelError::Eval {
                context: context.clone(),
                source,
            })?;
            if v < 0.0 {
                return Err(ModelError::Invalid(format!("{context} has negative rate {v}")));
            }
        }
        Ok(())
    }

    fn check_times(&self) -> Result<(), ModelError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "sample interval must be positive, got {}",
                self.sample_interval
            )));
        }
        Ok(())
    }
}

fn write_side(f: &mut fmt::Formatter<'_>, side: &BTreeMap<String, u32>) -> fmt::Result {
    for (i, (s, k)) in side.iter().enumerate() {
        if i > 0 {
            f.write_str(" + ")?;
        }
        if *k == 1 {
            f.write_str(s)?;
        } else {
            write!(f, "{k} {s}")?;
        }
    }
    Ok(())
}

/// Canonical text in the model file format.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.species {
            writeln!(f, "species {} = {}", s.name, s.initial)?;
        }
        for (p, v) in &self.params {
            writeln!(f, "param {p} = {v}")?;
        }
        for r in &self.reactions {
            write!(f, "reaction {}: ", r.name)?;
            write_side(f, &r.consumed)?;
            f.write_str(" -> ")?;
            write_side(f, &r.produced)?;
            if !r.modifiers.is_empty() {
                let mods: Vec<&str> = r.modifiers.iter().map(String::as_str).collect();
                write!(f, " ; {}", mods.join(", "))?;
            }
            writeln!(f, " @ {}", r.rate)?;
        }
        for inf in &self.influxes {
            writeln!(f, "influx {} @ {}", inf.species, inf.rate)?;
        }
        writeln!(f, "horizon {}", self.horizon)?;
        writeln!(f, "sample {}", self.sample_interval)
    }
}

// ---------------------------------------------------------------------------
// File format

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_number(text: &str) -> Result<f64, ModelError> {
    let t = text.trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ModelError::Malformed(format!("expected a number, found `{t}`")))
}

fn parse_assignment(rest: &str) -> Result<(String, f64), ModelError> {
    let (name, value) = rest
        .split_once('=')
        .ok_or_else(|| ModelError::Malformed("expected `<name> = <number>`".into()))?;
    let name = name.trim();
    if !is_identifier(name) {
        return Err(ModelError::Malformed(format!("invalid name `{name}`")));
    }
    Ok((name.to_string(), parse_number(value)?))
}

/// Parses `2 T + E`, `2*T`, or an empty side.
fn parse_side(text: &str) -> Result<BTreeMap<String, u32>, ModelError> {
    let mut out = BTreeMap::new();
    let text = text.trim();
    if text.is_empty() {
        return Ok(out);
    }
    for term in text.split('+') {
        let term = term.trim();
        let (coeff, name) = match term.find(|c: char| !c.is_ascii_digit()) {
            Some(0) => (1, term),
            Some(i) => {
                let k: u32 = term[..i]
                    .parse()
                    .map_err(|_| ModelError::Malformed(format!("bad multiplicity in `{term}`")))?;
                let rest = term[i..].trim_start();
                (k, rest.strip_prefix('*').unwrap_or(rest).trim())
            }
            None => return Err(ModelError::Malformed(format!("missing species in `{term}`"))),
        };
        if !is_identifier(name) {
            return Err(ModelError::Malformed(format!("invalid species term `{term}`")));
        }
        if coeff == 0 {
            return Err(ModelError::Malformed(format!("zero multiplicity in `{term}`")));
        }
        *out.entry(name.to_string()).or_insert(0) += coeff;
    }
    Ok(out)
}

fn parse_reaction(rest: &str) -> Result<Reaction, ModelError> {
    let (name, body) = rest
        .split_once(':')
        .ok_or_else(|| ModelError::Malformed("expected `reaction <name>: ...`".into()))?;
    let name = name.trim();
    if !is_identifier(name) {
        return Err(ModelError::Malformed(format!("invalid reaction name `{name}`")));
    }
    let (scheme, rate) = body
        .split_once('@')
        .ok_or_else(|| ModelError::Malformed("missing `@ <rate>`".into()))?;
    let rate = Expr::parse(rate.trim()).map_err(|source| ModelError::Eval {
        context: name.to_string(),
        source,
    })?;
    let (scheme, modifiers) = match scheme.split_once(';') {
        Some((s, m)) => (s, m),
        None => (scheme, ""),
    };
    let (lhs, rhs) = scheme
        .split_once("->")
        .ok_or_else(|| ModelError::Malformed("missing `->`".into()))?;
    let mut mods = BTreeSet::new();
    for m in modifiers.split([',', ' ']).map(str::trim).filter(|m| !m.is_empty()) {
        if !is_identifier(m) {
            return Err(ModelError::Malformed(format!("invalid modifier `{m}`")));
        }
        mods.insert(m.to_string());
    }
    Ok(Reaction {
        name: name.to_string(),
        consumed: parse_side(lhs)?,
        produced: parse_side(rhs)?,
        modifiers: mods,
        rate,
    })
}

fn parse_influx(rest: &str) -> Result<InfluxEvent, ModelError> {
    let (species, rate) = rest
        .split_once('@')
        .ok_or_else(|| ModelError::Malformed("expected `influx <species> @ <rate>`".into()))?;
    let species = species.trim();
    if !is_identifier(species) {
        return Err(ModelError::Malformed(format!("invalid species `{species}`")));
    }
    let rate = Expr::parse(rate.trim()).map_err(|source| ModelError::Eval {
        context: format!("influx {species}"),
        source,
    })?;
    Ok(InfluxEvent {
        species: species.to_string(),
        rate,
    })
}

/// Loads a model from its text form.
pub fn load_model(text: &str) -> Result<ModelSpec, ModelError> {
    let mut parts = ModelParts::default();
    let mut reaction_lines = Vec::new();
    let mut influx_lines = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let mut step = || -> Result<(), ModelError> {
            match keyword {
                "species" | "param" => {
                    let (name, value) = parse_assignment(rest)?;
                    if seen.contains_key(&name) {
                        return Err(ModelError::Duplicate(name));
                    }
                    seen.insert(name.clone(), line_no);
                    if keyword == "species" {
                        if value < 0.0 {
                            return Err(ModelError::NegativeInitial { name, value });
                        }
                        parts.species.push(SpeciesDecl { name, initial: value });
                    } else {
                        parts.params.push((name, value));
                    }
                }
                "reaction" => {
                    parts.reactions.push(parse_reaction(rest)?);
                    reaction_lines.push(line_no);
                }
                "influx" => {
                    parts.influxes.push(parse_influx(rest)?);
                    influx_lines.push(line_no);
                }
                "horizon" => parts.horizon = Some(parse_number(rest)?),
                "sample" => parts.sample_interval = Some(parse_number(rest)?),
                other => return Err(ModelError::Malformed(format!("unknown keyword `{other}`"))),
            }
            Ok(())
        };
        step().map_err(|e| e.at_line(line_no))?;
    }

    let draft = ModelSpec {
        species: parts.species,
        params: parts.params,
        reactions: Vec::new(),
        influxes: Vec::new(),
        horizon: parts.horizon.unwrap_or(DEFAULT_HORIZON),
        sample_interval: parts.sample_interval.unwrap_or(DEFAULT_SAMPLE_INTERVAL),
    };
    let mut names = BTreeSet::new();
    for (r, line) in parts.reactions.iter().zip(&reaction_lines) {
        if !names.insert(r.name.clone()) {
            return Err(ModelError::Duplicate(r.name.clone()).at_line(*line));
        }
        draft.check_reaction(r).map_err(|e| e.at_line(*line))?;
    }
    for (inf, line) in parts.influxes.iter().zip(&influx_lines) {
        draft.check_influx(inf).map_err(|e| e.at_line(*line))?;
    }
    draft.check_times()?;
    Ok(ModelSpec {
        reactions: parts.reactions,
        influxes: parts.influxes,
        ..draft
    })
}

// ---------------------------------------------------------------------------
// Compiled network

/// Whether a channel is a reaction or an influx pseudo-reaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Reaction(usize),
    Influx(usize),
}

/// A reaction or influx with species resolved to indices and parameters
/// folded into the rate.
#[derive(Debug, Clone)]
pub struct Channel {
    pub name: String,
    pub kind: ChannelKind,
    pub rate: CompiledExpr,
    /// `(species, copies)` required to fire.
    pub consumed: Vec<(usize, u32)>,
    /// Non-zero net change per species.
    pub delta: Vec<(usize, i64)>,
    /// Species the rate law reads.
    pub reads: Vec<usize>,
}

impl Channel {
    #[inline]
    pub fn feasible(&self, state: &[f64]) -> bool {
        self.consumed.iter().all(|&(s, k)| state[s] >= f64::from(k))
    }
}

/// Engine-facing form of a [`ModelSpec`]: reactions first, then influxes.
#[derive(Debug, Clone)]
pub struct Network {
    pub species: Vec<String>,
    pub channels: Vec<Channel>,
}

impl Network {
    fn new(m: &ModelSpec) -> Result<Self, ModelError> {
        let resolve = |name: &str| {
            m.species_index(name)
                .map(Slot::Var)
                .or_else(|| m.param(name).map(Slot::Const))
        };
        let reads = |e: &Expr| -> Vec<usize> { e.free_symbols().iter().filter_map(|s| m.species_index(s)).collect() };
        let idx = |s: &str| m.species_index(s).expect("validated species");
        let mut channels = Vec::with_capacity(m.reactions.len() + m.influxes.len());
        for (i, r) in m.reactions.iter().enumerate() {
            let rate = r.rate.compile(resolve).map_err(|source| ModelError::Eval {
                context: r.name.clone(),
                source,
            })?;
            channels.push(Channel {
                name: r.name.clone(),
                kind: ChannelKind::Reaction(i),
                rate,
                consumed: r.consumed.iter().map(|(s, k)| (idx(s), *k)).collect(),
                delta: r.net_change().iter().map(|(s, k)| (idx(s), *k)).collect(),
                reads: reads(&r.rate),
            });
        }
        for (i, inf) in m.influxes.iter().enumerate() {
            let rate = inf.rate.compile(resolve).map_err(|source| ModelError::Eval {
                context: format!("influx {}", inf.species),
                source,
            })?;
            channels.push(Channel {
                name: format!("influx_{}", inf.species),
                kind: ChannelKind::Influx(i),
                rate,
                consumed: Vec::new(),
                delta: vec![(idx(&inf.species), 1)],
                reads: reads(&inf.rate),
            });
        }
        Ok(Network {
            species: m.species_names(),
            channels,
        })
    }

    /// Signed rate law value; errors if it is not finite.
    #[inline]
    pub fn rate(&self, channel: usize, state: &[f64]) -> Result<f64, ModelError> {
        let v = self.channels[channel].rate.eval(state);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::Eval {
                context: self.channels[channel].name.clone(),
                source: ExprError::NonFinite,
            })
        }
    }

    /// Stochastic propensity: zero when the channel cannot fire, otherwise the
    /// rate clamped at zero.
    #[inline]
    pub fn propensity(&self, channel: usize, state: &[f64]) -> Result<f64, ModelError> {
        if !self.channels[channel].feasible(state) {
            return Ok(0.0);
        }
        Ok(self.rate(channel, state)?.max(0.0))
    }

    /// ODE right-hand side written into `out`.
    pub fn derivative(&self, state: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, ch) in self.channels.iter().enumerate() {
            let rate = self.rate(c, state)?;
            for &(s, k) in &ch.delta {
                out[s] += k as f64 * rate;
            }
        }
        Ok(())
    }

    /// Species whose count changes when `channel` fires.
    pub fn changed_species(&self, channel: usize) -> impl Iterator<Item = usize> + '_ {
        self.channels[channel].delta.iter().map(|&(s, _)| s)
    }
}
