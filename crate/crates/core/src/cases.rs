//! Built-in models: a density-dependent growth demo and the three
//! tumour–immune case studies, as reaction networks and as agent worlds.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::abm::{AbmConfig, AbmError, AbmInflux, AbmTransition, AbmWorld, AgentClass, Effect};
use crate::model::{load_model, ModelError, ModelSpec};

const GROWTH_DEMO: &str = include_str!("../models/growth_demo.model");
const CASE1: &str = include_str!("../models/case1.model");
const CASE2: &str = include_str!("../models/case2.model");
const CASE3: &str = include_str!("../models/case3.model");

/// `(b, d, s)` for the four treatment scenarios of case 1.
#[allow(clippy::approx_constant)]
pub const CASE1_SCENARIOS: [(f64, f64, f64); 4] = [
    (0.002, 0.1908, 0.318),
    (0.004, 2.0, 0.318),
    (0.002, 0.3743, 0.1181),
    (0.002, 0.3743, 0.0),
];

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("unknown model `{0}` (expected growth_demo, case1, case2 or case3)")]
    UnknownCase(String),
    #[error("scenario {0} is not defined (case1 has scenarios 1 to 4)")]
    InvalidScenario(u8),
    #[error("only case1 has scenarios")]
    ScenarioNotApplicable,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Abm(#[from] AbmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseStudyId {
    GrowthDemo,
    Case1 { scenario: u8 },
    Case2,
    Case3,
}

impl CaseStudyId {
    pub const ALL: [CaseStudyId; 7] = [
        CaseStudyId::GrowthDemo,
        CaseStudyId::Case1 { scenario: 1 },
        CaseStudyId::Case1 { scenario: 2 },
        CaseStudyId::Case1 { scenario: 3 },
        CaseStudyId::Case1 { scenario: 4 },
        CaseStudyId::Case2,
        CaseStudyId::Case3,
    ];

    /// Resolves a model name plus optional scenario number.
    pub fn resolve(name: &str, scenario: Option<u8>) -> Result<Self, CaseError> {
        let id = match name {
            "growth_demo" | "growth" => CaseStudyId::GrowthDemo,
            "case1" => CaseStudyId::Case1 {
                scenario: scenario.unwrap_or(1),
            },
            "case2" => CaseStudyId::Case2,
            "case3" => CaseStudyId::Case3,
            other => return Err(CaseError::UnknownCase(other.to_string())),
        };
        match (id, scenario) {
            (CaseStudyId::Case1 { scenario }, _) if !(1..=4).contains(&scenario) => {
                Err(CaseError::InvalidScenario(scenario))
            }
            (CaseStudyId::Case1 { .. }, _) | (_, None) => Ok(id),
            (_, Some(_)) => Err(CaseError::ScenarioNotApplicable),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CaseStudyId::GrowthDemo => "growth_demo",
            CaseStudyId::Case1 { .. } => "case1",
            CaseStudyId::Case2 => "case2",
            CaseStudyId::Case3 => "case3",
        }
    }

    pub fn scenario(&self) -> Option<u8> {
        match self {
            CaseStudyId::Case1 { scenario } => Some(*scenario),
            _ => None,
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            CaseStudyId::GrowthDemo => "tumour growth with power-law birth and death",
            CaseStudyId::Case1 { .. } => "tumour and effector cells with effector supply",
            CaseStudyId::Case2 => "tumour, effector cells and IL-2",
            CaseStudyId::Case3 => "tumour, effector cells, IL-2 and TGF-beta",
        }
    }

    fn source(&self) -> &'static str {
        match self {
            CaseStudyId::GrowthDemo => GROWTH_DEMO,
            CaseStudyId::Case1 { .. } => CASE1,
            CaseStudyId::Case2 => CASE2,
            CaseStudyId::Case3 => CASE3,
        }
    }
}

impl fmt::Display for CaseStudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseStudyId::Case1 { scenario } => write!(f, "case1 scenario {scenario}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for CaseStudyId {
    type Err = CaseError;

    /// Accepts `case1`, `case1:3`, `case2`, `case3`, `growth_demo`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((name, sc)) => {
                let scenario = sc.parse::<u8>().map_err(|_| CaseError::UnknownCase(s.to_string()))?;
                CaseStudyId::resolve(name, Some(scenario))
            }
            None => CaseStudyId::resolve(s, None),
        }
    }
}

/// Text of the shipped model file.
pub fn model_source(id: CaseStudyId) -> &'static str {
    id.source()
}

/// Fully parameterised reaction model of a case study, with overrides
/// applied after the scenario values.
pub fn builtin_model<S: AsRef<str>>(id: CaseStudyId, overrides: &[(S, f64)]) -> Result<ModelSpec, CaseError> {
    let mut m = load_model(id.source())?;
    if let CaseStudyId::Case1 { scenario } = id {
        let (b, d, s) = *CASE1_SCENARIOS
            .get(usize::from(scenario).wrapping_sub(1))
            .ok_or(CaseError::InvalidScenario(scenario))?;
        m = m.with_overrides(&[("b", b), ("d", d), ("s", s)])?;
    }
    Ok(m.with_overrides(overrides)?)
}

fn branch() -> Effect {
    Effect::Branch {
        positive: Box::new(Effect::Clone),
        negative: Box::new(Effect::Die),
    }
}

fn tr(name: &str, rate: &str, effect: Effect) -> AbmTransition {
    AbmTransition::new(name, "alive", rate, effect).expect("built-in rate parses")
}

fn spawn(class: &str) -> Effect {
    Effect::Spawn {
        class: class.into(),
        count: 1,
    }
}

fn kill(target: &str) -> Effect {
    Effect::SendKill { target: target.into() }
}

/// Agent classes of a case study. Class order follows the species order of
/// the reaction model, so aggregate vectors line up with model states.
pub fn agent_classes(id: CaseStudyId) -> Vec<AgentClass> {
    let tumour = AgentClass::alive_dead("Tumour", "T");
    let effector = AgentClass::alive_dead("Effector", "E");
    match id {
        CaseStudyId::GrowthDemo => vec![tumour.with(tr("growth", "a*TotalTumour^alpha-b*TotalTumour^beta", branch()))],
        CaseStudyId::Case1 { .. } => vec![
            tumour
                .with(tr("growth", "a-a*b*TotalTumour", branch()))
                .with(tr("killed_by_effector", "n*TotalEffector", Effect::Die))
                .with(tr("damage_effector", "m*TotalEffector", kill("Effector"))),
            effector
                .with(tr("proliferate", "p*TotalTumour/(g+TotalTumour)", Effect::Clone))
                .with(tr("die", "d", Effect::Die)),
        ],
        CaseStudyId::Case2 => vec![
            tumour.with(tr("growth", "a-a*b*TotalTumour", branch())).with(tr(
                "recruit_effector",
                "c",
                spawn("Effector"),
            )),
            effector
                .with(tr("proliferate", "p1*TotalIL2/(g1+TotalIL2)", Effect::Clone))
                .with(tr("die", "mu2", Effect::Die))
                .with(tr("kill_tumour", "aa*TotalTumour/(g2+TotalTumour)", kill("Tumour")))
                .with(tr("produce_il2", "p2*TotalTumour/(g3+TotalTumour)", spawn("IL2"))),
            AgentClass::alive_dead("IL2", "I").with(tr("decay", "mu3", Effect::Die)),
        ],
        CaseStudyId::Case3 => vec![
            tumour
                .with(tr("growth", "a-a*TotalTumour/K", branch()))
                .with(tr(
                    "produce_tgf",
                    "p4*TotalTumour/(theta^2+TotalTumour^2)",
                    spawn("TGF"),
                ))
                .with(tr("recruit_effector", "c/(1+gamma*TotalTGF)", spawn("Effector")))
                .with(tr("stimulated_growth", "p2*TotalTGF/(g3+TotalTGF)", Effect::Clone)),
            effector
                .with(tr(
                    "proliferate",
                    "p1*TotalIL2/(g1+TotalIL2)*(p1-q1*TotalTGF/(q2+TotalTGF))",
                    Effect::Clone,
                ))
                .with(tr("die", "mu1", Effect::Die))
                .with(tr(
                    "produce_il2",
                    "p3*TotalTumour/((g4+TotalTumour)*(1+alpha*TotalTGF))",
                    spawn("IL2"),
                ))
                .with(tr("kill_tumour", "aa*TotalTumour/(g2+TotalTumour)", kill("Tumour"))),
            AgentClass::alive_dead("IL2", "I").with(tr("decay", "mu2", Effect::Die)),
            AgentClass::alive_dead("TGF", "S").with(tr("decay", "mu3", Effect::Die)),
        ],
    }
}

/// Agent world of a case study. Parameters and initial populations come from
/// [`builtin_model`] with the same overrides, so both representations stay
/// in step.
pub fn build_world<S: AsRef<str>>(
    id: CaseStudyId,
    overrides: &[(S, f64)],
    config: AbmConfig,
) -> Result<AbmWorld, CaseError> {
    let model = builtin_model(id, overrides)?;
    world_from_model(id, &model, config)
}

/// Agent world using the parameters and initial amounts of `model`, which
/// must be (a variant of) the built-in model of `id`.
pub fn world_from_model(id: CaseStudyId, model: &ModelSpec, config: AbmConfig) -> Result<AbmWorld, CaseError> {
    let classes = agent_classes(id);
    let influxes = model
        .influxes()
        .iter()
        .map(|inf| {
            let class = classes
                .iter()
                .find(|c| c.species == inf.species)
                .ok_or_else(|| AbmError::UnknownClass(inf.species.clone()))?;
            Ok(AbmInflux {
                class: class.name.clone(),
                rate: inf.rate.clone(),
            })
        })
        .collect::<Result<Vec<_>, AbmError>>()?;
    let mut world = AbmWorld::new(classes.clone(), model.params().to_vec(), influxes, config)?;
    for class in &classes {
        let decl = model
            .species()
            .iter()
            .find(|s| s.name == class.species)
            .ok_or_else(|| AbmError::UnknownClass(class.species.clone()))?;
        if decl.initial.fract() != 0.0 {
            return Err(AbmError::Invalid(format!("initial amount of `{}` is not an integer", decl.name)).into());
        }
        world.set_population(&class.name, decl.initial as u64)?;
    }
    Ok(world)
}

/// How an agent transition reproduces reaction rate laws: per-agent rate
/// times the number of agents of `class` equals the sum of `sign * rate`
/// over `reactions`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateLink {
    pub class: &'static str,
    pub transition: &'static str,
    pub reactions: Vec<(&'static str, f64)>,
}

fn link(class: &'static str, transition: &'static str, reactions: &[(&'static str, f64)]) -> RateLink {
    RateLink {
        class,
        transition,
        reactions: reactions.to_vec(),
    }
}

/// Correspondence between agent transitions and reactions of a case study.
pub fn rate_links(id: CaseStudyId) -> Vec<RateLink> {
    let growth = [("tumour_birth", 1.0), ("tumour_death", -1.0)];
    match id {
        CaseStudyId::GrowthDemo => vec![link("Tumour", "growth", &[("birth", 1.0), ("death", -1.0)])],
        CaseStudyId::Case1 { .. } => vec![
            link("Tumour", "growth", &growth),
            link("Tumour", "killed_by_effector", &[("tumour_killed", 1.0)]),
            link("Tumour", "damage_effector", &[("effector_exhaustion", 1.0)]),
            link("Effector", "proliferate", &[("effector_proliferation", 1.0)]),
            link("Effector", "die", &[("effector_death", 1.0)]),
        ],
        CaseStudyId::Case2 => vec![
            link("Tumour", "growth", &growth),
            link("Tumour", "recruit_effector", &[("effector_recruitment", 1.0)]),
            link("Effector", "proliferate", &[("effector_proliferation", 1.0)]),
            link("Effector", "die", &[("effector_death", 1.0)]),
            link("Effector", "kill_tumour", &[("tumour_killed", 1.0)]),
            link("Effector", "produce_il2", &[("il2_production", 1.0)]),
            link("IL2", "decay", &[("il2_decay", 1.0)]),
        ],
        CaseStudyId::Case3 => vec![
            link("Tumour", "growth", &growth),
            link("Tumour", "produce_tgf", &[("tgf_production", 1.0)]),
            link("Tumour", "recruit_effector", &[("effector_recruitment", 1.0)]),
            link("Tumour", "stimulated_growth", &[("tumour_stimulation", 1.0)]),
            link("Effector", "proliferate", &[("effector_proliferation", 1.0)]),
            link("Effector", "die", &[("effector_death", 1.0)]),
            link("Effector", "produce_il2", &[("il2_production", 1.0)]),
            link("Effector", "kill_tumour", &[("tumour_killed", 1.0)]),
            link("IL2", "decay", &[("il2_decay", 1.0)]),
            link("TGF", "decay", &[("tgf_decay", 1.0)]),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_ids() {
        assert_eq!(
            CaseStudyId::resolve("case1", None).unwrap(),
            CaseStudyId::Case1 { scenario: 1 }
        );
        assert_eq!(
            "case1:3".parse::<CaseStudyId>().unwrap(),
            CaseStudyId::Case1 { scenario: 3 }
        );
        assert!(matches!(
            CaseStudyId::resolve("case1", Some(5)),
            Err(CaseError::InvalidScenario(5))
        ));
        assert!(matches!(
            CaseStudyId::resolve("case2", Some(1)),
            Err(CaseError::ScenarioNotApplicable)
        ));
        assert!(matches!("case9".parse::<CaseStudyId>(), Err(CaseError::UnknownCase(_))));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn case1_scenario2_parameters() {
        let m = builtin_model::<&str>(CaseStudyId::Case1 { scenario: 2 }, &[]).unwrap();
        for (k, v) in [
            ("b", 0.004),
            ("d", 2.0),
            ("s", 0.318),
            ("a", 1.636),
            ("g", 20.19),
            ("m", 0.00311),
            ("n", 1.0),
            ("p", 1.131),
        ] {
            assert_eq!(m.param(k), Some(v), "{k}");
        }
        assert_eq!(m.horizon(), 100.0);
    }

    #[test]
    fn case2_parameters_and_shape() {
        let m = builtin_model::<&str>(CaseStudyId::Case2, &[]).unwrap();
        let expected = [
            ("a", 0.18),
            ("b", 1e-9),
            ("c", 0.05),
            ("aa", 1.0),
            ("g2", 1e5),
            ("s1", 0.0),
            ("s2", 0.0),
            ("mu2", 0.03),
            ("p1", 0.1245),
            ("g1", 2e7),
            ("p2", 5.0),
            ("g3", 1000.0),
            ("mu3", 10.0),
        ];
        assert_eq!(m.params().len(), expected.len());
        for (k, v) in expected {
            assert_eq!(m.param(k), Some(v), "{k}");
        }
        assert_eq!(m.species().len(), 3);
        assert_eq!(m.reactions().len(), 8);
        assert_eq!(m.influxes().len(), 2);
        assert_eq!(m.horizon(), 600.0);
    }

    #[test]
    fn case3_parameters() {
        let m = builtin_model::<&str>(CaseStudyId::Case3, &[]).unwrap();
        assert_eq!(m.params().len(), 20);
        for (k, v) in [
            ("p4", 2.84),
            ("theta", 1e6),
            ("q1", 10.0),
            ("q2", 0.1121),
            ("gamma", 10.0),
            ("alpha", 0.001),
            ("K", 1e9),
        ] {
            assert_eq!(m.param(k), Some(v), "{k}");
        }
        let wide = builtin_model(CaseStudyId::Case3, &[("K", 1e10)]).unwrap();
        assert_eq!(wide.param("K"), Some(1e10));
    }

    #[test]
    fn builtin_models_round_trip_through_text() {
        for id in CaseStudyId::ALL {
            let m = builtin_model::<&str>(id, &[]).unwrap();
            let again = load_model(&m.to_string()).unwrap();
            assert_eq!(again.to_string(), m.to_string(), "{id}");
            assert_eq!(again.content_hash(), m.content_hash());
        }
    }

    #[test]
    fn unknown_override_rejected() {
        assert!(matches!(
            builtin_model(CaseStudyId::Case2, &[("zeta", 1.0)]),
            Err(CaseError::Model(ModelError::UnknownOverride(_)))
        ));
        assert!(build_world(CaseStudyId::Case2, &[("zeta", 1.0)], AbmConfig::default()).is_err());
    }

    #[test]
    fn worlds_build_with_model_populations() {
        for id in CaseStudyId::ALL {
            let m = builtin_model::<&str>(id, &[]).unwrap();
            let w = build_world::<&str>(id, &[], AbmConfig::default()).unwrap();
            let species: Vec<String> = w.classes().iter().map(|c| c.species.clone()).collect();
            assert_eq!(species, m.species_names(), "{id}");
            assert_eq!(w.totals(), m.initial_state(), "{id}");
            assert_eq!(w.influxes().len(), m.influxes().len());
        }
    }

    #[test]
    fn tumour_branch_matches_growth_terms() {
        let w = build_world::<&str>(CaseStudyId::Case1 { scenario: 1 }, &[], AbmConfig::default()).unwrap();
        // a - a*b*T at T = 600 with a = 1.636, b = 0.002
        let r = w.transition_rate("Tumour", "growth", &[600.0, 0.0]).unwrap();
        assert!((r - (1.636 - 1.636 * 0.002 * 600.0)).abs() < 1e-12);
        let w2 = build_world::<&str>(CaseStudyId::Case2, &[], AbmConfig::default()).unwrap();
        let k = w2.transition_rate("Effector", "kill_tumour", &[1e5, 1.0, 0.0]).unwrap();
        assert!((k - 0.5).abs() < 1e-15);
    }

    #[test]
    fn every_reaction_is_linked() {
        for id in CaseStudyId::ALL {
            let m = builtin_model::<&str>(id, &[]).unwrap();
            let mut linked: Vec<&str> = rate_links(id)
                .iter()
                .flat_map(|l| l.reactions.iter().map(|(r, _)| *r))
                .collect();
            linked.sort_unstable();
            let mut names: Vec<&str> = m.reactions().iter().map(|r| r.name.as_str()).collect();
            names.sort_unstable();
            assert_eq!(linked, names, "{id}");
        }
    }
}
