//! Tumour–immune simulation workbench: one reaction-network model description
//! driving an adaptive ODE integrator, exact stochastic simulation and a
//! discrete-time agent-based engine, plus the statistics used to compare
//! their ensembles.

pub mod abm;
pub mod cases;
pub mod ensemble;
pub mod expr;
pub mod model;
pub mod ode;
pub mod rng;
pub mod scalar;
pub mod ssa;
pub mod stats;
pub mod trajectory;

pub use abm::{abm_step, simulate_abm, AbmConfig, AbmError, AbmWorld, AgentClass, Effect};
pub use cases::{build_world, builtin_model, CaseError, CaseStudyId};
pub use ensemble::{load_ensemble, run_ensemble, Engine, EnsembleError, EnsembleSpec, Manifest, ModelSource, RunSpec};
pub use expr::{Bindings, Expr, ExprError};
pub use model::{load_model, ModelError, ModelSpec, Network};
pub use ode::{integrate, DormandPrince, IntegratorConfig, OdeError};
pub use scalar::Real;
pub use ssa::{simulate, simulate_direct, simulate_next_reaction, SsaConfig, SsaError, SsaMethod};
pub use stats::{
    detect_extrema, extinction_fraction, fit_curve, two_stage_compare, wilcoxon_rank_sum, ComparisonReport,
    CurveFamily, ExtremaKind, ExtremaSequence, FitResult, StatsError,
};
pub use trajectory::{Trajectory, TrajectoryError};

/// Double-precision Dormand–Prince solver.
pub type Solver = DormandPrince<f64>;

/// Double-precision curve fit.
pub type Fit = FitResult<f64>;
