//! Deterministic trajectories with the Dormand-Prince 5(4) pair.
//!
//! Steps are controlled with the PI controller of Hairer, Norsett and Wanner
//! and the solution is sampled onto the model's grid with the pair's
//! fourth-order continuous extension.

use thiserror::Error;

use crate::model::{ModelError, ModelSpec};
use crate::scalar::Real;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step budget of {max_steps} exhausted at t = {time}")]
    MaxSteps { max_steps: u64, time: f64 },
    #[error("step size underflow at t = {time} (problem may be stiff)")]
    StepUnderflow { time: f64 },
    #[error("non-finite derivative or state at t = {time}")]
    NonFinite { time: f64 },
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig<F = f64> {
    pub rtol: F,
    pub atol: F,
    pub initial_step: F,
    /// Upper bound on the step; `None` means the sampling interval.
    pub max_step: Option<F>,
    pub max_steps: u64,
}

impl<F: Real> Default for IntegratorConfig<F> {
    fn default() -> Self {
        Self {
            rtol: F::lit(1e-6),
            atol: F::lit(1e-9),
            initial_step: F::lit(1e-3),
            max_step: None,
            max_steps: 10_000_000,
        }
    }
}

impl<F: Real> IntegratorConfig<F> {
    pub fn validate(&self) -> Result<(), OdeError> {
        let positive = |v: F| v > F::zero() && v.is_finite();
        if !(positive(self.rtol) && positive(self.atol) && positive(self.initial_step)) {
            return Err(OdeError::Config("tolerances and initial step must be positive".into()));
        }
        if self.rtol < F::lit(1e-14) {
            return Err(OdeError::Config("rtol must be at least 1e-14".into()));
        }
        if matches!(self.max_step, Some(h) if !positive(h)) || self.max_steps == 0 {
            return Err(OdeError::Config("max_step and max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// A first-order system `y' = f(t, y)`.
pub trait OdeSystem<F> {
    fn dim(&self) -> usize;
    fn rhs(&self, t: F, y: &[F], dy: &mut [F]) -> Result<(), OdeError>;
}

/// Adapts a closure into an [`OdeSystem`].
pub struct FnSystem<G> {
    dim: usize,
    f: G,
}

impl<G> FnSystem<G> {
    pub fn new(dim: usize, f: G) -> Self {
        Self { dim, f }
    }
}

impl<F, G> OdeSystem<F> for FnSystem<G>
where
    G: Fn(F, &[F], &mut [F]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: F, y: &[F], dy: &mut [F]) -> Result<(), OdeError> {
        (self.f)(t, y, dy);
        Ok(())
    }
}

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Difference between the fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

/// Counters from one integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

struct Stages<F> {
    k: [Vec<F>; 7],
    tmp: Vec<F>,
    y_new: Vec<F>,
}

impl<F: Real> Stages<F> {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![F::zero(); n]),
            tmp: vec![F::zero(); n],
            y_new: vec![F::zero(); n],
        }
    }

    /// Computes stages 2..7 given `k[0] = f(t, y)`; the fifth-order solution
    /// lands in `y_new` and `k[6] = f(t + h, y_new)`.
    fn step<S: OdeSystem<F>>(&mut self, sys: &S, t: F, y: &[F], h: F) -> Result<(), OdeError> {
        let n = y.len();
        let c = F::lit;
        let rows: [(&[f64], f64); 5] = [
            (&[A21], C2),
            (&[A31, A32], C3),
            (&[A41, A42, A43], C4),
            (&[A51, A52, A53, A54], C5),
            (&[A61, A62, A63, A64, A65], 1.0),
        ];
        for (stage, (coeffs, cs)) in rows.iter().enumerate() {
            for i in 0..n {
                let mut acc = F::zero();
                for (j, a) in coeffs.iter().enumerate() {
                    acc = acc + c(*a) * self.k[j][i];
                }
                self.tmp[i] = y[i] + h * acc;
            }
            sys.rhs(t + c(*cs) * h, &self.tmp, &mut self.k[stage + 1])?;
        }
        for i in 0..n {
            let k = &self.k;
            self.y_new[i] = y[i]
                + h * (c(A71) * k[0][i] + c(A73) * k[2][i] + c(A74) * k[3][i] + c(A75) * k[4][i] + c(A76) * k[5][i]);
        }
        sys.rhs(t + h, &self.y_new, &mut self.k[6])
    }

    fn error_norm(&self, y: &[F], h: F, rtol: F, atol: F) -> F {
        let c = F::lit;
        let k = &self.k;
        let mut sum = F::zero();
        for i in 0..y.len() {
            let e = h
                * (c(E1) * k[0][i]
                    + c(E3) * k[2][i]
                    + c(E4) * k[3][i]
                    + c(E5) * k[4][i]
                    + c(E6) * k[5][i]
                    + c(E7) * k[6][i]);
            let sc = atol + rtol * y[i].abs().max(self.y_new[i].abs());
            let r = e / sc;
            sum = sum + r * r;
        }
        (sum / F::from_usize(y.len().max(1)).expect("usize")).sqrt()
    }
}

/// Dense-output coefficients for one accepted step.
struct Dense<F> {
    t0: F,
    h: F,
    r: [Vec<F>; 5],
}

impl<F: Real> Dense<F> {
    fn new(n: usize) -> Self {
        Self {
            t0: F::zero(),
            h: F::one(),
            r: std::array::from_fn(|_| vec![F::zero(); n]),
        }
    }

    fn build(&mut self, t0: F, h: F, y0: &[F], st: &Stages<F>) {
        let c = F::lit;
        let k = &st.k;
        self.t0 = t0;
        self.h = h;
        for i in 0..y0.len() {
            let ydiff = st.y_new[i] - y0[i];
            let bspl = h * k[0][i] - ydiff;
            self.r[0][i] = y0[i];
            self.r[1][i] = ydiff;
            self.r[2][i] = bspl;
            self.r[3][i] = ydiff - h * k[6][i] - bspl;
            self.r[4][i] = h
                * (c(D1) * k[0][i]
                    + c(D3) * k[2][i]
                    + c(D4) * k[3][i]
                    + c(D5) * k[4][i]
                    + c(D6) * k[5][i]
                    + c(D7) * k[6][i]);
        }
    }

    fn eval(&self, t: F, out: &mut [F]) {
        let theta = (t - self.t0) / self.h;
        let theta1 = F::one() - theta;
        for (i, o) in out.iter_mut().enumerate() {
            let r = &self.r;
            *o = r[0][i] + theta * (r[1][i] + theta1 * (r[2][i] + theta * (r[3][i] + theta1 * r[4][i])));
        }
    }
}

/// Adaptive Dormand-Prince 5(4) integrator.
#[derive(Debug, Clone)]
pub struct DormandPrince<F = f64> {
    config: IntegratorConfig<F>,
}

impl<F: Real> DormandPrince<F> {
    pub fn new(config: IntegratorConfig<F>) -> Result<Self, OdeError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &IntegratorConfig<F> {
        &self.config
    }

    /// Integrates from `t = 0` and reports the state at `k * dt` for
    /// `k = 0..n_samples`. Values in `(-atol, 0)` are reported as zero.
    pub fn solve_grid<S, G>(
        &self,
        sys: &S,
        y0: &[F],
        dt: F,
        n_samples: usize,
        mut on_sample: G,
    ) -> Result<SolveStats, OdeError>
    where
        S: OdeSystem<F>,
        G: FnMut(usize, &[F]),
    {
        let cfg = &self.config;
        let n = sys.dim();
        assert_eq!(y0.len(), n, "initial state has wrong dimension");
        let mut stats = SolveStats::default();
        let mut sample = y0.to_vec();
        let mut report = |k: usize, values: &mut [F]| -> Result<(), OdeError> {
            for v in values.iter_mut() {
                if !v.is_finite() {
                    return Err(OdeError::NonFinite {
                        time: (F::from_usize(k).expect("usize") * dt).to_f64_lossy(),
                    });
                }
                if *v < F::zero() && *v > -cfg.atol {
                    *v = F::zero();
                }
            }
            on_sample(k, values);
            Ok(())
        };
        if n_samples == 0 {
            return Ok(stats);
        }
        report(0, &mut sample)?;
        if n_samples == 1 {
            return Ok(stats);
        }
        let grid = |k: usize| F::from_usize(k).expect("usize") * dt;
        let t_end = grid(n_samples - 1);
        let h_max = cfg.max_step.unwrap_or(dt);

        let mut st = Stages::new(n);
        let mut dense = Dense::new(n);
        let mut y = y0.to_vec();
        let mut t = F::zero();
        sys.rhs(t, &y, &mut st.k[0])?;
        stats.rhs_evals += 1;
        let mut h = cfg.initial_step.min(h_max);
        let mut fac_old = F::lit(1e-4);
        let mut next = 1usize;
        let expo = F::lit(0.2 - BETA * 0.75);
        let eps = F::epsilon();

        while next < n_samples {
            if stats.accepted + stats.rejected >= cfg.max_steps {
                return Err(OdeError::MaxSteps {
                    max_steps: cfg.max_steps,
                    time: t.to_f64_lossy(),
                });
            }
            if h * F::lit(0.1) <= eps * t.abs() || h <= F::min_positive_value() {
                return Err(OdeError::StepUnderflow { time: t.to_f64_lossy() });
            }
            let last = t + h >= t_end - F::lit(8.0) * eps * t_end.abs();
            if last {
                h = t_end - t;
            }
            st.step(sys, t, &y, h)?;
            stats.rhs_evals += 6;
            if st.y_new.iter().chain(st.k[6].iter()).any(|v| !v.is_finite()) {
                return Err(OdeError::NonFinite { time: t.to_f64_lossy() });
            }
            let err = st.error_norm(&y, h, cfg.rtol, cfg.atol);
            let fac11 = err.powf(expo);
            let negative = st.y_new.iter().any(|v| *v < -cfg.atol);
            if err <= F::one() && !negative {
                stats.accepted += 1;
                let t_new = if last { t_end } else { t + h };
                dense.build(t, h, &y, &st);
                while next < n_samples && grid(next) <= t_new {
                    if grid(next) == t_new || (last && next == n_samples - 1) {
                        sample.copy_from_slice(&st.y_new);
                    } else {
                        dense.eval(grid(next), &mut sample);
                    }
                    report(next, &mut sample)?;
                    next += 1;
                }
                y.copy_from_slice(&st.y_new);
                let (first, rest) = st.k.split_at_mut(6);
                first[0].copy_from_slice(&rest[0]);
                t = t_new;
                let fac = (fac11 / fac_old.powf(F::lit(BETA)) / F::lit(SAFETY))
                    .max(F::lit(1.0 / FAC_MAX))
                    .min(F::lit(1.0 / FAC_MIN));
                fac_old = err.max(F::lit(1e-4));
                h = (h / fac).min(h_max);
            } else {
                stats.rejected += 1;
                h = if negative {
                    h / F::two()
                } else {
                    h / (fac11 / F::lit(SAFETY)).min(F::lit(1.0 / FAC_MIN))
                };
            }
        }
        Ok(stats)
    }

    /// Fixed-step fifth-order integration to `t_end` with `steps` equal
    /// steps; no error control. Used for convergence-order checks.
    pub fn solve_fixed<S: OdeSystem<F>>(sys: &S, y0: &[F], t_end: F, steps: usize) -> Result<Vec<F>, OdeError> {
        let n = sys.dim();
        let h = t_end / F::from_usize(steps).expect("usize");
        let mut st = Stages::new(n);
        let mut y = y0.to_vec();
        let mut t = F::zero();
        for _ in 0..steps {
            sys.rhs(t, &y, &mut st.k[0])?;
            st.step(sys, t, &y, h)?;
            y.copy_from_slice(&st.y_new);
            t = t + h;
        }
        Ok(y)
    }
}

/// Integrates a model on its own horizon and sampling grid.
pub fn integrate(m: &ModelSpec, config: &IntegratorConfig<f64>) -> Result<Trajectory, OdeError> {
    let net = m.network()?;
    let solver = DormandPrince::new(config.clone())?;
    let dim = m.species().len();
    let n = Trajectory::grid_len(m.horizon(), m.sample_interval());
    let mut out = Trajectory::new(m.species_names(), m.sample_interval());
    struct ModelSystem<'a>(&'a crate::model::Network, usize);
    impl OdeSystem<f64> for ModelSystem<'_> {
        fn dim(&self) -> usize {
            self.1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), OdeError> {
            self.0.derivative(y, dy).map_err(OdeError::from)
        }
    }
    solver.solve_grid(
        &ModelSystem(&net, dim),
        &m.initial_state(),
        m.sample_interval(),
        n,
        |_, row| out.push(row.to_vec()),
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model;

    fn logistic(t: f64, t0: f64, a: f64, k: f64) -> f64 {
        let e = (a * t).exp();
        k * t0 * e / (k + t0 * (e - 1.0))
    }

    fn logistic_model() -> ModelSpec {
        load_model(
            "species T = 100\nparam a = 1.636\nparam b = 0.002\n\
             reaction growth: T -> 2 T @ a*T*(1-b*T)\nhorizon 100\nsample 0.1\n",
        )
        .unwrap()
    }

    #[test]
    fn logistic_matches_closed_form() {
        let traj = integrate(&logistic_model(), &IntegratorConfig::default()).unwrap();
        assert_eq!(traj.len(), 1001);
        let mut worst: f64 = 0.0;
        for (t, row) in traj.times().iter().zip(traj.rows()) {
            let exact = logistic(*t, 100.0, 1.636, 500.0);
            worst = worst.max(((row[0] - exact) / exact).abs());
        }
        assert!(worst <= 1e-6, "max relative error {worst}");
        assert!((traj.last_row().unwrap()[0] - 500.0).abs() < 1e-6);
    }

    #[test]
    fn empty_model_is_constant() {
        let m = load_model("species X = 3\nspecies Y = 0.5\nhorizon 2\n").unwrap();
        let traj = integrate(&m, &IntegratorConfig::default()).unwrap();
        assert!(traj.rows().iter().all(|r| r == &vec![3.0, 0.5]));
    }

    #[test]
    fn deterministic_bitwise() {
        let a = integrate(&logistic_model(), &IntegratorConfig::default()).unwrap();
        let b = integrate(&logistic_model(), &IntegratorConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_step_is_fifth_order() {
        let sys = FnSystem::new(1, |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = 1.636 * y[0] * (1.0 - 0.002 * y[0]);
        });
        let exact = logistic(5.0, 100.0, 1.636, 500.0);
        let err = |steps| {
            let y = DormandPrince::solve_fixed(&sys, &[100.0], 5.0, steps).unwrap();
            (y[0] - exact).abs()
        };
        let coarse = err(10);
        let fine = err(100);
        let order = (coarse / fine).log10();
        assert!((4.5..5.6).contains(&order), "observed order {order}");
    }

    #[test]
    fn tighter_tolerance_changes_little() {
        let m = logistic_model();
        let loose = integrate(
            &m,
            &IntegratorConfig {
                max_step: Some(5.0),
                ..Default::default()
            },
        )
        .unwrap();
        let tight = integrate(
            &m,
            &IntegratorConfig {
                rtol: 1e-8,
                atol: 1e-11,
                max_step: Some(5.0),
                ..Default::default()
            },
        )
        .unwrap();
        let diff = loose
            .rows()
            .iter()
            .zip(tight.rows())
            .map(|(a, b)| (a[0] - b[0]).abs() / b[0])
            .fold(0.0, f64::max);
        // Well within ten times the loose tolerance.
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn single_precision_solver() {
        let sys = FnSystem::new(1, |_t: f32, y: &[f32], dy: &mut [f32]| dy[0] = -y[0]);
        let cfg = IntegratorConfig::<f32> {
            rtol: 1e-5,
            atol: 1e-6,
            ..Default::default()
        };
        let solver = DormandPrince::new(cfg).unwrap();
        let mut last = 0.0;
        solver.solve_grid(&sys, &[1.0f32], 0.5, 3, |_, y| last = y[0]).unwrap();
        assert!((last - (-1.0f32).exp()).abs() < 1e-4);
    }

    #[test]
    fn step_budget_is_enforced() {
        let cfg = IntegratorConfig {
            max_steps: 3,
            ..Default::default()
        };
        let err = integrate(&logistic_model(), &cfg).unwrap_err();
        assert!(matches!(err, OdeError::MaxSteps { max_steps: 3, .. }));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = IntegratorConfig {
            rtol: 1e-16,
            ..Default::default()
        };
        assert!(matches!(DormandPrince::new(cfg), Err(OdeError::Config(_))));
    }
}
