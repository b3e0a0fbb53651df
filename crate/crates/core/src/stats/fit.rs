use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::StatsError;
use crate::scalar::Real;

/// Curve families used for extrema sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CurveFamily {
    /// `5 / (a (t + b))`
    Reciprocal5,
    /// `c + a (t - b)^2`
    ParabUp,
    /// `c - a (t - b)^2`
    ParabDown,
    /// `c0 + a (t - b)^2` with `c0` fixed
    ParabAnchored { c0: f64 },
    /// `a (t - b)^2`
    ParabZero,
}

impl CurveFamily {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            CurveFamily::Reciprocal5 | CurveFamily::ParabAnchored { .. } | CurveFamily::ParabZero => &["a", "b"],
            CurveFamily::ParabUp | CurveFamily::ParabDown => &["a", "b", "c"],
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    pub fn eval<F: Real>(&self, t: F, p: &[F]) -> F {
        match self {
            CurveFamily::Reciprocal5 => F::lit(5.0) / (p[0] * (t + p[1])),
            CurveFamily::ParabUp => p[2] + p[0] * (t - p[1]).powi(2),
            CurveFamily::ParabDown => p[2] - p[0] * (t - p[1]).powi(2),
            CurveFamily::ParabAnchored { c0 } => F::lit(*c0) + p[0] * (t - p[1]).powi(2),
            CurveFamily::ParabZero => p[0] * (t - p[1]).powi(2),
        }
    }

    /// Starting values from a linearised least-squares fit: a quadratic in
    /// `t` for the parabolas, a line through `(t, 5/y)` for the reciprocal.
    pub fn initial_guess(&self, points: &[(f64, f64)]) -> Vec<f64> {
        let fallback = match self {
            CurveFamily::ParabUp | CurveFamily::ParabDown => vec![1e-3, 0.0, 0.0],
            _ => vec![1e-3, 0.0],
        };
        match self {
            CurveFamily::Reciprocal5 => {
                let lin: Vec<(f64, f64)> = points
                    .iter()
                    .filter(|p| p.1 != 0.0)
                    .map(|&(t, y)| (t, 5.0 / y))
                    .collect();
                match polyfit(&lin, 1) {
                    Some(c) if c[1] != 0.0 => vec![c[1], c[0] / c[1]],
                    _ => fallback,
                }
            }
            _ => {
                let Some(q) = polyfit(points, 2) else { return fallback };
                let (alpha, beta, gamma) = (q[0], q[1], q[2]);
                if gamma == 0.0 {
                    return fallback;
                }
                let b = -beta / (2.0 * gamma);
                let vertex = alpha - beta * beta / (4.0 * gamma);
                match self {
                    CurveFamily::ParabUp => vec![gamma, b, vertex],
                    CurveFamily::ParabDown => vec![-gamma, b, vertex],
                    CurveFamily::ParabAnchored { c0 } => {
                        // Refit the curvature with the vertex value pinned.
                        let num: f64 = points.iter().map(|&(t, y)| (y - c0) * (t - b).powi(2)).sum();
                        let den: f64 = points.iter().map(|&(t, _)| (t - b).powi(4)).sum();
                        vec![if den > 0.0 { num / den } else { gamma }, b]
                    }
                    _ => vec![gamma, b],
                }
            }
        }
    }
}

impl fmt::Display for CurveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurveFamily::Reciprocal5 => f.write_str("reciprocal5"),
            CurveFamily::ParabUp => f.write_str("parab_up"),
            CurveFamily::ParabDown => f.write_str("parab_down"),
            CurveFamily::ParabAnchored { c0 } => write!(f, "parab_anchored:{c0}"),
            CurveFamily::ParabZero => f.write_str("parab_zero"),
        }
    }
}

impl FromStr for CurveFamily {
    type Err = StatsError;

    /// `reciprocal5`, `parab_up`, `parab_down`, `parab_zero`,
    /// `parab_anchored:<c0>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "reciprocal5" => CurveFamily::Reciprocal5,
            "parab_up" => CurveFamily::ParabUp,
            "parab_down" => CurveFamily::ParabDown,
            "parab_zero" => CurveFamily::ParabZero,
            other => match other.strip_prefix("parab_anchored:") {
                Some(c0) => CurveFamily::ParabAnchored {
                    c0: c0
                        .parse()
                        .map_err(|_| StatsError::InvalidArgument(format!("bad anchor in `{other}`")))?,
                },
                None => return Err(StatsError::InvalidArgument(format!("unknown curve family `{other}`"))),
            },
        })
    }
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult<F = f64> {
    pub names: Vec<String>,
    pub params: Vec<F>,
    pub residual_ss: F,
    pub iterations: usize,
    pub converged: bool,
    /// `s^2 (J^T J)^-1` with `s^2 = SS / (n - p)`; absent when `n == p`.
    pub covariance: Option<Vec<Vec<F>>>,
    /// Residual sum of squares after every accepted step, starting with the
    /// initial guess.
    pub history: Vec<F>,
}

impl<F: Real> FitResult<F> {
    pub fn param(&self, name: &str) -> Option<F> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn std_errors(&self) -> Option<Vec<F>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.len()).map(|i| c[i][i].max(F::zero()).sqrt()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions<F = f64> {
    pub max_iterations: usize,
    pub initial_lambda: F,
    /// Stop when an accepted step lowers the residual sum of squares by less
    /// than this fraction.
    pub ss_tolerance: F,
    /// Stop when the gradient's largest component is below this.
    pub gradient_tolerance: F,
}

impl<F: Real> Default for LmOptions<F> {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            initial_lambda: F::lit(1e-3),
            ss_tolerance: F::lit(1e-10),
            gradient_tolerance: F::lit(1e-8),
        }
    }
}

/// Fits a curve family to `(t, y)` points starting from `init`.
pub fn fit_curve<F: Real>(family: CurveFamily, points: &[(F, F)], init: &[F]) -> Result<FitResult<F>, StatsError> {
    let names = family.param_names().iter().map(|s| s.to_string()).collect();
    levenberg_marquardt(|t, p| family.eval(t, p), points, init, names, LmOptions::default())
}

fn residual_ss<F: Real, M: Fn(F, &[F]) -> F>(model: &M, points: &[(F, F)], p: &[F]) -> F {
    points.iter().fold(F::zero(), |acc, &(t, y)| {
        let r = y - model(t, p);
        acc + r * r
    })
}

/// Central-difference Jacobian of the model at every point.
fn jacobian<F: Real, M: Fn(F, &[F]) -> F>(model: &M, points: &[(F, F)], p: &[F]) -> Vec<Vec<F>> {
    let mut shifted = p.to_vec();
    let mut jac = vec![vec![F::zero(); p.len()]; points.len()];
    for j in 0..p.len() {
        let h = F::lit(1e-6) * p[j].abs().max(F::one());
        for (row, &(t, _)) in jac.iter_mut().zip(points) {
            shifted[j] = p[j] + h;
            let up = model(t, &shifted);
            shifted[j] = p[j] - h;
            let down = model(t, &shifted);
            row[j] = (up - down) / (F::two() * h);
        }
        shifted[j] = p[j];
    }
    jac
}

/// Cholesky factorisation; `None` when a pivot is not clearly positive.
fn cholesky<F: Real>(a: &[Vec<F>]) -> Option<Vec<Vec<F>>> {
    let n = a.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(F::zero(), F::max);
    let floor = scale * F::lit(1e-12);
    let mut l = vec![vec![F::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum = sum - l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > floor) {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve<F: Real>(l: &[Vec<F>], b: &[F]) -> Vec<F> {
    let n = b.len();
    let mut y = vec![F::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![F::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s = s - l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

fn inverse_from_cholesky<F: Real>(l: &[Vec<F>]) -> Vec<Vec<F>> {
    let n = l.len();
    let mut inv = vec![vec![F::zero(); n]; n];
    for j in 0..n {
        let mut e = vec![F::zero(); n];
        e[j] = F::one();
        let col = cholesky_solve(l, &e);
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    inv
}

/// Normal matrix `J^T J` and gradient `J^T r`.
fn normal_equations<F: Real, M: Fn(F, &[F]) -> F>(model: &M, points: &[(F, F)], p: &[F]) -> (Vec<Vec<F>>, Vec<F>) {
    let jac = jacobian(model, points, p);
    let n = p.len();
    let mut jtj = vec![vec![F::zero(); n]; n];
    let mut g = vec![F::zero(); n];
    for (row, &(t, y)) in jac.iter().zip(points) {
        let r = y - model(t, p);
        for i in 0..n {
            g[i] = g[i] + row[i] * r;
            for k in 0..n {
                jtj[i][k] = jtj[i][k] + row[i] * row[k];
            }
        }
    }
    (jtj, g)
}

/// Levenberg–Marquardt with Marquardt's diagonal scaling.
pub fn levenberg_marquardt<F: Real, M: Fn(F, &[F]) -> F>(
    model: M,
    points: &[(F, F)],
    init: &[F],
    names: Vec<String>,
    opts: LmOptions<F>,
) -> Result<FitResult<F>, StatsError> {
    let n_par = init.len();
    if points.len() < n_par {
        return Err(StatsError::InsufficientPoints {
            needed: n_par,
            got: points.len(),
        });
    }
    if init.iter().any(|v| !v.is_finite()) || points.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut p = init.to_vec();
    let mut ss = residual_ss(&model, points, &p);
    if !ss.is_finite() {
        return Err(StatsError::NonFinite);
    }
    let (mut jtj, mut g) = normal_equations(&model, points, &p);
    if cholesky(&jtj).is_none() {
        return Err(StatsError::Singular);
    }
    let mut lambda = opts.initial_lambda;
    let mut history = vec![ss];
    let mut converged = false;
    let mut iterations = 0;
    let lambda_ceiling = F::lit(1e16);

    while iterations < opts.max_iterations {
        if g.iter().fold(F::zero(), |m, v| m.max(v.abs())) < opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut damped = jtj.clone();
        for i in 0..n_par {
            damped[i][i] = jtj[i][i] * (F::one() + lambda);
        }
        let step = match cholesky(&damped) {
            Some(l) => cholesky_solve(&l, &g),
            None => return Err(StatsError::Singular),
        };
        let trial: Vec<F> = p.iter().zip(&step).map(|(a, d)| *a + *d).collect();
        let trial_ss = residual_ss(&model, points, &trial);
        if trial_ss.is_finite() && trial_ss < ss {
            let decrease = (ss - trial_ss) / ss;
            p = trial;
            ss = trial_ss;
            history.push(ss);
            lambda = lambda / F::lit(10.0);
            if decrease < opts.ss_tolerance || ss == F::zero() {
                converged = true;
                break;
            }
            let (a, b) = normal_equations(&model, points, &p);
            jtj = a;
            g = b;
        } else {
            lambda = lambda * F::lit(10.0);
            // No damped step lowers the sum any more: the relative decrease
            // available is below every tolerance.
            if lambda > lambda_ceiling {
                converged = true;
                break;
            }
        }
    }

    let (jtj, _) = normal_equations(&model, points, &p);
    let l = cholesky(&jtj).ok_or(StatsError::Singular)?;
    let dof = points.len() - n_par;
    let covariance = (dof > 0).then(|| {
        let s2 = ss / F::from_usize(dof).expect("small integer");
        inverse_from_cholesky(&l)
            .into_iter()
            .map(|row| row.into_iter().map(|v| v * s2).collect())
            .collect()
    });
    Ok(FitResult {
        names,
        params: p,
        residual_ss: ss,
        iterations,
        converged,
        covariance,
        history,
    })
}

/// Ordinary least-squares polynomial coefficients, lowest degree first.
fn polyfit(points: &[(f64, f64)], degree: usize) -> Option<Vec<f64>> {
    let m = degree + 1;
    if points.len() < m {
        return None;
    }
    // Centre and scale t for conditioning, then map back.
    let mean = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let spread = points
        .iter()
        .map(|p| (p.0 - mean).abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut ata = vec![vec![0.0; m]; m];
    let mut aty = vec![0.0; m];
    for &(t, y) in points {
        let u = (t - mean) / spread;
        let pow: Vec<f64> = (0..m).map(|k| u.powi(k as i32)).collect();
        for i in 0..m {
            aty[i] += pow[i] * y;
            for k in 0..m {
                ata[i][k] += pow[i] * pow[k];
            }
        }
    }
    let l = cholesky(&ata)?;
    let c = cholesky_solve(&l, &aty);
    // Expand sum c_k ((t - mean)/spread)^k into powers of t.
    let mut out = vec![0.0; m];
    for (k, ck) in c.iter().enumerate() {
        let scale = ck / spread.powi(k as i32);
        for j in 0..=k {
            let binom = (0..j).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64);
            out[j] += scale * binom * (-mean).powi((k - j) as i32);
        }
    }
    Some(out)
}
