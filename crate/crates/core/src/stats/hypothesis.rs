use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use super::StatsError;

/// Largest combined sample size for which the exact null distribution is
/// enumerated.
const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    #[serde(rename = "U")]
    pub u: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

/// Mann-Whitney U for `xs` against `ys` with midranks.
pub fn wilcoxon_rank_sum(xs: &[f64], ys: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(StatsError::NonFinite);
    }
    let (nx, ny) = (xs.len(), ys.len());
    let n = nx + ny;
    let mut pooled: Vec<(f64, bool)> = xs
        .iter()
        .map(|&v| (v, true))
        .chain(ys.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_x += midrank * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_x - (nx * (nx + 1)) as f64 / 2.0;
    let (z, p) = normal_approximation(u, nx, ny, tie_term);
    if n <= EXACT_LIMIT && tie_term == 0.0 {
        return Ok(WilcoxonResult {
            u,
            z,
            p_two_sided: exact_p(nx, ny, u.round() as usize),
            exact: true,
        });
    }
    Ok(WilcoxonResult {
        u,
        z,
        p_two_sided: p,
        exact: false,
    })
}

/// `z` without and two-sided `p` with continuity correction, using the
/// tie-corrected variance. `tie_term` is the sum of `t^3 - t` over tie groups.
fn normal_approximation(u: f64, nx: usize, ny: usize, tie_term: f64) -> (f64, f64) {
    let (nxf, nyf) = (nx as f64, ny as f64);
    let nf = nxf + nyf;
    let mu = nxf * nyf / 2.0;
    let var = nxf * nyf / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)).max(1.0));
    if !(var > 0.0) {
        return (0.0, 1.0);
    }
    let sd = var.sqrt();
    let corrected = ((u - mu).abs() - 0.5).max(0.0) / sd;
    (
        (u - mu) / sd,
        erfc(corrected / std::f64::consts::SQRT_2).clamp(0.0, 1.0),
    )
}

/// Two-sided exact p-value: twice the smaller tail of the null distribution
/// of U, capped at one.
fn exact_p(nx: usize, ny: usize, u: usize) -> f64 {
    let counts = u_distribution(nx, ny);
    let total: f64 = counts.iter().sum();
    let lower: f64 = counts[..=u.min(counts.len() - 1)].iter().sum();
    let upper: f64 = counts[u.min(counts.len())..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

/// Number of ways each value of U arises, via the recurrence on the largest
/// pooled observation.
fn u_distribution(nx: usize, ny: usize) -> Vec<f64> {
    // table[m][k] holds the counts for samples of size (m, k).
    let max_u = nx * ny;
    let mut table = vec![vec![Vec::<f64>::new(); ny + 1]; nx + 1];
    for m in 0..=nx {
        for k in 0..=ny {
            table[m][k] = if m == 0 || k == 0 {
                vec![1.0]
            } else {
                let mut row = vec![0.0; m * k + 1];
                // Largest observation is an x: it beats all k y's.
                for (u, c) in table[m - 1][k].iter().enumerate() {
                    row[u + k] += c;
                }
                for (u, c) in table[m][k - 1].iter().enumerate() {
                    row[u] += c;
                }
                row
            };
        }
    }
    let out = std::mem::take(&mut table[nx][ny]);
    debug_assert_eq!(out.len(), max_u + 1);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchResult {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t test of `mean(xs) - mean(ys)`.
pub fn welch_t(xs: &[f64], ys: &[f64]) -> Result<WelchResult, StatsError> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(StatsError::InsufficientPoints {
            needed: 2,
            got: xs.len().min(ys.len()),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (mx, vx) = mean_var(xs);
    let (my, vy) = mean_var(ys);
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let sx = vx / nx;
    let sy = vy / ny;
    let se2 = sx + sy;
    let diff = mx - my;
    if se2 == 0.0 {
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(WelchResult {
            mean_diff: diff,
            t,
            df: nx + ny - 2.0,
            p_two_sided: p,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| StatsError::InvalidArgument(e.to_string()))?;
    let p = 2.0 * dist.cdf(-t.abs());
    Ok(WelchResult {
        mean_diff: diff,
        t,
        df,
        p_two_sided: p.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic distribution and
/// Stephens' small-sample correction.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<KsResult, StatsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(StatsError::NonFinite);
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok(KsResult {
        d,
        p_value: kolmogorov_q(lambda),
    })
}

/// Complementary Kolmogorov distribution `Q(lambda)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
