use std::collections::BTreeMap;

use serde::Serialize;

use super::extrema::{detect_extrema, ExtremaKind};
use super::fit::{fit_curve, CurveFamily, FitResult};
use super::hypothesis::{welch_t, wilcoxon_rank_sum};
use super::StatsError;
use crate::trajectory::Trajectory;

/// Minimum usable runs per ensemble for stage two.
const MIN_RUNS: usize = 3;

const METHOD_NOTE: &str = "two-stage approximation: stage 1 fits each run's extrema sequence \
independently, stage 2 tests every fitted parameter across ensembles with Welch t and \
Wilcoxon rank-sum; this is not a joint nonlinear mixed-effects fit";

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub species: String,
    pub family: CurveFamily,
    pub kind: ExtremaKind,
    pub smoothing_window: usize,
    pub min_separation: f64,
    /// Starting parameters for every run; `None` uses the family's
    /// linearised guess per run.
    pub init: Option<Vec<f64>>,
    /// Times at which raw species values are compared across ensembles.
    pub time_slices: Vec<f64>,
    pub extinction_threshold: f64,
    /// Horizon for the extinction fractions; `None` uses each run's horizon.
    pub extinction_by: Option<f64>,
}

impl CompareOptions {
    pub fn new(species: impl Into<String>, family: CurveFamily, kind: ExtremaKind) -> Self {
        Self {
            species: species.into(),
            family,
            kind,
            smoothing_window: 5,
            min_separation: 20.0,
            init: None,
            time_slices: Vec::new(),
            extinction_threshold: 0.0,
            extinction_by: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFit {
    pub ensemble: String,
    pub run: usize,
    pub n_extrema: usize,
    pub converged: bool,
    pub params: BTreeMap<String, f64>,
    pub residual_ss: Option<f64>,
    pub iterations: usize,
    pub excluded_reason: Option<String>,
}

impl RunFit {
    pub fn usable(&self) -> bool {
        self.excluded_reason.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamTest {
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_t: f64,
    #[serde(rename = "U")]
    pub u: f64,
    pub z: f64,
    pub p_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceTest {
    pub time: f64,
    #[serde(rename = "U")]
    pub u: f64,
    pub z: f64,
    pub p_u: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub runs: usize,
    pub usable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedRuns {
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub method: &'static str,
    pub species: String,
    pub family: CurveFamily,
    pub extrema_kind: ExtremaKind,
    pub ensembles: BTreeMap<String, EnsembleSummary>,
    pub fits: Vec<RunFit>,
    pub tests: BTreeMap<String, ParamTest>,
    pub time_slices: Vec<SliceTest>,
    pub extinction: BTreeMap<String, f64>,
    pub excluded_runs: ExcludedRuns,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Fitted values of one parameter over the usable runs of an ensemble.
    pub fn param_values(&self, ensemble: &str, param: &str) -> Vec<f64> {
        self.fits
            .iter()
            .filter(|f| f.ensemble == ensemble && f.usable())
            .filter_map(|f| f.params.get(param).copied())
            .collect()
    }
}

fn fit_run(label: &str, run: usize, traj: &Trajectory, opts: &CompareOptions) -> Result<RunFit, StatsError> {
    let seq = detect_extrema(
        traj,
        &opts.species,
        opts.kind,
        opts.smoothing_window,
        opts.min_separation,
    )?;
    let mut out = RunFit {
        ensemble: label.to_string(),
        run,
        n_extrema: seq.len(),
        converged: false,
        params: BTreeMap::new(),
        residual_ss: None,
        iterations: 0,
        excluded_reason: None,
    };
    let needed = opts.family.n_params();
    if seq.len() < needed {
        out.excluded_reason = Some(format!("{} extrema, {needed} needed", seq.len()));
        return Ok(out);
    }
    let init = opts
        .init
        .clone()
        .unwrap_or_else(|| opts.family.initial_guess(&seq.points));
    match fit_curve::<f64>(opts.family, &seq.points, &init) {
        Ok(FitResult {
            names,
            params,
            residual_ss,
            iterations,
            converged,
            ..
        }) => {
            out.converged = converged;
            out.iterations = iterations;
            out.residual_ss = Some(residual_ss);
            out.params = names.into_iter().zip(params).collect();
            if !converged {
                out.excluded_reason = Some("fit did not converge".into());
            } else if out.params.values().any(|v| !v.is_finite()) {
                out.excluded_reason = Some("non-finite parameters".into());
            }
        }
        Err(e) => out.excluded_reason = Some(e.to_string()),
    }
    Ok(out)
}

/// Mean summed in ascending order, so it does not depend on run order.
fn sorted_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Index of the grid point closest to `time`.
fn slice_index(traj: &Trajectory, time: f64) -> Option<usize> {
    if traj.is_empty() || time < 0.0 || time > traj.horizon() + 1e-9 {
        return None;
    }
    Some(((time / traj.sample_interval()).round() as usize).min(traj.len() - 1))
}

/// Fits every run of both ensembles, then tests each fitted parameter
/// across the ensembles.
pub fn two_stage_compare(
    ensemble_a: &[Trajectory],
    ensemble_b: &[Trajectory],
    opts: &CompareOptions,
) -> Result<ComparisonReport, StatsError> {
    let mut fits = Vec::with_capacity(ensemble_a.len() + ensemble_b.len());
    for (label, ens) in [("A", ensemble_a), ("B", ensemble_b)] {
        for (i, traj) in ens.iter().enumerate() {
            fits.push(fit_run(label, i, traj, opts)?);
        }
    }
    let usable = |label: &str| fits.iter().filter(|f| f.ensemble == label && f.usable()).count();
    let (usable_a, usable_b) = (usable("A"), usable("B"));
    for (label, n) in [("A", usable_a), ("B", usable_b)] {
        if n < MIN_RUNS {
            return Err(StatsError::TooFewRuns {
                ensemble: label.into(),
                usable: n,
            });
        }
    }

    let mut report = ComparisonReport {
        method: METHOD_NOTE,
        species: opts.species.clone(),
        family: opts.family,
        extrema_kind: opts.kind,
        ensembles: BTreeMap::from([
            (
                "A".to_string(),
                EnsembleSummary {
                    runs: ensemble_a.len(),
                    usable: usable_a,
                },
            ),
            (
                "B".to_string(),
                EnsembleSummary {
                    runs: ensemble_b.len(),
                    usable: usable_b,
                },
            ),
        ]),
        fits,
        tests: BTreeMap::new(),
        time_slices: Vec::new(),
        extinction: BTreeMap::new(),
        excluded_runs: ExcludedRuns {
            a: ensemble_a.len() - usable_a,
            b: ensemble_b.len() - usable_b,
            fraction: (ensemble_a.len() + ensemble_b.len() - usable_a - usable_b) as f64
                / (ensemble_a.len() + ensemble_b.len()) as f64,
        },
    };

    for name in opts.family.param_names() {
        let xs = report.param_values("A", name);
        let ys = report.param_values("B", name);
        let w = welch_t(&xs, &ys)?;
        let u = wilcoxon_rank_sum(&xs, &ys)?;
        report.tests.insert(
            name.to_string(),
            ParamTest {
                mean_a: sorted_mean(&xs),
                mean_b: sorted_mean(&ys),
                mean_diff: w.mean_diff,
                t: w.t,
                df: w.df,
                p_t: w.p_two_sided,
                u: u.u,
                z: u.z,
                p_u: u.p_two_sided,
            },
        );
    }

    for &time in &opts.time_slices {
        let values = |ens: &[Trajectory]| -> Result<Vec<f64>, StatsError> {
            ens.iter()
                .map(|t| {
                    let col = t
                        .species_index(&opts.species)
                        .map_err(|_| StatsError::UnknownSpecies(opts.species.clone()))?;
                    let k = slice_index(t, time)
                        .ok_or_else(|| StatsError::InvalidArgument(format!("time slice {time} outside the run")))?;
                    Ok(t.rows()[k][col])
                })
                .collect()
        };
        let w = wilcoxon_rank_sum(&values(ensemble_a)?, &values(ensemble_b)?)?;
        report.time_slices.push(SliceTest {
            time,
            u: w.u,
            z: w.z,
            p_u: w.p_two_sided,
            exact: w.exact,
        });
    }

    for (label, ens) in [("A", ensemble_a), ("B", ensemble_b)] {
        let by = match opts.extinction_by {
            Some(t) => t,
            None => ens.iter().map(Trajectory::horizon).fold(f64::INFINITY, f64::min),
        };
        report.extinction.insert(
            label.to_string(),
            extinction_fraction(ens, &opts.species, opts.extinction_threshold, by)?,
        );
    }
    Ok(report)
}

/// Fraction of runs whose `species` drops to `threshold` or below at some
/// sampled time up to `by_time`.
pub fn extinction_fraction(
    ensemble: &[Trajectory],
    species: &str,
    threshold: f64,
    by_time: f64,
) -> Result<f64, StatsError> {
    if ensemble.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut hits = 0usize;
    for traj in ensemble {
        if by_time > traj.horizon() + 1e-9 {
            return Err(StatsError::InvalidArgument(format!(
                "by_time {by_time} exceeds the run horizon {}",
                traj.horizon()
            )));
        }
        let col = traj
            .species_index(species)
            .map_err(|_| StatsError::UnknownSpecies(species.to_string()))?;
        let hit = traj
            .times()
            .iter()
            .zip(traj.rows())
            .take_while(|(t, _)| **t <= by_time + 1e-9)
            .any(|(_, row)| row[col] <= threshold);
        hits += usize::from(hit);
    }
    Ok(hits as f64 / ensemble.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn series(values: &[f64]) -> Trajectory {
        let mut t = Trajectory::new(vec!["T".into()], 1.0);
        for v in values {
            t.push(vec![*v]);
        }
        t
    }

    #[test]
    fn extinction_counts_runs() {
        let runs = [
            series(&[5.0, 3.0, 0.0, 0.0]),
            series(&[5.0, 6.0, 7.0, 8.0]),
            series(&[5.0, 0.0, 1.0, 2.0]),
            series(&[5.0, 4.0, 3.0, 1.0]),
        ];
        assert_eq!(extinction_fraction(&runs, "T", 0.0, 3.0).unwrap(), 0.5);
        assert_eq!(extinction_fraction(&runs, "T", 0.0, 1.0).unwrap(), 0.25);
        assert_eq!(extinction_fraction(&runs, "T", 1.0, 3.0).unwrap(), 0.75);
        assert!(matches!(
            extinction_fraction(&runs, "E", 0.0, 3.0),
            Err(StatsError::UnknownSpecies(_))
        ));
        assert!(extinction_fraction(&runs, "T", 0.0, 4.0).is_err());
        assert!(extinction_fraction(&[], "T", 0.0, 1.0).is_err());
    }

    /// Isolated peaks every 50 time units whose heights follow
    /// `c + a (t - b)^2` plus noise; zero elsewhere.
    fn parabola_run(a: f64, b: f64, c: f64, seed: u64) -> Trajectory {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 20.0).unwrap();
        let mut t = Trajectory::new(vec!["T".into()], 1.0);
        for k in 0..=600 {
            let time = k as f64;
            let peak = k % 50 == 25;
            t.push(vec![if peak {
                c + a * (time - b).powi(2) + noise.sample(&mut rng)
            } else {
                0.0
            }]);
        }
        t
    }

    fn opts() -> CompareOptions {
        let mut o = CompareOptions::new("T", CurveFamily::ParabUp, ExtremaKind::Maxima);
        o.smoothing_window = 1;
        o.min_separation = 20.0;
        o
    }

    #[test]
    fn detects_a_shifted_curvature() {
        let a_runs: Vec<Trajectory> = (0..8).map(|s| parabola_run(0.1, 300.0, 20000.0, s)).collect();
        let b_runs: Vec<Trajectory> = (100..108).map(|s| parabola_run(0.15, 300.0, 20000.0, s)).collect();
        let report = two_stage_compare(&a_runs, &b_runs, &opts()).unwrap();
        assert!(report.tests["a"].p_t < 0.01, "{:?}", report.tests["a"]);
        assert!(report.tests["a"].p_u < 0.01);
        assert!(report.fits.iter().all(|f| f.n_extrema == 12));
        assert_eq!(report.excluded_runs.fraction, 0.0);
        assert!((report.tests["b"].mean_a - 300.0).abs() < 2.0);
    }

    #[test]
    fn relabelling_runs_changes_nothing() {
        let a_runs: Vec<Trajectory> = (0..5).map(|s| parabola_run(0.1, 300.0, 20000.0, s)).collect();
        let b_runs: Vec<Trajectory> = (10..16).map(|s| parabola_run(0.1, 310.0, 20000.0, s)).collect();
        let mut o = opts();
        o.time_slices = vec![25.0, 100.0];
        let report = two_stage_compare(&a_runs, &b_runs, &o).unwrap();
        let mut a_rev = a_runs.clone();
        a_rev.reverse();
        let mut b_rot = b_runs.clone();
        b_rot.rotate_left(2);
        let other = two_stage_compare(&a_rev, &b_rot, &o).unwrap();
        assert_eq!(report.tests, other.tests);
        assert_eq!(report.time_slices, other.time_slices);
        assert_eq!(report.extinction, other.extinction);
        for p in report.tests.values() {
            assert!((0.0..=1.0).contains(&p.p_t) && (0.0..=1.0).contains(&p.p_u));
        }
    }

    #[test]
    fn too_few_usable_runs() {
        let good: Vec<Trajectory> = (0..4).map(|s| parabola_run(0.1, 300.0, 20000.0, s)).collect();
        let flat = vec![series(&[1.0; 50]); 4];
        match two_stage_compare(&flat, &good, &opts()) {
            Err(StatsError::TooFewRuns { ensemble, usable }) => {
                assert_eq!(ensemble, "A");
                assert_eq!(usable, 0);
            }
            other => panic!("{other:?}"),
        }
        assert!(two_stage_compare(&[], &good, &opts()).is_err());
    }

    #[test]
    fn report_schema() {
        let a_runs: Vec<Trajectory> = (0..3).map(|s| parabola_run(0.1, 300.0, 20000.0, s)).collect();
        let b_runs: Vec<Trajectory> = (3..6).map(|s| parabola_run(0.1, 300.0, 20000.0, s)).collect();
        let report = two_stage_compare(&a_runs, &b_runs, &opts()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        for key in ["ensembles", "fits", "tests", "extinction", "excluded_runs"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for key in ["t", "p_t", "U", "p_u"] {
            assert!(v["tests"]["a"].get(key).is_some());
        }
        assert!(v["extinction"].get("A").is_some() && v["extinction"].get("B").is_some());
        assert_eq!(v["fits"].as_array().unwrap().len(), 6);
    }
}
