use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremaKind {
    Maxima,
    Minima,
}

/// Local maxima or minima in time order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremaSequence {
    pub kind: ExtremaKind,
    pub points: Vec<(f64, f64)>,
}

impl ExtremaSequence {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// Centered moving average; near the ends the window shrinks to the
/// samples available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Extrema of one species of a trajectory.
pub fn detect_extrema(
    traj: &Trajectory,
    species: &str,
    kind: ExtremaKind,
    smoothing_window: usize,
    min_separation: f64,
) -> Result<ExtremaSequence, StatsError> {
    let values = traj
        .column(species)
        .map_err(|_| StatsError::UnknownSpecies(species.to_string()))?;
    extrema_of_series(traj.times(), &values, kind, smoothing_window, min_separation)
}

/// Smooths `values`, finds strict interior extrema (a flat run counts once,
/// at its middle, when both neighbours lie on the same side), then thins
/// extrema closer than `min_separation` keeping the more extreme one.
/// Reported values are the raw samples at the chosen indices.
pub fn extrema_of_series(
    times: &[f64],
    values: &[f64],
    kind: ExtremaKind,
    smoothing_window: usize,
    min_separation: f64,
) -> Result<ExtremaSequence, StatsError> {
    if smoothing_window == 0 || smoothing_window % 2 == 0 {
        return Err(StatsError::InvalidArgument(format!(
            "smoothing window must be odd and at least 1, got {smoothing_window}"
        )));
    }
    if !(min_separation >= 0.0) {
        return Err(StatsError::InvalidArgument(format!(
            "minimum separation must be non-negative, got {min_separation}"
        )));
    }
    if times.len() != values.len() {
        return Err(StatsError::InvalidArgument("times and values differ in length".into()));
    }
    if values.len() < smoothing_window {
        return Err(StatsError::SeriesTooShort {
            len: values.len(),
            window: smoothing_window,
        });
    }
    // Work on maxima throughout; minima are maxima of the negated series.
    let sign = match kind {
        ExtremaKind::Maxima => 1.0,
        ExtremaKind::Minima => -1.0,
    };
    let oriented: Vec<f64> = values.iter().map(|v| sign * v).collect();
    let smooth = moving_average(&oriented, smoothing_window);

    let mut candidates = Vec::new();
    let n = smooth.len();
    let mut i = 1;
    while i + 1 < n {
        if smooth[i] > smooth[i - 1] {
            let mut j = i;
            while j + 1 < n && smooth[j + 1] == smooth[i] {
                j += 1;
            }
            if j + 1 < n && smooth[j + 1] < smooth[i] {
                candidates.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let mut kept: Vec<usize> = Vec::with_capacity(candidates.len());
    for c in candidates {
        match kept.last() {
            Some(&last) if times[c] - times[last] < min_separation => {
                if smooth[c] > smooth[last] {
                    *kept.last_mut().expect("non-empty") = c;
                }
            }
            _ => kept.push(c),
        }
    }
    Ok(ExtremaSequence {
        kind,
        points: kept.into_iter().map(|k| (times[k], values[k])).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64).collect()
    }

    #[test]
    fn small_series() {
        let v = [0.0, 1.0, 0.0, 2.0, 0.0];
        let t = unit_grid(5);
        let max = extrema_of_series(&t, &v, ExtremaKind::Maxima, 1, 0.0).unwrap();
        assert_eq!(max.points, vec![(1.0, 1.0), (3.0, 2.0)]);
        let min = extrema_of_series(&t, &v, ExtremaKind::Minima, 1, 0.0).unwrap();
        assert_eq!(min.points, vec![(2.0, 0.0)]);
    }

    #[test]
    fn monotone_has_no_extrema() {
        let v: Vec<f64> = (0..50).map(|k| (k as f64).sqrt()).collect();
        let t = unit_grid(50);
        for kind in [ExtremaKind::Maxima, ExtremaKind::Minima] {
            assert!(extrema_of_series(&t, &v, kind, 5, 0.0).unwrap().is_empty());
        }
    }

    #[test]
    fn plateau_counts_once() {
        let v = [0.0, 1.0, 3.0, 3.0, 3.0, 1.0, 1.0, 2.0];
        let t = unit_grid(v.len());
        let max = extrema_of_series(&t, &v, ExtremaKind::Maxima, 1, 0.0).unwrap();
        assert_eq!(max.points, vec![(3.0, 3.0)]);
        let min = extrema_of_series(&t, &v, ExtremaKind::Minima, 1, 0.0).unwrap();
        assert_eq!(min.points, vec![(5.0, 1.0)]);
    }

    #[test]
    fn damped_cosine_maxima() {
        let t: Vec<f64> = (0..=6000).map(|k| k as f64 * 0.1).collect();
        let omega = 2.0 * std::f64::consts::PI / 100.0;
        let v: Vec<f64> = t.iter().map(|&t| (-t / 200.0).exp() * (omega * t).cos()).collect();
        let max = extrema_of_series(&t, &v, ExtremaKind::Maxima, 1, 50.0).unwrap();
        // d/dt = 0 where tan(wt) = -1/(200w): the damping pulls each peak
        // earlier by atan(1/(200w))/w.
        let shift = (1.0 / (200.0 * omega)).atan() / omega;
        assert_eq!(max.len(), 6);
        for (k, (tm, _)) in max.points.iter().enumerate() {
            let expected = 100.0 * (k + 1) as f64 - shift;
            assert!((tm - expected).abs() <= 0.2, "{tm} vs {expected}");
        }
        let values = max.values();
        assert!(values.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn separation_keeps_the_larger() {
        let v = [0.0, 2.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let t = unit_grid(v.len());
        let max = extrema_of_series(&t, &v, ExtremaKind::Maxima, 1, 3.0).unwrap();
        assert_eq!(max.points, vec![(3.0, 3.0), (7.0, 1.0)]);
    }

    #[test]
    fn argument_errors() {
        let t = unit_grid(3);
        let v = [1.0, 2.0, 1.0];
        assert!(matches!(
            extrema_of_series(&t, &v, ExtremaKind::Maxima, 2, 0.0),
            Err(StatsError::InvalidArgument(_))
        ));
        assert!(matches!(
            extrema_of_series(&t, &v, ExtremaKind::Maxima, 5, 0.0),
            Err(StatsError::SeriesTooShort { .. })
        ));
        let traj = Trajectory::new(vec!["T".into()], 0.1);
        assert!(matches!(
            detect_extrema(&traj, "X", ExtremaKind::Maxima, 1, 0.0),
            Err(StatsError::UnknownSpecies(_))
        ));
    }

    proptest! {
        #[test]
        fn minima_are_maxima_of_negation(
            v in prop::collection::vec(-100i32..100, 5..80),
            window in prop::sample::select(vec![1usize, 3, 5]),
            sep in 0.0f64..5.0,
        ) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let t = unit_grid(v.len());
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let max_neg = extrema_of_series(&t, &neg, ExtremaKind::Maxima, window, sep).unwrap();
            let min = extrema_of_series(&t, &v, ExtremaKind::Minima, window, sep).unwrap();
            let flipped: Vec<(f64, f64)> = max_neg.points.iter().map(|&(t, y)| (t, -y)).collect();
            prop_assert_eq!(flipped, min.points);
        }

        #[test]
        fn extrema_times_strictly_increase(
            v in prop::collection::vec(-50.0f64..50.0, 3..100),
            sep in 0.0f64..10.0,
        ) {
            let t = unit_grid(v.len());
            let e = extrema_of_series(&t, &v, ExtremaKind::Maxima, 3, sep).unwrap();
            prop_assert!(e.points.windows(2).all(|w| w[1].0 - w[0].0 >= sep.max(f64::MIN_POSITIVE)));
        }
    }
}
