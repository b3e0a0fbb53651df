use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("unknown species `{0}`")]
    UnknownSpecies(String),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("trajectories are not aligned: {0}")]
    Misaligned(String),
}

/// Uniformly sampled time series of species amounts for one run.
///
/// Row `k` holds the state at `t = k * sample_interval`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    species: Vec<String>,
    sample_interval: f64,
    times: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(species: Vec<String>, sample_interval: f64) -> Self {
        Self {
            species,
            sample_interval,
            times: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Number of grid points covering `[0, horizon]`. The last partial
    /// interval is dropped.
    pub fn grid_len(horizon: f64, sample_interval: f64) -> usize {
        (horizon / sample_interval + 1e-9).floor() as usize + 1
    }

    pub(crate) fn with_capacity(species: Vec<String>, sample_interval: f64, n: usize) -> Self {
        Self {
            species,
            sample_interval,
            times: Vec::with_capacity(n),
            rows: Vec::with_capacity(n),
        }
    }

    /// Appends the next grid row.
    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.species.len());
        let k = self.times.len();
        self.times.push(k as f64 * self.sample_interval);
        self.rows.push(row);
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn species_index(&self, name: &str) -> Result<usize, TrajectoryError> {
        self.species
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| TrajectoryError::UnknownSpecies(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TrajectoryError> {
        let i = self.species_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        self.rows.last().map(Vec::as_slice)
    }

    /// Pointwise arithmetic mean of aligned trajectories.
    pub fn mean(runs: &[Trajectory]) -> Result<Trajectory, TrajectoryError> {
        let first = runs
            .first()
            .ok_or_else(|| TrajectoryError::Misaligned("empty ensemble".into()))?;
        for r in runs {
            if r.species != first.species || r.len() != first.len() {
                return Err(TrajectoryError::Misaligned(format!(
                    "{} rows of {:?} vs {} rows of {:?}",
                    r.len(),
                    r.species,
                    first.len(),
                    first.species
                )));
            }
        }
        let n = runs.len() as f64;
        let mut out = Trajectory::with_capacity(first.species.clone(), first.sample_interval, first.len());
        for k in 0..first.len() {
            let mut row = vec![0.0; first.species.len()];
            for r in runs {
                for (acc, v) in row.iter_mut().zip(&r.rows[k]) {
                    *acc += v;
                }
            }
            row.iter_mut().for_each(|v| *v /= n);
            out.push(row);
        }
        Ok(out)
    }

    /// CSV with header `t,<species...>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * (8 + 10 * self.species.len()));
        out.push('t');
        for s in &self.species {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.rows) {
            out.push_str(&format_time(*t));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Reads CSV written by [`Trajectory::to_csv`]. The sampling interval is
    /// taken from the first two time stamps.
    pub fn from_csv(text: &str) -> Result<Trajectory, TrajectoryError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(TrajectoryError::Csv {
            line: 1,
            message: "empty file".into(),
        })?;
        let mut cols = header.split(',').map(str::trim);
        if cols.next() != Some("t") {
            return Err(TrajectoryError::Csv {
                line: 1,
                message: "header must start with `t`".into(),
            });
        }
        let species: Vec<String> = cols.map(String::from).collect();
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let mut fields = line.split(',').map(|f| f.trim().parse::<f64>());
            let t = fields.next().and_then(Result::ok).ok_or(TrajectoryError::Csv {
                line: i + 1,
                message: "bad time".into(),
            })?;
            let row: Result<Vec<f64>, _> = fields.collect();
            let row = row.map_err(|e| TrajectoryError::Csv {
                line: i + 1,
                message: e.to_string(),
            })?;
            if row.len() != species.len() {
                return Err(TrajectoryError::Csv {
                    line: i + 1,
                    message: format!("expected {} values, found {}", species.len(), row.len()),
                });
            }
            times.push(t);
            rows.push(row);
        }
        let sample_interval = if times.len() >= 2 { times[1] - times[0] } else { 1.0 };
        // Regenerate the grid exactly rather than trusting rounded time stamps.
        let mut traj = Trajectory::with_capacity(species, sample_interval, rows.len());
        for row in rows {
            traj.push(row);
        }
        Ok(traj)
    }
}

/// Formats a time stamp with six significant digits, trailing zeros removed
/// (the `%g` convention).
pub fn format_time(t: f64) -> String {
    if t == 0.0 {
        return "0".to_string();
    }
    let exp = t.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{t:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{t:.5e}");
        let (mantissa, exponent) = s.split_once('e').unwrap_or((&s, "0"));
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{exponent}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_formatting() {
        assert_eq!(format_time(0.0), "0");
        assert_eq!(format_time(0.1), "0.1");
        assert_eq!(format_time(600.0), "600");
        assert_eq!(format_time(599.9), "599.9");
        assert_eq!(format_time(3.0 * 0.1), "0.3");
        assert_eq!(format_time(123.456789), "123.457");
        assert_eq!(format_time(1.5e7), "1.5e7");
    }

    #[test]
    fn csv_round_trip() {
        let mut t = Trajectory::new(vec!["T".into(), "E".into()], 0.1);
        t.push(vec![100.0, 5.0]);
        t.push(vec![101.0, 4.5]);
        t.push(vec![1e-9, 0.1]);
        let csv = t.to_csv();
        assert!(csv.starts_with("t,T,E\n0,100,5\n0.1,101,4.5\n"));
        assert_eq!(Trajectory::from_csv(&csv).unwrap(), t);
    }

    #[test]
    fn mean_of_runs() {
        let mk = |v: f64| {
            let mut t = Trajectory::new(vec!["X".into()], 1.0);
            t.push(vec![v]);
            t.push(vec![2.0 * v]);
            t
        };
        let m = Trajectory::mean(&[mk(1.0), mk(3.0)]).unwrap();
        assert_eq!(m.column("X").unwrap(), vec![2.0, 4.0]);
        assert!(matches!(m.column("Y"), Err(TrajectoryError::UnknownSpecies(_))));
        assert!(Trajectory::mean(&[]).is_err());
    }
}
