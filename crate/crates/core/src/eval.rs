//! Filtering-error metrics.
//!
//! A filter step at time `t` consumes `x_t` and yields `m̂_{t+1}`; its
//! prediction for horizon `i` (1-based) is block `i − 1` of the first-moment
//! part of `m̂_{t+1}`, scored against `x_{t+i}`. Errors are squared Euclidean
//! norms per observation vector.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{squared_distance, FeatureMap, PredictiveState, StateFilter};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonError {
    /// Look-ahead, starting at 1.
    pub horizon: usize,
    pub mse: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub per_horizon: Vec<HorizonError>,
    /// Sample-weighted mean over all horizons.
    pub overall: f64,
    pub n_trajectories: usize,
    /// Number of filter steps scored.
    pub n_steps: usize,
    /// Mean squared observation norm of the scored trajectories.
    pub trajectory_power: f64,
}

impl ErrorReport {
    pub fn horizon(&self, h: usize) -> Option<&HorizonError> {
        self.per_horizon.iter().find(|e| e.horizon == h)
    }

    /// One-step-ahead error.
    pub fn one_step(&self) -> f64 {
        self.per_horizon[0].mse
    }

    /// The same report with errors divided by the observation dimension.
    pub fn per_coordinate(&self, obs_dim: usize) -> ErrorReport {
        let scale = 1.0 / obs_dim as f64;
        let mut out = self.clone();
        for e in &mut out.per_horizon {
            e.mse *= scale;
        }
        out.overall *= scale;
        out
    }

    pub fn total_samples(&self) -> usize {
        self.per_horizon.iter().map(|e| e.n_samples).sum()
    }
}

/// Pairwise (cascade) summation in slice order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1..=8 => values.iter().sum(),
        len => {
            let (a, b) = values.split_at(len / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Scores predictive states against the observations they predict.
///
/// `states_for` returns, for one trajectory, the scored states; a state with
/// time index `t` predicts `x_t, ..., x_{t+h-1}`.
pub fn score_states<F>(
    trajs: &[Trajectory],
    phi: &FeatureMap,
    horizon: usize,
    mut states_for: F,
) -> Result<ErrorReport>
where
    F: FnMut(&Trajectory) -> Result<Vec<PredictiveState>>,
{
    if trajs.is_empty() {
        return Err(Error::Empty("no trajectories to score"));
    }
    if horizon == 0 || horizon > phi.k {
        return Err(Error::InvalidParameter(format!(
            "horizon must be in 1..={} (got {horizon})",
            phi.k
        )));
    }
    let mut sums: Vec<Vec<f64>> = vec![Vec::with_capacity(trajs.len()); horizon];
    let mut counts = vec![0usize; horizon];
    let mut n_steps = 0;
    for traj in trajs {
        if traj.dim() != phi.n {
            return Err(Error::DimensionMismatch {
                context: "scored trajectory",
                expected: phi.n,
                actual: traj.dim(),
            });
        }
        let mut local = vec![0.0; horizon];
        for state in states_for(traj)? {
            n_steps += 1;
            for (i, acc) in local.iter_mut().enumerate() {
                let target = state.t + i;
                if target > traj.len() {
                    return Err(Error::WindowUnavailable {
                        t: state.t,
                        k: i + 1,
                        len: traj.len(),
                    });
                }
                *acc += squared_distance(phi.extract(&state.m, i)?, traj.obs(target))?;
                counts[i] += 1;
            }
        }
        for (column, v) in sums.iter_mut().zip(local) {
            column.push(v);
        }
    }
    let totals: Vec<f64> = sums.iter().map(|s| pairwise_sum(s)).collect();
    let per_horizon = totals
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (&sum, &n))| HorizonError {
            horizon: i + 1,
            mse: if n == 0 { 0.0 } else { sum / n as f64 },
            n_samples: n,
        })
        .collect();
    let total_count: usize = counts.iter().sum();
    Ok(ErrorReport {
        per_horizon,
        overall: if total_count == 0 {
            0.0
        } else {
            pairwise_sum(&totals) / total_count as f64
        },
        n_trajectories: trajs.len(),
        n_steps,
        trajectory_power: trajectory_power(trajs)?,
    })
}

/// Filtering error of `filter` over `trajs` for horizons `1..=horizon`.
pub fn filtering_error<F: StateFilter + ?Sized>(
    filter: &F,
    trajs: &[Trajectory],
    horizon: usize,
) -> Result<ErrorReport> {
    filtering_error_from(filter, trajs, horizon, 1)
}

/// Like [`filtering_error`] but scoring only filter steps `t >= first_step`,
/// for comparisons against methods that need a warm-up.
pub fn filtering_error_from<F: StateFilter + ?Sized>(
    filter: &F,
    trajs: &[Trajectory],
    horizon: usize,
    first_step: usize,
) -> Result<ErrorReport> {
    let phi = *filter.feature_map();
    score_states(trajs, &phi, horizon, |traj| {
        let mut states = filter.rollout(traj)?;
        let skip = first_step.max(1);
        Ok(if skip < states.len() {
            states.split_off(skip)
        } else {
            Vec::new()
        })
    })
}

/// A filter restricted to at most `steps` rollout steps, used to score a
/// reference filter on exactly the steps another filter covers.
pub struct Capped<'a, F: ?Sized> {
    pub inner: &'a F,
    pub steps: Option<usize>,
}

impl<F: StateFilter + ?Sized> StateFilter for Capped<'_, F> {
    fn feature_map(&self) -> &FeatureMap {
        self.inner.feature_map()
    }

    fn initial(&self) -> &[f64] {
        self.inner.initial()
    }

    fn step(&self, t: usize, state: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        self.inner.step(t, state, obs)
    }

    fn max_steps(&self) -> Option<usize> {
        match (self.inner.max_steps(), self.steps) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// `ln(e / e_F)`.
pub fn error_ratio(error: f64, oracle_error: f64) -> Result<f64> {
    if !(error > 0.0 && oracle_error > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "error ratio needs positive errors (got {error}, {oracle_error})"
        )));
    }
    Ok((error / oracle_error).ln())
}

/// Mean of `‖x_t‖²` over every observation of every trajectory.
pub fn trajectory_power(trajs: &[Trajectory]) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::Empty("trajectory power needs data"));
    }
    let sums: Vec<f64> = trajs
        .iter()
        .map(|t| t.as_flat().iter().map(|v| v * v).sum())
        .collect();
    let count: usize = trajs.iter().map(Trajectory::len).sum();
    Ok(pairwise_sum(&sums) / count as f64)
}

pub const CSV_HEADER: [&str; 4] = ["method", "horizon", "mse", "n_samples"];

/// Writes `method,horizon,mse,n_samples` rows, with an optional extra
/// `log_ratio` column computed against per-horizon oracle errors.
pub fn write_report_csv<W: Write>(
    out: W,
    method: &str,
    report: &ErrorReport,
    oracle: Option<&[f64]>,
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidData(e.to_string());
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if oracle.is_some() {
        header.push("log_ratio");
    }
    writer.write_record(&header).map_err(csv_err)?;
    for e in &report.per_horizon {
        let mut row = vec![
            method.to_string(),
            e.horizon.to_string(),
            format!("{:e}", e.mse),
            e.n_samples.to_string(),
        ];
        if let Some(oracle) = oracle {
            let reference = oracle.get(e.horizon - 1).copied().unwrap_or(f64::NAN);
            row.push(format!("{:e}", error_ratio(e.mse, reference)?));
        }
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PhiKind;

    struct ConstFilter {
        phi: FeatureMap,
        value: Vec<f64>,
    }

    impl StateFilter for ConstFilter {
        fn feature_map(&self) -> &FeatureMap {
            &self.phi
        }
        fn initial(&self) -> &[f64] {
            &self.value
        }
        fn step(&self, _t: usize, _state: &[f64], _obs: &[f64]) -> Result<Vec<f64>> {
            Ok(self.value.clone())
        }
    }

    fn wavy(len: usize, n: usize, shift: f64) -> Trajectory {
        Trajectory::from_flat(
            (0..len * n)
                .map(|i| (i as f64 * 0.7 + shift).sin())
                .collect(),
            n,
        )
        .unwrap()
    }

    #[test]
    fn zero_predictions_on_unit_observations() {
        let phi = FeatureMap::new(PhiKind::Phi1, 2, 3).unwrap();
        let filter = ConstFilter {
            phi,
            value: vec![0.0; 6],
        };
        let trajs = vec![Trajectory::from_flat(vec![1.0; 3 * 6], 3).unwrap(); 2];
        let report = filtering_error(&filter, &trajs, 2).unwrap();
        for e in &report.per_horizon {
            assert_eq!(e.mse, 3.0);
            assert_eq!(e.n_samples, 2 * 4);
        }
        assert_eq!(report.n_steps, 8);
        assert_eq!(report.trajectory_power, 3.0);
        assert_eq!(report.per_coordinate(3).overall, 1.0);
    }

    #[test]
    fn matches_scalar_loop() {
        let phi = FeatureMap::new(PhiKind::Phi2, 3, 2).unwrap();
        let filter = ConstFilter {
            phi,
            value: (0..12).map(|i| i as f64 * 0.1).collect(),
        };
        let trajs: Vec<_> = (0..5).map(|i| wavy(6 + i, 2, i as f64)).collect();
        let report = filtering_error(&filter, &trajs, 3).unwrap();
        for h in 0..3 {
            let mut sum = 0.0;
            let mut count = 0;
            for traj in &trajs {
                for t in 1..=traj.len() - 3 {
                    for j in 0..2 {
                        let diff = filter.value[h * 2 + j] - traj.obs(t + 1 + h)[j];
                        sum += diff * diff;
                    }
                    count += 1;
                }
            }
            assert!((report.per_horizon[h].mse - sum / count as f64).abs() <= 1e-12);
            assert_eq!(report.per_horizon[h].n_samples, count);
        }
        let expected: usize = trajs.iter().map(|t| t.len() - 3).sum::<usize>() * 3;
        assert_eq!(report.total_samples(), expected);
        let weighted: f64 = report
            .per_horizon
            .iter()
            .map(|e| e.mse * e.n_samples as f64)
            .sum::<f64>()
            / expected as f64;
        assert!((report.overall - weighted).abs() <= 1e-12);
    }

    #[test]
    fn invariant_under_reordering() {
        let phi = FeatureMap::new(PhiKind::Phi1, 2, 2).unwrap();
        let filter = ConstFilter {
            phi,
            value: vec![0.2, -0.1, 0.4, 0.0],
        };
        let mut trajs: Vec<_> = (0..7).map(|i| wavy(5 + i % 3, 2, i as f64)).collect();
        let a = filtering_error(&filter, &trajs, 2).unwrap();
        trajs.reverse();
        let b = filtering_error(&filter, &trajs, 2).unwrap();
        for (x, y) in a.per_horizon.iter().zip(&b.per_horizon) {
            assert!((x.mse - y.mse).abs() <= 1e-12);
        }
    }

    #[test]
    fn horizon_bounds() {
        let phi = FeatureMap::new(PhiKind::Phi1, 2, 1).unwrap();
        let filter = ConstFilter {
            phi,
            value: vec![0.0; 2],
        };
        let trajs = vec![wavy(5, 1, 0.0)];
        assert!(filtering_error(&filter, &trajs, 0).is_err());
        assert!(filtering_error(&filter, &trajs, 3).is_err());
        assert!(filtering_error(&filter, &[], 1).is_err());
    }

    #[test]
    fn warm_up_skips_steps() {
        let phi = FeatureMap::new(PhiKind::Phi1, 1, 1).unwrap();
        let filter = ConstFilter {
            phi,
            value: vec![0.0],
        };
        let trajs = vec![wavy(10, 1, 0.0)];
        let all = filtering_error(&filter, &trajs, 1).unwrap();
        let late = filtering_error_from(&filter, &trajs, 1, 4).unwrap();
        assert_eq!(all.n_steps, 9);
        assert_eq!(late.n_steps, 6);
    }

    #[test]
    fn ratio_values() {
        assert_eq!(error_ratio(0.3, 0.3).unwrap(), 0.0);
        assert!((error_ratio(2.0, 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((error_ratio(0.5, 1.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(
            error_ratio(3.0, 7.0).unwrap(),
            -error_ratio(7.0, 3.0).unwrap()
        );
        assert!(error_ratio(0.0, 1.0).is_err());
        assert!(error_ratio(1.0, -1.0).is_err());
    }

    #[test]
    fn power_values() {
        let zeros = Trajectory::from_flat(vec![0.0; 4], 2).unwrap();
        assert_eq!(trajectory_power(&[zeros]).unwrap(), 0.0);
        let one = Trajectory::new(vec![vec![3.0, 4.0]]).unwrap();
        assert_eq!(trajectory_power(&[one]).unwrap(), 25.0);
        let two = Trajectory::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(trajectory_power(&[two]).unwrap(), 1.0);
        assert!(trajectory_power(&[]).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sqrt()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() <= 1e-9 * naive);
    }

    #[test]
    fn csv_layout() {
        let phi = FeatureMap::new(PhiKind::Phi1, 2, 1).unwrap();
        let filter = ConstFilter {
            phi,
            value: vec![0.0; 2],
        };
        let report = filtering_error(&filter, &[wavy(6, 1, 0.3)], 2).unwrap();
        let mut buf = Vec::new();
        write_report_csv(
            &mut buf,
            "const",
            &report,
            Some(&[report.per_horizon[0].mse, report.per_horizon[1].mse]),
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "method,horizon,mse,n_samples,log_ratio");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("const,1,"));
        assert!(lines[1].ends_with(",0e0"));
    }

    #[test]
    fn capped_filter_scores_fewer_steps() {
        let phi = FeatureMap::new(PhiKind::Phi1, 1, 1).unwrap();
        let filter = ConstFilter {
            phi,
            value: vec![0.0],
        };
        let trajs = vec![wavy(6, 1, 0.0)];
        let full = filtering_error(&filter, &trajs, 1).unwrap();
        let capped = filtering_error(
            &Capped {
                inner: &filter,
                steps: Some(2),
            },
            &trajs,
            1,
        )
        .unwrap();
        assert_eq!(full.n_steps, 5);
        assert_eq!(capped.n_steps, 2);
        let expected = (trajs[0].obs(2)[0].powi(2) + trajs[0].obs(3)[0].powi(2)) / 2.0;
        assert!((capped.one_step() - expected).abs() < 1e-15);
    }
}
