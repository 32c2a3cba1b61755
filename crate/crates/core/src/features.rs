//! Feature maps over future windows, predictive states, and the moment-matching loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{FutureWindow, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiKind {
    /// Stacked window: first moments only.
    Phi1,
    /// Stacked window followed by its elementwise squares.
    Phi2,
}

impl fmt::Display for PhiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhiKind::Phi1 => "phi1",
            PhiKind::Phi2 => "phi2",
        })
    }
}

impl FromStr for PhiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi1" => Ok(PhiKind::Phi1),
            "phi2" => Ok(PhiKind::Phi2),
            other => Err(Error::InvalidParameter(format!(
                "unknown feature map {other:?}"
            ))),
        }
    }
}

/// A deterministic map from a `k`-step window of `n`-dimensional observations
/// to a feature vector of dimension `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: PhiKind,
    pub k: usize,
    pub n: usize,
}

impl FeatureMap {
    pub fn new(kind: PhiKind, k: usize, n: usize) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "feature map needs k >= 1 and n >= 1 (got k={k}, n={n})"
            )));
        }
        Ok(Self { kind, k, n })
    }

    /// Output dimension `p`.
    pub fn dim(&self) -> usize {
        match self.kind {
            PhiKind::Phi1 => self.k * self.n,
            PhiKind::Phi2 => 2 * self.k * self.n,
        }
    }

    /// Length of the first-moment block at the head of every feature vector.
    pub fn first_moment_dim(&self) -> usize {
        self.k * self.n
    }

    pub fn apply(&self, window: &FutureWindow<'_>) -> Result<Vec<f64>> {
        if window.k() != self.k || window.dim() != self.n {
            return Err(Error::DimensionMismatch {
                context: "feature map input",
                expected: self.k * self.n,
                actual: window.k() * window.dim(),
            });
        }
        let values = window.values();
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(values);
        if self.kind == PhiKind::Phi2 {
            out.extend(values.iter().map(|v| v * v));
        }
        Ok(out)
    }

    /// `φ(f_t)` for trajectory `traj`.
    pub fn features_at(&self, traj: &Trajectory, t: usize) -> Result<Vec<f64>> {
        self.apply(&traj.future_window(t, self.k)?)
    }

    /// Predicted observation `x̂_{t+offset}` read from the first-moment block of `m`.
    pub fn extract<'m>(&self, m: &'m [f64], offset: usize) -> Result<&'m [f64]> {
        if offset >= self.k {
            return Err(Error::OffsetOutOfRange { offset, k: self.k });
        }
        if m.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "predictive state",
                expected: self.dim(),
                actual: m.len(),
            });
        }
        Ok(&m[offset * self.n..(offset + 1) * self.n])
    }
}

/// A predictive state `m̂_t`, an estimate of `E[φ(f_t) | h_{t-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveState {
    pub m: Vec<f64>,
    pub t: usize,
}

impl PredictiveState {
    pub fn new(m: Vec<f64>, t: usize) -> Self {
        Self { m, t }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One supervised example: input `z = [m̂_t; x_t]`, target `φ(f_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl TrainingPair {
    pub fn new(state: &[f64], obs: &[f64], target: Vec<f64>) -> Self {
        let mut input = Vec::with_capacity(state.len() + obs.len());
        input.extend_from_slice(state);
        input.extend_from_slice(obs);
        Self { input, target }
    }
}

/// The initial predictive state: mean of `φ(f_1)` across trajectories.
pub fn initial_state(trajs: &[Trajectory], phi: &FeatureMap) -> Result<PredictiveState> {
    if trajs.is_empty() {
        return Err(Error::Empty("initial state needs at least one trajectory"));
    }
    let mut sum = vec![0.0; phi.dim()];
    for (index, traj) in trajs.iter().enumerate() {
        if traj.len() < phi.k {
            return Err(Error::TrajectoryTooShort {
                index,
                len: traj.len(),
                required: phi.k,
            });
        }
        for (acc, v) in sum.iter_mut().zip(phi.features_at(traj, 1)?) {
            *acc += v;
        }
    }
    let count = trajs.len() as f64;
    Ok(PredictiveState::new(
        sum.into_iter().map(|v| v / count).collect(),
        1,
    ))
}

/// Squared distance between two equal-length vectors.
pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "squared distance",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `d(m, f) = ‖m − φ(f)‖²`.
pub fn loss(m: &[f64], window: &FutureWindow<'_>, phi: &FeatureMap) -> Result<f64> {
    squared_distance(m, &phi.apply(window)?)
}

/// Anything that maps an observation sequence to a sequence of predictive states.
///
/// Implementors supply the initial state and a single update step; the
/// provided [`rollout`](StateFilter::rollout) drives them over a trajectory.
pub trait StateFilter {
    fn feature_map(&self) -> &FeatureMap;

    fn initial(&self) -> &[f64];

    /// `m̂_{t+1}` from `m̂_t` and `x_t`.
    fn step(&self, t: usize, state: &[f64], obs: &[f64]) -> Result<Vec<f64>>;

    /// Largest number of steps this filter may be applied for, if bounded.
    fn max_steps(&self) -> Option<usize> {
        None
    }

    /// Number of steps a rollout over `traj` performs.
    fn steps_for(&self, traj: &Trajectory) -> usize {
        let steps = traj.usable_steps(self.feature_map().k);
        self.max_steps().map_or(steps, |limit| steps.min(limit))
    }

    /// Rolls the filter over `traj`, returning `m̂_1, ..., m̂_{T+1}` with `T = L − k`
    /// (capped by [`max_steps`](StateFilter::max_steps)).
    fn rollout(&self, traj: &Trajectory) -> Result<Vec<PredictiveState>> {
        let phi = self.feature_map();
        if traj.dim() != phi.n {
            return Err(Error::DimensionMismatch {
                context: "rollout observations",
                expected: phi.n,
                actual: traj.dim(),
            });
        }
        if traj.len() < phi.k + 1 {
            return Err(Error::TrajectoryTooShort {
                index: 0,
                len: traj.len(),
                required: phi.k + 1,
            });
        }
        let steps = self.steps_for(traj);
        let mut states = Vec::with_capacity(steps + 1);
        states.push(PredictiveState::new(self.initial().to_vec(), 1));
        for t in 1..=steps {
            let next = self.step(t, &states[t - 1].m, traj.obs(t))?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { t });
            }
            states.push(PredictiveState::new(next, t + 1));
        }
        Ok(states)
    }
}
