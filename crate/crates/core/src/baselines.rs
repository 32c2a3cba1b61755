//! Autoregressive baseline.
//!
//! An AR model regresses the features of the next future window directly on
//! the last `k_h` raw observations. It never feeds its own predictions back,
//! so at evaluation time it slides a window over the true observations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{score_states, ErrorReport};
use crate::features::{FeatureMap, PhiKind, PredictiveState};
use crate::regression::{default_lambda, ridge_fit, Hypothesis, LinearModel, ModelDocument};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    history: usize,
    phi: FeatureMap,
    model: LinearModel,
}

impl ArModel {
    pub fn new(history: usize, phi: FeatureMap, model: LinearModel) -> Result<Self> {
        if history == 0 {
            return Err(Error::InvalidParameter(
                "AR history length must be positive".into(),
            ));
        }
        if model.input_dim() != history * phi.n || model.output_dim() != phi.dim() {
            return Err(Error::DimensionMismatch {
                context: "AR model shape",
                expected: history * phi.n * phi.dim(),
                actual: model.input_dim() * model.output_dim(),
            });
        }
        Ok(Self {
            history,
            phi,
            model,
        })
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.phi
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    /// Predicted `φ(f_{t+1})` from observations `x_{t-k_h+1}, ..., x_t`.
    pub fn predict_at(&self, traj: &Trajectory, t: usize) -> Result<Vec<f64>> {
        self.model.predict(history(traj, t, self.history)?)
    }

    pub fn to_document(&self) -> ArDocument {
        ArDocument {
            history: self.history,
            phi: self.phi.kind,
            k: self.phi.k,
            n: self.phi.n,
            model: Hypothesis::Linear(self.model.clone()).to_document(),
        }
    }

    pub fn from_document(doc: &ArDocument) -> Result<Self> {
        let phi = FeatureMap::new(doc.phi, doc.k, doc.n)?;
        match Hypothesis::from_document(&doc.model)? {
            Hypothesis::Linear(model) => Self::new(doc.history, phi, model),
            Hypothesis::Rff { .. } => Err(Error::InvalidData("AR models are linear".into())),
        }
    }
}

/// Stored AR model: the regression document plus the history length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArDocument {
    pub history: usize,
    pub phi: PhiKind,
    pub k: usize,
    pub n: usize,
    pub model: ModelDocument,
}

fn history(traj: &Trajectory, t: usize, k_h: usize) -> Result<&[f64]> {
    if t < k_h || t > traj.len() {
        return Err(Error::WindowUnavailable {
            t,
            k: k_h,
            len: traj.len(),
        });
    }
    let n = traj.dim();
    Ok(&traj.as_flat()[(t - k_h) * n..t * n])
}

/// Steps `t` with a full history behind them and a full target window after.
fn steps(traj: &Trajectory, k_h: usize, k: usize, first: usize) -> std::ops::RangeInclusive<usize> {
    first.max(k_h)..=traj.usable_steps(k)
}

/// Training pairs for steps `t >= first` (and `t >= k_h`) of every trajectory.
fn ar_pairs(
    trajs: &[Trajectory],
    k_h: usize,
    phi: &FeatureMap,
    first: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for traj in trajs {
        if traj.dim() != phi.n {
            return Err(Error::DimensionMismatch {
                context: "AR trajectory",
                expected: phi.n,
                actual: traj.dim(),
            });
        }
        for t in steps(traj, k_h, phi.k, first) {
            inputs.extend_from_slice(history(traj, t, k_h)?);
            targets.extend(phi.features_at(traj, t + 1)?);
        }
    }
    let rows = targets.len() / phi.dim();
    if rows == 0 {
        return Err(Error::Empty(
            "no AR training pairs: trajectories shorter than k_h + k",
        ));
    }
    Ok((
        DMatrix::from_row_slice(rows, k_h * phi.n, &inputs),
        DMatrix::from_row_slice(rows, phi.dim(), &targets),
    ))
}

/// Ridge fit from `[x_{t-k_h+1}; ...; x_t]` to `φ(f_{t+1})` over every
/// `t = k_h..=L-k`. `lambda = None` uses the default scale-relative penalty.
pub fn ar_train(
    trajs: &[Trajectory],
    k_h: usize,
    phi: &FeatureMap,
    lambda: Option<f64>,
) -> Result<ArModel> {
    ar_train_from(trajs, k_h, phi, lambda, 1)
}

/// Like [`ar_train`] but only using steps `t >= first_step`, so models with
/// different history lengths can be fitted on the same targets.
pub fn ar_train_from(
    trajs: &[Trajectory],
    k_h: usize,
    phi: &FeatureMap,
    lambda: Option<f64>,
    first_step: usize,
) -> Result<ArModel> {
    if k_h == 0 {
        return Err(Error::InvalidParameter(
            "AR history length must be positive".into(),
        ));
    }
    if trajs.is_empty() {
        return Err(Error::Empty("AR training needs trajectories"));
    }
    if let Some(traj) = trajs.iter().find(|t| k_h > t.usable_steps(phi.k)) {
        return Err(Error::InvalidParameter(format!(
            "AR history {k_h} exceeds usable steps {} of a length-{} trajectory",
            traj.usable_steps(phi.k),
            traj.len()
        )));
    }
    let (z, y) = ar_pairs(trajs, k_h, phi, first_step)?;
    let lambda = lambda.unwrap_or_else(|| default_lambda(&z));
    ArModel::new(k_h, *phi, ridge_fit(&z, &y, lambda)?)
}

/// Mean squared residual of `model` on its own training pairs from `first_step`.
pub fn ar_training_error(model: &ArModel, trajs: &[Trajectory], first_step: usize) -> Result<f64> {
    let (z, y) = ar_pairs(trajs, model.history, &model.phi, first_step)?;
    let residual = model.model.predict_rows(&z)? - y;
    Ok(residual.norm_squared() / z.nrows() as f64)
}

/// Per-horizon prediction error of the AR model, scoring steps
/// `t = k_h..=L-k` on ground-truth history only.
pub fn ar_predict_errors(
    model: &ArModel,
    trajs: &[Trajectory],
    horizon: usize,
) -> Result<ErrorReport> {
    score_states(trajs, &model.phi, horizon, |traj| {
        steps(traj, model.history, model.phi.k, 1)
            .map(|t| Ok(PredictiveState::new(model.predict_at(traj, t)?, t + 1)))
            .collect()
    })
}
