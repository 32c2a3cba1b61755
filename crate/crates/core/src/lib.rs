//! Learning to filter with predictive states.
//!
//! A filter here is a regressor `F` that maps the current predictive state
//! `m̂_t` (an estimate of the expected features of the next `k` observations)
//! together with the newest observation `x_t` to the next predictive state
//! `m̂_{t+1}`. Training reduces to supervised regression because the targets,
//! features of observed future windows, are available in the training data.
//!
//! Modules:
//! - [`trajectory`] and [`features`]: observation data, future windows, feature maps, loss
//! - [`regression`]: ridge and random-Fourier-feature learners
//! - [`lds`]: linear-Gaussian benchmark systems and the stationary Kalman oracle
//! - [`psim`]: forward training and dataset-aggregation training of filters
//! - [`baselines`]: autoregressive baseline
//! - [`eval`]: filtering-error metrics

pub mod baselines;
pub mod error;
pub mod eval;
pub mod features;
pub mod lds;
pub mod linalg;
pub mod psim;
pub mod regression;
pub mod trajectory;

pub use error::{Error, Result};
pub use features::{FeatureMap, PhiKind, PredictiveState, StateFilter, TrainingPair};
pub use regression::{Bandwidth, Hypothesis, Learner, LearnerKind, LinearModel, RffMap};
pub use trajectory::{FutureWindow, Trajectory};
