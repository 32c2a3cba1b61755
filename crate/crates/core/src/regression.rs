//! Ridge regression, random Fourier features, and the learner interface used
//! as the filter hypothesis class.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::TrainingPair;

/// Scale of the default ridge penalty relative to the mean diagonal of `Z̃ᵀZ̃ / N`.
pub const DEFAULT_LAMBDA_SCALE: f64 = 1e-4;
pub const DEFAULT_RFF_DIM: usize = 1000;
const MEDIAN_SUBSAMPLE: usize = 1000;

/// Affine map `z ↦ W [z; 1]`. `W` is `p × (d + 1)` with the bias in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: DMatrix<f64>,
    lambda: f64,
}

impl LinearModel {
    pub fn new(weights: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if weights.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "weight matrix needs a bias column".into(),
            ));
        }
        Ok(Self { weights, lambda })
    }

    /// Builds a model from a linear part `p × d` and a bias `p`.
    pub fn from_parts(linear: &DMatrix<f64>, bias: &DVector<f64>, lambda: f64) -> Result<Self> {
        if linear.nrows() != bias.len() {
            return Err(Error::DimensionMismatch {
                context: "bias",
                expected: linear.nrows(),
                actual: bias.len(),
            });
        }
        let mut w = DMatrix::zeros(linear.nrows(), linear.ncols() + 1);
        w.columns_mut(0, linear.ncols()).copy_from(linear);
        w.set_column(linear.ncols(), bias);
        Self::new(w, lambda)
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols() - 1
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim();
        if z.len() != d {
            return Err(Error::DimensionMismatch {
                context: "linear model input",
                expected: d,
                actual: z.len(),
            });
        }
        let w = &self.weights;
        Ok((0..w.nrows())
            .map(|r| {
                let row = w.row(r);
                z.iter().zip(row.iter()).map(|(a, b)| a * b).sum::<f64>() + row[d]
            })
            .collect())
    }

    /// Predictions for every row of `inputs` (`N × d`), returned as `N × p`.
    pub fn predict_rows(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "linear model input",
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        let d = self.input_dim();
        let linear = self.weights.columns(0, d);
        let mut out = inputs * linear.transpose();
        let bias = self.weights.column(d);
        for mut row in out.row_iter_mut() {
            row += bias.transpose();
        }
        Ok(out)
    }
}

#[cfg(test)]
fn augment(inputs: &DMatrix<f64>) -> DMatrix<f64> {
    inputs.clone().insert_column(inputs.ncols(), 1.0)
}

/// The scale-aware default penalty: `1e-4 · mean(diag(Z̃ᵀZ̃)) / N`.
pub fn default_lambda(inputs: &DMatrix<f64>) -> f64 {
    let n = inputs.nrows().max(1) as f64;
    let cols = (inputs.ncols() + 1) as f64;
    let sum_sq = inputs.norm_squared() + inputs.nrows() as f64;
    DEFAULT_LAMBDA_SCALE * sum_sq / (n * cols)
}

/// Closed-form ridge regression with an unpenalized bias.
///
/// Minimizes `‖Y − Z Wᵀ − 1 bᵀ‖² + λ‖W‖²`. Because the bias is free, this is
/// solved on column-centered data, `(Z_cᵀZ_c + λI) Wᵀ = Z_cᵀY_c`, with
/// `b = ȳ − W z̄`. Centering keeps constant input columns from becoming
/// collinear with the bias. Cholesky first, falling back to an SVD solve when
/// the factorization fails or is numerically degenerate.
pub fn ridge_fit(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<LinearModel> {
    if inputs.nrows() == 0 {
        return Err(Error::Empty("ridge regression needs at least one sample"));
    }
    if inputs.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            context: "ridge sample count",
            expected: inputs.nrows(),
            actual: targets.nrows(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ridge penalty must be >= 0, got {lambda}"
        )));
    }
    let (z_mean, z) = center(inputs);
    let (y_mean, y) = center(targets);
    let z_t = z.transpose();
    let mut gram = &z_t * &z;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = &z_t * &y;

    let solution = match cholesky_solve(&gram, &rhs) {
        Some(sol) => sol,
        None => svd_solve(&gram, &rhs, lambda)?,
    };
    let linear = solution.transpose();
    let bias = y_mean - &linear * z_mean;
    LinearModel::from_parts(&linear, &bias, lambda)
}

fn center(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = m.row_mean().transpose();
    let mut centered = m.clone();
    for (mut column, mu) in centered.column_iter_mut().zip(mean.iter()) {
        column.add_scalar_mut(-mu);
    }
    (mean, centered)
}

fn cholesky_solve(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = Cholesky::new(gram.clone())?;
    let diag = chol.l_dirty().diagonal();
    let (min, max) = (diag.min(), diag.max());
    let tiny = f64::EPSILON * gram.nrows() as f64;
    if min.is_nan() || min <= 0.0 || (min / max).powi(2) < tiny {
        return None;
    }
    Some(chol.solve(rhs))
}

fn svd_solve(gram: &DMatrix<f64>, rhs: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let svd = gram.clone().svd(true, true);
    let max = svd.singular_values.max();
    let eps = f64::EPSILON * gram.nrows() as f64 * max;
    if lambda == 0.0 && (max == 0.0 || svd.singular_values.min() <= eps) {
        return Err(Error::Singular(
            "normal equations are rank deficient and the ridge penalty is zero".into(),
        ));
    }
    svd.solve(rhs, eps)
        .map_err(|e| Error::Singular(e.to_string()))
}

/// Convenience wrapper over [`ridge_fit`] for row-vector data.
pub fn ridge_fit_rows(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    lambda: f64,
) -> Result<LinearModel> {
    ridge_fit(&rows_to_matrix(inputs)?, &rows_to_matrix(targets)?, lambda)
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch {
            context: "row data",
            expected: cols,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}

/// Random Fourier feature embedding `ψ(z) = √(2/D) cos(Ωz + b)` approximating
/// the Gaussian kernel of bandwidth `σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    omega: DMatrix<f64>,
    phase: DVector<f64>,
    sigma: f64,
    seed: u64,
}

impl RffMap {
    /// Draws `Ω` (rows from `N(0, σ⁻² I)`) and `b` (uniform on `[0, 2π)`) from `seed`.
    pub fn new(input_dim: usize, features: usize, sigma: f64, seed: u64) -> Result<Self> {
        if features == 0 || input_dim == 0 {
            return Err(Error::InvalidParameter(
                "RFF dimensions must be positive".into(),
            ));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "RFF bandwidth must be > 0, got {sigma}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = DMatrix::from_row_iterator(
            features,
            input_dim,
            (0..features * input_dim).map(|_| rng.sample::<f64, _>(StandardNormal) / sigma),
        );
        let phase = DVector::from_iterator(
            features,
            (0..features).map(|_| rng.random::<f64>() * 2.0 * PI),
        );
        Ok(Self {
            omega,
            phase,
            sigma,
            seed,
        })
    }

    /// Map with explicit frequencies and phases.
    pub fn from_parts(
        omega: DMatrix<f64>,
        phase: DVector<f64>,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if omega.nrows() != phase.len() {
            return Err(Error::DimensionMismatch {
                context: "RFF phases",
                expected: omega.nrows(),
                actual: phase.len(),
            });
        }
        Ok(Self {
            omega,
            phase,
            sigma,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.omega.ncols()
    }

    pub fn features(&self) -> usize {
        self.omega.nrows()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "RFF input",
                expected: self.input_dim(),
                actual: z.len(),
            });
        }
        let scale = (2.0 / self.features() as f64).sqrt();
        Ok(self
            .omega
            .row_iter()
            .zip(self.phase.iter())
            .map(|(w, b)| scale * (w.iter().zip(z).map(|(a, c)| a * c).sum::<f64>() + b).cos())
            .collect())
    }

    /// Features for every row of `inputs`, returned as `N × D`.
    pub fn transform_rows(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "RFF input",
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        let scale = (2.0 / self.features() as f64).sqrt();
        let mut proj = inputs * self.omega.transpose();
        for mut row in proj.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.phase.iter()) {
                *v = scale * (*v + b).cos();
            }
        }
        Ok(proj)
    }

    /// SHA-256 over the little-endian bytes of `Ω` (row-major) then `b`.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for r in 0..self.omega.nrows() {
            for v in self.omega.row(r).iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        for v in self.phase.iter() {
            hasher.update(v.to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Median pairwise Euclidean distance, over at most 1000 evenly spaced samples.
pub fn median_heuristic<S: AsRef<[f64]>>(samples: &[S]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(
            "median heuristic needs at least two samples".into(),
        ));
    }
    let picked: Vec<&[f64]> = if samples.len() > MEDIAN_SUBSAMPLE {
        (0..MEDIAN_SUBSAMPLE)
            .map(|i| samples[i * samples.len() / MEDIAN_SUBSAMPLE].as_ref())
            .collect()
    } else {
        samples.iter().map(AsRef::as_ref).collect()
    };
    let mut dists = Vec::with_capacity(picked.len() * (picked.len() - 1) / 2);
    for (i, a) in picked.iter().enumerate() {
        for b in &picked[i + 1..] {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    context: "median heuristic samples",
                    expected: a.len(),
                    actual: b.len(),
                });
            }
            dists.push(
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median <= 0.0 {
        return Err(Error::InvalidParameter(
            "median pairwise distance is zero; samples are degenerate".into(),
        ));
    }
    Ok(median)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed(f64),
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Linear,
    Rff {
        features: usize,
        bandwidth: Bandwidth,
        seed: u64,
    },
}

/// Hyperparameters of a hypothesis class; `lambda: None` selects the
/// scale-aware default at the first fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub kind: LearnerKind,
    pub lambda: Option<f64>,
}

impl Learner {
    pub fn linear(lambda: Option<f64>) -> Self {
        Self {
            kind: LearnerKind::Linear,
            lambda,
        }
    }

    pub fn rff(features: usize, bandwidth: Bandwidth, seed: u64, lambda: Option<f64>) -> Self {
        Self {
            kind: LearnerKind::Rff {
                features,
                bandwidth,
                seed,
            },
            lambda,
        }
    }

    /// Pins data-dependent hyperparameters (median bandwidth, default λ) using
    /// the given inputs, so later fits on other data share them.
    pub fn resolve(&self, inputs: &DMatrix<f64>) -> Result<Learner> {
        let mut resolved = self.clone();
        if let LearnerKind::Rff {
            features,
            bandwidth,
            seed,
        } = &mut resolved.kind
        {
            if *bandwidth == Bandwidth::Median {
                *bandwidth = Bandwidth::Fixed(median_heuristic(&matrix_rows(inputs))?);
            }
            if resolved.lambda.is_none() {
                let Bandwidth::Fixed(sigma) = *bandwidth else {
                    unreachable!()
                };
                let map = RffMap::new(inputs.ncols(), *features, sigma, *seed)?;
                resolved.lambda = Some(default_lambda(&map.transform_rows(inputs)?));
            }
        } else if resolved.lambda.is_none() {
            resolved.lambda = Some(default_lambda(inputs));
        }
        Ok(resolved)
    }

    pub fn fit(&self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Hypothesis> {
        let learner = self.resolve(inputs)?;
        let lambda = learner.lambda.expect("resolved");
        match learner.kind {
            LearnerKind::Linear => Ok(Hypothesis::Linear(ridge_fit(inputs, targets, lambda)?)),
            LearnerKind::Rff {
                features,
                bandwidth,
                seed,
            } => {
                let Bandwidth::Fixed(sigma) = bandwidth else {
                    unreachable!()
                };
                let map = RffMap::new(inputs.ncols(), features, sigma, seed)?;
                let model = ridge_fit(&map.transform_rows(inputs)?, targets, lambda)?;
                Ok(Hypothesis::Rff { map, model })
            }
        }
    }

    pub fn fit_pairs(&self, pairs: &[TrainingPair]) -> Result<Hypothesis> {
        let (inputs, targets) = pairs_to_matrices(pairs)?;
        self.fit(&inputs, &targets)
    }
}

pub fn pairs_to_matrices(pairs: &[TrainingPair]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = pairs.first().ok_or(Error::Empty("no training pairs"))?;
    let (d, p) = (first.input.len(), first.target.len());
    for pair in pairs {
        if pair.input.len() != d || pair.target.len() != p {
            return Err(Error::DimensionMismatch {
                context: "training pair",
                expected: d + p,
                actual: pair.input.len() + pair.target.len(),
            });
        }
    }
    let inputs = DMatrix::from_row_iterator(
        pairs.len(),
        d,
        pairs.iter().flat_map(|p| p.input.iter().copied()),
    );
    let targets = DMatrix::from_row_iterator(
        pairs.len(),
        p,
        pairs.iter().flat_map(|p| p.target.iter().copied()),
    );
    Ok((inputs, targets))
}

/// A fitted, immutable regressor.
#[derive(Debug, Clone, PartialEq)]
pub enum Hypothesis {
    Linear(LinearModel),
    Rff { map: RffMap, model: LinearModel },
}

impl Hypothesis {
    pub fn input_dim(&self) -> usize {
        match self {
            Hypothesis::Linear(model) => model.input_dim(),
            Hypothesis::Rff { map, .. } => map.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Hypothesis::Linear(model) | Hypothesis::Rff { model, .. } => model.output_dim(),
        }
    }

    pub fn model(&self) -> &LinearModel {
        match self {
            Hypothesis::Linear(model) | Hypothesis::Rff { model, .. } => model,
        }
    }

    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Hypothesis::Linear(model) => model.predict(z),
            Hypothesis::Rff { map, model } => model.predict(&map.transform(z)?),
        }
    }

    pub fn predict_rows(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Hypothesis::Linear(model) => model.predict_rows(inputs),
            Hypothesis::Rff { map, model } => model.predict_rows(&map.transform_rows(inputs)?),
        }
    }

    /// `F(m, x)` on the concatenated input `[m; x]`.
    pub fn apply(&self, state: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        let mut z = Vec::with_capacity(state.len() + obs.len());
        z.extend_from_slice(state);
        z.extend_from_slice(obs);
        self.predict(&z)
    }

    pub fn to_document(&self) -> ModelDocument {
        let model = self.model();
        let w = model.weights();
        ModelDocument {
            kind: match self {
                Hypothesis::Linear(_) => "linear".into(),
                Hypothesis::Rff { .. } => "rff".into(),
            },
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            lambda: model.lambda(),
            weights: w.transpose().as_slice().to_vec(),
            rff: match self {
                Hypothesis::Linear(_) => None,
                Hypothesis::Rff { map, .. } => Some(RffDocument {
                    features: map.features(),
                    sigma: map.sigma(),
                    seed: map.seed(),
                    omega_digest: map.digest(),
                }),
            },
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let (regress_dim, rff) = match (doc.kind.as_str(), &doc.rff) {
            ("linear", None) => (doc.input_dim, None),
            ("rff", Some(rff)) => {
                let map = RffMap::new(doc.input_dim, rff.features, rff.sigma, rff.seed)?;
                let computed = map.digest();
                if computed != rff.omega_digest {
                    return Err(Error::Checksum {
                        stored: rff.omega_digest.clone(),
                        computed,
                    });
                }
                (rff.features, Some(map))
            }
            (kind, _) => {
                return Err(Error::InvalidData(format!(
                    "model kind {kind:?} does not match its parameters"
                )))
            }
        };
        let cols = regress_dim + 1;
        if doc.weights.len() != doc.output_dim * cols {
            return Err(Error::DimensionMismatch {
                context: "stored weights",
                expected: doc.output_dim * cols,
                actual: doc.weights.len(),
            });
        }
        let weights = DMatrix::from_row_slice(doc.output_dim, cols, &doc.weights);
        let model = LinearModel::new(weights, doc.lambda)?;
        Ok(match rff {
            None => Hypothesis::Linear(model),
            Some(map) => Hypothesis::Rff { map, model },
        })
    }
}

/// Serialized form of a [`Hypothesis`]; weights are row-major `p × (d + 1)`.
/// RFF frequencies are regenerated from the seed and checked against the digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub kind: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub lambda: f64,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rff: Option<RffDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RffDocument {
    pub features: usize,
    pub sigma: f64,
    pub seed: u64,
    pub omega_digest: String,
}
