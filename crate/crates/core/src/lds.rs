//! Linear-Gaussian dynamical systems, the stationary Kalman filter, and its
//! exact equivalent acting on predictive states.
//!
//! The model is
//!
//! ```text
//! s_{t+1} = A s_t + ε_s,   ε_s ~ N(0, Q)
//! x_t     = C s_t + ε_x,   ε_x ~ N(0, R)
//! ```
//!
//! with the first emitting state drawn from `N(s̄₀, Σ₀)`. With `k`-step
//! observability matrix `O = [C; CA; ...; CA^{k-1}]` of full column rank, the
//! predictive state `f̂_t = O ŝ_t` evolves by the affine map
//! `f̂_{t+1} = (Ã − L̃C̃) f̂_t + L̃ x_t` with `Ã = O A O⁺`, `C̃ = C O⁺`, `L̃ = O L`.

#![allow(non_snake_case)]

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, ErrorReport};
use crate::features::{FeatureMap, PhiKind, StateFilter};
use crate::linalg;
use crate::regression::LinearModel;
use crate::trajectory::Trajectory;

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 100_000;
pub const BENCHMARK_SPECTRAL_RADIUS: f64 = 0.9;
pub const BENCHMARK_MAX_CONDITION: f64 = 1e3;
const BENCHMARK_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct LdsModel {
    A: DMatrix<f64>,
    C: DMatrix<f64>,
    Q: DMatrix<f64>,
    R: DMatrix<f64>,
    init_mean: DVector<f64>,
    init_cov: DMatrix<f64>,
    q_factor: DMatrix<f64>,
    r_factor: DMatrix<f64>,
    init_factor: DMatrix<f64>,
}

impl LdsModel {
    pub fn new(
        A: DMatrix<f64>,
        C: DMatrix<f64>,
        Q: DMatrix<f64>,
        R: DMatrix<f64>,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let m = A.nrows();
        let n = C.nrows();
        if m == 0 || n == 0 || !A.is_square() {
            return Err(Error::InvalidParameter(
                "A must be a non-empty square matrix".into(),
            ));
        }
        let dims = [
            ("C columns", C.ncols(), m),
            ("Q rows", Q.nrows(), m),
            ("R rows", R.nrows(), n),
            ("initial mean", init_mean.len(), m),
            ("initial covariance rows", init_cov.nrows(), m),
        ];
        for (what, actual, expected) in dims {
            if actual != expected {
                return Err(Error::InvalidParameter(format!(
                    "{what}: expected {expected}, got {actual}"
                )));
            }
        }
        if A.iter()
            .chain(C.iter())
            .chain(init_mean.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "model has non-finite entries".into(),
            ));
        }
        linalg::check_psd("Q", &Q)?;
        linalg::check_psd("R", &R)?;
        linalg::check_psd("initial covariance", &init_cov)?;
        Ok(Self {
            q_factor: linalg::psd_factor(&Q),
            r_factor: linalg::psd_factor(&R),
            init_factor: linalg::psd_factor(&init_cov),
            A,
            C,
            Q,
            R,
            init_mean,
            init_cov,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.A.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.C.nrows()
    }

    pub fn A(&self) -> &DMatrix<f64> {
        &self.A
    }

    pub fn C(&self) -> &DMatrix<f64> {
        &self.C
    }

    pub fn Q(&self) -> &DMatrix<f64> {
        &self.Q
    }

    pub fn R(&self) -> &DMatrix<f64> {
        &self.R
    }

    pub fn init_mean(&self) -> &DVector<f64> {
        &self.init_mean
    }

    pub fn init_cov(&self) -> &DMatrix<f64> {
        &self.init_cov
    }

    /// Same dynamics with every noise source and the initial spread removed.
    pub fn noise_free(&self) -> Self {
        let (m, n) = (self.state_dim(), self.obs_dim());
        Self::new(
            self.A.clone(),
            self.C.clone(),
            DMatrix::zeros(m, m),
            DMatrix::zeros(n, n),
            self.init_mean.clone(),
            DMatrix::zeros(m, m),
        )
        .expect("zero covariances are valid")
    }

    pub fn with_init(&self, init_mean: DVector<f64>, init_cov: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.A.clone(),
            self.C.clone(),
            self.Q.clone(),
            self.R.clone(),
            init_mean,
            init_cov,
        )
    }

    fn gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
    }

    /// Draws one trajectory `x_1..x_len` from `rng`.
    pub fn simulate_with<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Trajectory> {
        if len == 0 {
            return Err(Error::InvalidParameter(
                "trajectory length must be at least 1".into(),
            ));
        }
        let (m, n) = (self.state_dim(), self.obs_dim());
        let mut s = &self.init_mean + &self.init_factor * Self::gaussian(rng, m);
        let mut data = Vec::with_capacity(len * n);
        for _ in 0..len {
            let x = &self.C * &s + &self.r_factor * Self::gaussian(rng, n);
            data.extend(x.iter());
            s = &self.A * &s + &self.q_factor * Self::gaussian(rng, m);
        }
        Trajectory::from_flat(data, n)
    }
}

pub fn simulate(model: &LdsModel, len: usize, seed: u64) -> Result<Trajectory> {
    model.simulate_with(len, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `count` trajectories drawn from a single seeded stream.
pub fn simulate_many(
    model: &LdsModel,
    count: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| model.simulate_with(len, &mut rng))
        .collect()
}

/// Solves `S X = B` for symmetric PSD `S`, using the pseudo-inverse when `S` is singular.
fn sym_solve(S: &DMatrix<f64>, B: &DMatrix<f64>) -> DMatrix<f64> {
    match Cholesky::new(S.clone()) {
        Some(chol) => chol.solve(B),
        None => linalg::pinv(S) * B,
    }
}

/// One application of the predictive-covariance Riccati map
/// `Σ ↦ AΣAᵀ + Q − AΣCᵀ(CΣCᵀ + R)⁻¹CΣAᵀ`.
pub fn riccati_map(model: &LdsModel, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let (A, C) = (&model.A, &model.C);
    let a_sigma = A * sigma;
    let cross = &a_sigma * C.transpose();
    let innovation = C * sigma * C.transpose() + &model.R;
    let correction = &cross * sym_solve(&innovation, &cross.transpose());
    linalg::symmetrize(&(a_sigma * A.transpose() + &model.Q - correction))
}

/// Fixed point of [`riccati_map`], iterated from `Σ = Q` until successive
/// iterates differ by at most `tol` in Frobenius norm.
pub fn stationary_covariance(model: &LdsModel, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    let mut sigma = model.Q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = riccati_map(model, &sigma);
        residual = (&next - &sigma).norm();
        sigma = next;
        if residual <= tol {
            return Ok(sigma);
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// `L = AΣCᵀ(CΣCᵀ + R)⁻¹`.
///
/// A singular innovation covariance is an error unless `AΣCᵀ` vanishes, in
/// which case the gain is zero.
pub fn stationary_gain(model: &LdsModel, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (A, C) = (&model.A, &model.C);
    let cross = A * sigma * C.transpose();
    let innovation = C * sigma * C.transpose() + &model.R;
    if let Some(chol) = Cholesky::new(innovation.clone()) {
        return Ok(chol.solve(&cross.transpose()).transpose());
    }
    if cross.amax() == 0.0 {
        return Ok(DMatrix::zeros(model.state_dim(), model.obs_dim()));
    }
    Err(Error::Singular(
        "innovation covariance CΣCᵀ + R is singular".into(),
    ))
}

/// Converged covariance and gain of the Kalman filter.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryKalman {
    pub covariance: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

impl StationaryKalman {
    pub fn new(model: &LdsModel) -> Result<Self> {
        let covariance = stationary_covariance(model, RICCATI_TOL, RICCATI_MAX_ITER)?;
        let gain = stationary_gain(model, &covariance)?;
        Ok(Self { covariance, gain })
    }
}

/// `ŝ' = Aŝ − L(Cŝ − x)`.
pub fn kalman_step(
    model: &LdsModel,
    gain: &DMatrix<f64>,
    s: &DVector<f64>,
    x: &[f64],
) -> Result<DVector<f64>> {
    if s.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "kalman state",
            expected: model.state_dim(),
            actual: s.len(),
        });
    }
    if x.len() != model.obs_dim() {
        return Err(Error::DimensionMismatch {
            context: "kalman observation",
            expected: model.obs_dim(),
            actual: x.len(),
        });
    }
    if gain.shape() != (model.state_dim(), model.obs_dim()) {
        return Err(Error::DimensionMismatch {
            context: "kalman gain",
            expected: model.state_dim() * model.obs_dim(),
            actual: gain.len(),
        });
    }
    let innovation = &model.C * s - DVector::from_column_slice(x);
    Ok(&model.A * s - gain * innovation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observability {
    /// `kn × m` stack `[C; CA; ...; CA^{k-1}]`.
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    /// Whether the rank equals the state dimension.
    pub observable: bool,
}

pub fn observability(model: &LdsModel, k: usize) -> Observability {
    let (m, n) = (model.state_dim(), model.obs_dim());
    let mut matrix = DMatrix::zeros(k * n, m);
    let mut block = model.C.clone();
    for i in 0..k {
        matrix.rows_mut(i * n, n).copy_from(&block);
        block = &block * &model.A;
    }
    let rank = linalg::rank(&matrix);
    Observability {
        matrix,
        rank,
        observable: rank == m,
    }
}

/// The stationary Kalman filter rewritten as an affine map on predictive states.
#[derive(Debug, Clone)]
pub struct PredictiveOracle {
    pub kalman: StationaryKalman,
    pub observability: DMatrix<f64>,
    pub observability_pinv: DMatrix<f64>,
    pub A_tilde: DMatrix<f64>,
    pub C_tilde: DMatrix<f64>,
    pub L_tilde: DMatrix<f64>,
    /// `Ã − L̃C̃`.
    pub transition: DMatrix<f64>,
    initial: Vec<f64>,
    phi: FeatureMap,
}

impl PredictiveOracle {
    pub fn new(model: &LdsModel, k: usize) -> Result<Self> {
        Self::with_kalman(model, k, StationaryKalman::new(model)?)
    }

    pub fn with_kalman(model: &LdsModel, k: usize, kalman: StationaryKalman) -> Result<Self> {
        let obs = observability(model, k);
        if !obs.observable {
            return Err(Error::NotObservable {
                k,
                rank: obs.rank,
                state_dim: model.state_dim(),
            });
        }
        let O = obs.matrix;
        let O_pinv = linalg::pinv(&O);
        let A_tilde = &O * &model.A * &O_pinv;
        let C_tilde = &model.C * &O_pinv;
        let L_tilde = &O * &kalman.gain;
        let transition = &A_tilde - &L_tilde * &C_tilde;
        let initial = (&O * &model.init_mean).iter().copied().collect();
        Ok(Self {
            phi: FeatureMap::new(PhiKind::Phi1, k, model.obs_dim())?,
            kalman,
            observability: O,
            observability_pinv: O_pinv,
            A_tilde,
            C_tilde,
            L_tilde,
            transition,
            initial,
        })
    }

    /// `f̂' = (Ã − L̃C̃) f̂ + L̃ x`.
    pub fn oracle_step(&self, f: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.transition.ncols() || x.len() != self.L_tilde.ncols() {
            return Err(Error::DimensionMismatch {
                context: "oracle step input",
                expected: self.transition.ncols() + self.L_tilde.ncols(),
                actual: f.len() + x.len(),
            });
        }
        let next = &self.transition * DVector::from_column_slice(f)
            + &self.L_tilde * DVector::from_column_slice(x);
        Ok(next.iter().copied().collect())
    }

    /// The combined operator `[Ã − L̃C̃, L̃]` as a bias-free linear model on `[f̂; x]`.
    pub fn as_linear_model(&self) -> LinearModel {
        let (p, n) = (self.transition.nrows(), self.L_tilde.ncols());
        let mut linear = DMatrix::zeros(p, p + n);
        linear.columns_mut(0, p).copy_from(&self.transition);
        linear.columns_mut(p, n).copy_from(&self.L_tilde);
        LinearModel::from_parts(&linear, &DVector::zeros(p), 0.0).expect("consistent shapes")
    }
}

impl StateFilter for PredictiveOracle {
    fn feature_map(&self) -> &FeatureMap {
        &self.phi
    }

    fn initial(&self) -> &[f64] {
        &self.initial
    }

    fn step(&self, _t: usize, state: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        self.oracle_step(state, obs)
    }
}

/// Per-horizon filtering error `e_F` of the predictive oracle on `trajs`.
pub fn oracle_filter_error(
    model: &LdsModel,
    k: usize,
    trajs: &[Trajectory],
    horizon: usize,
) -> Result<ErrorReport> {
    if horizon > k {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} exceeds window length {k}"
        )));
    }
    eval::filtering_error(&PredictiveOracle::new(model, k)?, trajs, horizon)
}

/// A seeded synthetic benchmark system with its window length.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub model: LdsModel,
    pub k: usize,
    pub seed: u64,
}

/// Draws a 3-state, 2-observation benchmark system.
///
/// `A` is standard normal rescaled to spectral radius 0.9, `C` standard normal,
/// `Q = GGᵀ + 0.1I` and `R = HHᵀ + 0.1I`. Draws are rejected until `A` is full
/// rank and the 2-step observability matrix has condition number at most 1e3.
/// The initial state distribution is `N(1, Σ_s)`.
pub fn make_benchmark(seed: u64) -> Result<Benchmark> {
    const M: usize = 3;
    const N: usize = 2;
    const K: usize = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    for _ in 0..BENCHMARK_ATTEMPTS {
        let raw = normal(M, M);
        let C = normal(N, M);
        let G = normal(M, M);
        let H = normal(N, N);
        if raw.determinant().abs() < 1e-3 {
            continue;
        }
        let radius = linalg::spectral_radius(&raw);
        let A = raw * (BENCHMARK_SPECTRAL_RADIUS / radius);
        let Q = &G * G.transpose() + DMatrix::identity(M, M) * 0.1;
        let R = &H * H.transpose() + DMatrix::identity(N, N) * 0.1;
        let provisional = LdsModel::new(
            A,
            C,
            Q,
            R,
            DVector::from_element(M, 1.0),
            DMatrix::zeros(M, M),
        )?;
        let obs = observability(&provisional, K);
        if !obs.observable || linalg::condition_number(&obs.matrix) > BENCHMARK_MAX_CONDITION {
            continue;
        }
        let sigma = stationary_covariance(&provisional, RICCATI_TOL, RICCATI_MAX_ITER)?;
        let model = provisional.with_init(DVector::from_element(M, 1.0), sigma)?;
        return Ok(Benchmark { model, k: K, seed });
    }
    Err(Error::InvalidParameter(format!(
        "no admissible benchmark system after {BENCHMARK_ATTEMPTS} draws (seed {seed})"
    )))
}

/// JSON form of an [`LdsModel`]; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdsDocument {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub init_mean: Vec<f64>,
    pub init_cov: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(
    rows: usize,
    cols: usize,
    data: &[f64],
    what: &'static str,
) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            context: what,
            expected: rows * cols,
            actual: data.len(),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl LdsModel {
    pub fn to_document(&self, seed: Option<u64>, k: Option<usize>) -> LdsDocument {
        LdsDocument {
            state_dim: self.state_dim(),
            obs_dim: self.obs_dim(),
            a: row_major(&self.A),
            c: row_major(&self.C),
            q: row_major(&self.Q),
            r: row_major(&self.R),
            init_mean: self.init_mean.iter().copied().collect(),
            init_cov: row_major(&self.init_cov),
            seed,
            k,
        }
    }

    pub fn from_document(doc: &LdsDocument) -> Result<Self> {
        let (m, n) = (doc.state_dim, doc.obs_dim);
        if doc.init_mean.len() != m {
            return Err(Error::DimensionMismatch {
                context: "initial mean",
                expected: m,
                actual: doc.init_mean.len(),
            });
        }
        Self::new(
            from_row_major(m, m, &doc.a, "A")?,
            from_row_major(n, m, &doc.c, "C")?,
            from_row_major(m, m, &doc.q, "Q")?,
            from_row_major(n, n, &doc.r, "R")?,
            DVector::from_column_slice(&doc.init_mean),
            from_row_major(m, m, &doc.init_cov, "initial covariance")?,
        )
    }
}
