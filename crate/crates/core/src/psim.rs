//! Training filters over predictive states.
//!
//! Two trainers are provided:
//!
//! - [`forward_train`] fits one hypothesis per time step, each on the states
//!   produced by rolling out its predecessors, and returns a non-stationary filter.
//! - [`dagger_train`] (driven step-by-step by [`Dagger`]) fits a single stationary
//!   hypothesis by repeatedly rolling out the current hypothesis, aggregating
//!   the states it visits with every previously collected pair, and refitting.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::pairwise_sum;
use crate::features::{initial_state, squared_distance, FeatureMap, PhiKind, StateFilter};
use crate::lds::PredictiveOracle;
use crate::regression::{Hypothesis, Learner, ModelDocument};
use crate::trajectory::Trajectory;

/// A state whose norm exceeds this multiple of the initial state's norm counts as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

fn check_hypothesis(h: &Hypothesis, phi: &FeatureMap) -> Result<()> {
    let p = phi.dim();
    if h.input_dim() != p + phi.n {
        return Err(Error::DimensionMismatch {
            context: "hypothesis input",
            expected: p + phi.n,
            actual: h.input_dim(),
        });
    }
    if h.output_dim() != p {
        return Err(Error::DimensionMismatch {
            context: "hypothesis output",
            expected: p,
            actual: h.output_dim(),
        });
    }
    Ok(())
}

fn check_initial(initial: &[f64], phi: &FeatureMap) -> Result<()> {
    if initial.len() != phi.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial predictive state",
            expected: phi.dim(),
            actual: initial.len(),
        });
    }
    Ok(())
}

/// One hypothesis applied at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryFilter {
    hypothesis: Hypothesis,
    initial: Vec<f64>,
    phi: FeatureMap,
}

impl StationaryFilter {
    pub fn new(hypothesis: Hypothesis, initial: Vec<f64>, phi: FeatureMap) -> Result<Self> {
        check_hypothesis(&hypothesis, &phi)?;
        check_initial(&initial, &phi)?;
        Ok(Self {
            hypothesis,
            initial,
            phi,
        })
    }

    pub fn hypothesis(&self) -> &Hypothesis {
        &self.hypothesis
    }
}

impl StateFilter for StationaryFilter {
    fn feature_map(&self) -> &FeatureMap {
        &self.phi
    }

    fn initial(&self) -> &[f64] {
        &self.initial
    }

    fn step(&self, _t: usize, state: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        self.hypothesis.apply(state, obs)
    }
}

/// Hypotheses `F_1, ..., F_T`; `F_t` is only applied at step `t`, so rollouts
/// stop after `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NonStationaryFilter {
    hypotheses: Vec<Hypothesis>,
    initial: Vec<f64>,
    phi: FeatureMap,
}

impl NonStationaryFilter {
    pub fn new(hypotheses: Vec<Hypothesis>, initial: Vec<f64>, phi: FeatureMap) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::Empty(
                "non-stationary filter needs at least one hypothesis",
            ));
        }
        for h in &hypotheses {
            check_hypothesis(h, &phi)?;
        }
        check_initial(&initial, &phi)?;
        Ok(Self {
            hypotheses,
            initial,
            phi,
        })
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn horizon(&self) -> usize {
        self.hypotheses.len()
    }
}

impl StateFilter for NonStationaryFilter {
    fn feature_map(&self) -> &FeatureMap {
        &self.phi
    }

    fn initial(&self) -> &[f64] {
        &self.initial
    }

    fn step(&self, t: usize, state: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        let h = self.hypotheses.get(t - 1).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "step {t} beyond filter horizon {}",
                self.hypotheses.len()
            ))
        })?;
        h.apply(state, obs)
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.hypotheses.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Forward,
    Dagger,
    Oracle,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Forward => "forward",
            Algorithm::Dagger => "dagger",
            Algorithm::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Time step (forward training) or aggregation iteration (DAgger), from 1.
    pub iteration: usize,
    /// Mean loss of the fitted hypothesis on its own training set.
    pub train_loss: f64,
    pub val_error: Option<f64>,
    pub dataset_size: usize,
    /// Trajectories whose rollout diverged and contributed no pairs.
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub algorithm: Algorithm,
    pub rows: Vec<ReportRow>,
    /// DAgger iteration whose hypothesis was returned.
    pub selected: Option<usize>,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::InvalidData(e.to_string());
        writer
            .write_record([
                "iteration",
                "train_loss",
                "val_error",
                "dataset_size",
                "diverged",
            ])
            .map_err(csv_err)?;
        for row in &self.rows {
            writer
                .write_record([
                    row.iteration.to_string(),
                    format!("{:e}", row.train_loss),
                    row.val_error.map(|v| format!("{v:e}")).unwrap_or_default(),
                    row.dataset_size.to_string(),
                    row.diverged.to_string(),
                ])
                .map_err(csv_err)?;
        }
        writer.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Append-only store of `(z, target)` pairs in flat row-major buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    input_dim: usize,
    target_dim: usize,
}

impl PairSet {
    pub fn new(input_dim: usize, target_dim: usize) -> Self {
        Self {
            inputs: Vec::new(),
            targets: Vec::new(),
            input_dim,
            target_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, state: &[f64], obs: &[f64], target: &[f64]) {
        debug_assert_eq!(state.len() + obs.len(), self.input_dim);
        debug_assert_eq!(target.len(), self.target_dim);
        self.inputs.extend_from_slice(state);
        self.inputs.extend_from_slice(obs);
        self.targets.extend_from_slice(target);
    }

    pub fn extend(&mut self, other: &PairSet) {
        self.inputs.extend_from_slice(&other.inputs);
        self.targets.extend_from_slice(&other.targets);
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    pub fn matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_row_slice(self.len(), self.input_dim, &self.inputs),
            DMatrix::from_row_slice(self.len(), self.target_dim, &self.targets),
        )
    }

    pub fn fit(&self, learner: &Learner) -> Result<Hypothesis> {
        if self.is_empty() {
            return Err(Error::Empty("no training pairs to fit"));
        }
        let (z, y) = self.matrices();
        learner.fit(&z, &y)
    }

    /// Mean squared error of `h` on the stored pairs.
    pub fn mean_loss(&self, h: &Hypothesis) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let (z, y) = self.matrices();
        let residual = h.predict_rows(&z)? - y;
        let per_row: Vec<f64> = residual.row_iter().map(|r| r.norm_squared()).collect();
        Ok(pairwise_sum(&per_row) / self.len() as f64)
    }
}

/// Mean of `d(m̂_{t+1}, φ(f_{t+1}))` over every rollout step of every trajectory.
pub fn filtering_objective<F: StateFilter + ?Sized>(
    filter: &F,
    trajs: &[Trajectory],
) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::Empty("filtering objective needs trajectories"));
    }
    let phi = filter.feature_map();
    let mut sums = Vec::with_capacity(trajs.len());
    let mut count = 0usize;
    for traj in trajs {
        let states = filter.rollout(traj)?;
        let losses: Vec<f64> = states[1..]
            .iter()
            .map(|s| squared_distance(&s.m, &phi.features_at(traj, s.t)?))
            .collect::<Result<_>>()?;
        count += losses.len();
        sums.push(pairwise_sum(&losses));
    }
    if count == 0 {
        return Err(Error::Empty("no filter steps to score"));
    }
    Ok(pairwise_sum(&sums) / count as f64)
}

fn check_lengths(trajs: &[Trajectory], phi: &FeatureMap, required: usize) -> Result<()> {
    for (index, traj) in trajs.iter().enumerate() {
        if traj.dim() != phi.n {
            return Err(Error::DimensionMismatch {
                context: "trajectory observations",
                expected: phi.n,
                actual: traj.dim(),
            });
        }
        if traj.len() < required {
            return Err(Error::TrajectoryTooShort {
                index,
                len: traj.len(),
                required,
            });
        }
    }
    Ok(())
}

/// Forward training over steps `1..=steps`.
///
/// Every trajectory must have length at least `steps + k`. All trajectories
/// contribute to every step's dataset, so `|D_t| = M`.
pub fn forward_train(
    trajs: &[Trajectory],
    learner: &Learner,
    phi: &FeatureMap,
    steps: usize,
) -> Result<(NonStationaryFilter, TrainReport)> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "forward training needs at least one step".into(),
        ));
    }
    if trajs.is_empty() {
        return Err(Error::Empty("forward training needs trajectories"));
    }
    check_lengths(trajs, phi, steps + phi.k)?;
    let initial = initial_state(trajs, phi)?.m;
    let mut states: Vec<Vec<f64>> = vec![initial.clone(); trajs.len()];
    let mut learner = learner.clone();
    let mut hypotheses = Vec::with_capacity(steps);
    let mut rows = Vec::with_capacity(steps);
    for t in 1..=steps {
        let mut data = PairSet::new(phi.dim() + phi.n, phi.dim());
        for (traj, state) in trajs.iter().zip(&states) {
            data.push(state, traj.obs(t), &phi.features_at(traj, t + 1)?);
        }
        if t == 1 {
            learner = learner.resolve(&data.matrices().0)?;
        }
        let h = data.fit(&learner)?;
        rows.push(ReportRow {
            iteration: t,
            train_loss: data.mean_loss(&h)?,
            val_error: None,
            dataset_size: data.len(),
            diverged: 0,
        });
        for (traj, state) in trajs.iter().zip(states.iter_mut()) {
            *state = h.apply(state, traj.obs(t))?;
        }
        hypotheses.push(h);
    }
    let filter = NonStationaryFilter::new(hypotheses, initial, *phi)?;
    Ok((
        filter,
        TrainReport {
            algorithm: Algorithm::Forward,
            rows,
            selected: None,
        },
    ))
}

/// Iterative dataset-aggregation trainer for a stationary filter.
///
/// `F_0` is fitted on pairs whose state input is the initial predictive
/// state `m̂_1` at every step. Each [`step`](Dagger::step) then rolls out the
/// current hypothesis on all training trajectories, appends the visited
/// `(m̂_t, x_t) → φ(f_{t+1})` pairs to the aggregate, refits from scratch, and
/// scores the new hypothesis on the validation trajectories.
pub struct Dagger<'a> {
    train: &'a [Trajectory],
    val: &'a [Trajectory],
    learner: Learner,
    phi: FeatureMap,
    initial: Vec<f64>,
    current: Hypothesis,
    dataset: PairSet,
    candidates: Vec<Hypothesis>,
    rows: Vec<ReportRow>,
}

impl<'a> Dagger<'a> {
    pub fn new(
        train: &'a [Trajectory],
        val: &'a [Trajectory],
        learner: &Learner,
        phi: &FeatureMap,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("DAgger needs training trajectories"));
        }
        if val.is_empty() {
            return Err(Error::Empty("DAgger needs validation trajectories"));
        }
        check_lengths(train, phi, phi.k + 1)?;
        check_lengths(val, phi, phi.k + 1)?;
        let initial = initial_state(train, phi)?.m;
        let mut warm = PairSet::new(phi.dim() + phi.n, phi.dim());
        for traj in train {
            for t in 1..=traj.usable_steps(phi.k) {
                warm.push(&initial, traj.obs(t), &phi.features_at(traj, t + 1)?);
            }
        }
        let learner = learner.resolve(&warm.matrices().0)?;
        let current = warm.fit(&learner)?;
        Ok(Self {
            train,
            val,
            learner,
            phi: *phi,
            initial,
            dataset: PairSet::new(phi.dim() + phi.n, phi.dim()),
            current,
            candidates: Vec::new(),
            rows: Vec::new(),
        })
    }

    /// The aggregated dataset `D_n` after `n` completed iterations.
    pub fn dataset(&self) -> &PairSet {
        &self.dataset
    }

    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// The learner with data-dependent hyperparameters pinned.
    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn current(&self) -> &Hypothesis {
        &self.current
    }

    /// Pairs visited by rolling `h` over one trajectory, or `None` if it diverged.
    fn collect(&self, h: &Hypothesis, traj: &Trajectory) -> Result<Option<PairSet>> {
        let mut pairs = PairSet::new(self.phi.dim() + self.phi.n, self.phi.dim());
        let limit = DIVERGENCE_FACTOR * norm(&self.initial).max(1.0);
        let mut state = self.initial.clone();
        for t in 1..=traj.usable_steps(self.phi.k) {
            if state.iter().any(|v| !v.is_finite()) || norm(&state) > limit {
                return Ok(None);
            }
            let obs = traj.obs(t);
            pairs.push(&state, obs, &self.phi.features_at(traj, t + 1)?);
            state = h.apply(&state, obs)?;
        }
        Ok(Some(pairs))
    }

    /// Runs one aggregation iteration and returns its report row.
    pub fn step(&mut self) -> Result<&ReportRow> {
        let mut fresh = PairSet::new(self.phi.dim() + self.phi.n, self.phi.dim());
        let mut diverged = 0;
        for traj in self.train {
            match self.collect(&self.current, traj)? {
                Some(pairs) => fresh.extend(&pairs),
                None => diverged += 1,
            }
        }
        self.dataset.extend(&fresh);
        let next = self.dataset.fit(&self.learner)?;
        let candidate = StationaryFilter::new(next, self.initial.clone(), self.phi)?;
        let val_error = match filtering_objective(&candidate, self.val) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::Diverged { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let StationaryFilter { hypothesis, .. } = candidate;
        self.rows.push(ReportRow {
            iteration: self.rows.len() + 1,
            train_loss: self.dataset.mean_loss(&hypothesis)?,
            val_error: Some(val_error),
            dataset_size: self.dataset.len(),
            diverged,
        });
        self.current = hypothesis.clone();
        self.candidates.push(hypothesis);
        Ok(self.rows.last().expect("just pushed"))
    }

    /// Returns the hypothesis with the lowest validation error (earliest on ties).
    pub fn finish(self) -> Result<(StationaryFilter, TrainReport)> {
        let best = self
            .rows
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |best, (i, row)| {
                let v = row.val_error.unwrap_or(f64::INFINITY);
                match best {
                    Some((_, b)) if b <= v => best,
                    _ => Some((i, v)),
                }
            })
            .map(|(i, _)| i)
            .ok_or(Error::InvalidParameter(
                "DAgger finished without any iteration".into(),
            ))?;
        let hypothesis = self
            .candidates
            .into_iter()
            .nth(best)
            .expect("one candidate per row");
        let filter = StationaryFilter::new(hypothesis, self.initial, self.phi)?;
        Ok((
            filter,
            TrainReport {
                algorithm: Algorithm::Dagger,
                rows: self.rows,
                selected: Some(best + 1),
            },
        ))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `iterations` rounds of dataset aggregation after the warm-start `F_0`.
pub fn dagger_train(
    train: &[Trajectory],
    val: &[Trajectory],
    learner: &Learner,
    phi: &FeatureMap,
    iterations: usize,
) -> Result<(StationaryFilter, TrainReport)> {
    if iterations == 0 {
        return Err(Error::InvalidParameter(
            "DAgger needs at least one iteration".into(),
        ));
    }
    let mut dagger = Dagger::new(train, val, learner, phi)?;
    for _ in 0..iterations {
        dagger.step()?;
    }
    dagger.finish()
}

/// Holds out `max(1, round(frac · M))` trajectories, chosen by a seeded shuffle,
/// as a validation set. Both parts keep their original relative order.
pub fn split_validation(
    trajs: &[Trajectory],
    frac: f64,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::InvalidParameter(format!(
            "validation fraction must be in [0, 1), got {frac}"
        )));
    }
    if trajs.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two trajectories to hold out a validation set".into(),
        ));
    }
    let count = ((frac * trajs.len() as f64).round() as usize).clamp(1, trajs.len() - 1);
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held = vec![false; trajs.len()];
    for &i in &order[..count] {
        held[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = trajs.iter().cloned().zip(held).partition(|(_, h)| *h);
    Ok((
        train.into_iter().map(|(t, _)| t).collect(),
        val.into_iter().map(|(t, _)| t).collect(),
    ))
}

/// Version written into saved filter documents.
pub const FILTER_FORMAT_VERSION: u32 = 1;

/// A trained filter of either kind, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedFilter {
    Stationary(StationaryFilter),
    NonStationary(NonStationaryFilter),
}

impl StateFilter for TrainedFilter {
    fn feature_map(&self) -> &FeatureMap {
        match self {
            TrainedFilter::Stationary(f) => f.feature_map(),
            TrainedFilter::NonStationary(f) => f.feature_map(),
        }
    }

    fn initial(&self) -> &[f64] {
        match self {
            TrainedFilter::Stationary(f) => f.initial(),
            TrainedFilter::NonStationary(f) => f.initial(),
        }
    }

    fn step(&self, t: usize, state: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        match self {
            TrainedFilter::Stationary(f) => f.step(t, state, obs),
            TrainedFilter::NonStationary(f) => f.step(t, state, obs),
        }
    }

    fn max_steps(&self) -> Option<usize> {
        match self {
            TrainedFilter::Stationary(f) => f.max_steps(),
            TrainedFilter::NonStationary(f) => f.max_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterHeader {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub phi: PhiKind,
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub stationary: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterDocument {
    pub header: FilterHeader,
    pub initial: Vec<f64>,
    pub hypotheses: Vec<ModelDocument>,
}

impl TrainedFilter {
    pub fn to_document(
        &self,
        algorithm: Algorithm,
        selected_iteration: Option<usize>,
    ) -> FilterDocument {
        let phi = *self.feature_map();
        let (stationary, hypotheses) = match self {
            TrainedFilter::Stationary(f) => (true, vec![f.hypothesis.to_document()]),
            TrainedFilter::NonStationary(f) => (
                false,
                f.hypotheses.iter().map(Hypothesis::to_document).collect(),
            ),
        };
        FilterDocument {
            header: FilterHeader {
                format_version: FILTER_FORMAT_VERSION,
                algorithm,
                phi: phi.kind,
                k: phi.k,
                n: phi.n,
                p: phi.dim(),
                stationary,
                selected_iteration,
            },
            initial: self.initial().to_vec(),
            hypotheses,
        }
    }

    pub fn from_document(doc: &FilterDocument) -> Result<Self> {
        let h = &doc.header;
        if h.format_version != FILTER_FORMAT_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported filter format version {}",
                h.format_version
            )));
        }
        let phi = FeatureMap::new(h.phi, h.k, h.n)?;
        if phi.dim() != h.p {
            return Err(Error::DimensionMismatch {
                context: "filter header state dimension",
                expected: phi.dim(),
                actual: h.p,
            });
        }
        let hypotheses = doc
            .hypotheses
            .iter()
            .map(Hypothesis::from_document)
            .collect::<Result<Vec<_>>>()?;
        if h.stationary {
            let [hypothesis]: [Hypothesis; 1] = hypotheses.try_into().map_err(|v: Vec<_>| {
                Error::InvalidData(format!("stationary filter stores {} hypotheses", v.len()))
            })?;
            Ok(TrainedFilter::Stationary(StationaryFilter::new(
                hypothesis,
                doc.initial.clone(),
                phi,
            )?))
        } else {
            Ok(TrainedFilter::NonStationary(NonStationaryFilter::new(
                hypotheses,
                doc.initial.clone(),
                phi,
            )?))
        }
    }
}

impl From<StationaryFilter> for TrainedFilter {
    fn from(f: StationaryFilter) -> Self {
        TrainedFilter::Stationary(f)
    }
}

impl From<NonStationaryFilter> for TrainedFilter {
    fn from(f: NonStationaryFilter) -> Self {
        TrainedFilter::NonStationary(f)
    }
}

/// The predictive oracle as a stationary linear filter.
pub fn oracle_as_filter(oracle: &PredictiveOracle) -> Result<StationaryFilter> {
    StationaryFilter::new(
        Hypothesis::Linear(oracle.as_linear_model()),
        oracle.initial().to_vec(),
        *oracle.feature_map(),
    )
}
