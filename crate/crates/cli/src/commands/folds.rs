//! `psim folds`: k-fold cross-validation of the configured trainer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use psim_core::eval::filtering_error;
use psim_core::Trajectory;

use super::eval::method_name;
use super::train::{load, train_filter};
use crate::config::{config_bail, derive_seed, Params, Stream};
use crate::output::Staged;

pub const FOLDS_FILE: &str = "folds.csv";
pub const SUMMARY_FILE: &str = "folds_summary.csv";

/// Fold index of every trajectory: a seeded shuffle dealt round-robin, so
/// fold sizes differ by at most one.
pub fn assign_folds(count: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; count];
    for (j, &i) in order.iter().enumerate() {
        fold[i] = j % folds;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldRow {
    pub fold: usize,
    pub method: String,
    pub horizon: usize,
    pub mse: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub horizon: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator) across folds.
    pub std: f64,
    pub n_folds: usize,
}

pub fn summarize(rows: &[FoldRow], folds: usize) -> Vec<SummaryRow> {
    let horizons = rows.iter().map(|r| r.horizon).max().unwrap_or(0);
    (1..=horizons)
        .map(|h| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.horizon == h)
                .map(|r| r.mse)
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (values.len().max(2) - 1) as f64;
            SummaryRow {
                method: rows[0].method.clone(),
                horizon: h,
                mean,
                std: var.sqrt(),
                n_folds: folds,
            }
        })
        .collect()
}

pub fn compute(
    params: &Params,
    trajs: &[Trajectory],
) -> anyhow::Result<(Vec<usize>, Vec<FoldRow>)> {
    let folds = params.folds()?;
    if trajs.len() < folds {
        config_bail!(
            "{} trajectories cannot be split into {folds} folds",
            trajs.len()
        );
    }
    let phi = params.phi(trajs[0].dim())?;
    let horizon = params.horizon(phi.k)?;
    let assignment = assign_folds(
        trajs.len(),
        folds,
        derive_seed(params.seed(), Stream::Folds),
    );
    let mut rows = Vec::new();
    for f in 0..folds {
        let (test, train): (Vec<_>, Vec<_>) =
            trajs.iter().zip(&assignment).partition(|(_, &a)| a == f);
        let test: Vec<Trajectory> = test.into_iter().map(|(t, _)| t.clone()).collect();
        let train: Vec<Trajectory> = train.into_iter().map(|(t, _)| t.clone()).collect();
        let (filter, report) = train_filter(params, &train, &phi)?;
        let errors = filtering_error(&filter, &test, horizon)?;
        let errors = if params.per_coordinate {
            errors.per_coordinate(phi.n)
        } else {
            errors
        };
        for e in &errors.per_horizon {
            rows.push(FoldRow {
                fold: f,
                method: method_name(report.algorithm),
                horizon: e.horizon,
                mse: e.mse,
                n_samples: e.n_samples,
            });
        }
    }
    Ok((assignment, rows))
}

#[derive(Serialize)]
struct FoldsMeta {
    folds: usize,
    assignment: Vec<usize>,
}

fn to_csv<T: Serialize>(rows: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in rows {
        writer.serialize(r)?;
    }
    writer.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn run(params: &Params) -> anyhow::Result<()> {
    let trajs = load(params.data()?)?;
    let (assignment, rows) = compute(params, &trajs)?;
    let folds = params.folds()?;
    let summary = summarize(&rows, folds);
    let mut staged = Staged::new(params.out());
    let meta = || FoldsMeta {
        folds,
        assignment: assignment.clone(),
    };
    staged.add_csv(FOLDS_FILE, to_csv(&rows)?, "folds", params, meta())?;
    staged.add_csv(SUMMARY_FILE, to_csv(&summary)?, "folds", params, meta())?;
    for path in staged.commit()? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
