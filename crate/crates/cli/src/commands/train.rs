//! `psim train`: forward training or DAgger on a trajectory file.

use anyhow::Context;
use serde::Serialize;

use psim_core::psim::{
    dagger_train, forward_train, split_validation, Algorithm, TrainReport, TrainedFilter,
};
use psim_core::trajectory::read_trajectories;
use psim_core::{FeatureMap, Trajectory};

use crate::config::{config_bail, derive_seed, Algo, Params, Stream};
use crate::output::Staged;

pub const FILTER_FILE: &str = "filter.json";
pub const REPORT_FILE: &str = "train_report.csv";

pub fn load(path: &std::path::Path) -> anyhow::Result<Vec<Trajectory>> {
    let trajs = read_trajectories(path)
        .with_context(|| format!("loading trajectories from {}", path.display()))?;
    if trajs.is_empty() {
        config_bail!("{} contains no trajectories", path.display());
    }
    Ok(trajs)
}

/// Checks the data can support the configured algorithm before any fitting.
fn validate(params: &Params, trajs: &[Trajectory], phi: &FeatureMap) -> anyhow::Result<()> {
    if let Some((i, t)) = trajs.iter().enumerate().find(|(_, t)| t.len() < phi.k + 1) {
        config_bail!(
            "trajectory {i} has length {} but k = {} needs at least {}",
            t.len(),
            phi.k,
            phi.k + 1
        );
    }
    match params.algo() {
        Algo::Forward => {
            let capacity = trajs.iter().map(|t| t.len() - phi.k).min().unwrap_or(0);
            if let Some(steps) = params.steps {
                if steps == 0 {
                    config_bail!("--steps must be at least 1");
                }
                if steps > capacity {
                    let (i, t) = trajs
                        .iter()
                        .enumerate()
                        .find(|(_, t)| t.len() < steps + phi.k)
                        .expect("some trajectory limits capacity");
                    config_bail!(
                        "forward training with T = {steps} needs trajectories of length T + k = {}, \
                         but trajectory {i} has length {}",
                        steps + phi.k,
                        t.len()
                    );
                }
            }
        }
        Algo::Dagger => {
            params.val_frac()?;
            params.iters()?;
            if trajs.len() < 2 {
                config_bail!("DAgger needs at least two trajectories (training and validation)");
            }
        }
    }
    Ok(())
}

/// Trains the configured filter on `trajs`.
pub fn train_filter(
    params: &Params,
    trajs: &[Trajectory],
    phi: &FeatureMap,
) -> anyhow::Result<(TrainedFilter, TrainReport)> {
    validate(params, trajs, phi)?;
    let learner = params.learner()?;
    Ok(match params.algo() {
        Algo::Forward => {
            let steps = params
                .steps
                .unwrap_or_else(|| trajs.iter().map(|t| t.len() - phi.k).min().unwrap_or(0));
            let (filter, report) = forward_train(trajs, &learner, phi, steps)?;
            (filter.into(), report)
        }
        Algo::Dagger => {
            let (train, val) = split_validation(
                trajs,
                params.val_frac()?,
                derive_seed(params.seed(), Stream::Validation),
            )?;
            let (filter, report) = dagger_train(&train, &val, &learner, phi, params.iters()?)?;
            (filter.into(), report)
        }
    })
}

#[derive(Serialize)]
struct ReportMeta {
    algorithm: Algorithm,
    selected_iteration: Option<usize>,
    n_trajectories: usize,
    lambda: f64,
}

pub fn run(params: &Params) -> anyhow::Result<()> {
    let data = params.data()?;
    let trajs = load(data)?;
    let phi = params.phi(trajs[0].dim())?;
    let (filter, report) = train_filter(params, &trajs, &phi)?;
    let lambda = match &filter {
        TrainedFilter::Stationary(f) => f.hypothesis().model().lambda(),
        TrainedFilter::NonStationary(f) => f.hypotheses()[0].model().lambda(),
    };

    let mut staged = Staged::new(params.out());
    staged.add_json(
        FILTER_FILE,
        &filter.to_document(report.algorithm, report.selected),
    )?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    staged.add_csv(
        REPORT_FILE,
        csv,
        "train",
        params,
        ReportMeta {
            algorithm: report.algorithm,
            selected_iteration: report.selected,
            n_trajectories: trajs.len(),
            lambda,
        },
    )?;
    for path in staged.commit()? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
