//! `psim eval`: per-horizon filtering error of a trained filter.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use psim_core::eval::{filtering_error, write_report_csv, Capped, ErrorReport};
use psim_core::lds::{LdsDocument, LdsModel, PredictiveOracle};
use psim_core::psim::{Algorithm, FilterDocument, TrainedFilter};
use psim_core::{StateFilter, Trajectory};

use super::gen::{GenMeta, META_FILE};
use super::train::load;
use crate::config::{config_bail, Params};
use crate::output::{read_json, Staged};

pub const EVAL_FILE: &str = "eval.csv";

pub fn method_name(algorithm: Algorithm) -> String {
    match algorithm {
        Algorithm::Oracle => "oracle".into(),
        other => format!("psim-{other}"),
    }
}

/// The generating system recorded by `gen` next to `data`, if any.
fn find_system(data: &Path) -> anyhow::Result<Option<LdsModel>> {
    let dir = data.parent().unwrap_or(Path::new("."));
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Ok(None);
    }
    let meta: GenMeta = read_json(&meta_path)?;
    let doc: LdsDocument = read_json(&dir.join(&meta.model))?;
    Ok(Some(LdsModel::from_document(&doc)?))
}

/// Oracle error on exactly the steps the filter is scored on, or the reason it is unavailable.
fn oracle_report(
    filter: &TrainedFilter,
    data: &Path,
    trajs: &[Trajectory],
    horizon: usize,
) -> anyhow::Result<Result<ErrorReport, String>> {
    let Some(system) = find_system(data)? else {
        return Ok(Err(format!("no {META_FILE} next to {}", data.display())));
    };
    let phi = filter.feature_map();
    if system.obs_dim() != phi.n {
        return Ok(Err(
            "generating system's observation dimension does not match the filter".into(),
        ));
    }
    let oracle = match PredictiveOracle::new(&system, phi.k) {
        Ok(o) => o,
        Err(e) => return Ok(Err(format!("oracle unavailable: {e}"))),
    };
    let capped = Capped {
        inner: &oracle,
        steps: filter.max_steps(),
    };
    Ok(Ok(filtering_error(&capped, trajs, horizon)?))
}

#[derive(Serialize)]
struct EvalMeta {
    method: String,
    k: usize,
    phi: psim_core::PhiKind,
    horizon: usize,
    log_base: &'static str,
    per_coordinate: bool,
    n_trajectories: usize,
    n_steps: usize,
    trajectory_power: f64,
    overall: f64,
    oracle_error: Option<Vec<f64>>,
    oracle_overall: Option<f64>,
    warning: Option<String>,
}

pub fn run(params: &Params) -> anyhow::Result<()> {
    let doc: FilterDocument = read_json(params.model()?)?;
    let filter = TrainedFilter::from_document(&doc)?;
    let phi = *filter.feature_map();
    let horizon = params.horizon(phi.k)?;
    let data = params.data()?;
    let trajs = load(data)?;
    if trajs[0].dim() != phi.n {
        config_bail!(
            "filter expects {}-dimensional observations but {} has dimension {}",
            phi.n,
            data.display(),
            trajs[0].dim()
        );
    }
    let scale = |r: ErrorReport| {
        if params.per_coordinate {
            r.per_coordinate(phi.n)
        } else {
            r
        }
    };
    let report = scale(filtering_error(&filter, &trajs, horizon)?);
    let oracle = oracle_report(&filter, data, &trajs, horizon)?.map(scale);
    let method = method_name(doc.header.algorithm);

    let mut csv = Vec::new();
    let oracle_errors: Option<Vec<f64>> = oracle
        .as_ref()
        .ok()
        .map(|r| r.per_horizon.iter().map(|e| e.mse).collect());
    write_report_csv(&mut csv, &method, &report, oracle_errors.as_deref())?;
    let warning = oracle.as_ref().err().cloned();
    if let Some(w) = &warning {
        eprintln!("warning: log_ratio omitted: {w}");
        writeln!(csv, "# warning: log_ratio omitted: {w}")?;
    }
    let mut staged = Staged::new(params.out());
    staged.add_csv(
        EVAL_FILE,
        csv,
        "eval",
        params,
        EvalMeta {
            method,
            k: phi.k,
            phi: phi.kind,
            horizon,
            log_base: "e",
            per_coordinate: params.per_coordinate,
            n_trajectories: report.n_trajectories,
            n_steps: report.n_steps,
            trajectory_power: report.trajectory_power,
            overall: report.overall,
            oracle_overall: oracle.as_ref().ok().map(|r| r.overall),
            oracle_error: oracle_errors,
            warning,
        },
    )?;
    for path in staged.commit()? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
