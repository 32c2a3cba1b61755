//! `psim fig2`: error ratio against the oracle as the training set grows.

use serde::Serialize;

use psim_core::baselines::{ar_predict_errors, ar_train};
use psim_core::eval::{error_ratio, filtering_error, filtering_error_from, ErrorReport};
use psim_core::lds::{make_benchmark, simulate_many, LdsDocument, LdsModel, PredictiveOracle};
use psim_core::psim::{dagger_train, forward_train, split_validation};
use psim_core::Trajectory;

use super::gen::{GenMeta, META_FILE};
use super::train::load;
use crate::config::{config_bail, derive_seed, Params, Stream};
use crate::output::{read_json, Staged};

pub const FIG2_FILE: &str = "fig2.csv";
pub const AR_HISTORIES: [usize; 3] = [1, 2, 5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2Row {
    pub method: String,
    pub n_train: usize,
    pub log_n: f64,
    /// First filter step included in both `error` and `oracle_error`.
    pub first_step: usize,
    pub error: f64,
    pub oracle_error: f64,
    pub log_ratio: f64,
    pub error_1step: f64,
    pub oracle_error_1step: f64,
    pub log_ratio_1step: f64,
}

fn row(
    method: String,
    n: usize,
    first_step: usize,
    e: &ErrorReport,
    o: &ErrorReport,
) -> anyhow::Result<Fig2Row> {
    Ok(Fig2Row {
        method,
        n_train: n,
        log_n: (n as f64).ln(),
        first_step,
        error: e.overall,
        oracle_error: o.overall,
        log_ratio: error_ratio(e.overall, o.overall)?,
        error_1step: e.one_step(),
        oracle_error_1step: o.one_step(),
        log_ratio_1step: error_ratio(e.one_step(), o.one_step())?,
    })
}

struct Setup {
    model: LdsModel,
    pool: Vec<Trajectory>,
    test: Vec<Trajectory>,
}

fn setup(params: &Params, grid: &[usize]) -> anyhow::Result<Setup> {
    let largest = *grid.iter().max().expect("grid is non-empty");
    if let Some(dir) = &params.data {
        let meta: GenMeta = read_json(&dir.join(META_FILE))?;
        let doc: LdsDocument = read_json(&dir.join(&meta.model))?;
        let pool = load(&dir.join(&meta.train))?;
        if pool.len() < largest {
            config_bail!(
                "grid size {largest} exceeds the {} training trajectories in {}",
                pool.len(),
                dir.display()
            );
        }
        return Ok(Setup {
            model: LdsModel::from_document(&doc)?,
            pool,
            test: load(&dir.join(&meta.test))?,
        });
    }
    let seed = params.seed();
    let len = params.len();
    if params.n_test() == 0 {
        config_bail!("--n-test must be positive");
    }
    let model = make_benchmark(seed)?.model;
    Ok(Setup {
        pool: simulate_many(&model, largest, len, derive_seed(seed, Stream::Train))?,
        test: simulate_many(
            &model,
            params.n_test(),
            len,
            derive_seed(seed, Stream::Test),
        )?,
        model,
    })
}

/// Runs every method at every grid size. Training sets are nested prefixes
/// of one pool, so larger `N` only adds trajectories.
pub fn compute(params: &Params) -> anyhow::Result<(Vec<Fig2Row>, usize)> {
    let grid = params.grid()?;
    let k = params.k()?;
    let setup = setup(params, &grid)?;
    let phi = params.phi(setup.model.obs_dim())?;
    let shortest = setup
        .pool
        .iter()
        .chain(&setup.test)
        .map(Trajectory::len)
        .min()
        .unwrap_or(0);
    let longest_history = *AR_HISTORIES.iter().max().expect("non-empty");
    if shortest < k + longest_history {
        config_bail!(
            "trajectories of length {shortest} are too short: AR-{longest_history} with k = {k} needs length {}",
            k + longest_history
        );
    }
    let oracle = PredictiveOracle::new(&setup.model, k)?;
    let learner = params.learner()?;
    let horizon = k;
    let iters = params.iters()?;
    let val_frac = params.val_frac()?;
    let oracle_full = filtering_error(&oracle, &setup.test, horizon)?;

    let mut rows = Vec::new();
    for &n in &grid {
        let trajs = &setup.pool[..n];
        let (train, val) = split_validation(
            trajs,
            val_frac,
            derive_seed(params.seed(), Stream::Validation),
        )?;
        let (dagger, _) = dagger_train(&train, &val, &learner, &phi, iters)?;
        rows.push(row(
            "psim-dagger".into(),
            n,
            1,
            &filtering_error(&dagger, &setup.test, horizon)?,
            &oracle_full,
        )?);

        let steps = trajs.iter().map(|t| t.len() - k).min().expect("non-empty");
        let (forward, _) = forward_train(trajs, &learner, &phi, steps)?;
        let oracle_fwd = filtering_error(
            &psim_core::eval::Capped {
                inner: &oracle,
                steps: Some(steps),
            },
            &setup.test,
            horizon,
        )?;
        rows.push(row(
            "psim-forward".into(),
            n,
            1,
            &filtering_error(&forward, &setup.test, horizon)?,
            &oracle_fwd,
        )?);

        for k_h in AR_HISTORIES {
            let ar = ar_train(trajs, k_h, &phi, params.lambda)?;
            let oracle_ar = filtering_error_from(&oracle, &setup.test, horizon, k_h)?;
            rows.push(row(
                format!("ar-{k_h}"),
                n,
                k_h,
                &ar_predict_errors(&ar, &setup.test, horizon)?,
                &oracle_ar,
            )?);
        }
    }
    Ok((rows, setup.test.len()))
}

#[derive(Serialize)]
struct Fig2Meta {
    grid: Vec<usize>,
    k: usize,
    n_test: usize,
    log_base: &'static str,
    error: &'static str,
}

pub fn run(params: &Params) -> anyhow::Result<()> {
    let (rows, n_test) = compute(params)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        writer.serialize(r)?;
    }
    let bytes = writer.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut staged = Staged::new(params.out());
    staged.add_csv(
        FIG2_FILE,
        bytes,
        "fig2",
        params,
        Fig2Meta {
            grid: params.grid()?,
            k: params.k()?,
            n_test,
            log_base: "e",
            error: "sample-weighted mean squared error over horizons 1..k; *_1step columns use horizon 1 only",
        },
    )?;
    for path in staged.commit()? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
