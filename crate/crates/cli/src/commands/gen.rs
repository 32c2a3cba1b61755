//! `psim gen`: benchmark system plus train/test trajectories.

use serde::{Deserialize, Serialize};

use psim_core::eval::filtering_error;
use psim_core::lds::{make_benchmark, simulate_many, PredictiveOracle};
use psim_core::psim::{oracle_as_filter, Algorithm, TrainedFilter};
use psim_core::trajectory::write_jsonl;
use psim_core::Error;

use crate::config::{config_bail, derive_seed, Params, Stream};
use crate::output::{Staged, FORMAT_VERSION};

pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const META_FILE: &str = "meta.json";
pub const ORACLE_FILE: &str = "oracle_filter.json";

/// Contents of `meta.json`. Its presence next to a trajectory file tells
/// `eval` where the generating system (and hence the oracle) lives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenMeta {
    pub format_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub k: usize,
    pub obs_dim: usize,
    pub len: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub model: String,
    pub train: String,
    pub test: String,
    pub log_base: String,
    /// Oracle filtering error `e_F` per horizon on the test set.
    pub oracle_error: Vec<f64>,
    pub oracle_error_train: Vec<f64>,
    /// Mean squared observation norm of the test set.
    pub trajectory_power: f64,
}

pub fn run(params: &Params) -> anyhow::Result<()> {
    let seed = params.seed();
    let k = params.k()?;
    let len = params.len();
    let (n_train, n_test) = (params.n_traj(), params.n_test());
    if len < k + 1 {
        config_bail!(
            "trajectories of length {len} are too short for k = {k} (need at least k + 1)"
        );
    }
    if n_train == 0 || n_test == 0 {
        config_bail!("--n-traj and --n-test must be positive");
    }
    let bench = make_benchmark(seed)?;
    let oracle = match PredictiveOracle::new(&bench.model, k) {
        Err(e @ Error::NotObservable { .. }) => {
            config_bail!("benchmark system is not {k}-observable: {e}")
        }
        other => other?,
    };
    let train = simulate_many(&bench.model, n_train, len, derive_seed(seed, Stream::Train))?;
    let test = simulate_many(&bench.model, n_test, len, derive_seed(seed, Stream::Test))?;
    let test_report = filtering_error(&oracle, &test, k)?;
    let train_report = filtering_error(&oracle, &train, k)?;

    let mut staged = Staged::new(params.out());
    staged.add_json(MODEL_FILE, &bench.model.to_document(Some(seed), Some(k)))?;
    for (name, trajs) in [(TRAIN_FILE, &train), (TEST_FILE, &test)] {
        let mut bytes = Vec::new();
        write_jsonl(&mut bytes, trajs)?;
        staged.add(name, bytes);
    }
    let oracle_filter = TrainedFilter::from(oracle_as_filter(&oracle)?);
    staged.add_json(
        ORACLE_FILE,
        &oracle_filter.to_document(Algorithm::Oracle, None),
    )?;
    staged.add_json(
        META_FILE,
        &GenMeta {
            format_version: FORMAT_VERSION,
            command: "gen".into(),
            config_hash: params.hash(),
            seed,
            k,
            obs_dim: bench.model.obs_dim(),
            len,
            n_train,
            n_test,
            model: MODEL_FILE.into(),
            train: TRAIN_FILE.into(),
            test: TEST_FILE.into(),
            log_base: "e".into(),
            oracle_error: test_report.per_horizon.iter().map(|e| e.mse).collect(),
            oracle_error_train: train_report.per_horizon.iter().map(|e| e.mse).collect(),
            trajectory_power: test_report.trajectory_power,
        },
    )?;
    for path in staged.commit()? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
