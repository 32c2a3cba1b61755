//! Command-line options, JSON config files, and their merge.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use psim_core::regression::Bandwidth;
use psim_core::{FeatureMap, Learner, PhiKind};

/// An invalid or inconsistent configuration. Exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

macro_rules! config_bail {
    ($($arg:tt)*) => {
        return Err(anyhow::Error::new($crate::config::ConfigError(format!($($arg)*))))
    };
}
pub(crate) use config_bail;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Forward,
    Dagger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerArg {
    Linear,
    Rff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiArg {
    Phi1,
    Phi2,
}

impl From<PhiArg> for PhiKind {
    fn from(p: PhiArg) -> Self {
        match p {
            PhiArg::Phi1 => PhiKind::Phi1,
            PhiArg::Phi2 => PhiKind::Phi2,
        }
    }
}

/// Options shared by every subcommand. Each may also be given as a key of
/// the `--config` JSON file; flags win.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// JSON config file with any of these options (snake_case keys)
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Seed for every random draw [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trajectory file (.jsonl or .csv); for fig2, a directory written by gen
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trained filter file
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Training algorithm [default: dagger]
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    /// Regressor class [default: linear]
    #[arg(long, value_enum)]
    pub learner: Option<LearnerArg>,
    /// Future window length [default: 2]
    #[arg(long)]
    pub k: Option<usize>,
    /// Feature map [default: phi1]
    #[arg(long, value_enum)]
    pub phi: Option<PhiArg>,
    /// Ridge penalty [default: scale-relative]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of random Fourier features [default: 1000]
    #[arg(long)]
    pub rff_dim: Option<usize>,
    /// RFF kernel bandwidth sigma
    #[arg(long, conflicts_with = "median")]
    pub bandwidth: Option<f64>,
    /// Use the median heuristic for the RFF bandwidth (the default)
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub median: bool,
    /// DAgger aggregation iterations [default: 10]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Forward training steps T [default: shortest trajectory length minus k]
    #[arg(long, visible_alias = "T")]
    pub steps: Option<usize>,
    /// Look-ahead horizons to score [default: k]
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Fraction of training trajectories held out for DAgger selection [default: 0.1]
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Number of cross-validation folds [default: 10]
    #[arg(long)]
    pub folds: Option<usize>,

    /// Training trajectories to generate [default: 1000]
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Test trajectories to generate [default: 2000]
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Trajectory length [default: 10]
    #[arg(long)]
    pub len: Option<usize>,
    /// Training-set sizes for fig2 [default: 100,200,500,1000,2000]
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Report errors divided by the observation dimension
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub per_coordinate: bool,
}

macro_rules! prefer {
    ($flags:ident, $file:ident, $($field:ident),*) => {
        Params {
            config: $flags.config,
            median: $flags.median || $file.median,
            per_coordinate: $flags.per_coordinate || $file.per_coordinate,
            $($field: $flags.$field.or($file.$field),)*
        }
    };
}

impl Params {
    /// Loads `--config` (if given) and overlays the flags on it.
    pub fn resolve(self) -> anyhow::Result<Params> {
        let Some(path) = &self.config else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let file: Params = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        let flags = self;
        Ok(prefer!(
            flags, file, seed, out, data, model, algo, learner, k, phi, lambda, rff_dim, bandwidth,
            iters, steps, horizon, val_frac, folds, n_traj, n_test, len, grid
        ))
    }

    /// SHA-256 of the effective non-path settings, so moving files around does
    /// not change it.
    pub fn hash(&self) -> String {
        let mut settings = self.clone();
        settings.out = None;
        settings.data = None;
        settings.model = None;
        let bytes = serde_json::to_vec(&settings).expect("params serialize");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn data(&self) -> anyhow::Result<&Path> {
        match &self.data {
            Some(p) => Ok(p),
            None => config_bail!("--data is required"),
        }
    }

    pub fn model(&self) -> anyhow::Result<&Path> {
        match &self.model {
            Some(p) => Ok(p),
            None => config_bail!("--model is required"),
        }
    }

    pub fn algo(&self) -> Algo {
        self.algo.unwrap_or(Algo::Dagger)
    }

    pub fn k(&self) -> anyhow::Result<usize> {
        match self.k.unwrap_or(2) {
            0 => config_bail!("--k must be at least 1"),
            k => Ok(k),
        }
    }

    pub fn phi(&self, n: usize) -> anyhow::Result<FeatureMap> {
        let kind = self.phi.unwrap_or(PhiArg::Phi1).into();
        Ok(FeatureMap::new(kind, self.k()?, n)?)
    }

    pub fn iters(&self) -> anyhow::Result<usize> {
        match self.iters.unwrap_or(10) {
            0 => config_bail!("--iters must be at least 1"),
            n => Ok(n),
        }
    }

    pub fn val_frac(&self) -> anyhow::Result<f64> {
        let f = self.val_frac.unwrap_or(0.1);
        if !(f > 0.0 && f < 1.0) {
            config_bail!("--val-frac must be in (0, 1), got {f}");
        }
        Ok(f)
    }

    pub fn horizon(&self, k: usize) -> anyhow::Result<usize> {
        let h = self.horizon.unwrap_or(k);
        if h == 0 || h > k {
            config_bail!("--horizon must be in 1..={k} (the window length), got {h}");
        }
        Ok(h)
    }

    pub fn len(&self) -> usize {
        self.len.unwrap_or(10)
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj.unwrap_or(1000)
    }

    pub fn n_test(&self) -> usize {
        self.n_test.unwrap_or(2000)
    }

    pub fn folds(&self) -> anyhow::Result<usize> {
        match self.folds.unwrap_or(10) {
            f if f < 2 => config_bail!("--folds must be at least 2, got {f}"),
            f => Ok(f),
        }
    }

    pub fn grid(&self) -> anyhow::Result<Vec<usize>> {
        let grid = self
            .grid
            .clone()
            .unwrap_or_else(|| vec![100, 200, 500, 1000, 2000]);
        if grid.is_empty() {
            config_bail!("--grid must not be empty");
        }
        if let Some(n) = grid.iter().find(|&&n| n < 2) {
            config_bail!("grid sizes must be at least 2 (one training and one validation trajectory), got {n}");
        }
        Ok(grid)
    }

    pub fn learner(&self) -> anyhow::Result<Learner> {
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                config_bail!("--lambda must be a finite value >= 0, got {l}");
            }
        }
        Ok(match self.learner.unwrap_or(LearnerArg::Linear) {
            LearnerArg::Linear => Learner::linear(self.lambda),
            LearnerArg::Rff => {
                let features = self
                    .rff_dim
                    .unwrap_or(psim_core::regression::DEFAULT_RFF_DIM);
                if features == 0 {
                    config_bail!("--rff-dim must be at least 1");
                }
                let bandwidth = match self.bandwidth {
                    Some(s) if s > 0.0 && s.is_finite() && !self.median => Bandwidth::Fixed(s),
                    Some(s) if !self.median => {
                        config_bail!("--bandwidth must be positive, got {s}")
                    }
                    _ => Bandwidth::Median,
                };
                Learner::rff(
                    features,
                    bandwidth,
                    derive_seed(self.seed(), Stream::Features),
                    self.lambda,
                )
            }
        })
    }
}

/// Independent random streams derived from the single user seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Train = 1,
    Test = 2,
    Validation = 3,
    Features = 4,
    Folds = 5,
}

pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.next_u64()
}
