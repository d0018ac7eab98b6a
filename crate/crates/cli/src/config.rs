//! Run configuration: one JSON document per run, echoed into the outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use gplv::gp::KernelFamily;
use gplv::pricer::SolverConfig;
use gplv::sampler::ChainConfig;
use gplv::sequential::SequentialConfig;
use gplv::{Context, Prior};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// How the calibration grid is chosen from a snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_maturities: usize,
    pub n_strikes: usize,
    /// Explicit axes; override the greedy selection when both are given.
    pub maturities: Option<Vec<f64>>,
    pub strikes: Option<Vec<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_maturities: 10, n_strikes: 6, maturities: None, strikes: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Quote CSV with header `date,expiry,strike,bid,ask`.
    pub quotes: Option<PathBuf>,
    /// Observation date to calibrate; defaults to the first in the file.
    pub date: Option<NaiveDate>,
    /// Pricing context for dates without an entry in `contexts`.
    pub context: Option<Context>,
    pub contexts: BTreeMap<NaiveDate, Context>,
    /// Apply the bid, expiry and implied-volatility quote filters.
    pub filter: bool,
    pub grid: GridSpec,
    pub family: KernelFamily,
    pub hyperprior: Prior,
    pub chain: ChainConfig,
    pub n_chains: usize,
    pub solver: SolverConfig,
    /// Overrides `chain.seed` (and the step seed in sequential runs).
    pub seed: Option<u64>,
    /// Left out of the echoed config so reruns into another directory
    /// produce identical files.
    #[serde(skip_serializing)]
    pub output: PathBuf,

    /// Posterior directory read by `predict`.
    pub posterior: Option<PathBuf>,
    /// Target CSV with header `maturity,strike`.
    pub targets: Option<PathBuf>,
    pub reweight: bool,

    /// Posterior directories compared by `evidence`.
    pub posteriors: Vec<PathBuf>,

    /// Manifest CSV with header `path`, one quote file per date.
    pub manifest: Option<PathBuf>,
    pub sequential: SequentialConfig,
    pub forecast_steps: Vec<usize>,

    /// Price CSV read by `vix`: header `maturity,strike,price` (or `price_mean`).
    pub prices: Option<PathBuf>,
    /// Local volatility CSV read by `price`: header `maturity,strike,vol`.
    pub surface: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            quotes: None,
            date: None,
            context: None,
            contexts: BTreeMap::new(),
            filter: true,
            grid: GridSpec::default(),
            family: KernelFamily::Matern32,
            hyperprior: Prior::default(),
            chain: ChainConfig::default(),
            n_chains: 1,
            solver: SolverConfig::calibration(),
            seed: None,
            output: PathBuf::from("out"),
            posterior: None,
            targets: None,
            reweight: false,
            posteriors: Vec::new(),
            manifest: None,
            sequential: SequentialConfig::default(),
            forecast_steps: Vec::new(),
            prices: None,
            surface: None,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a config; relative paths inside it are taken relative to the
    /// config file.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.quotes, &mut cfg.posterior, &mut cfg.targets, &mut cfg.manifest, &mut cfg.prices, &mut cfg.surface] {
            resolve(base, p);
        }
        for p in &mut cfg.posteriors {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    /// Applies command-line overrides and copies the seed into the chain
    /// configurations.
    pub fn with_overrides(mut self, output: Option<PathBuf>, seed: Option<u64>, chains: Option<usize>) -> Self {
        if let Some(o) = output {
            self.output = o;
        }
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(n) = chains {
            self.n_chains = n;
            self.sequential.n_chains = n;
        }
        if let Some(s) = self.seed {
            self.chain.seed = s;
            self.sequential.initial.seed = s;
            self.sequential.step.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.hyperprior.validate()?;
        self.chain.validate()?;
        self.solver.validate()?;
        if self.n_chains == 0 {
            return Err(Failure::Usage("n_chains must be at least 1".into()));
        }
        if self.grid.n_maturities == 0 || self.grid.n_strikes == 0 {
            return Err(Failure::Usage("grid dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, Failure> {
        field.as_deref().ok_or_else(|| Failure::Usage(format!("config needs {name:?}")))
    }
}
