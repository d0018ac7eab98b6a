//! Posterior sampling over latent surfaces and hyperparameters by blocked
//! Gibbs: elliptical slice moves on `f`, whitened or surrogate-data moves on
//! the kernel parameters, and slice moves on `(m, σ_ε)`.

mod chain;
pub mod ess;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{link, KernelFamily};
use crate::hyper::{HyperState, Hyperprior};
use crate::market_data::{InputGrid, MarketSnapshot};
use crate::pricer::{sse_nodes, DupireSolver, SolverConfig};
use crate::scalar::Scalar;
use crate::stats;

pub use chain::{log_joint, run_chain, run_chains, Chain};
pub use ess::{ellipse_point, ess_step, EssOutcome, MAX_SHRINKS};

/// Squared-error data fit of a local volatility surface.
pub trait Likelihood<T: Scalar>: Sync {
    /// Sum of squared model-minus-market residuals for local volatilities
    /// in grid node order, or `None` when the forward map fails.
    fn sse(&self, local_vol: &[T]) -> Option<T>;
    /// Number of observed quotes.
    fn n_obs(&self) -> usize;
}

impl<T: Scalar, L: Likelihood<T>> Likelihood<T> for &L {
    fn sse(&self, local_vol: &[T]) -> Option<T> {
        (**self).sse(local_vol)
    }
    fn n_obs(&self) -> usize {
        (**self).n_obs()
    }
}

/// Likelihood through the forward-equation solver and the snapshot's mids.
#[derive(Clone, Debug)]
pub struct PricingLikelihood<T> {
    solver: DupireSolver<T>,
    snapshot: MarketSnapshot<T>,
    grid: InputGrid<T>,
}

impl<T: Scalar> PricingLikelihood<T> {
    pub fn new(snapshot: MarketSnapshot<T>, grid: InputGrid<T>, cfg: &SolverConfig) -> Result<Self> {
        let solver = DupireSolver::for_grid(&grid, &snapshot, cfg)?;
        Ok(Self { solver, snapshot, grid })
    }
    pub fn grid(&self) -> &InputGrid<T> {
        &self.grid
    }
    pub fn snapshot(&self) -> &MarketSnapshot<T> {
        &self.snapshot
    }
    pub fn solver(&self) -> &DupireSolver<T> {
        &self.solver
    }
}

impl<T: Scalar> Likelihood<T> for PricingLikelihood<T> {
    fn sse(&self, local_vol: &[T]) -> Option<T> {
        match self.solver.solve(local_vol) {
            Ok(surface) => Some(sse_nodes(surface.node_values(), &self.snapshot, &self.grid)),
            Err(e) => {
                log::debug!("forward solve failed, rejecting state: {e}");
                None
            }
        }
    }
    fn n_obs(&self) -> usize {
        self.grid.market_index().len()
    }
}

/// Likelihood that ignores the data; the posterior equals the prior.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlatLikelihood;

impl<T: Scalar> Likelihood<T> for FlatLikelihood {
    fn sse(&self, _: &[T]) -> Option<T> {
        Some(T::zero())
    }
    fn n_obs(&self) -> usize {
        0
    }
}

/// Gaussian log-likelihood `-SSE/(2σ²) - (n/2) log(2πσ²)`; a failed forward
/// map (`None`) gives `-∞`.
pub fn log_likelihood<T: Scalar>(sse: Option<T>, n_obs: usize, noise_sd: T) -> T {
    match sse {
        Some(s) if s.is_finite() => {
            let var = noise_sd * noise_sd;
            -s / (T::lit(2.0) * var)
                - T::from_usize_lossy(n_obs) / T::lit(2.0) * (T::lit(std::f64::consts::TAU) * var).ln()
        }
        _ => T::neg_infinity(),
    }
}

/// Iteration schedule and move mixture of a chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Latent-surface slice moves per kernel-parameter move.
    pub cheap_per_expensive: usize,
    /// Probability of the surrogate-data move (else whitened).
    pub sdss_probability: f64,
    /// Surrogate noise variance as a multiple of `σ_f²`.
    pub surrogate_scale: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iterations: 50_000,
            burn_in: 10_000,
            thin: 40,
            cheap_per_expensive: 3,
            sdss_probability: 0.5,
            surrogate_scale: 0.1,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iterations {
            return Err(Error::InvalidArgument("burn_in must be smaller than n_iterations".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sdss_probability) {
            return Err(Error::InvalidArgument("sdss_probability must lie in [0, 1]".into()));
        }
        if !(self.surrogate_scale > 0.0) {
            return Err(Error::InvalidArgument("surrogate_scale must be positive".into()));
        }
        Ok(())
    }

    /// Number of states retained after burn-in and thinning.
    pub fn n_retained(&self) -> usize {
        (self.n_iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// One retained state of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState<T> {
    pub chain: usize,
    pub iteration: usize,
    /// Latent values in grid node order.
    pub f: Vec<T>,
    pub hyper: HyperState<T>,
    pub sse: T,
    pub log_lik: T,
    /// Unnormalised log posterior density.
    pub log_post: T,
}

impl<T: Scalar> ChainState<T> {
    pub fn local_vol(&self) -> Vec<T> {
        link(&self.f, self.hyper.mean_level)
    }
}

/// Retained states of one or more chains over a common grid.
#[derive(Clone, Debug)]
pub struct PosteriorSample<T> {
    pub grid: InputGrid<T>,
    pub family: KernelFamily,
    pub hyperprior: Hyperprior<T>,
    pub config: ChainConfig,
    pub states: Vec<ChainState<T>>,
}

impl<T: Scalar> PosteriorSample<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// The retained state with the highest log posterior (first on ties).
pub fn map_estimate<T: Scalar>(sample: &PosteriorSample<T>) -> Result<&ChainState<T>> {
    sample
        .states
        .iter()
        .fold(None, |best: Option<&ChainState<T>>, s| match best {
            Some(b) if b.log_post >= s.log_post => Some(b),
            _ => Some(s),
        })
        .ok_or_else(|| Error::InvalidArgument("empty posterior sample".into()))
}

/// Pointwise mean and standard deviation (divisor `n - 1`) of the local
/// volatility across states.
pub fn posterior_band<T: Scalar>(sample: &PosteriorSample<T>) -> Result<(Vec<T>, Vec<T>)> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty posterior sample".into()));
    }
    let vols: Vec<Vec<T>> = sample.states.iter().map(ChainState::local_vol).collect();
    let n = sample.grid.len();
    let mut mean = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    let mut column = Vec::with_capacity(vols.len());
    for node in 0..n {
        column.clear();
        column.extend(vols.iter().map(|v| v[node]));
        mean.push(stats::mean(&column));
        sd.push(stats::std_dev(&column));
    }
    Ok((mean, sd))
}
