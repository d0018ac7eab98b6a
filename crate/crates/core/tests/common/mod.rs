#![allow(dead_code)]

use chrono::NaiveDate;
use gplv::gp::{KernelFamily, KernelSpec};
use gplv::hyper::{HyperState, Hyperprior};
use gplv::market_data::{scale_to_unit, InputGrid, MarketSnapshot, SnapshotContext};
use gplv::pricer::SolverConfig;
use gplv::sampler::{ChainState, Likelihood, PosteriorSample};
use gplv::synthetic::generate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SPOT: f64 = 100.0;

pub fn context() -> SnapshotContext<f64> {
    SnapshotContext { spot: SPOT, rate: 0.02, dividend: 0.01 }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Gaussian observations of the latent value `log σ` at chosen nodes, so
/// posteriors under a Gaussian prior are available in closed form.
#[derive(Clone, Debug)]
pub struct LogVolObservations {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl Likelihood<f64> for LogVolObservations {
    fn sse(&self, local_vol: &[f64]) -> Option<f64> {
        Some(self.nodes.iter().zip(&self.values).map(|(&n, &y)| (local_vol[n].ln() - y).powi(2)).sum())
    }
    fn n_obs(&self) -> usize {
        self.nodes.len()
    }
}

/// Synthetic quotes from `vol` on a Cartesian grid, with the grid scaled.
pub fn synthetic_problem(
    vol: impl Fn(f64, f64) -> f64,
    maturities: &[f64],
    strikes: &[f64],
    noise_sd: f64,
    seed: u64,
    cfg: &SolverConfig,
) -> (MarketSnapshot<f64>, InputGrid<f64>, Vec<f64>) {
    let q = generate(vol, maturities, strikes, context(), cfg, noise_sd, date("2024-01-02"), &mut rng(seed)).unwrap();
    let grid = scale_to_unit(&q.grid).unwrap();
    (q.snapshot, grid, q.true_vol)
}

/// Hyperparameters at explicit values, given in ξ order.
pub fn hyper_at(prior: &Hyperprior<f64>, family: KernelFamily, theta: &[f64]) -> HyperState<f64> {
    prior.state(family, &prior.xi_of(theta).unwrap()).unwrap()
}

/// Posterior sample built directly from latent surfaces sharing one
/// hyperparameter state.
pub fn fixed_sample(grid: &InputGrid<f64>, hyper: &HyperState<f64>, prior: &Hyperprior<f64>, fs: Vec<Vec<f64>>) -> PosteriorSample<f64> {
    let states = fs
        .into_iter()
        .enumerate()
        .map(|(i, f)| ChainState {
            chain: 0,
            iteration: i,
            f,
            hyper: hyper.clone(),
            sse: 0.0,
            log_lik: 0.0,
            log_post: -(i as f64),
        })
        .collect();
    PosteriorSample {
        grid: grid.clone(),
        family: hyper.kernel.family,
        hyperprior: prior.clone(),
        config: Default::default(),
        states,
    }
}

pub fn kernel(family: KernelFamily, lt: f64, lk: f64, sf: f64) -> KernelSpec<f64> {
    KernelSpec::new(family, lt, lk, sf).unwrap()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}
