//! Calibration across a series of snapshots with a time-augmented kernel.
//!
//! Each chain keeps the latent surfaces of its last few dates. A new date is
//! sampled from the conditional prior given that window times the new
//! date's likelihood only, and the hyperparameters move against a Gaussian
//! approximation of their previous posterior instead of the full history.

use std::collections::VecDeque;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    condition, link, standard_normal_vec, DenseCovariance, GaussianMoments, InputPoint, KernelFamily,
    KernelSpec, TimePoint,
};
use crate::hyper::{HyperState, Hyperprior};
use crate::linalg::{self, Matrix};
use crate::market_data::{InputGrid, MarketSnapshot};
use crate::predictor::PredictiveSample;
use crate::pricer::{implied_vol, PriceSurface};
use crate::sampler::{ess_step, log_likelihood, run_chains, ChainConfig, ChainState, Likelihood, PosteriorSample};
use crate::scalar::Scalar;
use crate::stats;

/// Schedules and windows of a sequential run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequentialConfig {
    /// Full calibration at the first date.
    pub initial: ChainConfig,
    /// Iterations, burn-in and thinning per chain at every later date.
    pub step: ChainConfig,
    pub n_chains: usize,
    /// Past dates the latent update conditions on.
    pub window_latent: usize,
    /// Past dates the hyperparameter update conditions on.
    pub window_hyper: usize,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        Self {
            initial: ChainConfig::default(),
            step: ChainConfig { n_iterations: 2_000, burn_in: 500, thin: 10, ..ChainConfig::default() },
            n_chains: 4,
            window_latent: 2,
            window_hyper: 1,
        }
    }
}

impl SequentialConfig {
    pub fn validate(&self) -> Result<()> {
        self.initial.validate()?;
        self.step.validate()?;
        if self.n_chains == 0 || self.window_latent == 0 || self.window_hyper == 0 {
            return Err(Error::InvalidArgument("chains and windows must be at least 1".into()));
        }
        Ok(())
    }

    fn depth(&self) -> usize {
        self.window_latent.max(self.window_hyper)
    }
}

/// Calendar times scaled to `[0, 1]` over the span of `dates`, with the
/// mean spacing between consecutive dates in the same units.
pub fn scaled_times(dates: &[NaiveDate]) -> Result<(Vec<f64>, f64)> {
    if dates.is_empty() {
        return Err(Error::InvalidArgument("no dates".into()));
    }
    if dates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Data("snapshot dates must be strictly increasing".into()));
    }
    let span = (dates[dates.len() - 1] - dates[0]).num_days() as f64;
    if dates.len() == 1 {
        return Ok((vec![0.0], 1.0));
    }
    let times = dates.iter().map(|d| (*d - dates[0]).num_days() as f64 / span).collect();
    Ok((times, 1.0 / (dates.len() - 1) as f64))
}

/// Time-augmented kernel value `σ_f² k(ΔT) k(ΔK) k(Δt)`.
pub fn time_kernel_eval<T: Scalar>(spec: &KernelSpec<T>, a: &TimePoint<T>, b: &TimePoint<T>) -> T {
    spec.eval_time(a, b)
}

/// One past date held by a chain.
#[derive(Clone, Debug)]
struct Block<T> {
    points: Vec<TimePoint<T>>,
    f: Vec<T>,
}

/// History and current hyperparameters of one chain.
#[derive(Clone, Debug)]
pub struct ChainHistory<T> {
    blocks: VecDeque<Block<T>>,
    pub hyper: HyperState<T>,
}

impl<T: Scalar> ChainHistory<T> {
    /// Number of dates held.
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
    /// Latent surface at the most recent date.
    pub fn latest(&self) -> &[T] {
        &self.blocks.back().expect("history is never empty").f
    }
}

/// Summary kept for dates that have left every window.
#[derive(Clone, Debug, PartialEq)]
pub struct DateSummary<T> {
    pub time: T,
    pub mean: Vec<T>,
    pub sd: Vec<T>,
}

/// State carried from one date to the next.
#[derive(Clone, Debug)]
pub struct SequentialState<T> {
    pub family: KernelFamily,
    pub hyperprior: Hyperprior<T>,
    pub config: SequentialConfig,
    pub times: Vec<T>,
    pub chains: Vec<ChainHistory<T>>,
    /// Gaussian approximation of the hyperparameter posterior in `ξ`.
    pub hyper_approx: GaussianMoments<T>,
    pub archive: Vec<DateSummary<T>>,
}

fn time_points<T: Scalar>(time: T, grid: &InputGrid<T>) -> Vec<TimePoint<T>> {
    grid.scaled_points().into_iter().map(|p| TimePoint::new(time, p)).collect()
}

/// Gaussian with the sample mean and covariance (divisor `n − 1`) of `xs`.
pub fn fit_gaussian<T: Scalar>(xs: &[Vec<T>]) -> GaussianMoments<T> {
    let d = xs.first().map_or(0, Vec::len);
    let mean = (0..d).map(|k| stats::mean(&xs.iter().map(|x| x[k]).collect::<Vec<_>>())).collect();
    GaussianMoments { mean, cov: stats::covariance_matrix(xs) }
}

/// Conditional prior of the latent surface at `targets` given the blocks.
fn conditional<T: Scalar>(kernel: &KernelSpec<T>, blocks: &[&Block<T>], targets: &[TimePoint<T>]) -> Result<GaussianMoments<T>> {
    let train: Vec<TimePoint<T>> = blocks.iter().flat_map(|b| b.points.iter().copied()).collect();
    let values: Vec<T> = blocks.iter().flat_map(|b| b.f.iter().copied()).collect();
    if train.is_empty() {
        let mean = vec![T::zero(); targets.len()];
        return Ok(GaussianMoments { mean, cov: kernel.cross_time(targets, targets) });
    }
    let cov = DenseCovariance::from_time_points(kernel, &train)?;
    Ok(condition(&cov, &kernel.cross_time(targets, &train), &kernel.cross_time(targets, targets), &values))
}

/// Mean and root of a conditional prior.
struct Proposal<T> {
    mean: Vec<T>,
    root: Matrix<T>,
}

impl<T: Scalar> Proposal<T> {
    fn new(m: GaussianMoments<T>) -> Result<Self> {
        let root = m.root()?;
        Ok(Self { mean: m.mean, root })
    }
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<T> {
        let z = standard_normal_vec(self.mean.len(), rng);
        self.mean.iter().zip(linalg::lower_matvec(&self.root, &z)).map(|(&m, d)| m + d).collect()
    }
    fn whiten(&self, f: &[T]) -> Vec<T> {
        let centred: Vec<T> = f.iter().zip(&self.mean).map(|(&x, &m)| x - m).collect();
        linalg::solve_lower(&self.root, &centred)
    }
    fn colour(&self, nu: &[T]) -> Vec<T> {
        self.mean.iter().zip(linalg::lower_matvec(&self.root, nu)).map(|(&m, d)| m + d).collect()
    }
    fn log_density(&self, f: &[T]) -> T {
        let z = self.whiten(f);
        let quad: T = z.iter().map(|&v| v * v).sum();
        let log_det: T = (0..self.mean.len()).map(|i| self.root[(i, i)].ln()).sum::<T>() * T::lit(2.0);
        -T::lit(0.5) * (quad + log_det + T::from_usize_lossy(f.len()) * T::lit(std::f64::consts::TAU.ln()))
    }
}

fn step_rng(seed: u64, step: usize, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(chain as u64);
    rng
}

impl<T: Scalar> SequentialState<T> {
    /// Full calibration at the first date, with the hyperprior extended by
    /// a time length scale.
    pub fn initialise<L: Likelihood<T>>(
        lik: &L,
        grid: &InputGrid<T>,
        time: T,
        family: KernelFamily,
        hyperprior: &Hyperprior<T>,
        config: &SequentialConfig,
    ) -> Result<(Self, PosteriorSample<T>)> {
        config.validate()?;
        let hyperprior = hyperprior.clone().time_augmented();
        let sample = run_chains(lik, grid, family, &hyperprior, &config.initial, config.n_chains)?;
        let points = time_points(time, grid);
        let chains = (0..config.n_chains)
            .map(|c| {
                let last = sample.states.iter().rev().find(|s| s.chain == c).expect("every chain retains states");
                ChainHistory {
                    blocks: VecDeque::from([Block { points: points.clone(), f: last.f.clone() }]),
                    hyper: last.hyper.clone(),
                }
            })
            .collect();
        let xis: Vec<Vec<T>> = sample.states.iter().map(|s| s.hyper.xi.clone()).collect();
        let state = Self {
            family,
            hyperprior,
            config: config.clone(),
            times: vec![time],
            chains,
            hyper_approx: fit_gaussian(&xis),
            archive: Vec::new(),
        };
        Ok((state, sample))
    }

    pub fn latest_time(&self) -> T {
        *self.times.last().expect("initialised with one date")
    }
}

/// Advances every chain to a new date and returns the updated state with
/// the posterior sample at that date.
pub fn sequential_step<T: Scalar, L: Likelihood<T>>(
    state: &SequentialState<T>,
    lik: &L,
    grid: &InputGrid<T>,
    time: T,
) -> Result<(SequentialState<T>, PosteriorSample<T>)> {
    if !(time > state.latest_time()) {
        return Err(Error::InvalidArgument("dates must be processed in increasing time".into()));
    }
    let cfg = &state.config;
    let step = state.times.len();
    let targets = time_points(time, grid);
    let prior_root = state.hyper_approx.root()?;
    let results: Vec<Result<(Vec<ChainState<T>>, ChainHistory<T>)>> = state
        .chains
        .par_iter()
        .enumerate()
        .map(|(c, history)| {
            let mut rng = step_rng(cfg.step.seed, step, c);
            advance_chain(state, history, lik, &targets, &prior_root, c, &mut rng)
        })
        .collect();
    let mut states = Vec::new();
    let mut chains = Vec::with_capacity(results.len());
    for r in results {
        let (s, h) = r?;
        states.extend(s);
        chains.push(h);
    }
    if states.is_empty() {
        return Err(Error::InvalidArgument("step schedule retains no states".into()));
    }
    let xis: Vec<Vec<T>> = states.iter().map(|s| s.hyper.xi.clone()).collect();
    let sample = PosteriorSample {
        grid: grid.clone(),
        family: state.family,
        hyperprior: state.hyperprior.clone(),
        config: cfg.step.clone(),
        states,
    };
    let mut archive = state.archive.clone();
    if state.chains[0].depth() + 1 > cfg.depth() {
        archive.push(summarise_oldest(state));
    }
    let mut times = state.times.clone();
    times.push(time);
    let next = SequentialState {
        family: state.family,
        hyperprior: state.hyperprior.clone(),
        config: cfg.clone(),
        times,
        chains,
        hyper_approx: fit_gaussian(&xis),
        archive,
    };
    Ok((next, sample))
}

/// Across-chain summary of the oldest block, taken before it is dropped.
fn summarise_oldest<T: Scalar>(state: &SequentialState<T>) -> DateSummary<T> {
    let time = state.chains[0].blocks.front().expect("non-empty").points[0].time;
    let surfaces: Vec<Vec<T>> = state
        .chains
        .iter()
        .map(|h| link(&h.blocks.front().expect("non-empty").f, h.hyper.mean_level))
        .collect();
    let n = surfaces[0].len();
    let col = |i: usize| surfaces.iter().map(|s| s[i]).collect::<Vec<_>>();
    DateSummary {
        time,
        mean: (0..n).map(|i| stats::mean(&col(i))).collect(),
        sd: (0..n).map(|i| stats::std_dev(&col(i))).collect(),
    }
}

fn window<T>(blocks: &VecDeque<Block<T>>, k: usize) -> Vec<&Block<T>> {
    blocks.iter().skip(blocks.len().saturating_sub(k)).collect()
}

#[allow(clippy::too_many_arguments)]
fn advance_chain<T: Scalar, L: Likelihood<T>>(
    state: &SequentialState<T>,
    history: &ChainHistory<T>,
    lik: &L,
    targets: &[TimePoint<T>],
    prior_root: &Matrix<T>,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<ChainState<T>>, ChainHistory<T>)> {
    let cfg = &state.config;
    let approx = &state.hyper_approx;
    let n_obs = lik.n_obs();
    let latent_window = window(&history.blocks, cfg.window_latent);
    let hyper_window = window(&history.blocks, cfg.window_hyper);

    let mut hyper = history.hyper.clone();
    let mut latent = Proposal::new(conditional(&hyper.kernel, &latent_window, targets)?)?;
    let mut f = latent.mean.clone();
    let mut sse = lik.sse(&link(&f, hyper.mean_level));
    let mut ll = log_likelihood(sse, n_obs, hyper.noise_sd);
    if !ll.is_finite() {
        return Err(Error::InfeasibleInit(format!("chain {chain}: conditional mean has zero likelihood at the new date")));
    }
    let mut kept = Vec::with_capacity(cfg.step.n_retained());
    for it in 0..cfg.step.n_iterations {
        for _ in 0..cfg.step.cheap_per_expensive.max(1) {
            let draw = latent.draw(rng);
            let (m, sd) = (hyper.mean_level, hyper.noise_sd);
            let mut last_sse = sse;
            let out = ess_step(
                &f,
                ll,
                &draw,
                Some(&latent.mean),
                |g| {
                    last_sse = lik.sse(&link(g, m));
                    log_likelihood(last_sse, n_obs, sd)
                },
                rng,
            );
            if !out.capped {
                sse = last_sse;
            }
            f = out.state;
            ll = out.log_lik;
        }

        // whitened hyperparameter move: hold ν fixed against the short window
        let nu = Proposal::new(conditional(&hyper.kernel, &hyper_window, targets)?)?.whiten(&f);
        let z = standard_normal_vec(approx.mean.len(), rng);
        let draw: Vec<T> =
            approx.mean.iter().zip(linalg::lower_matvec(prior_root, &z)).map(|(&m, d)| m + d).collect();
        let mut best: Option<(HyperState<T>, Vec<T>, Option<T>)> = None;
        let out = ess_step(
            &hyper.xi,
            ll,
            &draw,
            Some(&approx.mean),
            |xi| {
                let Ok(h) = state.hyperprior.state(state.family, xi) else { return T::neg_infinity() };
                let Ok(p) = conditional(&h.kernel, &hyper_window, targets).and_then(Proposal::new) else {
                    return T::neg_infinity();
                };
                let g = p.colour(&nu);
                let s = lik.sse(&link(&g, h.mean_level));
                let l = log_likelihood(s, n_obs, h.noise_sd);
                best = Some((h, g, s));
                l
            },
            rng,
        );
        if !out.capped {
            let (h, g, s) = best.take().expect("accepted point was evaluated");
            hyper = h;
            f = g;
            sse = s;
            ll = out.log_lik;
            latent = Proposal::new(conditional(&hyper.kernel, &latent_window, targets)?)?;
        }

        if it >= cfg.step.burn_in && (it - cfg.step.burn_in) % cfg.step.thin == 0 {
            let xi_prior = approx_log_density(approx, prior_root, &hyper.xi);
            kept.push(ChainState {
                chain,
                iteration: it,
                f: f.clone(),
                hyper: hyper.clone(),
                sse: sse.unwrap_or(T::infinity()),
                log_lik: ll,
                log_post: ll + latent.log_density(&f) + xi_prior,
            });
        }
    }
    let mut blocks = history.blocks.clone();
    blocks.push_back(Block { points: targets.to_vec(), f });
    while blocks.len() > cfg.depth() {
        blocks.pop_front();
    }
    Ok((kept, ChainHistory { blocks, hyper }))
}

fn approx_log_density<T: Scalar>(approx: &GaussianMoments<T>, root: &Matrix<T>, xi: &[T]) -> T {
    Proposal { mean: approx.mean.clone(), root: root.clone() }.log_density(xi)
}

/// Conditional-prior sampler for a new date with the hyperparameters held
/// fixed: latent moves only, against the full window of `history`.
pub fn sample_latent_given_history<T: Scalar, L: Likelihood<T>>(
    kernel: &KernelSpec<T>,
    mean_level: T,
    noise_sd: T,
    history: &[(Vec<TimePoint<T>>, Vec<T>)],
    targets: &[TimePoint<T>],
    lik: &L,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    let blocks: Vec<Block<T>> = history.iter().map(|(p, f)| Block { points: p.clone(), f: f.clone() }).collect();
    let refs: Vec<&Block<T>> = blocks.iter().collect();
    let prop = Proposal::new(conditional(kernel, &refs, targets)?)?;
    let mut rng = step_rng(seed, 0, 0);
    let mut f = prop.mean.clone();
    let n_obs = lik.n_obs();
    let mut ll = log_likelihood(lik.sse(&link(&f, mean_level)), n_obs, noise_sd);
    let mut out = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let draw = prop.draw(&mut rng);
        let step = ess_step(
            &f,
            ll,
            &draw,
            Some(&prop.mean),
            |g| log_likelihood(lik.sse(&link(g, mean_level)), n_obs, noise_sd),
            &mut rng,
        );
        f = step.state;
        ll = step.log_lik;
        out.push(f.clone());
    }
    Ok(out)
}

/// `s`-step-ahead prediction: every state of the posterior sample at time
/// `time` is conditioned on alone, at `time + steps·step_size`, and drawn
/// once at `targets` (scaled coordinates).
pub fn forward_predict<T: Scalar>(
    sample: &PosteriorSample<T>,
    time: T,
    steps: usize,
    step_size: T,
    targets: &[InputPoint<T>],
    seed: u64,
) -> Result<PredictiveSample<T>> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty posterior sample".into()));
    }
    let points = time_points(time, &sample.grid);
    let ahead = time + T::from_usize_lossy(steps) * step_size;
    let target_points: Vec<TimePoint<T>> = targets.iter().map(|&p| TimePoint::new(ahead, p)).collect();
    let parts: Vec<Result<(Vec<T>, GaussianMoments<T>)>> = sample
        .states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let block = Block { points: points.clone(), f: s.f.clone() };
            let moments = conditional(&s.hyper.kernel, &[&block], &target_points)?;
            let mut rng = step_rng(seed, steps, i);
            Ok((moments.sample(&mut rng)?, moments))
        })
        .collect();
    let m = sample.len();
    let mut pred = PredictiveSample {
        targets: targets.to_vec(),
        draws: Vec::with_capacity(m),
        weights: vec![T::one() / T::from_usize_lossy(m); m],
        state_index: (0..m).collect(),
        component_means: Vec::with_capacity(m),
        component_vars: Vec::with_capacity(m),
    };
    for p in parts {
        let (draw, moments) = p?;
        pred.draws.push(draw);
        pred.component_vars.push(moments.variances());
        pred.component_means.push(moments.mean);
    }
    Ok(pred)
}

/// Root mean squared difference over pairs where both are finite, with the
/// number of pairs left out.
pub fn rmse_from_vols<T: Scalar>(model: &[T], market: &[T]) -> (T, usize) {
    let pairs: Vec<T> =
        model.iter().zip(market).filter(|(a, b)| a.is_finite() && b.is_finite()).map(|(&a, &b)| a - b).collect();
    let skipped = model.len() - pairs.len();
    if pairs.is_empty() {
        return (T::nan(), skipped);
    }
    let mse = pairs.iter().map(|&d| d * d).sum::<T>() / T::from_usize_lossy(pairs.len());
    (mse.sqrt(), skipped)
}

/// Implied-volatility RMSE of a model price surface against the quotes of
/// `snapshot` on `grid`.
pub fn rmse_implied<T: Scalar>(model: &PriceSurface<T>, snapshot: &MarketSnapshot<T>, grid: &InputGrid<T>) -> (T, usize) {
    let iv = |price: T, k: T, t: T| {
        implied_vol(price, snapshot.spot, k, t, snapshot.rate, snapshot.dividend_yield).unwrap_or(T::nan())
    };
    let values = model.node_values();
    let (mut ours, mut theirs) = (Vec::new(), Vec::new());
    for &(q, n) in grid.market_index() {
        let quote = &snapshot.quotes[q];
        ours.push(iv(values[n], quote.strike, quote.maturity));
        theirs.push(iv(quote.mid, quote.strike, quote.maturity));
    }
    rmse_from_vols(&ours, &theirs)
}
