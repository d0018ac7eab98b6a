use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ess_step, log_likelihood, ChainConfig, ChainState, Likelihood, PosteriorSample};
use crate::error::{Error, Result};
use crate::gp::{link, standard_normal_vec, Covariance, KernelFamily, KroneckerCovariance};
use crate::hyper::{ssg, HyperState, Hyperprior};
use crate::market_data::InputGrid;
use crate::scalar::Scalar;
use crate::stats;

/// Deterministic per-chain generator: one seed, one stream per chain.
pub(crate) fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// `log p(ĉ | f, m, σ_ε) + log N(f; 0, K_κ) + log N(ξ; 0, I)`.
pub fn log_joint<T: Scalar, L: Likelihood<T>>(
    f: &[T],
    hyper: &HyperState<T>,
    lik: &L,
    grid: &InputGrid<T>,
) -> Result<T> {
    let cov = KroneckerCovariance::for_grid(&hyper.kernel, grid)?;
    let ll = log_likelihood(lik.sse(&link(f, hyper.mean_level)), lik.n_obs(), hyper.noise_sd);
    Ok(ll + cov.log_density(f) + stats::std_normal_log_density(&hyper.xi))
}

/// Counters of slice-move work.
#[derive(Clone, Copy, Debug, Default)]
pub struct MoveStats {
    pub evaluations: usize,
    pub capped: usize,
}

/// Working state of one Markov chain with its prior factorisation cached.
pub struct Chain<'a, T: Scalar, L> {
    lik: &'a L,
    hyperprior: &'a Hyperprior<T>,
    family: KernelFamily,
    maturities: Vec<T>,
    strikes: Vec<T>,
    f: Vec<T>,
    hyper: HyperState<T>,
    cov: KroneckerCovariance<T>,
    sse: Option<T>,
    log_lik: T,
    surrogate_scale: T,
    pub stats: MoveStats,
}

impl<'a, T: Scalar, L: Likelihood<T>> Chain<'a, T, L> {
    /// Starts at `ξ = 0` and `f = 0`.
    pub fn new(
        lik: &'a L,
        grid: &InputGrid<T>,
        family: KernelFamily,
        hyperprior: &'a Hyperprior<T>,
        surrogate_scale: f64,
    ) -> Result<Self> {
        let xi = vec![T::zero(); hyperprior.dim()];
        Self::from_state(lik, grid, family, hyperprior, vec![T::zero(); grid.len()], &xi, surrogate_scale)
    }

    pub fn from_state(
        lik: &'a L,
        grid: &InputGrid<T>,
        family: KernelFamily,
        hyperprior: &'a Hyperprior<T>,
        f: Vec<T>,
        xi: &[T],
        surrogate_scale: f64,
    ) -> Result<Self> {
        hyperprior.validate()?;
        if f.len() != grid.len() {
            return Err(Error::InvalidArgument(format!("expected {} latent values, got {}", grid.len(), f.len())));
        }
        let hyper = hyperprior.state(family, xi)?;
        let maturities = grid.scaled_maturities();
        let strikes = grid.scaled_strikes();
        let cov = KroneckerCovariance::new(&hyper.kernel, &maturities, &strikes)?;
        let sse = lik.sse(&link(&f, hyper.mean_level));
        let log_lik = log_likelihood(sse, lik.n_obs(), hyper.noise_sd);
        if !log_lik.is_finite() {
            return Err(Error::InfeasibleInit(format!(
                "log-likelihood of the starting state is {log_lik}; the forward solve failed or the fit is degenerate"
            )));
        }
        Ok(Self {
            lik,
            hyperprior,
            family,
            maturities,
            strikes,
            f,
            hyper,
            cov,
            sse,
            log_lik,
            surrogate_scale: T::lit(surrogate_scale),
            stats: MoveStats::default(),
        })
    }

    pub fn f(&self) -> &[T] {
        &self.f
    }
    pub fn hyper(&self) -> &HyperState<T> {
        &self.hyper
    }
    pub fn covariance(&self) -> &KroneckerCovariance<T> {
        &self.cov
    }
    pub fn log_lik(&self) -> T {
        self.log_lik
    }

    /// Unnormalised log posterior of the current state.
    pub fn log_joint(&self) -> T {
        self.log_lik + self.cov.log_density(&self.f) + stats::std_normal_log_density(&self.hyper.xi)
    }

    pub fn state(&self, chain: usize, iteration: usize) -> ChainState<T> {
        ChainState {
            chain,
            iteration,
            f: self.f.clone(),
            hyper: self.hyper.clone(),
            sse: self.sse.unwrap_or(T::nan()),
            log_lik: self.log_lik,
            log_post: self.log_joint(),
        }
    }

    fn evaluate(&self, f: &[T], mean_level: T, noise_sd: T) -> (Option<T>, T) {
        let sse = self.lik.sse(&link(f, mean_level));
        (sse, log_likelihood(sse, self.lik.n_obs(), noise_sd))
    }

    fn with_xi(&self, indices: &[usize], values: &[T]) -> Vec<T> {
        let mut xi = self.hyper.xi.clone();
        for (&i, &v) in indices.iter().zip(values) {
            xi[i] = v;
        }
        xi
    }

    /// Elliptical slice move on `f` under the current hyperparameters.
    pub fn update_latent<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let draw = self.cov.sample(rng);
        let (m, sd) = (self.hyper.mean_level, self.hyper.noise_sd);
        let mut last_sse = None;
        let out = ess_step(
            &self.f,
            self.log_lik,
            &draw,
            None,
            |x| {
                let (sse, ll) = self.evaluate(x, m, sd);
                last_sse = sse;
                ll
            },
            rng,
        );
        self.record(&out);
        if !out.capped {
            self.f = out.state;
            self.sse = last_sse;
            self.log_lik = out.log_lik;
        }
    }

    /// Kernel-parameter move with the whitened latent `ν = L_κ⁻¹ f` held
    /// fixed, so `f = L_κ ν` moves with `κ`.
    pub fn whitened_kappa_update<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let nu = self.cov.whiten(&self.f);
        let idx: Vec<usize> = self.hyperprior.kernel_indices().collect();
        let current: Vec<T> = idx.iter().map(|&i| self.hyper.xi[i]).collect();
        let draw = standard_normal_vec(idx.len(), rng);
        let (m, sd) = (self.hyper.mean_level, self.hyper.noise_sd);
        let mut last = None;
        let out = ess_step(
            &current,
            self.log_lik,
            &draw,
            None,
            |x| {
                let xi = self.with_xi(&idx, x);
                let Ok(hyper) = self.hyperprior.state(self.family, &xi) else { return T::neg_infinity() };
                let Ok(cov) = KroneckerCovariance::new(&hyper.kernel, &self.maturities, &self.strikes) else {
                    return T::neg_infinity();
                };
                let f = cov.lower_matvec(&nu);
                let (sse, ll) = self.evaluate(&f, m, sd);
                last = Some((hyper, cov, f, sse));
                ll
            },
            rng,
        );
        self.record(&out);
        if let (false, Some((hyper, cov, f, sse))) = (out.capped, last) {
            self.hyper = hyper;
            self.cov = cov;
            self.f = f;
            self.sse = sse;
            self.log_lik = out.log_lik;
        }
    }

    /// Surrogate-data move: draw `g ~ N(f, S)` with `S = α σ_f² I`, then
    /// slice-sample `κ` with `η = L_R⁻¹ (f - m_g)` held fixed, targeting
    /// `p(ĉ | f) N(g; 0, K + S) p(ξ)`. `S` follows `σ_f` of each proposal.
    pub fn sdss_kappa_update<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let alpha = self.surrogate_scale;
        let noise_var = |h: &HyperState<T>| alpha * h.kernel.signal_var();
        let s_now = noise_var(&self.hyper);
        let z: Vec<T> = standard_normal_vec(self.f.len(), rng);
        let g: Vec<T> = self.f.iter().zip(&z).map(|(&f, &e)| f + s_now.sqrt() * e).collect();

        let tiny = T::min_positive_value();
        let eig = self.cov.eigen();
        let g_rot = eig.rotate_back(&g);
        let post_mean = |values: &[T], g_rot: &[T], s: T, eig: &crate::gp::KroneckerEigen<T>| {
            let shrunk: Vec<T> = values.iter().zip(g_rot).map(|(&l, &gr)| l / (l + s) * gr).collect();
            eig.rotate(&shrunk)
        };
        let root_diag = |values: &[T], s: T| -> Vec<T> {
            values.iter().map(|&l| (s * l / (l + s)).max(tiny).sqrt()).collect()
        };
        let surrogate_log_density = |values: &[T], g_rot: &[T], s: T| -> T {
            let mut acc = T::zero();
            for (&l, &gr) in values.iter().zip(g_rot) {
                let v = l + s;
                acc += gr * gr / v + v.ln();
            }
            -T::lit(0.5) * (acc + T::from_usize_lossy(values.len()) * T::lit(std::f64::consts::TAU.ln()))
        };

        let mean_now = post_mean(&eig.values, &g_rot, s_now, &eig);
        let root_now = root_diag(&eig.values, s_now);
        let resid: Vec<T> = self.f.iter().zip(&mean_now).map(|(&f, &m)| f - m).collect();
        let eta: Vec<T> = eig.rotate_back(&resid).iter().zip(&root_now).map(|(&r, &d)| r / d).collect();
        let current_target = self.log_lik + surrogate_log_density(&eig.values, &g_rot, s_now);

        let idx: Vec<usize> = self.hyperprior.kernel_indices().collect();
        let current: Vec<T> = idx.iter().map(|&i| self.hyper.xi[i]).collect();
        let draw = standard_normal_vec(idx.len(), rng);
        let (m, sd) = (self.hyper.mean_level, self.hyper.noise_sd);
        let mut last = None;
        let out = ess_step(
            &current,
            current_target,
            &draw,
            None,
            |x| {
                let xi = self.with_xi(&idx, x);
                let Ok(hyper) = self.hyperprior.state(self.family, &xi) else { return T::neg_infinity() };
                let Ok(cov) = KroneckerCovariance::new(&hyper.kernel, &self.maturities, &self.strikes) else {
                    return T::neg_infinity();
                };
                let eig = cov.eigen();
                let s = noise_var(&hyper);
                let g_rot = eig.rotate_back(&g);
                let mean = post_mean(&eig.values, &g_rot, s, &eig);
                let scaled: Vec<T> = root_diag(&eig.values, s).iter().zip(&eta).map(|(&d, &e)| d * e).collect();
                let f: Vec<T> = eig.rotate(&scaled).iter().zip(&mean).map(|(&a, &b)| a + b).collect();
                let (sse, ll) = self.evaluate(&f, m, sd);
                let target = ll + surrogate_log_density(&eig.values, &g_rot, s);
                last = Some((hyper, cov, f, sse, ll));
                target
            },
            rng,
        );
        self.record(&out);
        if let (false, Some((hyper, cov, f, sse, ll))) = (out.capped, last) {
            self.hyper = hyper;
            self.cov = cov;
            self.f = f;
            self.sse = sse;
            self.log_lik = ll;
        }
    }

    /// Slice move on the `ξ` of `(m, σ_ε)`; `f` and `κ` are untouched.
    pub fn likelihood_hyper_update<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let idx = self.hyperprior.likelihood_indices();
        let bounds = self.hyperprior.bounds();
        let current = [self.hyper.xi[idx[0]], self.hyper.xi[idx[1]]];
        let draw: Vec<T> = standard_normal_vec(2, rng);
        let (m_now, sse_now) = (self.hyper.mean_level, self.sse);
        let mut last = None;
        let out = ess_step(
            &current,
            self.log_lik,
            &draw,
            None,
            |x| {
                let m = ssg(x[0], &bounds[idx[0]]);
                let sd = ssg(x[1], &bounds[idx[1]]);
                if !(sd > T::zero()) {
                    return T::neg_infinity();
                }
                // the forward solve only depends on m
                let sse = if m == m_now { sse_now } else { self.lik.sse(&link(&self.f, m)) };
                last = Some((m, sd, sse));
                log_likelihood(sse, self.lik.n_obs(), sd)
            },
            rng,
        );
        self.record(&out);
        if let (false, Some((m, sd, sse))) = (out.capped, last) {
            self.hyper.xi[idx[0]] = out.state[0];
            self.hyper.xi[idx[1]] = out.state[1];
            self.hyper.mean_level = m;
            self.hyper.noise_sd = sd;
            self.sse = sse;
            self.log_lik = out.log_lik;
        }
    }

    /// One sweep: `cheap_per_expensive` latent moves, one kernel move
    /// (surrogate-data with probability `sdss_probability`, else whitened),
    /// one `(m, σ_ε)` move.
    pub fn iterate<R: Rng + ?Sized>(&mut self, cfg: &ChainConfig, rng: &mut R) {
        for _ in 0..cfg.cheap_per_expensive {
            self.update_latent(rng);
        }
        if rng.random::<f64>() < cfg.sdss_probability {
            self.sdss_kappa_update(rng);
        } else {
            self.whitened_kappa_update(rng);
        }
        self.likelihood_hyper_update(rng);
    }

    fn record(&mut self, out: &super::EssOutcome<T>) {
        self.stats.evaluations += out.evaluations;
        self.stats.capped += usize::from(out.capped);
    }
}

/// Runs one chain (index 0) from `ξ = 0`, `f = 0`.
pub fn run_chain<T: Scalar, L: Likelihood<T>>(
    lik: &L,
    grid: &InputGrid<T>,
    family: KernelFamily,
    hyperprior: &Hyperprior<T>,
    cfg: &ChainConfig,
) -> Result<PosteriorSample<T>> {
    run_chains(lik, grid, family, hyperprior, cfg, 1)
}

/// Runs `n_chains` independent chains in parallel, each on its own stream
/// of the configured seed, and concatenates their states in chain order.
pub fn run_chains<T: Scalar, L: Likelihood<T>>(
    lik: &L,
    grid: &InputGrid<T>,
    family: KernelFamily,
    hyperprior: &Hyperprior<T>,
    cfg: &ChainConfig,
    n_chains: usize,
) -> Result<PosteriorSample<T>> {
    cfg.validate()?;
    if n_chains == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    let per_chain: Vec<Result<Vec<ChainState<T>>>> = (0..n_chains)
        .into_par_iter()
        .map(|c| run_single(lik, grid, family, hyperprior, cfg, c))
        .collect();
    let mut states = Vec::with_capacity(n_chains * cfg.n_retained());
    for r in per_chain {
        states.extend(r?);
    }
    Ok(PosteriorSample { grid: grid.clone(), family, hyperprior: hyperprior.clone(), config: cfg.clone(), states })
}

fn run_single<T: Scalar, L: Likelihood<T>>(
    lik: &L,
    grid: &InputGrid<T>,
    family: KernelFamily,
    hyperprior: &Hyperprior<T>,
    cfg: &ChainConfig,
    chain_index: usize,
) -> Result<Vec<ChainState<T>>> {
    let mut rng = chain_rng(cfg.seed, chain_index);
    let mut chain = Chain::new(lik, grid, family, hyperprior, cfg.surrogate_scale)?;
    let mut states = Vec::with_capacity(cfg.n_retained());
    for it in 0..cfg.n_iterations {
        chain.iterate(cfg, &mut rng);
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            states.push(chain.state(chain_index, it));
        }
    }
    log_diagnostics(chain_index, &states, &chain.stats, hyperprior);
    Ok(states)
}

fn log_diagnostics<T: Scalar>(chain: usize, states: &[ChainState<T>], moves: &MoveStats, hyperprior: &Hyperprior<T>) {
    if !log::log_enabled!(log::Level::Info) || states.is_empty() {
        return;
    }
    let lp: Vec<T> = states.iter().map(|s| s.log_post).collect();
    let mut parts = vec![format!("log_post {:.0}", stats::effective_sample_size(&lp))];
    for (k, name) in hyperprior.names().iter().enumerate() {
        let trace: Vec<T> = states.iter().map(|s| s.hyper.xi[k]).collect();
        parts.push(format!("{name} {:.0}", stats::effective_sample_size(&trace)));
    }
    log::info!(
        "chain {chain}: {} states, {} likelihood evaluations, {} capped slices; effective sizes: {}",
        states.len(),
        moves.evaluations,
        moves.capped,
        parts.join(", ")
    );
}
