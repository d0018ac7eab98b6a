//! Posterior predictive distributions of the local volatility at new
//! strike-maturities, and of the call prices and implied volatilities they
//! induce.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::{gp_predict_with, link, InputPoint, KroneckerCovariance};
use crate::linalg::Matrix;
use crate::market_data::{InputGrid, MarketSnapshot, SnapshotContext};
use crate::pricer::{implied_vol, DupireSolver, SolverConfig};
use crate::sampler::{log_likelihood, PosteriorSample};
use crate::scalar::Scalar;
use crate::stats;

/// One latent draw per posterior state at a set of target points.
#[derive(Clone, Debug)]
pub struct PredictiveSample<T> {
    /// Targets in scaled coordinates.
    pub targets: Vec<InputPoint<T>>,
    /// `draws[i][t]`: latent value of draw `i` at target `t`.
    pub draws: Vec<Vec<T>>,
    /// Normalised importance weights; uniform unless reweighted.
    pub weights: Vec<T>,
    /// Posterior state each draw was conditioned on.
    pub state_index: Vec<usize>,
    /// Conditional means of each mixture component.
    pub component_means: Vec<Vec<T>>,
    /// Conditional variances of each mixture component.
    pub component_vars: Vec<Vec<T>>,
}

impl<T: Scalar> PredictiveSample<T> {
    pub fn len(&self) -> usize {
        self.draws.len()
    }
    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Local volatility draws `exp(f* + m)` with each state's mean level.
    pub fn local_vol_draws(&self, sample: &PosteriorSample<T>) -> Vec<Vec<T>> {
        self.draws
            .iter()
            .zip(&self.state_index)
            .map(|(d, &s)| link(d, sample.states[s].hyper.mean_level))
            .collect()
    }

    /// Exact mean and variance of the latent Gaussian mixture per target.
    pub fn mixture_moments(&self) -> (Vec<T>, Vec<T>) {
        let nt = self.targets.len();
        let mut mean = vec![T::zero(); nt];
        let mut second = vec![T::zero(); nt];
        for ((m, v), &w) in self.component_means.iter().zip(&self.component_vars).zip(&self.weights) {
            for t in 0..nt {
                mean[t] += w * m[t];
                second[t] += w * (v[t].max(T::zero()) + m[t] * m[t]);
            }
        }
        let var = mean.iter().zip(&second).map(|(&m, &s)| (s - m * m).max(T::zero())).collect();
        (mean, var)
    }
}

/// Deterministic generator for draw `i` of a prediction seeded with `seed`.
fn draw_rng(seed: u64, i: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Ancestral pass: for each posterior state, condition the GP on that
/// state's latent surface and draw once at `targets` (scaled coordinates).
/// Weights are uniform.
pub fn predict_latent<T: Scalar>(
    sample: &PosteriorSample<T>,
    targets: &[InputPoint<T>],
    seed: u64,
) -> Result<PredictiveSample<T>> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty posterior sample".into()));
    }
    let grid = &sample.grid;
    let (tm, ts) = (grid.scaled_maturities(), grid.scaled_strikes());
    let points = grid.scaled_points();
    let parts: Vec<Result<(Vec<T>, Vec<T>, Vec<T>)>> = sample
        .states
        .par_iter()
        .enumerate()
        .map(|(i, state)| {
            let cov = KroneckerCovariance::new(&state.hyper.kernel, &tm, &ts)?;
            let moments = gp_predict_with(&cov, &state.f, &points, targets, &state.hyper.kernel);
            let mut rng = draw_rng(seed, i);
            let draw = moments.sample(&mut rng)?;
            Ok((draw, moments.variances(), moments.mean))
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
        let (draw, var, mean) = p?;
        pred.draws.push(draw);
        pred.component_vars.push(var);
        pred.component_means.push(mean);
    }
    Ok(pred)
}

/// Normalised weights from log weights, invariant to a common shift.
pub fn normalise_log_weights<T: Scalar>(log_weights: &[T]) -> Result<Vec<T>> {
    let max = log_weights.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(Error::Numerical("all importance weights vanish".into()));
    }
    let w: Vec<T> = log_weights.iter().map(|&l| (l - max).exp()).collect();
    let total: T = w.iter().copied().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Indices chosen by systematic resampling with one uniform offset.
pub fn systematic_resample<T: Scalar, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let u0 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut j = 0;
    for i in 0..n {
        let u = u0 + i as f64 / n as f64;
        while j + 1 < n && cum + weights[j].as_f64() < u {
            cum += weights[j].as_f64();
            j += 1;
        }
        out.push(j);
    }
    out
}

/// Importance-weights the draws by `exp(log_weights)`, then resamples them
/// systematically back to uniform weights.
pub fn importance_resample<T: Scalar>(
    pred: &PredictiveSample<T>,
    log_weights: &[T],
    seed: u64,
) -> Result<PredictiveSample<T>> {
    if log_weights.len() != pred.len() {
        return Err(Error::InvalidArgument("one log weight per draw required".into()));
    }
    let w = normalise_log_weights(log_weights)?;
    let mut rng = draw_rng(seed, usize::MAX);
    let picks = systematic_resample(&w, &mut rng);
    let m = pred.len();
    Ok(PredictiveSample {
        targets: pred.targets.clone(),
        draws: picks.iter().map(|&i| pred.draws[i].clone()).collect(),
        weights: vec![T::one() / T::from_usize_lossy(m); m],
        state_index: picks.iter().map(|&i| pred.state_index[i]).collect(),
        component_means: picks.iter().map(|&i| pred.component_means[i].clone()).collect(),
        component_vars: picks.iter().map(|&i| pred.component_vars[i].clone()).collect(),
    })
}

/// The Cartesian union of a calibration grid with new target points.
#[derive(Clone, Debug)]
pub struct UnionGrid<T> {
    /// Union axes in original units, carrying the calibration scaling.
    pub grid: InputGrid<T>,
    /// Union node of each calibration-grid node.
    pub original_nodes: Vec<usize>,
    /// Union nodes not on the calibration grid, in node order.
    pub completion_nodes: Vec<usize>,
    /// Union node of each requested target.
    pub target_nodes: Vec<usize>,
}

fn merge_axis<T: Scalar>(base: &[T], extra: impl Iterator<Item = T>) -> Vec<T> {
    let scale = base.iter().fold(T::zero(), |a, &b| a.max(b.abs())).max(T::one());
    let tol = T::lit(1e-9) * scale;
    let mut out = base.to_vec();
    for v in extra {
        if !out.iter().any(|&b| (b - v).abs() <= tol) {
            out.push(v);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

fn locate<T: Scalar>(axis: &[T], v: T) -> usize {
    let scale = axis.iter().fold(T::zero(), |a, &b| a.max(b.abs())).max(T::one());
    let tol = T::lit(1e-9) * scale;
    axis.iter()
        .position(|&a| (a - v).abs() <= tol)
        .expect("value merged into axis")
}

impl<T: Scalar> UnionGrid<T> {
    /// Union of `grid` with `targets` given in the grid's scaled coordinates.
    pub fn plan(grid: &InputGrid<T>, targets: &[InputPoint<T>]) -> Result<Self> {
        let sc = *grid.scaling();
        let raw: Vec<(T, T)> =
            targets.iter().map(|p| (sc.unscale_maturity(p.maturity), sc.unscale_strike(p.strike))).collect();
        if raw.iter().any(|&(t, k)| !(t > T::zero()) || !(k > T::zero())) {
            return Err(Error::InvalidArgument("targets must map to positive maturities and strikes".into()));
        }
        let maturities = merge_axis(grid.maturities(), raw.iter().map(|r| r.0));
        let strikes = merge_axis(grid.strikes(), raw.iter().map(|r| r.1));
        let nj = strikes.len();
        let node = |t: T, k: T| locate(&maturities, t) * nj + locate(&strikes, k);
        let original_nodes: Vec<usize> = (0..grid.len())
            .map(|n| {
                let (t, k) = grid.coordinates(n);
                node(t, k)
            })
            .collect();
        let target_nodes = raw.iter().map(|&(t, k)| node(t, k)).collect();
        let mut is_orig = vec![false; maturities.len() * nj];
        for &n in &original_nodes {
            is_orig[n] = true;
        }
        let completion_nodes = (0..is_orig.len()).filter(|&n| !is_orig[n]).collect();
        // quotes keep their original node through the union
        let market_index = grid.market_index().iter().map(|&(q, n)| (q, original_nodes[n])).collect();
        let union = InputGrid::from_parts(maturities, strikes, market_index, sc)?;
        Ok(Self { grid: union, original_nodes, completion_nodes, target_nodes })
    }

    /// Scaled coordinates of the completion nodes, the points to predict
    /// before pricing on the union grid.
    pub fn completion_targets(&self) -> Vec<InputPoint<T>> {
        let sc = self.grid.scaling();
        self.completion_nodes
            .iter()
            .map(|&n| {
                let (t, k) = self.grid.coordinates(n);
                sc.scale(t, k)
            })
            .collect()
    }

    /// Latent values on the whole union from a grid surface and a draw at
    /// the completion nodes.
    pub fn assemble(&self, on_grid: &[T], completion: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.grid.len()];
        for (&n, &v) in self.original_nodes.iter().zip(on_grid) {
            out[n] = v;
        }
        for (&n, &v) in self.completion_nodes.iter().zip(completion) {
            out[n] = v;
        }
        out
    }

    /// True when every completion node lies strictly beyond the latest
    /// quoted maturity, so no quote can depend on the predicted values.
    pub fn beyond_data(&self) -> bool {
        match self.grid.latest_quoted_maturity() {
            Some(last) => self.completion_nodes.iter().all(|&n| self.grid.coordinates(n).0 > last),
            None => true,
        }
    }
}

fn check_completion<T: Scalar>(pred: &PredictiveSample<T>, union: &UnionGrid<T>) -> Result<()> {
    if pred.targets.len() != union.completion_nodes.len() {
        return Err(Error::InvalidArgument(
            "prediction targets must be the completion nodes of the union grid".into(),
        ));
    }
    Ok(())
}

/// Importance reweighting of a completion-node prediction by the ratio of
/// the union-grid likelihood to each state's own likelihood, followed by
/// systematic resampling. When all completion nodes lie beyond the data the
/// ratio is identically one and the prediction is returned unchanged.
pub fn reweight<T: Scalar>(
    pred: &PredictiveSample<T>,
    sample: &PosteriorSample<T>,
    union: &UnionGrid<T>,
    snapshot: &MarketSnapshot<T>,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<PredictiveSample<T>> {
    check_completion(pred, union)?;
    if union.beyond_data() {
        return Ok(pred.clone());
    }
    let solver = DupireSolver::for_grid(&union.grid, snapshot, cfg)?;
    let n_obs = union.grid.market_index().len();
    let log_w: Vec<T> = (0..pred.len())
        .into_par_iter()
        .map(|i| {
            let state = &sample.states[pred.state_index[i]];
            let f = union.assemble(&state.f, &pred.draws[i]);
            let sse = solver
                .solve(&link(&f, state.hyper.mean_level))
                .ok()
                .map(|s| crate::pricer::sse_nodes(s.node_values(), snapshot, &union.grid));
            log_likelihood(sse, n_obs, state.hyper.noise_sd) - state.log_lik
        })
        .collect();
    importance_resample(pred, &log_w, seed)
}

/// Predicted call prices per draw on the union grid together with the
/// moments of the data distribution.
#[derive(Clone, Debug)]
pub struct PricePrediction<T> {
    /// Union nodes the columns refer to.
    pub nodes: Vec<usize>,
    /// `prices[i][c]`: fair price of surviving draw `i` at `nodes[c]`.
    pub prices: Vec<Vec<T>>,
    /// Draw index (into the predictive sample) of each surviving row.
    pub draw_index: Vec<usize>,
    /// Mean fair price per column.
    pub mean: Vec<T>,
    /// `mean(σ_ε²) I + cov(C*)`, the draw covariance taken with divisor `M`.
    pub covariance: Matrix<T>,
    /// Fraction of draws whose forward solve succeeded.
    pub survival: f64,
}

impl<T: Scalar> PricePrediction<T> {
    pub fn variances(&self) -> Vec<T> {
        self.covariance.diagonal()
    }
}

/// Minimum share of draws whose forward solve must succeed.
pub const MIN_SURVIVAL: f64 = 0.9;

/// Maps every draw through the forward solver on the union grid and
/// returns prices at `nodes` (union node indices), dropping failed draws.
pub fn predict_prices<T: Scalar>(
    pred: &PredictiveSample<T>,
    sample: &PosteriorSample<T>,
    union: &UnionGrid<T>,
    context: SnapshotContext<T>,
    cfg: &SolverConfig,
    nodes: &[usize],
) -> Result<PricePrediction<T>> {
    check_completion(pred, union)?;
    let solver = DupireSolver::new(union.grid.maturities(), union.grid.strikes(), context, cfg)?;
    let rows: Vec<(usize, Option<(Vec<T>, T)>)> = (0..pred.len())
        .into_par_iter()
        .map(|i| {
            let state = &sample.states[pred.state_index[i]];
            let f = union.assemble(&state.f, &pred.draws[i]);
            match solver.solve(&link(&f, state.hyper.mean_level)) {
                Ok(s) => {
                    let v = s.node_values();
                    (i, Some((nodes.iter().map(|&n| v[n]).collect(), state.hyper.noise_sd)))
                }
                Err(e) => {
                    log::warn!("dropping predictive draw {i}: {e}");
                    (i, None)
                }
            }
        })
        .collect();
    let total = rows.len();
    let mut prices = Vec::new();
    let mut draw_index = Vec::new();
    let mut noise_var = Vec::new();
    for (i, r) in rows {
        if let Some((p, sd)) = r {
            prices.push(p);
            draw_index.push(i);
            noise_var.push(sd * sd);
        }
    }
    let survival = prices.len() as f64 / total.max(1) as f64;
    if survival < MIN_SURVIVAL || prices.is_empty() {
        return Err(Error::Numerical(format!("only {:.0}% of predictive draws could be priced", 100.0 * survival)));
    }
    let (mean, covariance) = total_variance(&prices, &noise_var);
    Ok(PricePrediction { nodes: nodes.to_vec(), prices, draw_index, mean, covariance, survival })
}

/// Mean of the rows and `mean(noise_var) I + cov`, where `cov` is the
/// covariance of the draws as an empirical distribution (divisor `M`).
pub fn total_variance<T: Scalar>(rows: &[Vec<T>], noise_var: &[T]) -> (Vec<T>, Matrix<T>) {
    let mut cov = stats::covariance_matrix(rows);
    let m = rows.len();
    if m > 1 {
        cov.scale(T::from_usize_lossy(m - 1) / T::from_usize_lossy(m));
    }
    cov.add_diagonal(stats::mean(noise_var));
    let d = rows.first().map_or(0, Vec::len);
    let mean = (0..d).map(|c| stats::mean(&rows.iter().map(|r| r[c]).collect::<Vec<_>>())).collect();
    (mean, cov)
}

/// Implied volatilities of predicted prices, NaN where a price lies outside
/// the no-arbitrage band.
#[derive(Clone, Debug)]
pub struct ImpliedVolPrediction<T> {
    /// `vols[i][c]` for draw `i`, column `c`.
    pub vols: Vec<Vec<T>>,
    /// NaN count per column.
    pub n_invalid: Vec<usize>,
}

/// Inverts each predicted price at `(maturity, strike)` per column.
pub fn predict_implied_vols<T: Scalar>(
    prices: &[Vec<T>],
    coordinates: &[(T, T)],
    context: SnapshotContext<T>,
) -> ImpliedVolPrediction<T> {
    let vols: Vec<Vec<T>> = prices
        .iter()
        .map(|row| {
            row.iter()
                .zip(coordinates)
                .map(|(&p, &(t, k))| {
                    implied_vol(p, context.spot, k, t, context.rate, context.dividend).unwrap_or(T::nan())
                })
                .collect()
        })
        .collect();
    let n_invalid = (0..coordinates.len()).map(|c| vols.iter().filter(|r| r[c].is_nan()).count()).collect();
    ImpliedVolPrediction { vols, n_invalid }
}

/// Mean, SD and central 95% interval of a column of draws, over finite values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary<T> {
    pub mean: T,
    pub sd: T,
    pub q025: T,
    pub q975: T,
    pub n_finite: usize,
}

pub fn summarize<T: Scalar>(values: &[T]) -> Summary<T> {
    let finite: Vec<T> = values.iter().copied().filter(|v| v.is_finite()).collect();
    Summary {
        mean: stats::mean(&finite),
        sd: stats::std_dev(&finite),
        q025: stats::quantile(&finite, 0.025),
        q975: stats::quantile(&finite, 0.975),
        n_finite: finite.len(),
    }
}

/// Column `c` of a row-major set of draws.
pub fn column<T: Scalar>(rows: &[Vec<T>], c: usize) -> Vec<T> {
    rows.iter().map(|r| r[c]).collect()
}

/// Solver for unit spot: strikes are given as `K / S`, so prices are per
/// unit of spot and independent of the spot level.
pub fn unit_spot_solver<T: Scalar>(
    maturities: &[T],
    relative_strikes: &[T],
    rate: T,
    dividend: T,
    cfg: &SolverConfig,
) -> Result<DupireSolver<T>> {
    DupireSolver::new(maturities, relative_strikes, SnapshotContext { spot: T::one(), rate, dividend }, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn total_variance_hand_example() {
        let rows = vec![vec![10.0_f64], vec![12.0]];
        let (mean, cov) = total_variance(&rows, &[0.25, 0.25]);
        assert_eq!(mean, vec![11.0]);
        assert!((cov[(0, 0)] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn identical_draws_leave_noise_only() {
        let rows = vec![vec![3.0_f64, 4.0]; 5];
        let (_, cov) = total_variance(&rows, &[0.1, 0.3, 0.2, 0.2, 0.2]);
        assert_eq!(cov[(0, 0)], 0.2);
        assert_eq!(cov[(1, 1)], 0.2);
        assert_eq!(cov[(0, 1)], 0.0);
    }

    #[test]
    fn weights_ignore_common_shift() {
        let a = normalise_log_weights(&[0.1_f64, -2.0, 1.5]).unwrap();
        let b = normalise_log_weights(&[1000.1_f64, 998.0, 1001.5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn systematic_resampling_with_equal_weights_keeps_everything() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let picks = systematic_resample(&[0.25_f64; 4], &mut rng);
        assert_eq!(picks, vec![0, 1, 2, 3]);
        let picks = systematic_resample(&[0.0_f64, 1.0, 0.0], &mut rng);
        assert_eq!(picks, vec![1, 1, 1]);
    }

    #[test]
    fn implied_vol_prediction_flags_band_violations() {
        let ctx = SnapshotContext { spot: 100.0_f64, rate: 0.01, dividend: 0.0 };
        let p = crate::pricer::bs_price(100.0, 110.0, 0.5, 0.01, 0.0, 0.25);
        let out = predict_implied_vols(&[vec![p, -1.0]], &[(0.5, 110.0), (0.5, 150.0)], ctx);
        assert!((out.vols[0][0] - 0.25).abs() < 1e-6);
        assert!(out.vols[0][1].is_nan());
        assert_eq!(out.n_invalid, vec![0, 1]);
    }
}
