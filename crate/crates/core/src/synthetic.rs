//! Synthetic quote sets priced from a known local volatility surface.

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::market_data::{InputGrid, MarketQuote, MarketSnapshot, SnapshotContext};
use crate::pricer::{DupireSolver, PriceSurface, SolverConfig};
use crate::scalar::Scalar;

/// Quotes generated on a Cartesian grid.
#[derive(Clone, Debug)]
pub struct SyntheticQuotes<T> {
    pub snapshot: MarketSnapshot<T>,
    /// Unscaled grid indexing every generated quote.
    pub grid: InputGrid<T>,
    /// Generating local volatility in grid node order.
    pub true_vol: Vec<T>,
    pub fair_prices: PriceSurface<T>,
}

/// Prices `vol(T, K)` on `maturities × strikes` with the forward solver and
/// adds `N(0, noise_sd²)` to each price. Noisy mids at or below zero are
/// dropped, so the grid may be incomplete.
#[allow(clippy::too_many_arguments)]
pub fn generate<T: Scalar, R: Rng + ?Sized>(
    vol: impl Fn(T, T) -> T,
    maturities: &[T],
    strikes: &[T],
    context: SnapshotContext<T>,
    cfg: &SolverConfig,
    noise_sd: T,
    date: NaiveDate,
    rng: &mut R,
) -> Result<SyntheticQuotes<T>> {
    let true_vol: Vec<T> =
        maturities.iter().flat_map(|&t| strikes.iter().map(move |&k| (t, k))).map(|(t, k)| vol(t, k)).collect();
    let solver = DupireSolver::new(maturities, strikes, context, cfg)?;
    let fair_prices = solver.solve(&true_vol)?;
    let mut quotes = Vec::new();
    for (i, &t) in maturities.iter().enumerate() {
        for (j, &k) in strikes.iter().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            let mid = fair_prices.price(i, j) + noise_sd * T::lit(e);
            if mid > T::zero() {
                quotes.push(MarketQuote::from_mid(k, t, mid)?);
            }
        }
    }
    let snapshot = MarketSnapshot::new(date, context, quotes)?;
    let grid = InputGrid::with_quotes(maturities.to_vec(), strikes.to_vec(), &snapshot)?;
    Ok(SyntheticQuotes { snapshot, grid, true_vol, fair_prices })
}
