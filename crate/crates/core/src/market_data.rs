//! Option quote ingestion, filtering and reduction to a Cartesian
//! strike × maturity calibration grid.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::InputPoint;
use crate::pricer;
use crate::scalar::Scalar;

/// Days per year for ACT/365 maturities.
pub const DAYS_PER_YEAR: f64 = 365.0;
/// Quotes closer to expiry than this are discarded by [`filter_quotes`].
pub const MIN_DAYS_TO_EXPIRY: f64 = 7.0;
/// Admissible Black-Scholes implied volatility range for [`filter_quotes`].
pub const IMPLIED_VOL_RANGE: (f64, f64) = (0.05, 1.0);

/// A European call quote.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketQuote<T> {
    pub strike: T,
    /// Years to expiry (ACT/365).
    pub maturity: T,
    pub bid: T,
    pub ask: T,
    /// Bid-ask midpoint.
    pub mid: T,
}

impl<T: Scalar> MarketQuote<T> {
    pub fn new(strike: T, maturity: T, bid: T, ask: T) -> Result<Self> {
        if !(bid >= T::zero()) {
            return Err(Error::Data(format!("negative bid {bid}")));
        }
        if !(ask >= bid) {
            return Err(Error::Data(format!("ask {ask} below bid {bid}")));
        }
        if !(maturity > T::zero()) {
            return Err(Error::Data(format!("non-positive maturity {maturity}")));
        }
        if !(strike > T::zero()) {
            return Err(Error::Data(format!("non-positive strike {strike}")));
        }
        Ok(Self { strike, maturity, bid, ask, mid: (bid + ask) / T::lit(2.0) })
    }

    /// Quote with zero spread around `mid`; used for synthetic data.
    pub fn from_mid(strike: T, maturity: T, mid: T) -> Result<Self> {
        Self::new(strike, maturity, mid, mid)
    }
}

/// Spot, rate and dividend yield of one observation date.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotContext<T> {
    pub spot: T,
    pub rate: T,
    pub dividend: T,
}

/// One date's call quotes with their pricing context.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketSnapshot<T> {
    pub observation_date: NaiveDate,
    pub spot: T,
    pub rate: T,
    pub dividend_yield: T,
    pub quotes: Vec<MarketQuote<T>>,
}

impl<T: Scalar> MarketSnapshot<T> {
    pub fn new(
        observation_date: NaiveDate,
        context: SnapshotContext<T>,
        quotes: Vec<MarketQuote<T>>,
    ) -> Result<Self> {
        if !(context.spot > T::zero()) {
            return Err(Error::Data(format!("spot must be positive, got {}", context.spot)));
        }
        for (i, a) in quotes.iter().enumerate() {
            if quotes[..i].iter().any(|b| b.strike == a.strike && b.maturity == a.maturity) {
                return Err(Error::Data(format!(
                    "duplicate quote at strike {} maturity {}",
                    a.strike, a.maturity
                )));
            }
        }
        Ok(Self {
            observation_date,
            spot: context.spot,
            rate: context.rate,
            dividend_yield: context.dividend,
            quotes,
        })
    }

    pub fn context(&self) -> SnapshotContext<T> {
        SnapshotContext { spot: self.spot, rate: self.rate, dividend: self.dividend_yield }
    }

    fn with_quotes(&self, quotes: Vec<MarketQuote<T>>) -> Self {
        Self { quotes, ..self.clone() }
    }
}

/// Where to find the pricing context of each observation date.
#[derive(Clone, Debug, Default)]
pub struct QuoteConventions<T> {
    pub contexts: BTreeMap<NaiveDate, SnapshotContext<T>>,
    /// Used for dates without an explicit entry.
    pub default_context: Option<SnapshotContext<T>>,
}

impl<T: Scalar> QuoteConventions<T> {
    pub fn uniform(context: SnapshotContext<T>) -> Self {
        Self { contexts: BTreeMap::new(), default_context: Some(context) }
    }

    fn lookup(&self, date: NaiveDate) -> Option<SnapshotContext<T>> {
        self.contexts.get(&date).copied().or(self.default_context)
    }
}

#[derive(Debug, Deserialize)]
struct QuoteRow {
    date: String,
    expiry: String,
    strike: f64,
    bid: f64,
    ask: f64,
}

fn parse_date(s: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Parse { line, message: format!("bad date {s:?}: {e}") })
}

/// Reads a `date,expiry,strike,bid,ask` CSV into one snapshot per
/// observation date, in date order.
pub fn parse_quotes<T: Scalar>(
    path: impl AsRef<Path>,
    conventions: &QuoteConventions<T>,
) -> Result<Vec<MarketSnapshot<T>>> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_quotes_from_reader(file, conventions)
}

pub fn parse_quotes_from_reader<T: Scalar, R: Read>(
    reader: R,
    conventions: &QuoteConventions<T>,
) -> Result<Vec<MarketSnapshot<T>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut by_date: BTreeMap<NaiveDate, Vec<MarketQuote<T>>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: QuoteRow = record
            .deserialize(None)
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let date = parse_date(&row.date, line)?;
        let expiry = parse_date(&row.expiry, line)?;
        let days = (expiry - date).num_days() as f64;
        let quote = MarketQuote::new(
            T::lit(row.strike),
            T::lit(days / DAYS_PER_YEAR),
            T::lit(row.bid),
            T::lit(row.ask),
        )
        .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        by_date.entry(date).or_default().push(quote);
    }
    if by_date.is_empty() {
        return Err(Error::NoQuotes);
    }
    by_date
        .into_iter()
        .map(|(date, quotes)| {
            let ctx = conventions
                .lookup(date)
                .ok_or_else(|| Error::Data(format!("missing spot/rate for {date}")))?;
            MarketSnapshot::new(date, ctx, quotes)
        })
        .collect()
}

/// Drops quotes with a zero bid, fewer than seven days to expiry, or a mid
/// whose implied volatility falls outside [0.05, 1]. Order is preserved.
pub fn filter_quotes<T: Scalar>(snapshot: &MarketSnapshot<T>) -> MarketSnapshot<T> {
    let min_maturity = T::lit(MIN_DAYS_TO_EXPIRY / DAYS_PER_YEAR);
    let (lo, hi) = (T::lit(IMPLIED_VOL_RANGE.0), T::lit(IMPLIED_VOL_RANGE.1));
    let kept = snapshot
        .quotes
        .iter()
        .filter(|q| {
            if !(q.bid > T::zero()) || q.maturity < min_maturity {
                return false;
            }
            match pricer::implied_vol(
                q.mid,
                snapshot.spot,
                q.strike,
                q.maturity,
                snapshot.rate,
                snapshot.dividend_yield,
            ) {
                Ok(iv) => iv >= lo && iv <= hi,
                Err(_) => false,
            }
        })
        .cloned()
        .collect();
    snapshot.with_quotes(kept)
}

/// Affine maps of maturities and strikes onto the unit interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitScaling<T> {
    pub maturity_offset: T,
    pub maturity_range: T,
    pub strike_offset: T,
    pub strike_range: T,
}

impl<T: Scalar> UnitScaling<T> {
    pub fn identity() -> Self {
        Self {
            maturity_offset: T::zero(),
            maturity_range: T::one(),
            strike_offset: T::zero(),
            strike_range: T::one(),
        }
    }

    /// Scaling that maps the bounding box of the given axes onto [0, 1]².
    pub fn fit(maturities: &[T], strikes: &[T]) -> Result<Self> {
        let (t0, t1) = bounds(maturities);
        let (k0, k1) = bounds(strikes);
        if !(t1 > t0) {
            return Err(Error::InvalidArgument("maturity axis has zero range".into()));
        }
        if !(k1 > k0) {
            return Err(Error::InvalidArgument("strike axis has zero range".into()));
        }
        Ok(Self { maturity_offset: t0, maturity_range: t1 - t0, strike_offset: k0, strike_range: k1 - k0 })
    }

    pub fn scale_maturity(&self, t: T) -> T {
        (t - self.maturity_offset) / self.maturity_range
    }
    pub fn scale_strike(&self, k: T) -> T {
        (k - self.strike_offset) / self.strike_range
    }
    pub fn unscale_maturity(&self, u: T) -> T {
        u * self.maturity_range + self.maturity_offset
    }
    pub fn unscale_strike(&self, u: T) -> T {
        u * self.strike_range + self.strike_offset
    }
    pub fn scale(&self, maturity: T, strike: T) -> InputPoint<T> {
        InputPoint { maturity: self.scale_maturity(maturity), strike: self.scale_strike(strike) }
    }
}

fn bounds<T: Scalar>(x: &[T]) -> (T, T) {
    x.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Cartesian maturity × strike grid, nodes stored maturity-major
/// (node `i * J + j` is maturity `i`, strike `j`).
#[derive(Clone, Debug, PartialEq)]
pub struct InputGrid<T> {
    maturities: Vec<T>,
    strikes: Vec<T>,
    /// `(quote index in the snapshot, node index)` for every quote on the grid.
    market_index: Vec<(usize, usize)>,
    scaling: UnitScaling<T>,
}

impl<T: Scalar> InputGrid<T> {
    /// Grid over the given ascending axes with no quotes attached.
    pub fn new(maturities: Vec<T>, strikes: Vec<T>) -> Result<Self> {
        check_ascending(&maturities, "maturities")?;
        check_ascending(&strikes, "strikes")?;
        Ok(Self { maturities, strikes, market_index: Vec::new(), scaling: UnitScaling::identity() })
    }

    /// Grid over the given axes indexing every quote of `snapshot` that sits
    /// exactly on a node.
    pub fn with_quotes(maturities: Vec<T>, strikes: Vec<T>, snapshot: &MarketSnapshot<T>) -> Result<Self> {
        let mut grid = Self::new(maturities, strikes)?;
        grid.market_index = snapshot
            .quotes
            .iter()
            .enumerate()
            .filter_map(|(qi, q)| grid.node_of(q.maturity, q.strike).map(|n| (qi, n)))
            .collect();
        Ok(grid)
    }

    /// Reassembles a grid from stored parts, checking the node indices.
    pub fn from_parts(
        maturities: Vec<T>,
        strikes: Vec<T>,
        market_index: Vec<(usize, usize)>,
        scaling: UnitScaling<T>,
    ) -> Result<Self> {
        let grid = Self::new(maturities, strikes)?;
        let mut seen = vec![false; grid.len()];
        for &(_, n) in &market_index {
            if n >= grid.len() || std::mem::replace(&mut seen[n], true) {
                return Err(Error::Data(format!("invalid or repeated node index {n} in market index")));
            }
        }
        Ok(Self { market_index, scaling, ..grid })
    }

    pub fn with_scaling(mut self, scaling: UnitScaling<T>) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn maturities(&self) -> &[T] {
        &self.maturities
    }
    pub fn strikes(&self) -> &[T] {
        &self.strikes
    }
    pub fn market_index(&self) -> &[(usize, usize)] {
        &self.market_index
    }
    pub fn scaling(&self) -> &UnitScaling<T> {
        &self.scaling
    }
    pub fn n_maturities(&self) -> usize {
        self.maturities.len()
    }
    pub fn n_strikes(&self) -> usize {
        self.strikes.len()
    }
    pub fn len(&self) -> usize {
        self.maturities.len() * self.strikes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn node(&self, maturity_idx: usize, strike_idx: usize) -> usize {
        maturity_idx * self.strikes.len() + strike_idx
    }

    /// Index of the node with exactly these coordinates.
    pub fn node_of(&self, maturity: T, strike: T) -> Option<usize> {
        let i = self.maturities.iter().position(|&t| t == maturity)?;
        let j = self.strikes.iter().position(|&k| k == strike)?;
        Some(self.node(i, j))
    }

    /// `(maturity, strike)` of a node in original units.
    pub fn coordinates(&self, node: usize) -> (T, T) {
        let j = self.strikes.len();
        (self.maturities[node / j], self.strikes[node % j])
    }

    pub fn scaled_maturities(&self) -> Vec<T> {
        self.maturities.iter().map(|&t| self.scaling.scale_maturity(t)).collect()
    }

    pub fn scaled_strikes(&self) -> Vec<T> {
        self.strikes.iter().map(|&k| self.scaling.scale_strike(k)).collect()
    }

    /// All nodes in scaled coordinates, maturity-major.
    pub fn scaled_points(&self) -> Vec<InputPoint<T>> {
        let mut pts = Vec::with_capacity(self.len());
        for &t in &self.maturities {
            for &k in &self.strikes {
                pts.push(self.scaling.scale(t, k));
            }
        }
        pts
    }

    /// Observed quotes per grid node.
    pub fn coverage(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.market_index.len() as f64 / self.len() as f64
    }

    /// Latest maturity carrying a quote.
    pub fn latest_quoted_maturity(&self) -> Option<T> {
        self.market_index
            .iter()
            .map(|&(_, n)| self.coordinates(n).0)
            .fold(None, |acc: Option<T>, t| Some(acc.map_or(t, |a| a.max(t))))
    }
}

fn check_ascending<T: Scalar>(x: &[T], what: &str) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} must be non-empty")));
    }
    if x.windows(2).any(|w| !(w[0] < w[1])) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} must be finite and strictly ascending")));
    }
    Ok(())
}

fn distinct_sorted<T: Scalar>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

/// Greedy reduction of a snapshot to an `n_strikes × n_maturities` grid.
///
/// Strikes are added one at a time, always the one with the most quotes
/// among strikes lying outside the range already selected (ties go to the
/// lower strike). Maturities are then pruned by repeatedly dropping the one
/// with the fewest quotes on the selected strikes (ties drop the later
/// maturity). The returned grid is unscaled; see [`scale_to_unit`].
pub fn select_subgrid<T: Scalar>(
    snapshot: &MarketSnapshot<T>,
    n_strikes: usize,
    n_maturities: usize,
) -> Result<InputGrid<T>> {
    let strikes = distinct_sorted(snapshot.quotes.iter().map(|q| q.strike));
    let maturities = distinct_sorted(snapshot.quotes.iter().map(|q| q.maturity));
    if n_strikes == 0 || n_maturities == 0 {
        return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
    }
    if strikes.len() < n_strikes {
        return Err(Error::Data(format!(
            "need {n_strikes} distinct strikes, snapshot has {}",
            strikes.len()
        )));
    }
    if maturities.len() < n_maturities {
        return Err(Error::Data(format!(
            "need {n_maturities} distinct maturities, snapshot has {}",
            maturities.len()
        )));
    }

    let count_at_strike =
        |k: T| snapshot.quotes.iter().filter(|q| q.strike == k).count();
    let mut selected: Vec<T> = Vec::with_capacity(n_strikes);
    while selected.len() < n_strikes {
        let (lo, hi) = bounds(&selected);
        // ascending scan with strict improvement keeps the lower strike on ties
        let best = strikes
            .iter()
            .copied()
            .filter(|&k| selected.is_empty() || k < lo || k > hi)
            .fold(None, |best: Option<(T, usize)>, k| {
                let c = count_at_strike(k);
                match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((k, c)),
                }
            });
        match best {
            Some((k, _)) => selected.push(k),
            None => {
                return Err(Error::Data(format!(
                    "only {} strikes reachable outside the selected range, need {n_strikes}",
                    selected.len()
                )))
            }
        }
    }
    selected.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut kept_maturities = maturities;
    while kept_maturities.len() > n_maturities {
        let count = |t: T| {
            snapshot
                .quotes
                .iter()
                .filter(|q| q.maturity == t && selected.contains(&q.strike))
                .count()
        };
        // descending scan with strict improvement drops the later maturity on ties
        let (drop_idx, _) = kept_maturities
            .iter()
            .enumerate()
            .rev()
            .fold(None, |best: Option<(usize, usize)>, (i, &t)| {
                let c = count(t);
                match best {
                    Some((_, bc)) if bc <= c => best,
                    _ => Some((i, c)),
                }
            })
            .expect("non-empty maturities");
        kept_maturities.remove(drop_idx);
    }

    InputGrid::with_quotes(kept_maturities, selected, snapshot)
}

/// Attaches the affine scaling that maps the grid's bounding box onto the
/// unit square.
pub fn scale_to_unit<T: Scalar>(grid: &InputGrid<T>) -> Result<InputGrid<T>> {
    let scaling = UnitScaling::fit(&grid.maturities, &grid.strikes)?;
    Ok(grid.clone().with_scaling(scaling))
}
