//! Loading inputs and writing CSV outputs.

use std::path::Path;

use gplv::market_data::{filter_quotes, parse_quotes, scale_to_unit, select_subgrid, InputGrid, QuoteConventions};
use gplv::{Grid, Snapshot};
use serde::Deserialize;

use crate::config::RunConfig;
use crate::failure::Failure;

pub fn conventions(cfg: &RunConfig) -> QuoteConventions<f64> {
    QuoteConventions { contexts: cfg.contexts.clone(), default_context: cfg.context }
}

/// Every snapshot in a quote file, filtered when configured.
pub fn load_snapshots(cfg: &RunConfig, path: &Path) -> Result<Vec<Snapshot>, Failure> {
    let snapshots = parse_quotes(path, &conventions(cfg))?;
    Ok(if cfg.filter { snapshots.iter().map(filter_quotes).collect() } else { snapshots })
}

/// The configured date's snapshot (the first date when none is set).
pub fn load_snapshot(cfg: &RunConfig) -> Result<Snapshot, Failure> {
    let path = cfg.require(&cfg.quotes, "quotes")?;
    let mut snapshots = load_snapshots(cfg, path)?;
    let idx = match cfg.date {
        Some(d) => snapshots
            .iter()
            .position(|s| s.observation_date == d)
            .ok_or_else(|| Failure::Data(format!("no quotes dated {d} in {}", path.display())))?,
        None => 0,
    };
    let snapshot = snapshots.swap_remove(idx);
    if snapshot.quotes.is_empty() {
        return Err(Failure::Data(format!("no quotes survive filtering on {}", snapshot.observation_date)));
    }
    Ok(snapshot)
}

/// Unscaled calibration grid for a snapshot.
pub fn select_grid(cfg: &RunConfig, snapshot: &Snapshot) -> Result<Grid, Failure> {
    let grid = match (&cfg.grid.maturities, &cfg.grid.strikes) {
        (Some(m), Some(k)) => InputGrid::with_quotes(m.clone(), k.clone(), snapshot)?,
        _ => select_subgrid(snapshot, cfg.grid.n_strikes, cfg.grid.n_maturities)?,
    };
    if grid.market_index().is_empty() {
        return Err(Failure::Data("no quotes fall on the calibration grid".into()));
    }
    Ok(grid)
}

/// Calibration grid scaled to the unit square.
pub fn build_grid(cfg: &RunConfig, snapshot: &Snapshot) -> Result<Grid, Failure> {
    Ok(scale_to_unit(&select_grid(cfg, snapshot)?)?)
}

#[derive(Deserialize)]
struct TargetRow {
    maturity: f64,
    strike: f64,
}

/// `maturity,strike` rows in years and strike units.
pub fn read_targets(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let rows: Vec<TargetRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Failure::Data(format!("no targets in {}", path.display())));
    }
    if rows.iter().any(|r| !(r.maturity > 0.0 && r.strike > 0.0)) {
        return Err(Failure::Data("targets need positive maturities and strikes".into()));
    }
    Ok(rows.into_iter().map(|r| (r.maturity, r.strike)).collect())
}

/// Rows `(maturity, strike, value)` from a CSV holding the first of
/// `value_columns` that is present.
pub fn read_triples(path: &Path, value_columns: &[&str]) -> Result<Vec<(f64, f64, f64)>, Failure> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (im, ik) = match (col("maturity"), col("strike")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Failure::Data(format!("{} needs maturity and strike columns", path.display()))),
    };
    let iv = value_columns
        .iter()
        .find_map(|c| col(c))
        .ok_or_else(|| Failure::Data(format!("{} needs one of the columns {value_columns:?}", path.display())))?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Failure::Data(format!("{} row {}: bad number", path.display(), n + 2)))
        };
        out.push((num(im)?, num(ik)?, num(iv)?));
    }
    if out.is_empty() {
        return Err(Failure::Data(format!("no rows in {}", path.display())));
    }
    Ok(out)
}

/// Sorted distinct values.
pub fn axis(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Shortest round-trip formatting; NaN as an empty field.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}
