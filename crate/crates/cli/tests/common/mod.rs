#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Days, NaiveDate};
use gplv::market_data::SnapshotContext;
use gplv::pricer::SolverConfig;
use gplv::synthetic::generate;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const SPOT: f64 = 100.0;
pub const DAYS: [u64; 6] = [30, 61, 91, 182, 273, 365];

pub fn gplv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gplv")).args(args).output().expect("binary runs")
}

pub fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Quote CSV rows for one date priced from a smile that drifts with `shift`.
pub fn quote_rows(day: NaiveDate, shift: f64, seed: u64) -> Vec<String> {
    let maturities: Vec<f64> = DAYS.iter().map(|&d| d as f64 / 365.0).collect();
    let strikes: Vec<f64> = (0..9).map(|j| 80.0 + 5.0 * j as f64).collect();
    let ctx = SnapshotContext { spot: SPOT, rate: 0.01, dividend: 0.0 };
    let vol = |t: f64, k: f64| 0.2 + shift + 0.1 * (-2.0 * t).exp() * (k / SPOT - 1.0).powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = generate(vol, &maturities, &strikes, ctx, &SolverConfig::calibration(), 0.05, day, &mut rng).unwrap();
    q.snapshot
        .quotes
        .iter()
        .map(|quote| {
            let days = DAYS[maturities.iter().position(|&m| m == quote.maturity).unwrap()];
            let expiry = day.checked_add_days(Days::new(days)).unwrap();
            format!("{day},{expiry},{},{},{}", quote.strike, (quote.mid - 0.05).max(0.01), quote.mid + 0.05)
        })
        .collect()
}

pub fn write_quotes(path: &Path, rows: &[String]) {
    fs::write(path, format!("date,expiry,strike,bid,ask\n{}\n", rows.join("\n"))).unwrap();
}

pub fn base_config(dir: &Path) -> Value {
    let quotes = dir.join("quotes.csv");
    if !quotes.exists() {
        write_quotes(&quotes, &quote_rows(date("2024-01-02"), 0.0, 1));
    }
    json!({
        "quotes": "quotes.csv",
        "context": {"spot": SPOT, "rate": 0.01, "dividend": 0.0},
        "grid": {"n_maturities": 4, "n_strikes": 5},
        "chain": {"n_iterations": 120, "burn_in": 20, "thin": 2},
        "seed": 7
    })
}

pub fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = gplv(args);
    assert!(
        out.status.success(),
        "gplv {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn calibrate(dir: &Path, cfg: &Value, out: &str) -> PathBuf {
    let c = write_config(dir, &format!("{out}.json"), cfg);
    let o = dir.join(out);
    run_ok(&["calibrate", "-c", c.to_str().unwrap(), "-o", o.to_str().unwrap()]);
    o
}

pub fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

