use std::path::Path;

use gplv::gp::link;
use gplv::pricer::{implied_vol, DupireSolver};
use gplv::sampler::io::write_sample;
use gplv::sampler::{map_estimate, posterior_band, run_chains, PricingLikelihood};
use gplv::stats;
use gplv::{Sample, Snapshot};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::data::{self, num, write_csv, write_json};
use crate::failure::Failure;

/// Provenance stored with every posterior: the resolved config and the
/// snapshot context the sample was calibrated on.
pub fn run_metadata(cfg: &RunConfig, snapshot: &Snapshot) -> Result<Value, Failure> {
    Ok(json!({
        "config": serde_json::to_value(cfg)?,
        "snapshot": {
            "date": snapshot.observation_date.to_string(),
            "spot": snapshot.spot,
            "rate": snapshot.rate,
            "dividend": snapshot.dividend_yield,
            "n_quotes": snapshot.quotes.len(),
        },
    }))
}

pub fn run(cfg: &RunConfig, dry_run: bool) -> Result<(), Failure> {
    cfg.validate()?;
    let snapshot = data::load_snapshot(cfg)?;
    let grid = data::build_grid(cfg, &snapshot)?;
    let lik = PricingLikelihood::new(snapshot.clone(), grid.clone(), &cfg.solver)?;
    println!(
        "{}: {} quotes, grid {} maturities x {} strikes, {} quotes on grid, coverage {:.2}",
        snapshot.observation_date,
        snapshot.quotes.len(),
        grid.n_maturities(),
        grid.n_strikes(),
        grid.market_index().len(),
        grid.coverage()
    );
    if dry_run {
        println!("dry run: configuration and data are valid");
        return Ok(());
    }
    let sample = run_chains(&lik, &grid, cfg.family, &cfg.hyperprior, &cfg.chain, cfg.n_chains)?;
    std::fs::create_dir_all(&cfg.output)?;
    let meta = run_metadata(cfg, &snapshot)?;
    write_sample(&cfg.output.join("posterior"), &sample, Some(&meta))?;
    write_json(&cfg.output.join("config.json"), &meta["config"])?;
    write_surface(&cfg.output.join("surface.csv"), &sample)?;
    write_repricing(&cfg.output, &sample, &snapshot, lik.solver())?;
    println!("wrote {} states to {}", sample.len(), cfg.output.display());
    Ok(())
}

/// MAP, mean and ±2SD band of the local volatility per grid node.
pub fn write_surface(path: &Path, sample: &Sample) -> Result<(), Failure> {
    let map = map_estimate(sample)?.local_vol();
    let (mean, sd) = posterior_band(sample)?;
    let rows: Vec<Vec<String>> = (0..sample.grid.len())
        .map(|n| {
            let (t, k) = sample.grid.coordinates(n);
            vec![num(t), num(k), num(map[n]), num(mean[n]), num(sd[n]), num(mean[n] - 2.0 * sd[n]), num(mean[n] + 2.0 * sd[n])]
        })
        .collect();
    write_csv(path, &["maturity", "strike", "map", "mean", "sd", "lower", "upper"], &rows)
}

/// Price and implied-volatility residuals of the MAP surface at each quote
/// on the grid, and their mean ± 2SD summary.
fn write_repricing(dir: &Path, sample: &Sample, snapshot: &Snapshot, solver: &DupireSolver<f64>) -> Result<(), Failure> {
    let map = map_estimate(sample)?;
    let surface = solver.solve(&link(&map.f, map.hyper.mean_level))?;
    let model = surface.node_values();
    let iv = |p: f64, k: f64, t: f64| {
        implied_vol(p, snapshot.spot, k, t, snapshot.rate, snapshot.dividend_yield).unwrap_or(f64::NAN)
    };
    let mut rows = Vec::new();
    let (mut price_res, mut iv_res) = (Vec::new(), Vec::new());
    for &(q, n) in sample.grid.market_index() {
        let quote = &snapshot.quotes[q];
        let (mi, ti) = (iv(quote.mid, quote.strike, quote.maturity), iv(model[n], quote.strike, quote.maturity));
        price_res.push(model[n] - quote.mid);
        iv_res.push(ti - mi);
        rows.push(vec![
            num(quote.maturity),
            num(quote.strike),
            num(quote.mid),
            num(model[n]),
            num(model[n] - quote.mid),
            num(mi),
            num(ti),
            num(ti - mi),
        ]);
    }
    write_csv(
        &dir.join("repricing.csv"),
        &["maturity", "strike", "market_price", "model_price", "price_residual", "market_iv", "model_iv", "iv_residual"],
        &rows,
    )?;
    let finite: Vec<f64> = iv_res.into_iter().filter(|v: &f64| v.is_finite()).collect();
    let summary = |name: &str, v: &[f64]| {
        let (m, s) = (stats::mean(v), stats::std_dev(v));
        vec![name.to_string(), num(m), num(s), v.len().to_string(), format!("{m:.4} ± {:.4}", 2.0 * s)]
    };
    write_csv(
        &dir.join("summary.csv"),
        &["residual", "mean", "sd", "count", "band"],
        &[summary("price", &price_res), summary("implied_vol", &finite)],
    )
}
