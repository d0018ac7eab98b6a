use std::collections::BTreeMap;

use gplv::vix::{select_maturities, vix_from_strips, VixInputs};
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{self, write_json};
use crate::failure::Failure;

pub fn run(cfg: &RunConfig, dry_run: bool) -> Result<(), Failure> {
    let (triples, ctx) = match &cfg.prices {
        Some(path) => {
            let ctx = cfg.context.ok_or_else(|| Failure::Usage("a price file needs \"context\"".into()))?;
            (data::read_triples(path, &["price", "price_mean"])?, ctx)
        }
        None => {
            let snapshot = data::load_snapshot(cfg)?;
            let t = snapshot.quotes.iter().map(|q| (q.maturity, q.strike, q.mid)).collect();
            (t, snapshot.context())
        }
    };
    // maturity bits as keys keep the grouping exact
    let mut by_maturity: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for &(t, k, p) in &triples {
        by_maturity.entry(t.to_bits()).or_default().push((k, p));
    }
    let maturities: Vec<f64> = by_maturity.keys().map(|&b| f64::from_bits(b)).collect();
    let (i1, i2) = select_maturities(&maturities)?;
    let strip = |t: f64| -> Result<VixInputs<f64>, Failure> {
        let mut rows = by_maturity[&t.to_bits()].clone();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let strikes: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let calls: Vec<f64> = rows.iter().map(|r| r.1).collect();
        Ok(VixInputs::from_calls(t, &strikes, &calls, ctx.spot, ctx.rate, ctx.dividend)?)
    };
    let (near, far) = (strip(maturities[i1])?, strip(maturities[i2])?);
    if dry_run {
        println!("maturities {} and {} with {} and {} strikes", near.maturity, far.maturity, near.strikes.len(), far.strikes.len());
        println!("dry run: configuration and data are valid");
        return Ok(());
    }
    let (vs1, vs2, vix) = vix_from_strips(&near, &far)?;
    let report = json!({
        "maturity_1": near.maturity,
        "maturity_2": far.maturity,
        "vs_1": vs1,
        "vs_2": vs2,
        "vix": vix,
        "interpolation": "annualised variances VS(T)/T interpolated linearly in total variance to 30 days",
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    std::fs::create_dir_all(&cfg.output)?;
    write_json(&cfg.output.join("vix.json"), &report)
}
