use gplv::gp::{gp_predict, link};
use gplv::predictor::{
    column, predict_implied_vols, predict_latent, predict_prices, reweight, summarize, Summary, UnionGrid,
};
use gplv::pricer::{implied_vol, DupireSolver};
use gplv::sampler::io::read_sample;
use gplv::sampler::map_estimate;
use gplv::{Context, Sample};
use serde_json::Value;

use crate::config::RunConfig;
use crate::data::{self, num, write_csv};
use crate::failure::Failure;

/// Pricing context recorded with the posterior, else the config's.
fn context(cfg: &RunConfig, run: &Value) -> Result<Context, Failure> {
    let snap = &run["snapshot"];
    match (snap["spot"].as_f64(), snap["rate"].as_f64(), snap["dividend"].as_f64()) {
        (Some(spot), Some(rate), Some(dividend)) => Ok(Context { spot, rate, dividend }),
        _ => cfg.context.ok_or_else(|| Failure::Usage("posterior has no snapshot context; set \"context\"".into())),
    }
}

fn summary_cells(s: Summary<f64>) -> [String; 4] {
    [num(s.mean), num(s.sd), num(s.q025), num(s.q975)]
}

pub fn run(cfg: &RunConfig, dry_run: bool) -> Result<(), Failure> {
    cfg.solver.validate()?;
    let dir = cfg.require(&cfg.posterior, "posterior")?;
    let (sample, run): (Sample, Value) = read_sample(dir)?;
    let raw = data::read_targets(cfg.require(&cfg.targets, "targets")?)?;
    let ctx = context(cfg, &run)?;
    let scaling = *sample.grid.scaling();
    let targets: Vec<_> = raw.iter().map(|&(t, k)| scaling.scale(t, k)).collect();
    let union = UnionGrid::plan(&sample.grid, &targets)?;
    let reweight_snapshot = if cfg.reweight {
        // the quotes the posterior was calibrated on, unless overridden
        let mut c = cfg.clone();
        if c.quotes.is_none() {
            c.quotes = run["config"]["quotes"].as_str().map(Into::into);
            c.context = c.context.or(Some(ctx));
            if let Some(d) = run["snapshot"]["date"].as_str() {
                c.date = d.parse().ok();
            }
        }
        Some(data::load_snapshot(&c)?)
    } else {
        None
    };
    println!(
        "{} states, {} targets, union grid {} x {} with {} new nodes",
        sample.len(),
        raw.len(),
        union.grid.n_maturities(),
        union.grid.n_strikes(),
        union.completion_nodes.len()
    );
    if dry_run {
        println!("dry run: configuration and data are valid");
        return Ok(());
    }
    let seed = cfg.chain.seed;
    let mut pred = predict_latent(&sample, &union.completion_targets(), seed)?;
    if let Some(snapshot) = &reweight_snapshot {
        pred = reweight(&pred, &sample, &union, snapshot, &cfg.solver, seed)?;
    }

    let vols: Vec<Vec<f64>> = pred
        .draws
        .iter()
        .zip(&pred.state_index)
        .map(|(d, &s)| {
            let st = &sample.states[s];
            let all = link(&union.assemble(&st.f, d), st.hyper.mean_level);
            union.target_nodes.iter().map(|&n| all[n]).collect()
        })
        .collect();
    let prices = predict_prices(&pred, &sample, &union, ctx, &cfg.solver, &union.target_nodes)?;
    let ivs = predict_implied_vols(&prices.prices, &raw, ctx);
    let price_var = prices.variances();

    // MAP state with its conditional mean at the new nodes
    let map = map_estimate(&sample)?;
    let map_mean = gp_predict(&map.f, &sample.grid, &union.completion_targets(), &map.hyper.kernel)?.mean;
    let map_vol = link(&union.assemble(&map.f, &map_mean), map.hyper.mean_level);
    let solver = DupireSolver::new(union.grid.maturities(), union.grid.strikes(), ctx, &cfg.solver)?;
    let map_prices = solver.solve(&map_vol)?;

    let mut rows = Vec::with_capacity(raw.len());
    for (c, &(t, k)) in raw.iter().enumerate() {
        let n = union.target_nodes[c];
        let map_price = map_prices.node_values()[n];
        let map_iv = implied_vol(map_price, ctx.spot, k, t, ctx.rate, ctx.dividend).unwrap_or(f64::NAN);
        let price = summarize(&column(&prices.prices, c));
        let mut row = vec![num(t), num(k)];
        row.extend(summary_cells(summarize(&column(&vols, c))));
        row.push(num(map_vol[n]));
        row.extend([num(prices.mean[c]), num(price_var[c].sqrt()), num(price.q025), num(price.q975), num(map_price)]);
        row.extend(summary_cells(summarize(&column(&ivs.vols, c))));
        row.push(num(map_iv));
        row.push(ivs.n_invalid[c].to_string());
        rows.push(row);
    }
    std::fs::create_dir_all(&cfg.output)?;
    write_csv(
        &cfg.output.join("predictions.csv"),
        &[
            "maturity", "strike", "vol_mean", "vol_sd", "vol_q025", "vol_q975", "vol_map", "price_mean", "price_sd",
            "price_q025", "price_q975", "price_map", "iv_mean", "iv_sd", "iv_q025", "iv_q975", "iv_map", "iv_invalid",
        ],
        &rows,
    )?;
    println!(
        "wrote {} predictions ({} draws, {:.0}% priced) to {}",
        rows.len(),
        pred.len(),
        100.0 * prices.survival,
        cfg.output.display()
    );
    Ok(())
}
