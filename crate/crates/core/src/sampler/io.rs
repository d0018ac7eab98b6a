//! On-disk form of a posterior sample: a directory holding `states.csv`
//! (one row per retained state) and `meta.json` (grid, configuration, seed).

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::{ChainConfig, ChainState, PosteriorSample};
use crate::error::{Error, Result};
use crate::gp::KernelFamily;
use crate::hyper::Hyperprior;
use crate::market_data::{InputGrid, UnitScaling};
use crate::scalar::Scalar;

pub const STATES_FILE: &str = "states.csv";
pub const META_FILE: &str = "meta.json";

/// Header of `states.csv` for a grid of `n_nodes` nodes.
pub fn states_header<T: Scalar>(n_nodes: usize, hyperprior: &Hyperprior<T>) -> Vec<String> {
    let mut h = vec!["chain".to_string(), "iteration".to_string()];
    h.extend((0..n_nodes).map(|i| format!("f_{i}")));
    h.extend(hyperprior.names().iter().map(|s| s.to_string()));
    h.extend(["log_post", "log_lik", "sse"].map(String::from));
    h.extend(hyperprior.names().iter().map(|s| format!("xi_{s}")));
    h
}

fn grid_json<T: Scalar>(grid: &InputGrid<T>) -> Value {
    let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    let s = grid.scaling();
    json!({
        "maturities": f(grid.maturities()),
        "strikes": f(grid.strikes()),
        "market_index": grid.market_index(),
        "scaling": {
            "maturity_offset": s.maturity_offset.as_f64(),
            "maturity_range": s.maturity_range.as_f64(),
            "strike_offset": s.strike_offset.as_f64(),
            "strike_range": s.strike_range.as_f64(),
        },
    })
}

/// Metadata document written next to the states. `extra` is stored under
/// the key `"run"`, e.g. the full run configuration.
pub fn meta_json<T: Scalar>(sample: &PosteriorSample<T>, extra: Option<&Value>) -> Result<Value> {
    let hp: Hyperprior<f64> = Hyperprior {
        length_scale_maturity: to_f64_bounds(sample.hyperprior.length_scale_maturity),
        length_scale_strike: to_f64_bounds(sample.hyperprior.length_scale_strike),
        signal_sd: to_f64_bounds(sample.hyperprior.signal_sd),
        length_scale_time: sample.hyperprior.length_scale_time.map(to_f64_bounds),
        mean_level: to_f64_bounds(sample.hyperprior.mean_level),
        noise_sd: to_f64_bounds(sample.hyperprior.noise_sd),
    };
    let mut meta = json!({
        "family": sample.family,
        "grid": grid_json(&sample.grid),
        "hyperprior": serde_json::to_value(hp)?,
        "chain_config": serde_json::to_value(&sample.config)?,
        "seed": sample.config.seed,
        "n_states": sample.states.len(),
    });
    if let Some(e) = extra {
        meta["run"] = e.clone();
    }
    Ok(meta)
}

fn to_f64_bounds<T: Scalar>(b: crate::hyper::Bounds<T>) -> crate::hyper::Bounds<f64> {
    crate::hyper::Bounds { min: b.min.as_f64(), max: b.max.as_f64() }
}

/// Writes `states.csv` and `meta.json` into `dir`, creating it if needed.
pub fn write_sample<T: Scalar>(dir: &Path, sample: &PosteriorSample<T>, extra: Option<&Value>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(STATES_FILE))?;
    w.write_record(states_header(sample.grid.len(), &sample.hyperprior))?;
    for s in &sample.states {
        let mut row = vec![s.chain.to_string(), s.iteration.to_string()];
        row.extend(s.f.iter().map(|v| v.to_string()));
        row.extend(s.hyper.values().iter().map(|v| v.to_string()));
        row.extend([s.log_post, s.log_lik, s.sse].iter().map(|v| v.to_string()));
        row.extend(s.hyper.xi.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let meta = meta_json(sample, extra)?;
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

fn field<T: serde::de::DeserializeOwned>(meta: &Value, key: &str) -> Result<T> {
    serde_json::from_value(meta.get(key).cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::Data(format!("meta.json: bad or missing {key:?}: {e}")))
}

/// Reads a sample written by [`write_sample`]. States are rebuilt from
/// their stored `ξ`, so hyperparameter values are recomputed exactly.
pub fn read_sample<T: Scalar>(dir: &Path) -> Result<(PosteriorSample<T>, Value)> {
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let family: KernelFamily = field(&meta, "family")?;
    let config: ChainConfig = field(&meta, "chain_config")?;
    let hp: Hyperprior<f64> = field(&meta, "hyperprior")?;
    let grid_v = meta.get("grid").cloned().unwrap_or(Value::Null);
    let maturities: Vec<f64> = field(&grid_v, "maturities")?;
    let strikes: Vec<f64> = field(&grid_v, "strikes")?;
    let market_index: Vec<(usize, usize)> = field(&grid_v, "market_index")?;
    let sc: UnitScaling<f64> = field(&grid_v, "scaling")?;
    let lit = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    let grid = InputGrid::from_parts(
        lit(&maturities),
        lit(&strikes),
        market_index,
        UnitScaling {
            maturity_offset: T::lit(sc.maturity_offset),
            maturity_range: T::lit(sc.maturity_range),
            strike_offset: T::lit(sc.strike_offset),
            strike_range: T::lit(sc.strike_range),
        },
    )?;
    let b = |x: crate::hyper::Bounds<f64>| crate::hyper::Bounds { min: T::lit(x.min), max: T::lit(x.max) };
    let hyperprior = Hyperprior {
        length_scale_maturity: b(hp.length_scale_maturity),
        length_scale_strike: b(hp.length_scale_strike),
        signal_sd: b(hp.signal_sd),
        length_scale_time: hp.length_scale_time.map(b),
        mean_level: b(hp.mean_level),
        noise_sd: b(hp.noise_sd),
    };

    let n = grid.len();
    let d = hyperprior.dim();
    let expected = states_header(n, &hyperprior);
    let mut rdr = csv::Reader::from_path(dir.join(STATES_FILE))?;
    if rdr.headers()?.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Data("states.csv header does not match meta.json".into()));
    }
    let mut states = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse { line, message: format!("column {} is not a number", expected[i]) })
        };
        let chain = num(0)? as usize;
        let iteration = num(1)? as usize;
        let f = (0..n).map(|i| num(2 + i).map(T::lit)).collect::<Result<Vec<T>>>()?;
        let base = 2 + n + d;
        let (log_post, log_lik, sse) = (num(base)?, num(base + 1)?, num(base + 2)?);
        let xi = (0..d).map(|i| num(base + 3 + i).map(T::lit)).collect::<Result<Vec<T>>>()?;
        let hyper = hyperprior.state(family, &xi)?;
        states.push(ChainState {
            chain,
            iteration,
            f,
            hyper,
            sse: T::lit(sse),
            log_lik: T::lit(log_lik),
            log_post: T::lit(log_post),
        });
    }
    if states.is_empty() {
        return Err(Error::Data("states.csv holds no states".into()));
    }
    let run = meta.get("run").cloned().unwrap_or(Value::Null);
    Ok((PosteriorSample { grid, family, hyperprior, config, states }, run))
}
