use std::path::{Path, PathBuf};

use gplv::market_data::UnitScaling;
use gplv::predictor::{column, summarize};
use gplv::sampler::io::write_sample;
use gplv::sampler::{map_estimate, PricingLikelihood};
use gplv::sequential::{forward_predict, rmse_implied, scaled_times, sequential_step, SequentialState};
use gplv::{Grid, Sample, Snapshot};
use serde::Deserialize;

use crate::calibrate::{run_metadata, write_surface};
use crate::config::RunConfig;
use crate::data::{self, num, write_csv};
use crate::failure::Failure;

#[derive(Deserialize)]
struct ManifestRow {
    path: PathBuf,
}

fn read_manifest(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let rows: Vec<ManifestRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Failure::Data(format!("manifest {} lists no files", path.display())));
    }
    Ok(rows.into_iter().map(|r| if r.path.is_relative() { base.join(r.path) } else { r.path }).collect())
}

/// One scaling shared by every date, so kernel distances are comparable.
fn common_scaling(grids: &[Grid]) -> Result<UnitScaling<f64>, Failure> {
    let mats = data::axis(grids.iter().flat_map(|g| g.maturities().iter().copied()));
    let strikes = data::axis(grids.iter().flat_map(|g| g.strikes().iter().copied()));
    Ok(UnitScaling::fit(&mats, &strikes)?)
}

fn map_rmse(sample: &Sample, lik: &PricingLikelihood<f64>, snapshot: &Snapshot) -> Result<(f64, usize), Failure> {
    let map = map_estimate(sample)?;
    let surface = lik.solver().solve(&map.local_vol())?;
    Ok(rmse_implied(&surface, snapshot, &sample.grid))
}

pub fn run(cfg: &RunConfig, dry_run: bool) -> Result<(), Failure> {
    cfg.validate()?;
    cfg.sequential.validate()?;
    let files = read_manifest(cfg.require(&cfg.manifest, "manifest")?)?;
    let mut snapshots = Vec::new();
    for f in &files {
        snapshots.extend(data::load_snapshots(cfg, f)?);
    }
    let dates: Vec<_> = snapshots.iter().map(|s| s.observation_date).collect();
    let (times, step) = scaled_times(&dates)?;
    let raw: Vec<Grid> = snapshots.iter().map(|s| data::select_grid(cfg, s)).collect::<Result<_, _>>()?;
    let scaling = common_scaling(&raw)?;
    let grids: Vec<Grid> = raw.into_iter().map(|g| g.with_scaling(scaling)).collect();
    let liks: Vec<PricingLikelihood<f64>> = snapshots
        .iter()
        .zip(&grids)
        .map(|(s, g)| PricingLikelihood::new(s.clone(), g.clone(), &cfg.solver))
        .collect::<Result<_, _>>()?;
    for (s, g) in snapshots.iter().zip(&grids) {
        println!("{}: {} quotes on a {} x {} grid", s.observation_date, g.market_index().len(), g.n_maturities(), g.n_strikes());
    }
    if dry_run {
        println!("dry run: configuration and data are valid");
        return Ok(());
    }
    std::fs::create_dir_all(&cfg.output)?;
    let (mut state, mut sample) =
        SequentialState::initialise(&liks[0], &grids[0], times[0], cfg.family, &cfg.hyperprior, &cfg.sequential)?;
    let mut summary = Vec::new();
    for d in 0..snapshots.len() {
        if d > 0 {
            let (next, s) = sequential_step(&state, &liks[d], &grids[d], times[d])?;
            state = next;
            sample = s;
        }
        let dir = cfg.output.join(format!("date_{}", dates[d]));
        write_sample(&dir, &sample, Some(&run_metadata(cfg, &snapshots[d])?))?;
        write_surface(&dir.join("surface.csv"), &sample)?;
        let (rmse, invalid) = map_rmse(&sample, &liks[d], &snapshots[d])?;
        summary.push(vec![dates[d].to_string(), num(times[d]), sample.len().to_string(), num(rmse), invalid.to_string()]);
        println!("{}: {} states, MAP implied-vol RMSE {rmse:.4}", dates[d], sample.len());
    }
    write_csv(&cfg.output.join("sequential.csv"), &["date", "time", "n_states", "rmse_map", "iv_invalid"], &summary)?;

    let last = snapshots.len() - 1;
    let targets = sample.grid.scaled_points();
    for &s in &cfg.forecast_steps {
        let pred = forward_predict(&sample, times[last], s, step, &targets, cfg.sequential.step.seed)?;
        let vols = pred.local_vol_draws(&sample);
        let rows: Vec<Vec<String>> = (0..targets.len())
            .map(|n| {
                let (t, k) = sample.grid.coordinates(n);
                let v = summarize(&column(&vols, n));
                vec![num(t), num(k), num(v.mean), num(v.sd), num(v.q025), num(v.q975)]
            })
            .collect();
        write_csv(&cfg.output.join(format!("forecast_s{s}.csv")), &["maturity", "strike", "mean", "sd", "q025", "q975"], &rows)?;
    }
    Ok(())
}
