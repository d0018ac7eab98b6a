use gplv::evidence::laplace_evidence;
use gplv::sampler::io::read_sample;
use gplv::Sample;

use crate::config::RunConfig;
use crate::data::{num, write_csv, write_json};
use crate::failure::Failure;

pub fn run(cfg: &RunConfig, dry_run: bool) -> Result<(), Failure> {
    let dirs = if cfg.posteriors.is_empty() {
        vec![cfg.require(&cfg.posterior, "posteriors")?.to_path_buf()]
    } else {
        cfg.posteriors.clone()
    };
    let samples: Vec<Sample> = dirs.iter().map(|d| read_sample(d).map(|(s, _)| s)).collect::<Result<_, _>>()?;
    if dry_run {
        for (d, s) in dirs.iter().zip(&samples) {
            println!("{}: {} states, kernel {}", d.display(), s.len(), s.family);
        }
        println!("dry run: configuration and data are valid");
        return Ok(());
    }
    std::fs::create_dir_all(&cfg.output)?;
    let mut rows = Vec::new();
    for (i, (d, s)) in dirs.iter().zip(&samples).enumerate() {
        let report = laplace_evidence(s)?;
        let value = serde_json::to_value(&report)?;
        println!("{}", serde_json::to_string_pretty(&value)?);
        write_json(&cfg.output.join(format!("evidence_{i}.json")), &value)?;
        rows.push(vec![
            d.display().to_string(),
            report.family.to_string(),
            num(report.log_evidence),
            num(report.log_best_fit_likelihood),
            num(report.occam_gp),
            num(report.occam_hyper),
        ]);
    }
    let header = ["posterior", "family", "log_evidence", "log_best_fit_likelihood", "occam_gp", "occam_hyper"];
    println!("{}", header.join(","));
    for r in &rows {
        println!("{}", r.join(","));
    }
    write_csv(&cfg.output.join("evidence.csv"), &header, &rows)
}
