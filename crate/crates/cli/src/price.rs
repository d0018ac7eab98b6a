use gplv::pricer::{implied_vol, DupireSolver};

use crate::config::RunConfig;
use crate::data::{self, num, write_csv};
use crate::failure::Failure;

/// Prices a local volatility surface given on a full maturity × strike grid.
pub fn run(cfg: &RunConfig, dry_run: bool) -> Result<(), Failure> {
    cfg.solver.validate()?;
    let ctx = cfg.context.ok_or_else(|| Failure::Usage("price needs \"context\"".into()))?;
    let rows = data::read_triples(cfg.require(&cfg.surface, "surface")?, &["vol"])?;
    let maturities = data::axis(rows.iter().map(|r| r.0));
    let strikes = data::axis(rows.iter().map(|r| r.1));
    let nk = strikes.len();
    let mut vol = vec![f64::NAN; maturities.len() * nk];
    for &(t, k, v) in &rows {
        let i = maturities.iter().position(|&m| m == t).expect("on axis");
        let j = strikes.iter().position(|&s| s == k).expect("on axis");
        vol[i * nk + j] = v;
    }
    if vol.iter().any(|v| v.is_nan()) || rows.len() != vol.len() {
        return Err(Failure::Data("surface must list every maturity × strike node exactly once".into()));
    }
    let solver = DupireSolver::new(&maturities, &strikes, ctx, &cfg.solver)?;
    println!("{} maturities x {} strikes, mesh of {} strikes, {} time steps", maturities.len(), nk, solver.mesh_len(), solver.n_steps());
    if dry_run {
        println!("dry run: configuration and data are valid");
        return Ok(());
    }
    let surface = solver.solve(&vol)?;
    let out: Vec<Vec<String>> = (0..vol.len())
        .map(|n| {
            let (t, k) = (maturities[n / nk], strikes[n % nk]);
            let p = surface.node_values()[n];
            let iv = implied_vol(p, ctx.spot, k, t, ctx.rate, ctx.dividend).unwrap_or(f64::NAN);
            vec![num(t), num(k), num(vol[n]), num(p), num(iv)]
        })
        .collect();
    std::fs::create_dir_all(&cfg.output)?;
    write_csv(&cfg.output.join("prices.csv"), &["maturity", "strike", "vol", "price", "implied_vol"], &out)
}
