//! Rate-shift and drift-shift sweeps with common random numbers.
use std::time::Instant;

use ezstab::bsde::SolverOptions;
use ezstab::market::PerturbationFamily;
use ezstab::paths::{Sampling, TimeGrid};
use ezstab::preferences::EzPreferences;
use ezstab::stability::{stability_sweep, StabilityReport, SweepConfig};

fn print(name: &str, rep: &StabilityReport) {
    println!("== {name}\n{}", rep.header());
    println!(
        "{:>7} {:>11} {:>11} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "eps", "lower", "upper", "width", "d_c", "d_u", "d_x_ucp", "d_n"
    );
    for r in &rep.rows {
        let b = &r.bracket;
        println!(
            "{:>7} {:>11.6} {:>11.6} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e}",
            b.eps,
            b.lower,
            b.upper,
            b.width(),
            r.dist_consumption_kp,
            r.dist_utility_ucp,
            r.dist_wealth_ucp,
            r.dist_n_kp
        );
    }
    let v = rep.trend_violations(0.1);
    println!("trend violations: {v:?}");
}

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    let n_paths = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let cfg = SweepConfig {
        grid: TimeGrid::new(1.0, 50)?,
        n_paths,
        seed: 2024,
        sampling: Sampling::Antithetic,
        clamps: None,
        y: None,
        y_grid: None,
        solver: SolverOptions::default(),
    };
    let eps = [0.2, 0.1, 0.05, 0.025];
    for (name, fam) in [
        ("rate shift", PerturbationFamily::rate_shift(0.02, 0.04, 0.2, 0.5, 1.0)?),
        ("drift shift", PerturbationFamily::drift_shift(0.02, 0.04, 0.2, 0.05, 1.0)?),
    ] {
        let t = Instant::now();
        let rep = stability_sweep(&prefs, &fam, 1.0, &eps, &cfg)?;
        print(name, &rep);
        println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    }
    Ok(())
}
