//! Martingale and supermartingale checks of deflated wealth.
use std::sync::Arc;

use ezstab::bounds::base_solution;
use ezstab::bsde::SolverOptions;
use ezstab::market::{minimal_spd_path, utility_gradient_density, PerturbationFamily};
use ezstab::paths::{make_bundle, simulate_wealth, ConstantWeights, ConsumptionPolicy, Sampling, TimeGrid};
use ezstab::preferences::EzPreferences;
use ezstab::stability::{martingale_deflation_check, DeflationCheck};

fn show(name: &str, c: &DeflationCheck) {
    let m = c.drift.len() - 1;
    println!(
        "{name:<40} terminal drift {:+.2e} (se {:.1e}, band {:.2} se), martingale {}, supermartingale {}",
        c.drift[m], c.se[m], c.z_martingale, c.is_martingale, c.is_supermartingale
    );
}

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    let grid = TimeGrid::new(1.0, 50)?;
    let fam = PerturbationFamily::rate_shift(0.02, 0.04, 0.2, 0.5, 1.0)?;
    let model = fam.base().clone();
    let bundle = make_bundle(21, 4000, &grid, 1, Sampling::Antithetic)?;
    let base = base_solution(&prefs, &fam, 1.0, &bundle, &SolverOptions::default())?;

    let d = utility_gradient_density(&prefs, &base.c_hat, &base.utility.u_path, base.oracle.y_star, &grid)?;
    show(
        "optimizer, utility-gradient density",
        &martingale_deflation_check(&d, base.wealth.values(), &base.c_hat, &grid, bundle.sampling())?,
    );

    let half: Vec<f64> = base.oracle.k_path.iter().map(|k| 0.5 * k).collect();
    let rule = Arc::new(ConstantWeights(base.oracle.pi_star.clone()));
    let (w, c) = simulate_wealth(&model, rule, ConsumptionPolicy::Ratio(&half), 1.0, &bundle)?;
    let spd = minimal_spd_path(&model, &bundle)?;
    show(
        "half ratio, minimal SPD",
        &martingale_deflation_check(&spd, w.values(), &c, &grid, bundle.sampling())?,
    );
    let half_c = ezstab::paths::ConsumptionStream::new(base.c_hat.values().mapv(|v| 0.5 * v), "half")?;
    show(
        "optimal wealth, half consumption",
        &martingale_deflation_check(&spd, base.wealth.values(), &half_c, &grid, bundle.sampling())?,
    );
    let strict = ndarray::Array2::from_shape_fn(spd.dim(), |(p, i)| spd[[p, i]] * (-0.05 * grid.t(i)).exp());
    show(
        "half ratio, SPD x exp(-0.05 t)",
        &martingale_deflation_check(&strict, w.values(), &c, &grid, bundle.sampling())?,
    );
    Ok(())
}
