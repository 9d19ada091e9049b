//! Stochastic-volatility family: brackets around the perturbed value at a few eps.
use ezstab::bounds::{base_solution, bracket, conjugacy_scan, Clamps};
use ezstab::bsde::SolverOptions;
use ezstab::market::{FamilyKind, OuFactor, PerturbationFamily};
use ezstab::paths::{make_bundle, Sampling, TimeGrid};
use ezstab::preferences::EzPreferences;

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    let grid = TimeGrid::new(1.0, 50)?;
    let fam = PerturbationFamily::new(
        FamilyKind::FactorVol {
            r: 0.02,
            mu: 0.04,
            sigma_bar: 0.2,
            rho: -0.5,
            factor: OuFactor {
                mean_reversion: 2.0,
                long_run: 0.0,
                vol: 0.5,
                initial: 0.0,
                driver: 0,
            },
            loading: 1.0,
            clip: 2.0,
        },
        1.0,
    )?;
    let opts = SolverOptions::default();
    let bundle = make_bundle(17, 4000, &grid, fam.base().brownian_dim(), Sampling::Antithetic)?;
    let base = base_solution(&prefs, &fam, 1.0, &bundle, &opts)?;
    let y = conjugacy_scan(&prefs, &fam, 1.0, None, &base, &bundle, &opts)?.y_star;
    println!("u(1, 0) = {:.6}", base.oracle.u_exact);
    for eps in [0.0, 0.1, 0.2, 0.4] {
        let (b, _) = bracket(
            &prefs,
            &fam,
            eps,
            1.0,
            y,
            Clamps::default_for(1.0, 1.0),
            &base,
            &bundle,
            &opts,
        )?;
        println!(
            "eps={eps:<4} [{:.6} +- {:.1e}, {:.6} +- {:.1e}] width {:.2e}",
            b.lower,
            b.lower_se,
            b.upper,
            b.upper_se,
            b.width()
        );
    }
    Ok(())
}
