//! Duality gap of the unperturbed problem: min over y of the dual bound against the exact value.
use ezstab::bounds::{base_solution, conjugacy_scan};
use ezstab::bsde::SolverOptions;
use ezstab::market::PerturbationFamily;
use ezstab::paths::{make_bundle, Sampling, TimeGrid};
use ezstab::preferences::EzPreferences;

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    let grid = TimeGrid::new(1.0, 50)?;
    let opts = SolverOptions::default();
    for (name, mu, n) in [("stochastic", 0.04, 10_000), ("deterministic", 0.0, 4)] {
        let r = if mu > 0.0 { 0.02 } else { 0.0 };
        let fam = PerturbationFamily::rate_shift(r, mu, 0.2, 0.5, 1.0)?;
        let bundle = make_bundle(2024, n, &grid, 1, Sampling::Antithetic)?;
        let base = base_solution(&prefs, &fam, 1.0, &bundle, &opts)?;
        let s = conjugacy_scan(&prefs, &fam, 1.0, None, &base, &bundle, &opts)?;
        println!(
            "{name}: u_exact {:.6}, primal {:.6}, min_y dual {:.6} at y {:.6} (u'(x) = {:.6}), gap {:.2e} = {:.3}% of |u|{}",
            base.oracle.u_exact,
            base.utility.u0,
            s.value,
            s.y_star,
            base.oracle.y_star,
            s.gap,
            100.0 * s.gap.abs() / base.oracle.u_exact.abs(),
            if s.widened { " (grid widened)" } else { "" }
        );
    }
    Ok(())
}
