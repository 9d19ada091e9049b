//! Primal/dual brackets of the perturbed value at several eps, written as CSV to stdout.
use ezstab::bounds::{base_solution, bracket, conjugacy_scan, write_brackets_csv, Clamps};
use ezstab::bsde::SolverOptions;
use ezstab::market::PerturbationFamily;
use ezstab::paths::{make_bundle, Sampling, TimeGrid};
use ezstab::preferences::EzPreferences;

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    let grid = TimeGrid::new(1.0, 50)?;
    let opts = SolverOptions::default();
    // mu + b eps together with sigma (1 + c eps)
    let fam = PerturbationFamily::constant_shift_1d(0.02, 0.04, 0.2, 0.0, 0.05, 0.3, 1.0)?;
    let bundle = make_bundle(11, 4000, &grid, 1, Sampling::Antithetic)?;
    let base = base_solution(&prefs, &fam, 1.0, &bundle, &opts)?;
    let y = conjugacy_scan(&prefs, &fam, 1.0, None, &base, &bundle, &opts)?.y_star;
    let clamps = Clamps::default_for(1.0, 1.0);
    let rows = [0.0, 0.05, 0.1, 0.2]
        .iter()
        .map(|&e| bracket(&prefs, &fam, e, 1.0, y, clamps, &base, &bundle, &opts).map(|b| b.0))
        .collect::<ezstab::Result<Vec<_>>>()?;
    write_brackets_csv(std::io::stdout(), &rows)?;
    for b in &rows {
        eprintln!("eps={:<5} width {:.2e}  weakly dual: {}", b.eps, b.width(), b.weakly_dual());
    }
    Ok(())
}
