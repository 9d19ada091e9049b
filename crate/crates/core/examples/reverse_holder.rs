//! Batch-stability check of the reverse-Hoelder moment of the minimal state price density.
use ezstab::bounds::reverse_holder_check;
use ezstab::market::{minimal_spd_path, MarketModel};
use ezstab::paths::{make_bundle, Sampling, TimeGrid};
use ezstab::preferences::EzPreferences;

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    let grid = TimeGrid::new(1.0, 50)?;
    let bundle = make_bundle(8, 20_000, &grid, 1, Sampling::Plain)?;
    for (r, mu, sigma) in [(0.0, 0.0, 0.2), (0.02, 0.04, 0.2), (0.0, 1.2, 0.2)] {
        let model = MarketModel::constant_1d(r, mu, sigma)?;
        let d = minimal_spd_path(&model, &bundle)?;
        let rh = reverse_holder_check(&prefs, &d, &grid)?;
        println!(
            "r={r} mu={mu} sigma={sigma}: E int D^(1-psi) dkappa = {:.4}, batch spread {:.3}, finite: {}",
            rh.estimate, rh.spread, rh.finite
        );
    }
    Ok(())
}
