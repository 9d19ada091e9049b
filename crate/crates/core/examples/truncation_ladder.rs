//! Truncated generators: value along increasing caps and the saturation identity.
use ezstab::bsde::{default_truncation, truncation_ladder, utility_terminal, GeneratorKind, SolverOptions, Truncation};
use ezstab::paths::{make_bundle, ConsumptionStream, Sampling, TimeGrid};
use ezstab::preferences::EzPreferences;
use ezstab::regression::StateProcess;
use ndarray::Array2;

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    let grid = TimeGrid::new(1.0, 50)?;
    let bundle = make_bundle(5, 4000, &grid, 1, Sampling::Antithetic)?;
    let state = StateProcess::brownian(&bundle);
    let c = Array2::from_shape_fn((4000, 51), |(p, i)| (0.4 * state.0[[p, i, 0]]).exp());
    let c = ConsumptionStream::new(c, "exp(0.4 W)")?;
    let terminal = utility_terminal(&prefs, &c, 1.0);
    let t = default_truncation(GeneratorKind::UtilityY, &prefs, &terminal, c.values());
    println!("data caps: n = {:.3}, m = {:.3}", t.n_level, t.m_level);
    let levels: Vec<Truncation> = [0.1, 0.3, 1.0, 3.0]
        .iter()
        .map(|s| Truncation {
            n_level: s * t.n_level,
            m_level: s * t.m_level,
        })
        .collect();
    let ladder = truncation_ladder(
        GeneratorKind::UtilityY,
        &prefs,
        &terminal,
        c.values(),
        &bundle,
        &state,
        &levels,
        &SolverOptions::default(),
    )?;
    for (k, s) in ladder.solutions.iter().enumerate() {
        let diff = if k == 0 {
            String::from("-")
        } else {
            format!("{:.2e}", ladder.sup_diffs[k - 1])
        };
        println!(
            "n={:>8.3} m={:>8.3}: Y0 = {:.6}, saturated {:.4}, sup diff to previous {diff}",
            s.truncation.n_level,
            s.truncation.m_level,
            s.value0,
            s.saturation_fraction()
        );
    }
    Ok(())
}
