//! Density ratio N^eps between perturbed and base markets against its closed forms.
use ezstab::market::{n_eps_path, PerturbationFamily};
use ezstab::paths::{make_bundle, Sampling, TimeGrid};
use ezstab::regression::StateProcess;

fn main() -> ezstab::Result<()> {
    let grid = TimeGrid::new(1.0, 200)?;
    let bundle = make_bundle(4, 1000, &grid, 1, Sampling::Antithetic)?;
    let (r, mu, sigma) = (0.02, 0.04, 0.2);

    let rate = PerturbationFamily::rate_shift(r, mu, sigma, 0.5, 1.0)?;
    let n = n_eps_path(&rate, 0.1, &bundle)?;
    let err = (0..=200)
        .map(|i| (n[[0, i]] - (-0.05 * grid.t(i)).exp()).abs())
        .fold(0.0, f64::max);
    println!("rate shift: max |N - exp(-a eps t)| = {err:.2e}");

    let b = 0.05;
    let eps = 0.2;
    let drift = PerturbationFamily::drift_shift(r, mu, sigma, b, 1.0)?;
    let n = n_eps_path(&drift, eps, &bundle)?;
    let w = StateProcess::brownian(&bundle);
    let lam = b * eps / (sigma * sigma);
    let mut worst = 0.0f64;
    for p in 0..1000 {
        for i in 0..=200 {
            let t = grid.t(i);
            let exact = -lam * mu * t - lam * sigma * w.0[[p, i, 0]] - 0.5 * lam * lam * sigma * sigma * t;
            worst = worst.max((n[[p, i]].ln() - exact).abs());
        }
    }
    println!(
        "drift shift: max |log N - closed form| = {worst:.2e} (5 dt = {:.2e})",
        5.0 * grid.dt()
    );
    Ok(())
}
