//! Exact value of the constant-coefficient Merton problem with recursive utility.
use ezstab::bounds::constant_model_value;
use ezstab::market::MarketModel;
use ezstab::paths::TimeGrid;
use ezstab::preferences::EzPreferences;

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    let grid = TimeGrid::new(1.0, 50)?;
    let model = MarketModel::constant_1d(0.02, 0.04, 0.2)?;
    let o = constant_model_value(&prefs, &model, 1.0, &grid)?;
    println!("u(1) = {:.10}", o.u_exact);
    println!("pi*  = {:.6}  (mu / (gamma sigma^2) = 0.5)", o.pi_star[0]);
    println!("y*   = u'(1) = {:.10}", o.y_star);
    for i in (0..=50).step_by(10) {
        println!("t = {:.1}  k = {:.6}  A = {:.6}", grid.t(i), o.k_path[i], o.a_path[i]);
    }
    // homogeneity of the value in wealth
    let o2 = constant_model_value(&prefs, &model, 2.0, &grid)?;
    println!("u(2) / u(1) = {:.6}  (2^(1-gamma) = 0.5)", o2.u_exact / o.u_exact);
    println!("y*(2) / y*(1) = {:.6}  (2^-gamma = 0.25)", o2.y_star / o.y_star);
    Ok(())
}
