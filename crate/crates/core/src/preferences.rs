//! Epstein-Zin preference structure.
//!
//! Everything here is a pure scalar function of `(gamma, psi, delta)`:
//! the aggregator `f(c, u)`, its partials, the dual aggregator `g(d, v)`,
//! the bequest pair `U_T` / `V_T`, and the two changes of variable used by
//! the backward solver (`u <-> y` and `y -> bbY`).
//!
//! Domain violations are returned as [`Error::Domain`]; nothing here returns
//! a silent NaN.

use crate::error::{Error, Result};

/// Relative risk aversion `gamma`, EIS `psi`, discount rate `delta`, and the
/// derived `theta = (1 - gamma) / (1 - 1/psi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EzPreferences {
    gamma: f64,
    psi: f64,
    delta: f64,
    theta: f64,
}

impl EzPreferences {
    pub fn new(gamma: f64, psi: f64, delta: f64) -> Result<Self> {
        for (name, v) in [("gamma", gamma), ("psi", psi), ("delta", delta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be positive and finite, got {v}")));
            }
        }
        if gamma == 1.0 {
            return Err(Error::param("gamma", "gamma = 1 (logarithmic limit) is not supported"));
        }
        if psi == 1.0 {
            return Err(Error::param("psi", "psi = 1 (unit EIS limit) is not supported"));
        }
        let theta = (1.0 - gamma) / (1.0 - 1.0 / psi);
        Ok(Self {
            gamma,
            psi,
            delta,
            theta,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `p = 1 - 1/psi`, the exponent on consumption inside the aggregator.
    pub fn p(&self) -> f64 {
        1.0 - 1.0 / self.psi
    }

    /// The empirically relevant regime `gamma > 1, psi > 1` (hence `theta < 0`).
    pub fn is_main_regime(&self) -> bool {
        self.gamma > 1.0 && self.psi > 1.0
    }

    /// Additive (time-separable) case `gamma = 1/psi`, i.e. `theta = 1`.
    pub fn is_additive(&self) -> bool {
        (self.theta - 1.0).abs() < 1e-12
    }

    /// Gate for theorem-level functionality.
    pub fn require_main_regime(&self) -> Result<()> {
        if self.is_main_regime() {
            Ok(())
        } else {
            Err(Error::param(
                "preferences",
                format!("requires gamma > 1 and psi > 1, got gamma={}, psi={}", self.gamma, self.psi),
            ))
        }
    }
}

/// Recomputes `theta` from raw parameters, rejecting the degenerate cases.
pub fn theta(gamma: f64, psi: f64) -> Result<f64> {
    Ok(EzPreferences::new(gamma, psi, 1.0)?.theta())
}

/// A scalar `(c, u)` argument of the aggregator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityPoint {
    pub c: f64,
    pub u: f64,
}

impl UtilityPoint {
    pub fn new(c: f64, u: f64) -> Self {
        Self { c, u }
    }

    pub fn is_domain_valid(&self, prefs: &EzPreferences) -> bool {
        self.c > 0.0 && (1.0 - prefs.gamma) * self.u > 0.0 && self.c.is_finite() && self.u.is_finite()
    }

    fn check(&self, prefs: &EzPreferences, what: &'static str) -> Result<()> {
        if self.is_domain_valid(prefs) {
            Ok(())
        } else {
            Err(Error::domain(
                what,
                format!(
                    "need c > 0 and (1-gamma)u > 0, got c={}, (1-gamma)u={}",
                    self.c,
                    (1.0 - prefs.gamma) * self.u
                ),
            ))
        }
    }
}

/// `f(c, u) = delta c^p / p ((1-gamma)u)^(1-1/theta) - delta theta u`.
pub fn aggregator(prefs: &EzPreferences, pt: UtilityPoint) -> Result<f64> {
    pt.check(prefs, "aggregator f")?;
    let p = prefs.p();
    let th = prefs.theta;
    let w = (1.0 - prefs.gamma) * pt.u;
    Ok(prefs.delta * pt.c.powf(p) / p * w.powf(1.0 - 1.0 / th) - prefs.delta * th * pt.u)
}

/// `(df/dc, df/du)` at a domain-valid point.
pub fn aggregator_partials(prefs: &EzPreferences, pt: UtilityPoint) -> Result<(f64, f64)> {
    pt.check(prefs, "aggregator partials")?;
    let p = prefs.p();
    let th = prefs.theta;
    let d = prefs.delta;
    let w = (1.0 - prefs.gamma) * pt.u;
    let dc = d * pt.c.powf(-1.0 / prefs.psi) * w.powf(1.0 - 1.0 / th);
    let du = d * (1.0 - 1.0 / th) * (1.0 - prefs.gamma) * pt.c.powf(p) / p * w.powf(-1.0 / th) - d * th;
    Ok((dc, du))
}

/// Dual aggregator `g(d, v) = delta^psi d^(1-psi)/(psi-1) ((1-gamma)v)^(1-gamma psi/theta) - delta theta v`.
pub fn dual_aggregator(prefs: &EzPreferences, d: f64, v: f64) -> Result<f64> {
    let w = (1.0 - prefs.gamma) * v;
    if !(d > 0.0 && w > 0.0 && d.is_finite() && v.is_finite()) {
        return Err(Error::domain(
            "dual aggregator g",
            format!("need d > 0 and (1-gamma)v > 0, got d={d}, (1-gamma)v={w}"),
        ));
    }
    Ok(dual_aggregator_unchecked(prefs, d, w, v))
}

#[inline]
pub(crate) fn dual_aggregator_unchecked(prefs: &EzPreferences, d: f64, w: f64, v: f64) -> f64 {
    let psi = prefs.psi;
    let th = prefs.theta;
    prefs.delta.powf(psi) * d.powf(1.0 - psi) / (psi - 1.0) * w.powf(1.0 - prefs.gamma * psi / th) - prefs.delta * th * v
}

/// Bequest utility `U_T(c) = c^(1-gamma)/(1-gamma)`.
pub fn bequest_utility(prefs: &EzPreferences, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::domain("bequest utility", format!("need c > 0, got {c}")));
    }
    Ok(c.powf(1.0 - prefs.gamma) / (1.0 - prefs.gamma))
}

/// Marginal bequest utility `U_T'(c) = c^(-gamma)`.
pub fn bequest_marginal(prefs: &EzPreferences, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::domain("bequest marginal", format!("need c > 0, got {c}")));
    }
    Ok(c.powf(-prefs.gamma))
}

/// Convex conjugate of the bequest utility, `V_T(d) = gamma/(1-gamma) d^((gamma-1)/gamma)`.
pub fn bequest_dual(prefs: &EzPreferences, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::domain("bequest dual", format!("need d > 0, got {d}")));
    }
    let g = prefs.gamma;
    Ok(g / (1.0 - g) * d.powf((g - 1.0) / g))
}

/// `y = exp(-delta theta t) (1-gamma) u`.
pub fn u_to_y(prefs: &EzPreferences, t: f64, u: f64) -> f64 {
    (-prefs.delta * prefs.theta * t).exp() * (1.0 - prefs.gamma) * u
}

/// Inverse of [`u_to_y`].
pub fn y_to_u(prefs: &EzPreferences, t: f64, y: f64) -> f64 {
    (prefs.delta * prefs.theta * t).exp() * y / (1.0 - prefs.gamma)
}

/// `(bbY, bbZ) = (1/p) (y^(1/theta), (1/theta) y^(1/theta - 1) z)`.
pub fn y_to_bby(prefs: &EzPreferences, y: f64, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    if !(y > 0.0) {
        return Err(Error::domain("Y -> bbY transform", format!("need y > 0, got {y}")));
    }
    let p = prefs.p();
    let th = prefs.theta;
    let bby = y.powf(1.0 / th) / p;
    let scale = y.powf(1.0 / th - 1.0) / (th * p);
    Ok((bby, z.iter().map(|zi| scale * zi).collect()))
}

/// Generator of the `Y` equation, `F(t, c, y) = delta theta e^(-delta t) c^p y^(1-1/theta)`.
#[inline]
pub fn y_generator(prefs: &EzPreferences, t: f64, c: f64, y: f64) -> f64 {
    let th = prefs.theta;
    prefs.delta * th * (-prefs.delta * t).exp() * c.powf(prefs.p()) * y.powf(1.0 - 1.0 / th)
}

/// Truncated generator `F^m = delta theta e^(-delta t) (c^p ^ m)(|y| ^ m)^(1-1/theta)`.
#[inline]
pub fn y_generator_capped(prefs: &EzPreferences, t: f64, c: f64, y: f64, m: f64) -> f64 {
    let th = prefs.theta;
    prefs.delta * th * (-prefs.delta * t).exp() * c.powf(prefs.p()).min(m) * y.abs().min(m).powf(1.0 - 1.0 / th)
}
