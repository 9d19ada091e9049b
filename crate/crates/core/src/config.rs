//! Experiment configuration (TOML). Unknown keys are rejected and every
//! field is validated before any computation starts.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::bounds::{log_grid, Clamps};
use crate::bsde::{SolverOptions, Truncation};
use crate::error::{Error, Result};
use crate::market::{FamilyKind, OuFactor, PerturbationFamily};
use crate::paths::{Sampling, TimeGrid};
use crate::preferences::EzPreferences;
use crate::regression::PolyBasis;
use crate::stability::SweepConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "EZSTAB_OUT_DIR";

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub preferences: PreferencesBlock,
    pub model: ModelBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PreferencesBlock {
    pub gamma: f64,
    pub psi: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default = "one")]
    pub horizon: f64,
    /// Perturbations are defined for `|eps| < eps0`.
    #[serde(default = "one")]
    pub eps0: f64,
    pub family: FamilyBlock,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyBlock {
    /// `r + rate_shift eps`, `mu + drift_shift eps`, `sigma (1 + vol_scale eps)`.
    ConstantShift {
        r: f64,
        mu: Vec<f64>,
        /// Row-major `n x n` volatility matrix.
        sigma: Vec<Vec<f64>>,
        #[serde(default)]
        rate_shift: f64,
        #[serde(default)]
        drift_shift: Option<Vec<f64>>,
        #[serde(default)]
        vol_scale: f64,
    },
    FactorVol {
        r: f64,
        mu: f64,
        sigma_bar: f64,
        rho: f64,
        mean_reversion: f64,
        long_run: f64,
        factor_vol: f64,
        #[serde(default)]
        initial: f64,
        loading: f64,
        #[serde(default = "two")]
        clip: f64,
    },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsBlock {
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub antithetic: bool,
    pub basis_degree: usize,
    pub picard_iters: usize,
    /// Fail when truncation is active on more than this fraction of nodes.
    pub saturation_limit: Option<f64>,
    /// `(n, m)` pairs for the diagnostics ladder; default multiples of the data caps.
    pub truncation_ladder: Option<Vec<[f64; 2]>>,
    pub clamps: Option<ClampsBlock>,
    pub y_grid: Option<YGridBlock>,
    /// Fixed `y` for brackets and sweeps instead of the scan minimizer.
    pub y: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl Default for NumericsBlock {
    fn default() -> Self {
        Self {
            seed: 2024,
            n_paths: 10_000,
            n_steps: 50,
            antithetic: true,
            basis_degree: 2,
            picard_iters: 3,
            saturation_limit: Some(0.05),
            truncation_ladder: None,
            clamps: None,
            y_grid: None,
            y: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ClampsBlock {
    pub delta_prime: f64,
    pub big_m: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct YGridBlock {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Oracle,
    Bracket,
    Sweep,
    Diagnostics,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Oracle => "oracle",
            Command::Bracket => "bracket",
            Command::Sweep => "sweep",
            Command::Diagnostics => "diagnostics",
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    pub command: Option<Command>,
    pub x: f64,
    /// Bracket eps values, or the sweep list (a zero row is appended).
    pub eps_list: Vec<f64>,
    /// Turn invariant checks into a nonzero exit status.
    pub assert: bool,
    pub trend_slack: f64,
    pub final_tolerance: f64,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        Self {
            command: None,
            x: 1.0,
            eps_list: vec![0.0],
            assert: true,
            trend_slack: 0.1,
            final_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Falls back to `$EZSTAB_OUT_DIR`, then `./ezstab-out`.
    pub directory: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: None,
            formats: vec![Format::Csv, Format::Svg],
        }
    }
}

/// Everything a command needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub prefs: EzPreferences,
    pub family: PerturbationFamily,
    pub grid: TimeGrid,
    pub sampling: Sampling,
    pub solver: SolverOptions,
    pub clamps: Clamps,
    pub y_grid: Option<Vec<f64>>,
    pub ladder: Option<Vec<Truncation>>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg_err(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| cfg_err(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(cfg_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    /// Output directory: config, then the environment, then `./ezstab-out`.
    pub fn output_dir(&self) -> PathBuf {
        self.output
            .directory
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("ezstab-out"))
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    /// Validates every block and builds the model objects. No side effects.
    pub fn build(&self) -> Result<Experiment> {
        let p = &self.preferences;
        let prefs = EzPreferences::new(p.gamma, p.psi, p.delta).map_err(|e| cfg_err(format!("preferences: {e}")))?;
        prefs
            .require_main_regime()
            .map_err(|e| cfg_err(format!("preferences: {e}")))?;

        let m = &self.model;
        positive("model.horizon", m.horizon)?;
        positive("model.eps0", m.eps0)?;
        let kind = match &m.family {
            FamilyBlock::ConstantShift {
                r,
                mu,
                sigma,
                rate_shift,
                drift_shift,
                vol_scale,
            } => {
                let n = mu.len();
                if n == 0 || sigma.len() != n || sigma.iter().any(|row| row.len() != n) {
                    return Err(cfg_err(format!("model.family: sigma must be {n} x {n} to match mu")));
                }
                let b = drift_shift.clone().unwrap_or_else(|| vec![0.0; n]);
                if b.len() != n {
                    return Err(cfg_err(format!("model.family.drift_shift must have {n} entries")));
                }
                FamilyKind::ConstantShift {
                    r: *r,
                    mu: DVector::from_vec(mu.clone()),
                    sigma: DMatrix::from_fn(n, n, |i, j| sigma[i][j]),
                    rate_shift: *rate_shift,
                    drift_shift: DVector::from_vec(b),
                    vol_scale: *vol_scale,
                }
            }
            FamilyBlock::FactorVol {
                r,
                mu,
                sigma_bar,
                rho,
                mean_reversion,
                long_run,
                factor_vol,
                initial,
                loading,
                clip,
            } => FamilyKind::FactorVol {
                r: *r,
                mu: *mu,
                sigma_bar: *sigma_bar,
                rho: *rho,
                factor: OuFactor {
                    mean_reversion: *mean_reversion,
                    long_run: *long_run,
                    vol: *factor_vol,
                    initial: *initial,
                    driver: 0,
                },
                loading: *loading,
                clip: *clip,
            },
        };
        let family = PerturbationFamily::new(kind, m.eps0).map_err(|e| cfg_err(format!("model: {e}")))?;

        let nm = &self.numerics;
        if nm.n_paths < 2 || (nm.antithetic && !nm.n_paths.is_multiple_of(2)) {
            return Err(cfg_err("numerics.n_paths must be >= 2 (and even when antithetic)"));
        }
        if nm.basis_degree == 0 || nm.basis_degree > 4 {
            return Err(cfg_err("numerics.basis_degree must be in 1..=4"));
        }
        if nm.picard_iters == 0 {
            return Err(cfg_err("numerics.picard_iters must be >= 1"));
        }
        let grid = TimeGrid::new(m.horizon, nm.n_steps).map_err(|e| cfg_err(format!("numerics: {e}")))?;
        if let Some(l) = nm.saturation_limit {
            if !(l > 0.0 && l <= 1.0) {
                return Err(cfg_err("numerics.saturation_limit must lie in (0, 1]"));
            }
        }
        let solver = SolverOptions {
            basis: PolyBasis::new(nm.basis_degree),
            picard_iters: nm.picard_iters,
            saturation_error: nm.saturation_limit,
            ..SolverOptions::default()
        };

        let ex = &self.experiment;
        positive("experiment.x", ex.x)?;
        if !(ex.trend_slack >= 0.0) || !(ex.final_tolerance > 0.0) {
            return Err(cfg_err("experiment.trend_slack must be >= 0 and final_tolerance > 0"));
        }
        if ex.eps_list.is_empty() || ex.eps_list.iter().any(|e| !(e.is_finite() && e.abs() < m.eps0)) {
            return Err(cfg_err(format!(
                "experiment.eps_list must be nonempty with |eps| < {}",
                m.eps0
            )));
        }
        if ex.command == Some(Command::Sweep) && ex.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(cfg_err("experiment.eps_list must be strictly decreasing for a sweep"));
        }

        let clamps = match nm.clamps {
            Some(c) => {
                positive("numerics.clamps.delta_prime", c.delta_prime)?;
                positive("numerics.clamps.big_m", c.big_m)?;
                let c = Clamps {
                    delta_prime: c.delta_prime,
                    big_m: c.big_m,
                };
                if c.lower(ex.x) > c.big_m {
                    return Err(cfg_err("numerics.clamps: lower clamp exceeds big_m"));
                }
                c
            }
            None => Clamps::default_for(ex.x, m.horizon),
        };
        let y_grid = match nm.y_grid {
            Some(g) => {
                positive("numerics.y_grid.lo", g.lo)?;
                if !(g.hi > g.lo) || g.points < 3 {
                    return Err(cfg_err("numerics.y_grid needs hi > lo and at least 3 points"));
                }
                Some(log_grid(g.lo, g.hi, g.points))
            }
            None => None,
        };
        if let Some(y) = nm.y {
            positive("numerics.y", y)?;
        }
        let ladder = match &nm.truncation_ladder {
            Some(levels) => {
                if levels.is_empty() || levels.iter().flatten().any(|v| !(*v > 0.0)) {
                    return Err(cfg_err("numerics.truncation_ladder needs positive (n, m) pairs"));
                }
                Some(
                    levels
                        .iter()
                        .map(|[n, m]| Truncation {
                            n_level: *n,
                            m_level: *m,
                        })
                        .collect(),
                )
            }
            None => None,
        };
        if self.output.formats.is_empty() {
            return Err(cfg_err("output.formats must not be empty"));
        }
        Ok(Experiment {
            config: self.clone(),
            prefs,
            family,
            grid,
            sampling: if nm.antithetic {
                Sampling::Antithetic
            } else {
                Sampling::Plain
            },
            solver,
            clamps,
            y_grid,
            ladder,
        })
    }
}

impl Experiment {
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            grid: self.grid.clone(),
            n_paths: self.config.numerics.n_paths,
            seed: self.config.numerics.seed,
            sampling: self.sampling,
            clamps: Some(self.clamps),
            y: self.config.numerics.y,
            y_grid: self.y_grid.clone(),
            solver: self.solver,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"
schema_version = 1

[preferences]
gamma = 2.0
psi = 2.0
delta = 0.1

[model]
horizon = 1.0
eps0 = 1.0
family = { kind = "constant_shift", r = 0.02, mu = [0.04], sigma = [[0.2]], rate_shift = 0.5 }

[numerics]
seed = 7
n_paths = 2000
n_steps = 50
antithetic = true
basis_degree = 2
picard_iters = 3
saturation_limit = 0.05

[experiment]
command = "sweep"
x = 1.0
eps_list = [0.2, 0.1]
assert = true
trend_slack = 0.1
final_tolerance = 0.02
"#;

    #[test]
    fn parses_and_builds_fixture() {
        let cfg = ExperimentConfig::from_toml_str(FIXTURE).unwrap();
        assert_eq!(cfg.experiment.command, Some(Command::Sweep));
        let ex = cfg.build().unwrap();
        assert_eq!(ex.grid.n_steps(), 50);
        assert!(ex.family.is_constant());
        assert_eq!(ex.sweep_config().seed, 7);
        assert_eq!(cfg.output.formats, vec![Format::Csv, Format::Svg]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = FIXTURE.replace("gamma = 2.0", "gamma = 2.0\ngama = 2.0");
        assert!(matches!(ExperimentConfig::from_toml_str(&typo), Err(Error::Config(_))));
        let typo = FIXTURE.replace("rate_shift = 0.5", "rate_shfit = 0.5");
        assert!(matches!(ExperimentConfig::from_toml_str(&typo), Err(Error::Config(_))));
        let typo = FIXTURE.replace("seed = 7", "seed = 7\nsed = 8");
        assert!(ExperimentConfig::from_toml_str(&typo).is_err());
    }

    #[test]
    fn schema_and_values_are_validated() {
        let v2 = FIXTURE.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml_str(&v2).is_err());
        for (from, to) in [
            ("psi = 2.0", "psi = 0.5"),
            ("n_paths = 2000", "n_paths = 2001"),
            ("eps_list = [0.2, 0.1]", "eps_list = [0.1, 0.2]"),
            ("eps_list = [0.2, 0.1]", "eps_list = [1.5]"),
            ("basis_degree = 2", "basis_degree = 0"),
            ("x = 1.0", "x = -1.0"),
            ("sigma = [[0.2]]", "sigma = [[0.2, 0.1]]"),
        ] {
            let cfg = ExperimentConfig::from_toml_str(&FIXTURE.replace(from, to)).unwrap();
            assert!(matches!(cfg.build(), Err(Error::Config(_))), "{to}");
        }
    }

    #[test]
    fn factor_family_block() {
        let s = FIXTURE.replace(
            r#"family = { kind = "constant_shift", r = 0.02, mu = [0.04], sigma = [[0.2]], rate_shift = 0.5 }"#,
            r#"family = { kind = "factor_vol", r = 0.02, mu = 0.04, sigma_bar = 0.2, rho = -0.5, mean_reversion = 2.0, long_run = 0.0, factor_vol = 0.5, loading = 1.0 }"#,
        );
        let ex = ExperimentConfig::from_toml_str(&s).unwrap().build().unwrap();
        assert!(!ex.family.model(0.1).unwrap().as_constant().is_some());
    }

    #[test]
    fn defaults_fill_optional_blocks() {
        let s = r#"
schema_version = 1
[preferences]
gamma = 2.0
psi = 2.0
delta = 0.1
[model]
family = { kind = "constant_shift", r = 0.0, mu = [0.0], sigma = [[0.2]] }
"#;
        let cfg = ExperimentConfig::from_toml_str(s).unwrap();
        assert_eq!(cfg.numerics, NumericsBlock::default());
        assert_eq!(cfg.experiment.eps_list, vec![0.0]);
        cfg.build().unwrap();
    }
}
