//! Command-line front end. Each command reads one validated config and
//! writes CSV (and optionally SVG) files into the output directory.
//!
//! Exit codes: 0 success, 2 configuration error, 3 a configured assertion
//! failed, 4 numerical or I/O error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bounds::{
    base_solution, bracket, conjugacy_scan, constant_model_value, reverse_holder_check, utility_state, write_brackets_csv,
    BaseSolution, ScanResult, ValueBracket,
};
use crate::bsde::{default_truncation, truncation_ladder, utility_terminal, GeneratorKind, Truncation};
use crate::config::{Command, Experiment, ExperimentConfig, Format};
use crate::error::{Error, Result};
use crate::market::minimal_spd_path;
use crate::paths::{make_bundle, PathBundle};
use crate::stability::{martingale_deflation_check_discretised, stability_sweep, DISCRETISATION_ALLOWANCE};
use crate::svg::{line_chart, Axes};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "ezstab",
    version,
    about = "Value brackets and stability sweeps for recursive-utility portfolio problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run the command named in the config's `experiment.command`.
    Run(RunArgs),
    /// Exact value, weight and ratio path of the constant-coefficient model.
    Oracle(RunArgs),
    /// Primal/dual brackets at each eps of `experiment.eps_list`.
    Bracket(RunArgs),
    /// Stability sweep over `experiment.eps_list`.
    Sweep(RunArgs),
    /// Reverse-Hoelder, deflation and truncation diagnostics.
    Diagnostics(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// TOML experiment config.
    pub config: PathBuf,
    /// Override `numerics.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Files written and invariant failures found by a command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
    /// Whether failures turn into a nonzero exit status.
    pub asserting: bool,
}

impl Outcome {
    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(msg());
        }
    }
}

struct Out<'a> {
    dir: &'a Path,
    outcome: Outcome,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        fs::create_dir_all(self.dir)?;
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.outcome.files.push(path);
        Ok(BufWriter::new(f))
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(self.create(name)?);
        wr.write_record(header)?;
        for r in rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn bundle_for(ex: &Experiment) -> Result<PathBundle> {
    let nm = &ex.config.numerics;
    make_bundle(nm.seed, nm.n_paths, &ex.grid, ex.family.base().brownian_dim(), ex.sampling)
}

fn base_for(ex: &Experiment, bundle: &PathBundle) -> Result<BaseSolution> {
    base_solution(&ex.prefs, &ex.family, ex.config.experiment.x, bundle, &ex.solver)
}

fn scan_or_fixed(ex: &Experiment, base: &BaseSolution, bundle: &PathBundle) -> Result<(f64, Option<ScanResult>)> {
    match ex.config.numerics.y {
        Some(y) => Ok((y, None)),
        None => {
            let s = conjugacy_scan(
                &ex.prefs,
                &ex.family,
                ex.config.experiment.x,
                ex.y_grid.as_deref(),
                base,
                bundle,
                &ex.solver,
            )?;
            Ok((s.y_star, Some(s)))
        }
    }
}

/// `oracle.csv`: `x,u_exact,y_star,pi_1..pi_n`; `oracle_ratio.csv`: `t,k,a`.
pub fn cmd_oracle(ex: &Experiment, dir: &Path) -> Result<Outcome> {
    let model = ex.family.base();
    if model.as_constant().is_none() {
        return Err(Error::Config("the oracle needs a constant-coefficient base model".into()));
    }
    let x = ex.config.experiment.x;
    let o = constant_model_value(&ex.prefs, model, x, &ex.grid)?;
    let mut out = Out {
        dir,
        outcome: Outcome::default(),
    };
    out.outcome
        .check(o.u_exact.is_finite() && o.pi_star.iter().all(|v| v.is_finite()), || {
            "non-finite oracle value".into()
        });
    if ex.config.wants(Format::Csv) {
        let mut header = vec!["x".to_string(), "u_exact".into(), "y_star".into()];
        header.extend((1..=o.pi_star.len()).map(|i| format!("pi_{i}")));
        let mut row = vec![x.to_string(), o.u_exact.to_string(), o.y_star.to_string()];
        row.extend(o.pi_star.iter().map(|v| v.to_string()));
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        out.csv("oracle.csv", &h, &[row])?;
        let rows: Vec<Vec<String>> = (0..ex.grid.n_nodes())
            .map(|i| vec![ex.grid.t(i).to_string(), o.k_path[i].to_string(), o.a_path[i].to_string()])
            .collect();
        out.csv("oracle_ratio.csv", &["t", "k", "a"], &rows)?;
    }
    if ex.config.wants(Format::Svg) {
        let pts: Vec<(f64, f64)> = (0..ex.grid.n_nodes() - 1).map(|i| (ex.grid.t(i), o.k_path[i])).collect();
        let w = out.create("oracle_ratio.svg")?;
        line_chart(
            w,
            "optimal consumption-wealth ratio",
            "t",
            &[("k", pts)],
            Axes {
                log_x: false,
                log_y: false,
            },
        )?;
    }
    Ok(out.outcome)
}

/// `brackets.csv` (one row per eps), `scan.csv`: `y,dual_value`,
/// `scan_summary.csv`: `u_exact,y_star,value,se,gap,relative_gap,widened`.
pub fn cmd_bracket(ex: &Experiment, dir: &Path) -> Result<Outcome> {
    let bundle = bundle_for(ex)?;
    let base = base_for(ex, &bundle)?;
    let (y, scan) = scan_or_fixed(ex, &base, &bundle)?;
    let x = ex.config.experiment.x;
    let rows: Vec<ValueBracket> = ex
        .config
        .experiment
        .eps_list
        .iter()
        .map(|&e| {
            bracket(&ex.prefs, &ex.family, e, x, y, ex.clamps, &base, &bundle, &ex.solver)
                .map(|b| b.0)
                .map_err(|err| err.at_eps(e))
        })
        .collect::<Result<_>>()?;
    let u = base.oracle.u_exact;
    let mut out = Out {
        dir,
        outcome: Outcome::default(),
    };
    for b in &rows {
        out.outcome.check(b.weakly_dual(), || {
            format!(
                "weak duality fails at eps={}: lower {} > upper {} + 2 SE",
                b.eps, b.lower, b.upper
            )
        });
        if b.eps == 0.0 {
            let allowance = DISCRETISATION_ALLOWANCE * ex.grid.dt() * u.abs();
            out.outcome.check(b.contains_within(u, allowance), || {
                format!("bracket [{}, {}] misses u_exact {u} at eps=0", b.lower, b.upper)
            });
        }
    }
    if ex.config.wants(Format::Csv) {
        write_brackets_csv(out.create("brackets.csv")?, &rows)?;
        if let Some(s) = &scan {
            let pts: Vec<Vec<String>> = s.points.iter().map(|(y, v)| vec![y.to_string(), v.to_string()]).collect();
            out.csv("scan.csv", &["y", "dual_value"], &pts)?;
            out.csv(
                "scan_summary.csv",
                &["u_exact", "y_star", "value", "se", "gap", "relative_gap", "widened"],
                &[vec![
                    u.to_string(),
                    s.y_star.to_string(),
                    s.value.to_string(),
                    s.se.to_string(),
                    s.gap.to_string(),
                    (s.gap / u.abs()).to_string(),
                    s.widened.to_string(),
                ]],
            )?;
        }
    }
    if ex.config.wants(Format::Svg) {
        if let Some(s) = &scan {
            let w = out.create("scan.svg")?;
            line_chart(
                w,
                "dual bound v(y) + x y",
                "y",
                &[("dual", s.points.clone())],
                Axes {
                    log_x: true,
                    log_y: false,
                },
            )?;
        }
    }
    Ok(out.outcome)
}

/// `sweep.csv` (see [`crate::stability::REPORT_CSV_HEADER`]), `sweep_header.txt`, `sweep.svg`.
pub fn cmd_sweep(ex: &Experiment, dir: &Path) -> Result<Outcome> {
    let e = &ex.config.experiment;
    let rep = stability_sweep(&ex.prefs, &ex.family, e.x, &e.eps_list, &ex.sweep_config())?;
    let mut out = Out {
        dir,
        outcome: Outcome::default(),
    };
    for v in rep.trend_violations(e.trend_slack) {
        out.outcome.failures.push(format!("trend: {v}"));
    }
    for (name, v) in rep.final_values() {
        out.outcome.check(v <= e.final_tolerance, || {
            format!("final {name} = {v:.3e} exceeds {}", e.final_tolerance)
        });
    }
    for r in &rep.rows {
        out.outcome
            .check(r.bracket.weakly_dual(), || format!("weak duality fails at eps={}", r.eps()));
    }
    if let Some(r0) = rep.reference_row() {
        let worst = r0.dist_consumption_kp.max(r0.dist_utility_ucp).max(r0.dist_wealth_ucp);
        out.outcome
            .check(worst <= 0.01, || format!("eps=0 distances {worst:.3e} above solver noise"));
    }
    if ex.config.wants(Format::Csv) {
        rep.write_csv(out.create("sweep.csv")?)?;
        let mut w = out.create("sweep_header.txt")?;
        writeln!(w, "{}", rep.header())?;
        w.flush()?;
    }
    if ex.config.wants(Format::Svg) {
        rep.write_svg(out.create("sweep.svg")?)?;
    }
    Ok(out.outcome)
}

/// `diagnostics.csv`: `check,value,se,flag`; `deflation.csv`: `node,t,drift,se`;
/// `ladder.csv`: `n_level,m_level,value0,saturation_fraction,sup_diff_prev`;
/// `bsde_steps.csv`: per-node regression diagnostics of the optimizer's utility.
pub fn cmd_diagnostics(ex: &Experiment, dir: &Path) -> Result<Outcome> {
    let bundle = bundle_for(ex)?;
    let grid = bundle.grid();
    let model = ex.family.base();
    let spd = minimal_spd_path(model, &bundle)?;
    let rh = reverse_holder_check(&ex.prefs, &spd, grid)?;

    let base = base_for(ex, &bundle)?;
    let d = &base.d_hat_unit * base.oracle.y_star;
    let defl = martingale_deflation_check_discretised(&d, base.wealth.values(), &base.c_hat, grid, bundle.sampling())?;

    let terminal = utility_terminal(&ex.prefs, &base.c_hat, grid.horizon());
    let levels: Vec<Truncation> = match &ex.ladder {
        Some(l) => l.clone(),
        None => {
            let t = default_truncation(GeneratorKind::UtilityY, &ex.prefs, &terminal, base.c_hat.values());
            [0.25, 1.0, 4.0, 16.0]
                .iter()
                .map(|s| Truncation {
                    n_level: s * t.n_level,
                    m_level: s * t.m_level,
                })
                .collect()
        }
    };
    let state = utility_state(&ex.prefs, &base.wealth, &base.c_hat, &[])?;
    let ladder = truncation_ladder(
        GeneratorKind::UtilityY,
        &ex.prefs,
        &terminal,
        base.c_hat.values(),
        &bundle,
        &state,
        &levels,
        &ex.solver,
    )?;

    let mut out = Out {
        dir,
        outcome: Outcome::default(),
    };
    out.outcome.check(rh.finite, || {
        format!("reverse-Hoelder moment unstable across batches (spread {:.3})", rh.spread)
    });
    out.outcome.check(defl.is_martingale, || {
        "optimizer's deflated wealth is not flat within 2 SE".into()
    });
    if ex.config.wants(Format::Csv) {
        let m = grid.n_steps();
        out.csv(
            "diagnostics.csv",
            &["check", "value", "se", "flag"],
            &[
                vec![
                    "reverse_holder".into(),
                    rh.estimate.to_string(),
                    rh.spread.to_string(),
                    rh.finite.to_string(),
                ],
                vec![
                    "deflation_martingale".into(),
                    defl.drift[m].to_string(),
                    defl.se[m].to_string(),
                    defl.is_martingale.to_string(),
                ],
                vec![
                    "deflation_supermartingale".into(),
                    defl.max_abs_drift().to_string(),
                    defl.se[m].to_string(),
                    defl.is_supermartingale.to_string(),
                ],
                vec![
                    "class_d_proxy".into(),
                    base.utility.solution.class_d_proxy().to_string(),
                    String::new(),
                    base.utility.solution.class_d_proxy().is_finite().to_string(),
                ],
                vec![
                    "utility_u0".into(),
                    base.utility.u0.to_string(),
                    base.utility.se.to_string(),
                    base.utility.solution.saturation_fraction().to_string(),
                ],
            ],
        )?;
        let rows: Vec<Vec<String>> = (0..=m)
            .map(|i| {
                vec![
                    i.to_string(),
                    grid.t(i).to_string(),
                    defl.drift[i].to_string(),
                    defl.se[i].to_string(),
                ]
            })
            .collect();
        out.csv("deflation.csv", &["node", "t", "drift", "se"], &rows)?;
        let rows: Vec<Vec<String>> = ladder
            .solutions
            .iter()
            .enumerate()
            .map(|(k, s)| {
                vec![
                    s.truncation.n_level.to_string(),
                    s.truncation.m_level.to_string(),
                    s.value0.to_string(),
                    s.saturation_fraction().to_string(),
                    if k == 0 {
                        String::new()
                    } else {
                        ladder.sup_diffs[k - 1].to_string()
                    },
                ]
            })
            .collect();
        out.csv(
            "ladder.csv",
            &["n_level", "m_level", "value0", "saturation_fraction", "sup_diff_prev"],
            &rows,
        )?;
        base.utility.solution.write_diagnostics_csv(out.create("bsde_steps.csv")?)?;
    }
    if ex.config.wants(Format::Svg) {
        let pts: Vec<(f64, f64)> = (0..=grid.n_steps()).map(|i| (grid.t(i), defl.drift[i])).collect();
        let band: Vec<(f64, f64)> = (0..=grid.n_steps()).map(|i| (grid.t(i), 2.0 * defl.se[i])).collect();
        let neg: Vec<(f64, f64)> = band.iter().map(|(t, s)| (*t, -s)).collect();
        let w = out.create("deflation.svg")?;
        line_chart(
            w,
            "drift of deflated wealth",
            "t",
            &[("drift", pts), ("+2 SE", band), ("-2 SE", neg)],
            Axes {
                log_x: false,
                log_y: false,
            },
        )?;
    }
    Ok(out.outcome)
}

/// Dispatches a validated experiment.
pub fn execute(cmd: Command, ex: &Experiment, dir: &Path) -> Result<Outcome> {
    match cmd {
        Command::Oracle => cmd_oracle(ex, dir),
        Command::Bracket => cmd_bracket(ex, dir),
        Command::Sweep => cmd_sweep(ex, dir),
        Command::Diagnostics => cmd_diagnostics(ex, dir),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::AtEps { source, .. } => exit_code(source),
        _ => EXIT_NUMERICAL,
    }
}

/// Loads, validates and runs; returns the outcome or an error.
pub fn run(cmd: Option<Command>, args: &RunArgs) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(s) = args.seed {
        cfg.numerics.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output.directory = Some(o.clone());
    }
    let cmd = match (cmd, cfg.experiment.command) {
        (Some(c), _) => c,
        (None, Some(c)) => c,
        (None, None) => return Err(Error::Config("experiment.command is required for `run`".into())),
    };
    cfg.experiment.command = Some(cmd);
    let ex = cfg.build()?;
    let dir = cfg.output_dir();
    log::info!("running {} into {}", cmd.name(), dir.display());
    let mut out = execute(cmd, &ex, &dir)?;
    out.asserting = cfg.experiment.assert;
    Ok(out)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (cmd, args) = match &cli.command {
        CliCommand::Run(a) => (None, a),
        CliCommand::Oracle(a) => (Some(Command::Oracle), a),
        CliCommand::Bracket(a) => (Some(Command::Bracket), a),
        CliCommand::Sweep(a) => (Some(Command::Sweep), a),
        CliCommand::Diagnostics(a) => (Some(Command::Diagnostics), a),
    };
    match run(cmd, args) {
        Ok(out) => {
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            if out.failures.is_empty() {
                EXIT_OK
            } else {
                for f in &out.failures {
                    eprintln!("assertion failed: {f}");
                }
                if out.asserting {
                    EXIT_ASSERTION
                } else {
                    EXIT_OK
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("exp.toml");
        fs::write(&p, body).unwrap();
        p
    }

    const BASE: &str = r#"
schema_version = 1
[preferences]
gamma = 2.0
psi = 2.0
delta = 0.1
[model]
family = { kind = "constant_shift", r = 0.02, mu = [0.04], sigma = [[0.2]], rate_shift = 0.5 }
[numerics]
n_paths = 400
n_steps = 20
"#;

    #[test]
    fn oracle_command_writes_csv() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), BASE);
        let out = tmp.path().join("out");
        let code = main_with_args(["ezstab", "oracle", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
        let text = fs::read_to_string(out.join("oracle.csv")).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(
            rd.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["x", "u_exact", "y_star", "pi_1"]
        );
        let rec = rd.records().next().unwrap().unwrap();
        let pi: f64 = rec[3].parse().unwrap();
        assert!((pi - 0.5).abs() < 0.05);
        assert!(out.join("oracle_ratio.csv").exists() && out.join("oracle_ratio.svg").exists());
    }

    #[test]
    fn malformed_config_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), &BASE.replace("delta = 0.1", "delta = 0.1\ndetla = 0.2"));
        let out = tmp.path().join("out");
        let code = main_with_args(["ezstab", "oracle", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(!out.exists());
        let code = main_with_args(["ezstab", "run", cfg.to_str().unwrap()]);
        assert_eq!(code, EXIT_CONFIG);
        let code = main_with_args(["ezstab", "oracle", tmp.path().join("missing.toml").to_str().unwrap()]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn run_needs_a_command_and_factor_oracle_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), BASE);
        assert_eq!(main_with_args(["ezstab", "run", cfg.to_str().unwrap()]), EXIT_CONFIG);
        let factor = BASE.replace(
            r#"family = { kind = "constant_shift", r = 0.02, mu = [0.04], sigma = [[0.2]], rate_shift = 0.5 }"#,
            r#"family = { kind = "factor_vol", r = 0.02, mu = 0.04, sigma_bar = 0.2, rho = -0.5, mean_reversion = 2.0, long_run = 0.0, factor_vol = 0.5, loading = 1.0 }"#,
        );
        let cfg = write_config(tmp.path(), &factor);
        // the base of the factor family is constant, so the oracle runs
        let out = tmp.path().join("o");
        assert_eq!(
            main_with_args(["ezstab", "oracle", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]),
            EXIT_OK
        );
    }

    #[test]
    fn bracket_and_diagnostics_commands() {
        let tmp = tempfile::tempdir().unwrap();
        let body = format!("{BASE}\n[experiment]\ncommand = \"bracket\"\neps_list = [0.0, 0.1]\n");
        let cfg = write_config(tmp.path(), &body);
        let out = tmp.path().join("b");
        let code = main_with_args([
            "ezstab",
            "run",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert_eq!(code, EXIT_OK);
        let text = fs::read_to_string(out.join("brackets.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(",3,400"));
        assert!(out.join("scan.svg").exists() && out.join("scan_summary.csv").exists());

        let cfg = write_config(tmp.path(), BASE);
        let out = tmp.path().join("s");
        let code = main_with_args(["ezstab", "diagnostics", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);

        // deterministic market: zero SE, so the O(dt) drift of the deflated
        // optimizer is reported as not flat; only the report is checked here
        let zero = BASE.replace("r = 0.02, mu = [0.04]", "r = 0.0, mu = [0.0]");
        let cfg = write_config(tmp.path(), &format!("{zero}\n[experiment]\nassert = false\n"));
        let out = tmp.path().join("d");
        let code = main_with_args(["ezstab", "diagnostics", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
        let text = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
        let rh: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        // D = 1: int 1 dkappa = T + 1
        assert!((rh - 2.0).abs() < 1e-12);
        for f in ["deflation.csv", "ladder.csv", "bsde_steps.csv", "deflation.svg"] {
            assert!(out.join(f).exists(), "{f}");
        }
    }

    #[test]
    fn sweep_command_writes_report() {
        let tmp = tempfile::tempdir().unwrap();
        let body = format!("{BASE}\n[experiment]\neps_list = [0.2, 0.1]\nassert = false\n[output]\nformats = [\"csv\"]\n");
        let cfg = write_config(tmp.path(), &body);
        let out = tmp.path().join("w");
        let code = main_with_args(["ezstab", "sweep", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
        let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(fs::read_to_string(out.join("sweep_header.txt"))
            .unwrap()
            .contains("not the optimizer"));
        assert!(!out.join("sweep.svg").exists());
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Config("x".into()).at_eps(0.1)), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::NoConvergence("x".into())), EXIT_NUMERICAL);
    }
}
