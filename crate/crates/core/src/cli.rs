//! The `nsp` command line: argument parsing, dispatch and output.
//!
//! Exit codes: 0 on success, 1 when a computation fails or a check does not
//! pass, 2 when flags are rejected.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::capacity::{
    alpha_c, csv_record, fmt_f64, modulo_m_check, ordering_audit, sweep, write_csv, CapacityResult,
    CSV_HEADER,
};
use crate::error::{Error, Result};
use crate::free_energy::{Level, ModelPoint};
use crate::golden::reproduce;
use crate::oracle::{
    exact_convex_ground_state, finite_n_ground_state, mc_expectation, random_in_domain,
    transition_scan, FiniteNInstance, McKind, ScanConfig, DEFAULT_INNER_SAMPLES, DEFAULT_THRESHOLD,
};
use crate::stationarity::{
    check_gradient, solve_stationary, GradientCheck, SolveMode, SolverConfig,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "NSP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "nsp",
    version,
    about = "Lifted random-duality capacities of negative spherical perceptrons"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
    Pretty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Reduced,
    Full,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Gauss-Hermite order of the inner level-3 expectation.
    #[arg(long, global = true, default_value_t = 60)]
    pub quad_order_inner: usize,
    /// Gauss-Hermite order of the outer expectation.
    #[arg(long, global = true, default_value_t = 60)]
    pub quad_order_outer: usize,
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub residual_tol: f64,
    /// Relative width of the sign-change check around a capacity.
    #[arg(long, global = true, default_value_t = 1e-3)]
    pub capacity_tol: f64,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Reduced)]
    pub mode: ModeArg,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; `NSP_THREADS` takes precedence. Defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Defaults to csv for sweeps and scans, pretty otherwise.
    #[arg(long, global = true, value_enum)]
    pub output_format: Option<OutputFormat>,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    pub output_path: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical capacity at one kappa and level.
    Capacity {
        #[arg(long, allow_hyphen_values = true)]
        kappa: f64,
        #[arg(long, default_value = "2f")]
        level: Level,
    },
    /// Capacities over an evenly spaced kappa grid.
    Sweep {
        #[arg(long, allow_hyphen_values = true)]
        kappa_start: f64,
        #[arg(long, allow_hyphen_values = true)]
        kappa_end: f64,
        #[arg(long)]
        num: usize,
        /// One or more levels, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "2f")]
        level: Vec<Level>,
        /// Independent points in parallel instead of warm-started continuation.
        #[arg(long)]
        parallel: bool,
    },
    /// Recompute a published table and compare cell by cell.
    Reproduce {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        table: u8,
    },
    /// Verification suites.
    Check {
        #[command(subcommand)]
        what: CheckCommand,
    },
    /// Monte Carlo and finite-n estimators.
    Oracle {
        #[command(subcommand)]
        what: OracleCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum CheckCommand {
    /// Analytic gradient against central differences.
    Gradients {
        #[arg(long)]
        level: Level,
        #[arg(long, allow_hyphen_values = true)]
        kappa: f64,
        /// Check at the stationary point for this alpha.
        #[arg(long)]
        alpha: Option<f64>,
        /// Also check this many random in-domain points.
        #[arg(long, default_value_t = 0)]
        random: usize,
    },
    /// Whether the stationary c is a maximum once the other parameters are re-solved.
    ModuloM {
        #[arg(long, allow_hyphen_values = true)]
        kappa: f64,
        #[arg(long, default_value = "2f")]
        level: Level,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        #[arg(long, default_value_t = 5)]
        points: usize,
    },
    /// Capacities of all levels are non-increasing.
    Ordering {
        #[arg(long, allow_hyphen_values = true)]
        kappa: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Monte Carlo estimates of the expectations at a stationary point.
    Mc {
        /// e_max_sq, f_zt_level2, inner_log_level2, nested_level3 or all.
        #[arg(long, default_value = "all")]
        kind: String,
        #[arg(long, allow_hyphen_values = true)]
        kappa: f64,
        #[arg(long, default_value = "2f")]
        level: Level,
        /// Defaults to the capacity of the level.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_INNER_SAMPLES)]
        inner_samples: usize,
    },
    /// Fraction of random instances above a ground-state threshold.
    Transition {
        #[arg(long, allow_hyphen_values = true)]
        kappa: f64,
        #[arg(long)]
        n: usize,
        /// `start:end:count` or a comma separated list.
        #[arg(long)]
        alphas: String,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Ground state of one random instance.
    GroundState {
        #[arg(long, allow_hyphen_values = true)]
        kappa: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
    },
}

/// Parses `start:end:count` or `a,b,c`.
pub fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidInput(format!("cannot parse alphas {s:?}"));
    let out: Vec<f64> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let k: usize = parts[2].trim().parse().map_err(|_| bad())?;
        linspace(a, b, k)?
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if out.is_empty() || out.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "alphas must be positive: {s:?}"
        )));
    }
    Ok(out)
}

fn linspace(a: f64, b: f64, k: usize) -> Result<Vec<f64>> {
    match k {
        0 => Err(Error::InvalidInput("grid needs at least one point".into())),
        1 => Ok(vec![a]),
        _ => Ok((0..k)
            .map(|i| a + (b - a) * i as f64 / (k - 1) as f64)
            .collect()),
    }
}

impl GlobalArgs {
    pub fn solver_config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            residual_tol: self.residual_tol,
            capacity_tol: self.capacity_tol,
            quad_order_inner: self.quad_order_inner,
            quad_order_outer: self.quad_order_outer,
            mode: match self.mode {
                ModeArg::Reduced => SolveMode::Reduced,
                ModeArg::Full => SolveMode::Full,
            },
            ..SolverConfig::default()
        };
        cfg.validate()?;
        cfg.quadrature()?;
        Ok(cfg)
    }

    fn threads(&self) -> Result<Option<usize>> {
        let n =
            match std::env::var(THREADS_ENV) {
                Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                    Error::InvalidInput(format!("{THREADS_ENV}={v:?} is not a count"))
                })?),
                Err(_) => self.threads,
            };
        if n == Some(0) {
            return Err(Error::InvalidInput("thread count must be positive".into()));
        }
        Ok(n)
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "kappa must be finite, got {kappa}"
        )))
    }
}

impl Command {
    /// Flag checks that need no computation.
    pub fn validate(&self) -> Result<()> {
        match self {
            Command::Capacity { kappa, .. } => check_kappa(*kappa),
            Command::Sweep {
                kappa_start,
                kappa_end,
                num,
                level,
                ..
            } => {
                check_kappa(*kappa_start)?;
                check_kappa(*kappa_end)?;
                if *num < 1 || level.is_empty() {
                    return Err(Error::InvalidInput(
                        "sweep needs --num >= 1 and a level".into(),
                    ));
                }
                if kappa_end < kappa_start {
                    return Err(Error::InvalidInput(
                        "kappas must be sorted: --kappa-end < --kappa-start".into(),
                    ));
                }
                Ok(())
            }
            Command::Reproduce { .. } => Ok(()),
            Command::Check { what } => match what {
                CheckCommand::Gradients {
                    level,
                    kappa,
                    alpha,
                    ..
                } => {
                    check_kappa(*kappa)?;
                    if *level == Level::One {
                        return Err(Error::InvalidInput(
                            "level 1 has no gradient to check".into(),
                        ));
                    }
                    if let Some(a) = alpha {
                        ModelPoint::new(*kappa, *a)?;
                    }
                    Ok(())
                }
                CheckCommand::ModuloM {
                    kappa,
                    level,
                    radius,
                    points,
                } => {
                    check_kappa(*kappa)?;
                    if !level.is_full() || !(*radius >= 0.0 && *radius < 1.0) || *points < 1 {
                        return Err(Error::InvalidInput(
                            "modulo-m needs level 2f or 3f, radius in [0, 1) and points >= 1"
                                .into(),
                        ));
                    }
                    Ok(())
                }
                CheckCommand::Ordering { kappa } => check_kappa(*kappa),
            },
            Command::Oracle { what } => match what {
                OracleCommand::Mc {
                    kind,
                    kappa,
                    alpha,
                    samples,
                    inner_samples,
                    ..
                } => {
                    check_kappa(*kappa)?;
                    if kind != "all" && !McKind::NAMES.contains(&kind.as_str()) {
                        return Err(Error::InvalidInput(format!(
                            "unknown kind {kind:?}; expected all or one of {:?}",
                            McKind::NAMES
                        )));
                    }
                    if let Some(a) = alpha {
                        ModelPoint::new(*kappa, *a)?;
                    }
                    if *samples < crate::oracle::MIN_SAMPLES || *inner_samples < 1 {
                        return Err(Error::InvalidInput(format!(
                            "need --samples >= {} and --inner-samples >= 1",
                            crate::oracle::MIN_SAMPLES
                        )));
                    }
                    Ok(())
                }
                OracleCommand::Transition {
                    kappa,
                    n,
                    alphas,
                    trials,
                    restarts,
                    threshold,
                } => {
                    check_kappa(*kappa)?;
                    parse_alphas(alphas)?;
                    if *n < 2 || *trials < 10 || *restarts < 1 || !(*threshold >= 0.0) {
                        return Err(Error::InvalidInput(
                            "transition needs n >= 2, trials >= 10, restarts >= 1, threshold >= 0"
                                .into(),
                        ));
                    }
                    Ok(())
                }
                OracleCommand::GroundState {
                    kappa,
                    alpha,
                    n,
                    restarts,
                } => {
                    FiniteNInstance::new(*n, *alpha, *kappa, 0)?;
                    if *restarts < 1 {
                        return Err(Error::InvalidInput("restarts must be at least 1".into()));
                    }
                    Ok(())
                }
            },
        }
    }

    fn default_format(&self) -> OutputFormat {
        match self {
            Command::Sweep { .. }
            | Command::Oracle {
                what: OracleCommand::Transition { .. },
            } => OutputFormat::Csv,
            _ => OutputFormat::Pretty,
        }
    }
}

/// Everything one command produces, in all three formats.
pub struct Report {
    pub command: &'static str,
    pub json: Value,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub pretty: String,
    pub ok: bool,
}

impl Report {
    fn render(&self, format: OutputFormat) -> Result<Vec<u8>> {
        match format {
            OutputFormat::Json => {
                let doc = json!({
                    "schema_version": SCHEMA_VERSION,
                    "command": self.command,
                    "pass": self.ok,
                    "result": self.json,
                });
                let mut s = serde_json::to_vec_pretty(&doc)
                    .map_err(|e| Error::Numerical(format!("json: {e}")))?;
                s.push(b'\n');
                Ok(s)
            }
            OutputFormat::Csv => {
                let mut wr = csv::Writer::from_writer(Vec::new());
                let io = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
                wr.write_record(&self.header).map_err(io)?;
                for r in &self.rows {
                    wr.write_record(r).map_err(io)?;
                }
                wr.into_inner()
                    .map_err(|e| Error::Numerical(format!("csv: {e}")))
            }
            OutputFormat::Pretty => Ok(self.pretty.clone().into_bytes()),
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn num(v: f64) -> String {
    fmt_f64(v)
}

fn capacity_pretty(r: &CapacityResult) -> String {
    let lp = &r.params;
    let mut s = String::new();
    let _ = writeln!(s, "kappa        {}", r.kappa);
    let _ = writeln!(s, "level        {}", r.level);
    let _ = writeln!(s, "alpha_c      {:.6}", r.alpha_c);
    let _ = writeln!(s, "branch       {}", r.branch.as_str());
    let _ = writeln!(s, "psi          {:.3e}", r.psi_residual);
    let _ = writeln!(s, "residual     {:.3e}", r.residual_norm);
    let _ = writeln!(s, "gamma_sq     {:.6}", lp.gamma_sq);
    let _ = writeln!(s, "gamma_sq_p   {:.6}", lp.gamma_sq_p);
    if r.level.is_full() {
        for (i, v) in lp.p.iter().enumerate() {
            let _ = writeln!(s, "p{}           {:.6}", i + 2, v);
        }
        for (i, v) in lp.q.iter().enumerate() {
            let _ = writeln!(s, "q{}           {:.6}", i + 2, v);
        }
    }
    for (i, v) in lp.c.iter().enumerate() {
        let _ = writeln!(s, "c{}           {:.6}", i + 2, v);
    }
    let d = &r.diagnostics;
    let _ = writeln!(
        s,
        "bracket      [{:.6}, {:.6}] after {} evaluations, quadrature {}x{}",
        d.bracket.0, d.bracket.1, d.alpha_evaluations, d.quad_order_inner, d.quad_order_outer
    );
    s
}

fn cmd_capacity(kappa: f64, level: Level, cfg: &SolverConfig) -> Result<Report> {
    let r = alpha_c(kappa, level, cfg)?;
    Ok(Report {
        command: "capacity",
        json: to_json(&r),
        header: CSV_HEADER.iter().map(|s| s.to_string()).collect(),
        rows: vec![csv_record(&r)],
        pretty: capacity_pretty(&r),
        ok: true,
    })
}

fn cmd_sweep(
    kappas: &[f64],
    levels: &[Level],
    cfg: &SolverConfig,
    parallel: bool,
) -> Result<Report> {
    let pts = sweep(kappas, levels, cfg, parallel);
    let mut buf = Vec::new();
    write_csv(&pts, &mut buf)?;
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let header = rdr
        .headers()
        .map_err(|e| Error::Numerical(format!("csv: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| Error::Numerical(format!("csv: {e}")))?;
    let mut pretty = String::new();
    let _ = writeln!(
        pretty,
        "{:>8} {:>5} {:>12} {:>10} {:>20}",
        "kappa", "level", "alpha_c", "psi", "branch"
    );
    for p in &pts {
        match &p.result {
            Ok(r) => {
                let _ = writeln!(
                    pretty,
                    "{:>8.4} {:>5} {:>12.6} {:>10.2e} {:>20}",
                    p.kappa,
                    p.level.as_str(),
                    r.alpha_c,
                    r.psi_residual,
                    r.branch.as_str()
                );
            }
            Err(e) => {
                let _ = writeln!(
                    pretty,
                    "{:>8.4} {:>5} failed: {e}",
                    p.kappa,
                    p.level.as_str()
                );
            }
        }
    }
    let failures = pts.iter().filter(|p| p.result.is_err()).count();
    Ok(Report {
        command: "sweep",
        json: to_json(&pts),
        header,
        rows,
        pretty,
        ok: failures == 0,
    })
}

fn cmd_reproduce(table: u8, cfg: &SolverConfig) -> Result<Report> {
    let rep = reproduce(table, cfg)?;
    let header = [
        "check",
        "source",
        "kappa",
        "level",
        "quantity",
        "published",
        "value",
        "rel_error",
        "tolerance",
        "pass",
    ];
    let mut rows = Vec::new();
    let mut pretty = String::new();
    let _ = writeln!(
        pretty,
        "{:<9} {:>6} {:>5} {:<11} {:>10} {:>12} {:>9}  ",
        "source", "kappa", "level", "quantity", "published", "computed", "rel_err"
    );
    for c in &rep.cells {
        rows.push(vec![
            "computed".into(),
            c.source.clone(),
            num(c.kappa),
            c.level.to_string(),
            c.quantity.clone(),
            num(c.published),
            c.computed.map(num).unwrap_or_default(),
            c.rel_error.map(num).unwrap_or_default(),
            num(c.tolerance),
            c.pass.to_string(),
        ]);
        let _ = writeln!(
            pretty,
            "{:<9} {:>6} {:>5} {:<11} {:>10} {:>12} {:>9}  {}",
            c.source,
            c.kappa,
            c.level.as_str(),
            c.quantity,
            c.published,
            c.computed
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "-".into()),
            c.rel_error
                .map(|v| format!("{:.3}%", 100.0 * v))
                .unwrap_or_else(|| "-".into()),
            if c.pass {
                "ok"
            } else {
                c.error.as_deref().unwrap_or("OUT OF TOLERANCE")
            }
        );
    }
    if !rep.consistency.is_empty() {
        let _ = writeln!(pretty, "\nclosed forms at the published p, q:");
        for c in &rep.consistency {
            rows.push(vec![
                "closed_form".into(),
                c.source.clone(),
                num(c.kappa),
                c.level.to_string(),
                c.quantity.clone(),
                num(c.published),
                num(c.closed_form),
                num(c.rel_error),
                num(crate::golden::PARAM_TOL),
                c.pass.to_string(),
            ]);
            let _ = writeln!(
                pretty,
                "{:<9} {:>6} {:>5} {:<11} {:>10} {:>12.6} {:>8.3}%  {}",
                c.source,
                c.kappa,
                c.level.as_str(),
                c.quantity,
                c.published,
                c.closed_form,
                100.0 * c.rel_error,
                if c.pass { "ok" } else { "OUT OF TOLERANCE" }
            );
        }
    }
    let bad = rep.failures().count() + rep.consistency.iter().filter(|c| !c.pass).count();
    let _ = writeln!(
        pretty,
        "\ntable {table}: {} cells, {} out of tolerance (capacities {}%, parameters {}%)",
        rep.cells.len() + rep.consistency.len(),
        bad,
        100.0 * crate::golden::CAPACITY_TOL,
        100.0 * crate::golden::PARAM_TOL
    );
    Ok(Report {
        command: "reproduce",
        json: to_json(&rep),
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
        pretty,
        ok: rep.pass,
    })
}

#[derive(Serialize)]
struct GradientRow {
    point: String,
    kappa: f64,
    alpha: f64,
    check: GradientCheck,
}

fn cmd_check_gradients(
    level: Level,
    kappa: f64,
    alpha: Option<f64>,
    random: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<Report> {
    let quad = cfg.quadrature()?;
    let mut points = Vec::new();
    let alpha = match alpha {
        Some(a) => Some(a),
        None if random == 0 => Some(alpha_c(kappa, level, cfg)?.alpha_c),
        None => None,
    };
    if let Some(a) = alpha {
        let mp = ModelPoint::new(kappa, a)?;
        let st = solve_stationary(&mp, level, cfg)?;
        points.push(("stationary".to_string(), mp, st.params));
    }
    for i in 0..random {
        let (mp, lp) = random_in_domain(level, seed.wrapping_add(i as u64));
        points.push((format!("random_{i}"), mp, lp));
    }
    let mut out = Vec::new();
    for (name, mp, lp) in points {
        let check = check_gradient(&mp, &lp, &quad, cfg.fd_step)?;
        out.push(GradientRow {
            point: name,
            kappa: mp.kappa,
            alpha: mp.alpha,
            check,
        });
    }
    let header = [
        "point",
        "kappa",
        "alpha",
        "parameter",
        "analytic",
        "numeric",
        "rel_error",
        "tolerance",
        "pass",
    ];
    let mut rows = Vec::new();
    let mut pretty = String::new();
    for g in &out {
        let c = &g.check;
        let _ = writeln!(
            pretty,
            "{} (kappa {:.4}, alpha {:.4}, level {}): {} max rel error {:.2e} (tolerance {:.0e})",
            g.point,
            g.kappa,
            g.alpha,
            c.level,
            if c.pass { "PASS" } else { "FAIL" },
            c.max_rel_error(),
            c.tolerance
        );
        for i in 0..c.names.len() {
            rows.push(vec![
                g.point.clone(),
                num(g.kappa),
                num(g.alpha),
                c.names[i].clone(),
                num(c.analytic[i]),
                num(c.numeric[i]),
                num(c.rel_error[i]),
                num(c.tolerance),
                (c.rel_error[i] < c.tolerance).to_string(),
            ]);
            if out.len() == 1 || !c.pass {
                let _ = writeln!(
                    pretty,
                    "  {:<11} analytic {:>14.6e}  numeric {:>14.6e}  rel {:.2e}",
                    c.names[i], c.analytic[i], c.numeric[i], c.rel_error[i]
                );
            }
        }
    }
    let ok = out.iter().all(|g| g.check.pass);
    let _ = writeln!(pretty, "{}", if ok { "PASS" } else { "FAIL" });
    Ok(Report {
        command: "check gradients",
        json: to_json(&out),
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
        pretty,
        ok,
    })
}

fn cmd_check_modulo_m(
    kappa: f64,
    level: Level,
    radius: f64,
    points: usize,
    cfg: &SolverConfig,
) -> Result<Report> {
    let r = modulo_m_check(kappa, level, cfg, radius, points)?;
    let pretty = format!(
        "kappa {} level {} alpha_c {:.6}\npsi at stationary c {:.3e}\nlargest excess over {} perturbations {:.3e} ({} skipped)\n{}\n",
        r.kappa,
        r.level,
        r.alpha_c,
        r.psi_hat,
        r.evaluated,
        r.max_excess,
        r.skipped.len(),
        if r.pass { "PASS" } else { "FAIL" }
    );
    Ok(Report {
        command: "check modulo-m",
        json: to_json(&r),
        header: [
            "kappa",
            "level",
            "alpha_c",
            "psi_hat",
            "max_excess",
            "evaluated",
            "skipped",
            "pass",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows: vec![vec![
            num(r.kappa),
            r.level.to_string(),
            num(r.alpha_c),
            num(r.psi_hat),
            num(r.max_excess),
            r.evaluated.to_string(),
            r.skipped.len().to_string(),
            r.pass.to_string(),
        ]],
        pretty,
        ok: r.pass,
    })
}

fn cmd_check_ordering(kappa: f64, cfg: &SolverConfig) -> Result<Report> {
    let r = ordering_audit(kappa, cfg)?;
    let mut pretty = format!("kappa {kappa}\n");
    let mut rows = Vec::new();
    for (i, (l, a)) in r.levels.iter().zip(&r.alphas).enumerate() {
        let imp = if i == 0 {
            None
        } else {
            Some(r.improvements[i - 1])
        };
        let _ = writeln!(
            pretty,
            "  {:<3} {:>12.6}  {}",
            l.as_str(),
            a,
            imp.map(|d| format!("{:.3}% below previous", 100.0 * d))
                .unwrap_or_default()
        );
        rows.push(vec![
            num(kappa),
            l.to_string(),
            num(*a),
            imp.map(num).unwrap_or_default(),
        ]);
    }
    let _ = writeln!(pretty, "{}", if r.pass { "PASS" } else { "FAIL" });
    Ok(Report {
        command: "check ordering",
        json: to_json(&r),
        header: ["kappa", "level", "alpha_c", "improvement"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows,
        pretty,
        ok: r.pass,
    })
}

#[derive(Serialize)]
struct McRow {
    kind: McKind,
    kappa: f64,
    level: Level,
    alpha: f64,
    estimate: crate::oracle::McEstimate,
    deterministic: f64,
    z_score: f64,
    pass: bool,
}

#[allow(clippy::too_many_arguments)]
fn cmd_oracle_mc(
    kind: &str,
    kappa: f64,
    level: Level,
    alpha: Option<f64>,
    samples: usize,
    inner_samples: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<Report> {
    let alpha = match alpha {
        Some(a) => a,
        None => alpha_c(kappa, level, cfg)?.alpha_c,
    };
    let mp = ModelPoint::new(kappa, alpha)?;
    let st = solve_stationary(&mp, level, cfg)?;
    let quad = cfg.quadrature()?;
    let names: Vec<&str> = if kind == "all" {
        McKind::NAMES
            .iter()
            .copied()
            .filter(|n| match *n {
                "e_max_sq" => true,
                "nested_level3" => level == Level::ThreeFull,
                "inner_log_level2" => level == Level::TwoFull,
                _ => st.params.level != Level::One && st.params.c2() > 0.0,
            })
            .collect()
    } else {
        vec![kind]
    };
    let mut out = Vec::new();
    for name in names {
        let k = McKind::at_point(name, kappa, &st.params, inner_samples)?;
        let est = mc_expectation(&k, samples, seed)?;
        let det = k.deterministic_value(&quad)?;
        let z = est.z_score(det);
        out.push(McRow {
            kind: k,
            kappa,
            level,
            alpha,
            estimate: est,
            deterministic: det,
            z_score: z,
            pass: z <= 3.0,
        });
    }
    let header = [
        "kind",
        "kappa",
        "level",
        "alpha",
        "mean",
        "std_error",
        "samples",
        "inner_samples",
        "deterministic",
        "z_score",
        "seed",
    ];
    let mut rows = Vec::new();
    let mut pretty = format!("kappa {kappa} level {level} alpha {alpha:.6}\n");
    for r in &out {
        let e = &r.estimate;
        rows.push(vec![
            e.kind.clone(),
            num(kappa),
            level.to_string(),
            num(alpha),
            num(e.mean),
            num(e.std_error),
            e.samples.to_string(),
            e.inner_samples.map(|n| n.to_string()).unwrap_or_default(),
            num(r.deterministic),
            num(r.z_score),
            e.seed.to_string(),
        ]);
        let _ = writeln!(
            pretty,
            "  {:<17} mc {:>14.8} +- {:.2e}   deterministic {:>14.8}   z {:.2}{}",
            e.kind,
            e.mean,
            e.std_error,
            r.deterministic,
            r.z_score,
            e.inner_samples
                .map(|n| format!("   (inner draws {n})"))
                .unwrap_or_default()
        );
    }
    let ok = out.iter().all(|r| r.pass);
    Ok(Report {
        command: "oracle mc",
        json: to_json(&out),
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
        pretty,
        ok,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_oracle_transition(
    kappa: f64,
    n: usize,
    alphas: &str,
    trials: usize,
    restarts: usize,
    threshold: f64,
    seed: u64,
) -> Result<Report> {
    let alphas = parse_alphas(alphas)?;
    let rows_ = transition_scan(
        kappa,
        &alphas,
        n,
        trials,
        seed,
        ScanConfig {
            restarts,
            threshold,
        },
    )?;
    let header = [
        "kappa",
        "n",
        "alpha",
        "m",
        "trials",
        "positive",
        "fraction_positive",
        "mean_ground_state",
    ];
    let mut rows = Vec::new();
    let mut pretty = format!("kappa {kappa} n {n} trials {trials} threshold {threshold}\n");
    for r in &rows_ {
        rows.push(vec![
            num(kappa),
            n.to_string(),
            num(r.alpha),
            r.m.to_string(),
            r.trials.to_string(),
            r.positive.to_string(),
            num(r.fraction_positive),
            num(r.mean_ground_state),
        ]);
        let _ = writeln!(
            pretty,
            "  alpha {:>10.4}  m {:>6}  positive {:>4}/{:<4}  mean {:.6}",
            r.alpha, r.m, r.positive, r.trials, r.mean_ground_state
        );
    }
    Ok(Report {
        command: "oracle transition",
        json: to_json(&rows_),
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
        pretty,
        ok: true,
    })
}

fn cmd_oracle_ground_state(
    kappa: f64,
    alpha: f64,
    n: usize,
    restarts: usize,
    seed: u64,
) -> Result<Report> {
    let inst = FiniteNInstance::new(n, alpha, kappa, seed)?;
    let descent = finite_n_ground_state(&inst, restarts, seed)?;
    let exact = if kappa >= 0.0 {
        exact_convex_ground_state(&inst)?
    } else {
        None
    };
    let mut pretty = format!(
        "n {n} m {} kappa {kappa} seed {seed}\ndescent  {descent:.10}\n",
        inst.m
    );
    match exact {
        Some(e) => {
            let _ = writeln!(
                pretty,
                "exact    {e:.10}  (difference {:.2e})",
                (descent - e).abs()
            );
        }
        None if kappa >= 0.0 => {
            let _ = writeln!(pretty, "exact    no certificate at this instance");
        }
        None => {}
    }
    Ok(Report {
        command: "oracle ground-state",
        json: json!({ "instance": inst, "restarts": restarts, "descent": descent, "exact": exact }),
        header: ["n", "m", "kappa", "seed", "restarts", "descent", "exact"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: vec![vec![
            n.to_string(),
            inst.m.to_string(),
            num(kappa),
            seed.to_string(),
            restarts.to_string(),
            num(descent),
            exact.map(num).unwrap_or_default(),
        ]],
        pretty,
        ok: true,
    })
}

/// Runs a parsed command.
pub fn execute(cli: &Cli) -> Result<Report> {
    let cfg = cli.global.solver_config()?;
    let seed = cli.global.seed;
    match &cli.command {
        Command::Capacity { kappa, level } => cmd_capacity(*kappa, *level, &cfg),
        Command::Sweep {
            kappa_start,
            kappa_end,
            num,
            level,
            parallel,
        } => {
            let kappas = linspace(*kappa_start, *kappa_end, *num)?;
            cmd_sweep(&kappas, level, &cfg, *parallel)
        }
        Command::Reproduce { table } => cmd_reproduce(*table, &cfg),
        Command::Check { what } => match what {
            CheckCommand::Gradients {
                level,
                kappa,
                alpha,
                random,
            } => cmd_check_gradients(*level, *kappa, *alpha, *random, seed, &cfg),
            CheckCommand::ModuloM {
                kappa,
                level,
                radius,
                points,
            } => cmd_check_modulo_m(*kappa, *level, *radius, *points, &cfg),
            CheckCommand::Ordering { kappa } => cmd_check_ordering(*kappa, &cfg),
        },
        Command::Oracle { what } => match what {
            OracleCommand::Mc {
                kind,
                kappa,
                level,
                alpha,
                samples,
                inner_samples,
            } => cmd_oracle_mc(
                kind,
                *kappa,
                *level,
                *alpha,
                *samples,
                *inner_samples,
                seed,
                &cfg,
            ),
            OracleCommand::Transition {
                kappa,
                n,
                alphas,
                trials,
                restarts,
                threshold,
            } => cmd_oracle_transition(*kappa, *n, alphas, *trials, *restarts, *threshold, seed),
            OracleCommand::GroundState {
                kappa,
                alpha,
                n,
                restarts,
            } => cmd_oracle_ground_state(*kappa, *alpha, *n, *restarts, seed),
        },
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) => 2,
        _ => 1,
    }
}

/// Parses `args`, runs the command and writes its output. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let prepared = cli
        .command
        .validate()
        .and_then(|_| cli.global.solver_config())
        .and_then(|_| cli.global.threads());
    let threads = match prepared {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    };
    let report = match pool.install(|| execute(&cli)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let format = cli
        .global
        .output_format
        .unwrap_or_else(|| cli.command.default_format());
    let bytes = match report.render(format) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let written = match &cli.global.output_path {
        Some(p) => std::fs::write(p, &bytes).map_err(|e| format!("{}: {e}", p.display())),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return 1;
    }
    if !report.ok {
        eprintln!("{}: check failed", report.command);
        return 1;
    }
    0
}
