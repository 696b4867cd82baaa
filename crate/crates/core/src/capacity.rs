//! Critical capacities: the `alpha` at which the stationary free energy
//! crosses zero, kappa sweeps, and the two audits (level ordering and the
//! modulo-m maximization check).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::{e_max_sq, sphere_term, Level, LiftingParams, ModelPoint};
use crate::specfun::{normal_pdf, normal_sf};
pub use crate::stationarity::Branch;
use crate::stationarity::{solve_fixed_c, solve_stationary, SolverConfig, Stationary};

/// Stop once `|psi| <` this at the root.
pub const PSI_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Free-energy evaluations (one stationary solve each) in the root search.
    pub alpha_evaluations: usize,
    /// Newton iterations of the final stationary solve.
    pub newton_iterations: usize,
    pub quad_order_inner: usize,
    pub quad_order_outer: usize,
    /// `alpha` interval on whose ends `psi` was checked to change sign.
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub kappa: f64,
    pub level: Level,
    pub alpha_c: f64,
    pub params: LiftingParams,
    /// Largest stationarity residual at the root.
    pub residual_norm: f64,
    /// `psi` at the root.
    pub psi_residual: f64,
    pub branch: Branch,
    pub diagnostics: Diagnostics,
}

impl CapacityResult {
    fn closed_form(
        kappa: f64,
        alpha: f64,
        level: Level,
        st: Stationary,
        cfg: &SolverConfig,
    ) -> Self {
        Self {
            kappa,
            level,
            alpha_c: alpha,
            residual_norm: st.residual.max_abs(),
            psi_residual: st.psi,
            branch: st.branch,
            params: st.params,
            diagnostics: Diagnostics {
                alpha_evaluations: 0,
                newton_iterations: 0,
                quad_order_inner: cfg.quad_order_inner,
                quad_order_outer: cfg.quad_order_outer,
                bracket: (alpha, alpha),
            },
        }
    }
}

/// Level-1 capacity `1 / E max(kappa + g, 0)^2`.
pub fn alpha_c_r1(kappa: f64) -> f64 {
    1.0 / e_max_sq(kappa)
}

/// `E max(kappa + g, 0)^4`.
fn e_max_fourth(kappa: f64) -> f64 {
    let k2 = kappa * kappa;
    (k2 * k2 + 6.0 * k2 + 3.0) * normal_sf(-kappa) + (k2 * kappa + 5.0 * kappa) * normal_pdf(kappa)
}

/// Slope of the partial-level energy in `c2` at `c2 = 0` (with both
/// `gamma`s re-optimized), scaled to be independent of `alpha`. The interior
/// branch exists exactly where it is positive.
pub fn partial_branch_slope(kappa: f64) -> f64 {
    let m1 = e_max_sq(kappa);
    let m2 = e_max_fourth(kappa);
    0.25 - (m2 - m1 * m1) / (8.0 * m1)
}

/// Threshold above which the partial second level collapses onto level 1,
/// located as the sign change of [`partial_branch_slope`].
pub fn kappa_c() -> Result<f64> {
    let (mut lo, mut hi) = (-1.5, 0.0);
    let (flo, fhi) = (partial_branch_slope(lo), partial_branch_slope(hi));
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::Bracketing(format!(
            "branch slope does not change sign on [-1.5, 0]: {flo:e}, {fhi:e}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if partial_branch_slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn previous_level(level: Level) -> Option<Level> {
    match level {
        Level::One => None,
        Level::TwoPartial => Some(Level::One),
        Level::TwoFull => Some(Level::TwoPartial),
        Level::ThreeFull => Some(Level::TwoFull),
    }
}

struct Probe {
    alpha: f64,
    st: Stationary,
    /// `d psi / d alpha`, positive.
    slope: f64,
}

fn probe(kappa: f64, alpha: f64, level: Level, cfg: &SolverConfig) -> Result<Probe> {
    let mp = ModelPoint::new(kappa, alpha)?;
    let st = solve_stationary(&mp, level, cfg).map_err(|e| match e {
        Error::NonConvergence { iterations, best_residual } => Error::Numerical(format!(
            "stationary solve failed at alpha = {alpha}: no convergence after {iterations} iterations (best residual {best_residual:.3e})"
        )),
        other => Error::Numerical(format!("stationary solve failed at alpha = {alpha}: {other}")),
    })?;
    let quad = cfg.quadrature()?;
    let s = sphere_term(&mp, &st.params, &quad)?;
    let c_last = match st.params.level {
        Level::One => 1.0,
        _ if st.branch == Branch::DegenerateC2Zero => 1.0,
        _ => *st.params.c.last().expect("non-empty c"),
    };
    let slope = if st.branch == Branch::DegenerateC2Zero || level == Level::One {
        // psi = -1 + sqrt(alpha E)
        0.5 * (e_max_sq(kappa) / alpha).sqrt()
    } else {
        -s / c_last
    };
    Ok(Probe { alpha, st, slope })
}

/// Capacity of `level` at `kappa`.
pub fn alpha_c(kappa: f64, level: Level, cfg: &SolverConfig) -> Result<CapacityResult> {
    alpha_c_with_hint(kappa, level, cfg, None)
}

/// Like [`alpha_c`], seeded with a nearby result (same level, neighbouring
/// `kappa`) for the first stationary solve and the initial `alpha`.
pub fn alpha_c_with_hint(
    kappa: f64,
    level: Level,
    cfg: &SolverConfig,
    hint: Option<&CapacityResult>,
) -> Result<CapacityResult> {
    cfg.validate()?;
    if !kappa.is_finite() {
        return Err(Error::InvalidInput(format!(
            "kappa must be finite, got {kappa}"
        )));
    }
    let a1 = alpha_c_r1(kappa);
    if level == Level::One {
        let mp = ModelPoint::new(kappa, a1)?;
        let st = solve_stationary(&mp, Level::One, cfg)?;
        return Ok(CapacityResult::closed_form(kappa, a1, level, st, cfg));
    }
    let prev = match previous_level(level) {
        Some(Level::One) => None,
        Some(l) => Some(alpha_c(kappa, l, cfg)?),
        None => None,
    };
    let alpha_prev = prev.as_ref().map_or(a1, |r| r.alpha_c);

    let mut cfg = cfg.clone();
    cfg.warm_start = hint
        .filter(|h| h.level == level)
        .map(|h| h.params.clone())
        .or_else(|| prev.as_ref().map(|r| r.params.clone()));

    let (mut lo, mut hi) = (0.5 * alpha_prev, 1.05 * alpha_prev);
    let start = hint
        .filter(|h| h.level == level && h.alpha_c > lo && h.alpha_c < hi)
        .map_or(alpha_prev, |h| h.alpha_c);
    let mut evaluations = 0;

    let mut eval = |alpha: f64, cfg: &mut SolverConfig| -> Result<Probe> {
        evaluations += 1;
        let p = probe(kappa, alpha, level, cfg)?;
        if p.st.branch == Branch::Interior {
            cfg.warm_start = Some(p.st.params.clone());
        }
        Ok(p)
    };

    // Newton on alpha with the envelope slope; [lo, hi] are safeguards that
    // tighten only with evaluated signs.
    let mut current = eval(start, &mut cfg)?;
    for _ in 0..80 {
        let g = current.st.psi;
        if g > 0.0 {
            hi = hi.min(current.alpha);
        } else {
            lo = lo.max(current.alpha);
        }
        let step = g / current.slope;
        if g.abs() < 1e-11 || step.abs() < 1e-12 * current.alpha || hi - lo < 1e-13 * hi {
            break;
        }
        let mut next = current.alpha - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        current = match eval(next, &mut cfg) {
            Ok(p) => p,
            // far from the root the stationary point may be out of reach;
            // pull back towards the last good point
            Err(_) if (next - current.alpha).abs() > 1e-3 * current.alpha => {
                let retry = 0.5 * (next + current.alpha);
                if next < current.alpha {
                    lo = lo.max(next);
                } else {
                    hi = hi.min(next);
                }
                eval(retry, &mut cfg)?
            }
            Err(e) => return Err(e),
        };
    }
    if current.st.psi.abs() >= PSI_TOL {
        return Err(Error::Numerical(format!(
            "root search ended with psi = {:.3e} at alpha = {}",
            current.st.psi, current.alpha
        )));
    }
    // sign change across a relative width well below the capacity tolerance
    let w = 0.5 * cfg.capacity_tol;
    let below = eval(current.alpha * (1.0 - w), &mut cfg)?;
    let above = eval(current.alpha * (1.0 + w), &mut cfg)?;
    if !(below.st.psi < 0.0 && above.st.psi > 0.0) {
        return Err(Error::Bracketing(format!(
            "no sign change of psi across alpha = {} +- {w:e}: {:.3e}, {:.3e}",
            current.alpha, below.st.psi, above.st.psi
        )));
    }

    let bracket = (below.alpha, above.alpha);
    let st = current.st;
    Ok(CapacityResult {
        kappa,
        level,
        alpha_c: current.alpha,
        residual_norm: st.residual.max_abs(),
        psi_residual: st.psi,
        branch: st.branch,
        diagnostics: Diagnostics {
            alpha_evaluations: evaluations,
            newton_iterations: st.iterations,
            quad_order_inner: cfg.quad_order_inner,
            quad_order_outer: cfg.quad_order_outer,
            bracket,
        },
        params: st.params,
    })
}

/// One `(kappa, level)` entry of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kappa: f64,
    pub level: Level,
    pub result: std::result::Result<CapacityResult, String>,
}

/// Capacities over `kappas` for each level. Sequentially each point is
/// warm-started from its neighbour; with `parallel` the points are
/// independent. Failures are recorded per point.
pub fn sweep(
    kappas: &[f64],
    levels: &[Level],
    cfg: &SolverConfig,
    parallel: bool,
) -> Vec<SweepPoint> {
    let mut out = Vec::with_capacity(kappas.len() * levels.len());
    for &level in levels {
        if parallel {
            let pts: Vec<SweepPoint> = kappas
                .par_iter()
                .map(|&kappa| SweepPoint {
                    kappa,
                    level,
                    result: alpha_c(kappa, level, cfg).map_err(|e| e.to_string()),
                })
                .collect();
            out.extend(pts);
        } else {
            let mut prev: Option<CapacityResult> = None;
            for &kappa in kappas {
                let mut r = alpha_c_with_hint(kappa, level, cfg, prev.as_ref());
                if r.is_err() && prev.is_some() {
                    r = alpha_c(kappa, level, cfg);
                }
                if let Ok(ok) = &r {
                    prev = Some(ok.clone());
                }
                out.push(SweepPoint {
                    kappa,
                    level,
                    result: r.map_err(|e| e.to_string()),
                });
            }
        }
    }
    out
}

pub const CSV_HEADER: [&str; 13] = [
    "kappa",
    "level",
    "alpha_c",
    "p2",
    "p3",
    "q2",
    "q3",
    "c2",
    "c3",
    "gamma_sq",
    "gamma_sq_p",
    "psi_residual",
    "branch",
];

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// CSV record in [`CSV_HEADER`] order; absent parameters are empty.
pub fn csv_record(r: &CapacityResult) -> Vec<String> {
    let lp = &r.params;
    vec![
        fmt_f64(r.kappa),
        r.level.to_string(),
        fmt_f64(r.alpha_c),
        opt(lp.p.first().copied()),
        opt(lp.p.get(1).copied()),
        opt(lp.q.first().copied()),
        opt(lp.q.get(1).copied()),
        opt(lp.c.first().copied()),
        opt(lp.c.get(1).copied()),
        fmt_f64(lp.gamma_sq),
        fmt_f64(lp.gamma_sq_p),
        fmt_f64(r.psi_residual),
        r.branch.as_str().to_string(),
    ]
}

/// Writes successful sweep points; failed points keep `kappa` and `level`
/// with `branch = failed`.
pub fn write_csv<W: Write>(points: &[SweepPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
    wr.write_record(CSV_HEADER).map_err(io)?;
    for p in points {
        match &p.result {
            Ok(r) => wr.write_record(csv_record(r)).map_err(io)?,
            Err(_) => {
                let mut rec = vec![String::new(); CSV_HEADER.len()];
                rec[0] = fmt_f64(p.kappa);
                rec[1] = p.level.to_string();
                rec[12] = "failed".into();
                wr.write_record(rec).map_err(io)?;
            }
        }
    }
    wr.flush()
        .map_err(|e| Error::Numerical(format!("csv: {e}")))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuloMReport {
    pub kappa: f64,
    pub level: Level,
    pub alpha_c: f64,
    pub psi_hat: f64,
    /// Largest `psi(c) - psi(c_hat)` over the evaluated perturbations.
    pub max_excess: f64,
    pub evaluated: usize,
    /// Perturbations that left the domain or failed to re-stationarize.
    pub skipped: Vec<Vec<f64>>,
    pub pass: bool,
}

/// Checks that the stationary `c` of a full level is a local maximum of the
/// energy over `c` once `p`, `q` and both `gamma`s are re-stationarized.
/// `c` is scaled coordinate-wise by factors in `1 +- grid_radius` on a
/// tensor grid with `grid_points` values per coordinate.
pub fn modulo_m_check(
    kappa: f64,
    level: Level,
    cfg: &SolverConfig,
    grid_radius: f64,
    grid_points: usize,
) -> Result<ModuloMReport> {
    if !level.is_full() {
        return Err(Error::InvalidInput(
            "modulo-m check needs level 2f or 3f".into(),
        ));
    }
    if !(grid_radius >= 0.0) || grid_points < 1 {
        return Err(Error::InvalidInput(
            "need grid_radius >= 0 and grid_points >= 1".into(),
        ));
    }
    let cap = alpha_c(kappa, level, cfg)?;
    modulo_m_check_at(&cap, cfg, grid_radius, grid_points)
}

/// [`modulo_m_check`] around an already converged capacity result.
pub fn modulo_m_check_at(
    cap: &CapacityResult,
    cfg: &SolverConfig,
    grid_radius: f64,
    grid_points: usize,
) -> Result<ModuloMReport> {
    let mp = ModelPoint::new(cap.kappa, cap.alpha_c)?;
    let quad = cfg.quadrature()?;
    let hat = &cap.params;
    let psi_hat = cap.psi_residual;
    let factors: Vec<f64> = if grid_points == 1 {
        vec![0.0]
    } else {
        (0..grid_points)
            .map(|i| -grid_radius + 2.0 * grid_radius * i as f64 / (grid_points - 1) as f64)
            .collect()
    };
    let dims = hat.c.len();
    let mut combos: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..dims {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                factors.iter().map(move |&f| {
                    let mut n = c.clone();
                    n.push(f);
                    n
                })
            })
            .collect();
    }
    let mut max_excess = f64::NEG_INFINITY;
    let mut evaluated = 0;
    let mut skipped = Vec::new();
    for combo in combos {
        if combo.iter().all(|f| *f == 0.0) {
            continue;
        }
        let target: Vec<f64> = hat
            .c
            .iter()
            .zip(&combo)
            .map(|(c, f)| c * (1.0 + f))
            .collect();
        match fixed_c_path(&mp, hat, &target, cfg, &quad) {
            Ok(st) => {
                evaluated += 1;
                max_excess = max_excess.max(st.psi - psi_hat);
            }
            Err(_) => skipped.push(combo),
        }
    }
    if evaluated == 0 {
        max_excess = 0.0;
    }
    Ok(ModuloMReport {
        kappa: cap.kappa,
        level: cap.level,
        alpha_c: cap.alpha_c,
        psi_hat,
        max_excess,
        evaluated,
        skipped,
        pass: max_excess <= 1e-8,
    })
}

/// Moves `c` and shifts `gamma_p` so the last log argument of the x-side
/// term keeps its value.
fn with_c(lp: &LiftingParams, c: &[f64]) -> LiftingParams {
    let weight = |cs: &[f64]| {
        let mut prev = 1.0;
        cs.iter()
            .zip(&lp.q)
            .map(|(ck, &qk)| {
                let w = ck * (prev - qk);
                prev = qk;
                w
            })
            .sum::<f64>()
    };
    let mut out = lp.clone();
    out.gamma_sq_p += 0.5 * (weight(c) - weight(&lp.c));
    out.c = c.to_vec();
    out
}

/// Fixed-`c` solve at `target`, reached from `hat` in warm-started substeps.
fn fixed_c_path(
    mp: &ModelPoint,
    hat: &LiftingParams,
    target: &[f64],
    cfg: &SolverConfig,
    quad: &crate::free_energy::Quadrature,
) -> Result<Stationary> {
    const STEPS: usize = 4;
    let mut cur = hat.clone();
    let mut last = None;
    for s in 1..=STEPS {
        let t = s as f64 / STEPS as f64;
        let c: Vec<f64> = hat
            .c
            .iter()
            .zip(target)
            .map(|(h, c)| h + t * (c - h))
            .collect();
        let start = with_c(&cur, &c);
        start.validate()?;
        let st = solve_fixed_c(mp, &start, cfg, quad)?;
        cur = st.params.clone();
        last = Some(st);
    }
    last.ok_or_else(|| Error::Numerical("empty path".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub kappa: f64,
    pub levels: Vec<Level>,
    pub alphas: Vec<f64>,
    /// `(alpha_prev - alpha) / alpha_prev` for each level after the first.
    pub improvements: Vec<f64>,
    pub pass: bool,
}

/// Capacities of all four levels at `kappa` and whether they are ordered.
pub fn ordering_audit(kappa: f64, cfg: &SolverConfig) -> Result<OrderingReport> {
    let levels = Level::ALL.to_vec();
    let mut alphas = Vec::with_capacity(4);
    for &l in &levels {
        alphas.push(alpha_c(kappa, l, cfg)?.alpha_c);
    }
    let improvements: Vec<f64> = alphas.windows(2).map(|w| (w[0] - w[1]) / w[0]).collect();
    let pass = improvements.iter().all(|&d| d >= -1e-6);
    Ok(OrderingReport {
        kappa,
        levels,
        alphas,
        improvements,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_threshold_capacity_is_two() {
        let r = alpha_c(0.0, Level::One, &SolverConfig::default()).unwrap();
        assert_relative_eq!(r.alpha_c, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn fourth_moment_matches_quadrature() {
        let g = crate::specfun::gauss_hermite(80).unwrap();
        for &k in &[-2.0, -0.6, 0.0, 0.8] {
            // the kink is smoothed out at 80 nodes only to about 1e-6
            let q = g.expect(|x| f64::max(k + x, 0.0).powi(4));
            assert!(
                (q - e_max_fourth(k)).abs() < 1e-5,
                "{k}: {q} {}",
                e_max_fourth(k)
            );
        }
        assert_relative_eq!(e_max_fourth(0.0), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn branch_threshold() {
        let k = kappa_c().unwrap();
        assert!((k + 0.622).abs() < 1e-3, "{k}");
    }

    #[test]
    fn csv_header_order() {
        assert_eq!(
            CSV_HEADER.join(","),
            "kappa,level,alpha_c,p2,p3,q2,q3,c2,c3,gamma_sq,gamma_sq_p,psi_residual,branch"
        );
    }
}
