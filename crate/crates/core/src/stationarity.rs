//! Derivative systems of the lifted free energy, the closed-form parameter
//! relations, and a damped Newton solver for stationary points at fixed
//! `(kappa, alpha)`.
//!
//! Full-variant unknowns are reached through bijective maps
//! (`p_2 = sigma(a)`, `p_3 = p_2 sigma(b)`, likewise for `q`, and
//! `gamma = exp(g)`) so no Newton step can leave the chains. In the default
//! reduced mode `gamma_p` and `c` come from [`closed_form_params`], which are
//! exactly the zeros of the `q`- and `gamma_p`-equations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::{
    gamma_sq_r1, ln_f_zt_with_grad, psi, psi_r1, x_side, Level, LiftingParams, ModelPoint,
    Quadrature, DEFAULT_ORDER,
};
use crate::specfun::QuadratureGrid;

/// Which branch a level-2p solve landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Interior,
    DegenerateC2Zero,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Interior => "interior",
            Branch::DegenerateC2Zero => "degenerate_c2_zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Unknowns `p`, `q`, `gamma`; `gamma_p` and `c` from the closed forms.
    Reduced,
    /// All parameters free.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub residual_tol: f64,
    /// Relative width of the sign-change check around a capacity.
    pub capacity_tol: f64,
    pub max_iter: usize,
    /// Initial Newton step factor in `(0, 1]`.
    pub damping: f64,
    pub fd_step: f64,
    pub quad_order_inner: usize,
    pub quad_order_outer: usize,
    pub mode: SolveMode,
    pub warm_start: Option<LiftingParams>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            residual_tol: 1e-9,
            capacity_tol: 1e-3,
            max_iter: 200,
            damping: 1.0,
            fd_step: 1e-6,
            quad_order_inner: DEFAULT_ORDER,
            quad_order_outer: DEFAULT_ORDER,
            mode: SolveMode::Reduced,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) {
            return Err(Error::InvalidInput("residual_tol must be positive".into()));
        }
        if !(self.capacity_tol > 0.0 && self.capacity_tol < 0.5) {
            return Err(Error::InvalidInput(
                "capacity_tol must lie in (0, 0.5)".into(),
            ));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput("damping must lie in (0, 1]".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::InvalidInput("fd_step must be positive".into()));
        }
        let range = crate::free_energy::MIN_EVAL_ORDER..=crate::specfun::MAX_GH_ORDER;
        for order in [self.quad_order_inner, self.quad_order_outer] {
            if !range.contains(&order) {
                return Err(Error::InvalidInput(format!(
                    "quadrature order {order} outside {}..={}",
                    range.start(),
                    range.end()
                )));
            }
        }
        Ok(())
    }

    pub fn quadrature(&self) -> Result<Quadrature> {
        Quadrature::new(self.quad_order_inner, self.quad_order_outer)
    }

    pub fn with_warm_start(mut self, lp: LiftingParams) -> Self {
        self.warm_start = Some(lp);
        self
    }
}

/// Named partial derivatives of the free energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl ResidualVector {
    fn new(names: &[&str], values: Vec<f64>) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    fn pick(&self, names: &[&str]) -> Vec<f64> {
        names
            .iter()
            .map(|n| self.get(n).expect("known component"))
            .collect()
    }
}

pub const NAMES_2P: [&str; 3] = ["c2", "gamma_sq_p", "gamma_sq"];
pub const NAMES_2F: [&str; 5] = ["q2", "p2", "c2", "gamma_sq_p", "gamma_sq"];
pub const NAMES_3F: [&str; 8] = ["q3", "q2", "p3", "p2", "c3", "c2", "gamma_sq_p", "gamma_sq"];

// below this the sqrt(p)-weighted Stein identity replaces the explicit sum
const STEIN_CUTOFF: f64 = 1e-10;

fn second_c_derivative(c: f64, b: f64, s: f64) -> f64 {
    let h = 1e-5 * c.abs().max(1.0);
    (ln_f_zt_with_grad(c + h, b, s).d_c - ln_f_zt_with_grad(c - h, b, s).d_c) / (2.0 * h)
}

/// `gamma_p` that zeros its own equation at the partial level:
/// `2 gamma_p (2 gamma_p - c2) = 1`.
pub fn gamma_sq_p_partial(c2: f64) -> f64 {
    0.25 * (c2 + (c2 * c2 + 4.0).sqrt())
}

/// Gradient of the partial-level energy in `(c2, gamma_p, gamma)`.
pub fn grad_r2_partial(
    mp: &ModelPoint,
    c2: f64,
    gamma_sq: f64,
    gamma_sq_p: f64,
) -> Result<ResidualVector> {
    if !(c2 > 0.0 && gamma_sq > 0.0) {
        return Err(Error::OutOfDomain(format!(
            "c2 = {c2}, gamma_sq = {gamma_sq}"
        )));
    }
    let x = x_side(&[0.0], &[c2], gamma_sq_p)?;
    let b = c2 / (4.0 * gamma_sq);
    let l = ln_f_zt_with_grad(mp.kappa, b, 1.0);
    let a = mp.alpha;
    let d_c2 = 0.5 + x.d_c[0] + a / (c2 * c2) * l.value - a / c2 * l.d_b / (4.0 * gamma_sq);
    let d_gp = -1.0 + x.d_gamma_p;
    let d_g = 1.0 + a * l.d_b / (4.0 * gamma_sq * gamma_sq);
    Ok(ResidualVector::new(&NAMES_2P, vec![d_c2, d_gp, d_g]))
}

struct SphereR2 {
    value: f64,
    d_p2: f64,
    d_b: f64,
}

fn sphere_r2(kappa: f64, p2: f64, b: f64, grid: &QuadratureGrid) -> SphereR2 {
    let s = 1.0 - p2;
    let sp = p2.sqrt();
    let (mut value, mut d_b, mut d_s, mut d_mean) = (0.0, 0.0, 0.0, 0.0);
    for (u, w) in grid.iter() {
        let g = ln_f_zt_with_grad(sp * u + kappa, b, s);
        value += w * g.value;
        d_b += w * g.d_b;
        d_s += w * g.d_s;
        if p2 >= STEIN_CUTOFF {
            d_mean += w * g.d_c * u;
        }
    }
    let d_var = if p2 >= STEIN_CUTOFF {
        d_mean / (2.0 * sp)
    } else {
        0.5 * second_c_derivative(kappa, b, s)
    };
    SphereR2 {
        value,
        d_p2: d_var - d_s,
        d_b,
    }
}

/// The five partial derivatives at the full second level, in the order
/// `q2, p2, c2, gamma_p, gamma`.
pub fn grad_r2_full(
    mp: &ModelPoint,
    lp: &LiftingParams,
    grid: &QuadratureGrid,
) -> Result<ResidualVector> {
    expect_level(lp, Level::TwoFull)?;
    lp.validate()?;
    let (p2, q2, c2, g) = (lp.p2(), lp.q2(), lp.c2(), lp.gamma_sq);
    let x = x_side(&lp.q, &lp.c, lp.gamma_sq_p)?;
    let b = c2 / (4.0 * g);
    let sph = sphere_r2(mp.kappa, p2, b, grid);
    let a = mp.alpha;
    let d_q2 = -0.5 * p2 * c2 + x.d_q[0];
    let d_p2 = -0.5 * q2 * c2 - a / c2 * sph.d_p2;
    let d_c2 =
        0.5 * (1.0 - p2 * q2) + x.d_c[0] + a / (c2 * c2) * sph.value - a / c2 * sph.d_b / (4.0 * g);
    let d_gp = -1.0 + x.d_gamma_p;
    let d_g = 1.0 + a * sph.d_b / (4.0 * g * g);
    Ok(ResidualVector::new(
        &NAMES_2F,
        vec![d_q2, d_p2, d_c2, d_gp, d_g],
    ))
}

/// Log of the inner power mean for one outer node together with its
/// derivatives in the shift `base`, the inner variance `delta`, the sphere
/// factor `s`, `B` and the exponent `theta`.
#[derive(Debug, Default, Clone, Copy)]
struct InnerMean {
    value: f64,
    d_base: f64,
    d_delta: f64,
    d_s: f64,
    d_b: f64,
    d_theta: f64,
}

fn inner_mean(
    base: f64,
    delta: f64,
    s: f64,
    b: f64,
    theta: f64,
    grid: &QuadratureGrid,
    buf: &mut Vec<(f64, f64, f64, f64, f64)>,
) -> InnerMean {
    let sd = delta.sqrt();
    buf.clear();
    let mut top = f64::NEG_INFINITY;
    for &u in grid.nodes() {
        let g = ln_f_zt_with_grad(sd * u + base, b, s);
        top = top.max(theta * g.value);
        buf.push((g.value, g.d_c, g.d_b, g.d_s, u));
    }
    let mut total = 0.0;
    for (&w, e) in grid.weights().iter().zip(buf.iter()) {
        total += w * (theta * e.0 - top).exp();
    }
    let value = top + total.ln();
    let mut out = InnerMean {
        value,
        ..Default::default()
    };
    let mut d_mean = 0.0;
    let mut lc_avg = 0.0;
    for (&w, e) in grid.weights().iter().zip(buf.iter()) {
        let pi = w * (theta * e.0 - top).exp() / total;
        out.d_base += pi * e.1;
        out.d_b += pi * e.2;
        out.d_s += pi * e.3;
        out.d_theta += pi * e.0;
        d_mean += pi * e.1 * e.4;
        lc_avg += pi * e.1;
    }
    out.d_delta = if delta >= STEIN_CUTOFF {
        theta * d_mean / (2.0 * sd)
    } else {
        0.5 * theta * (second_c_derivative(base, b, s) + theta * lc_avg * lc_avg)
    };
    out.d_base *= theta;
    out.d_b *= theta;
    out.d_s *= theta;
    out
}

struct SphereR3 {
    value: f64,
    d_p2: f64,
    d_p3: f64,
    d_b: f64,
    d_theta: f64,
}

fn sphere_r3(kappa: f64, p2: f64, p3: f64, b: f64, theta: f64, quad: &Quadrature) -> SphereR3 {
    let delta = (p2 - p3).max(0.0);
    let s = 1.0 - p2;
    let sp3 = p3.sqrt();
    let mut buf = Vec::with_capacity(quad.inner.order());
    let mut acc = SphereR3 {
        value: 0.0,
        d_p2: 0.0,
        d_p3: 0.0,
        d_b: 0.0,
        d_theta: 0.0,
    };
    let mut d_outer = 0.0;
    for (u, w) in quad.outer.iter() {
        let m = inner_mean(sp3 * u + kappa, delta, s, b, theta, &quad.inner, &mut buf);
        acc.value += w * m.value;
        acc.d_p2 += w * (m.d_delta - m.d_s);
        acc.d_p3 -= w * m.d_delta;
        acc.d_b += w * m.d_b;
        acc.d_theta += w * m.d_theta;
        d_outer += w * m.d_base * u;
    }
    acc.d_p3 += if p3 >= STEIN_CUTOFF {
        d_outer / (2.0 * sp3)
    } else {
        let h = 1e-5 * kappa.abs().max(1.0);
        let hi = inner_mean(kappa + h, delta, s, b, theta, &quad.inner, &mut buf).d_base;
        let lo = inner_mean(kappa - h, delta, s, b, theta, &quad.inner, &mut buf).d_base;
        0.25 * (hi - lo) / h
    };
    acc
}

/// The eight partial derivatives at the full third level, in the order
/// `q3, q2, p3, p2, c3, c2, gamma_p, gamma`.
pub fn grad_r3_full(
    mp: &ModelPoint,
    lp: &LiftingParams,
    quad: &Quadrature,
) -> Result<ResidualVector> {
    expect_level(lp, Level::ThreeFull)?;
    lp.validate()?;
    let (p2, p3, q2, q3) = (lp.p2(), lp.p3(), lp.q2(), lp.q3());
    let (c2, c3, g) = (lp.c2(), lp.c3(), lp.gamma_sq);
    let x = x_side(&lp.q, &lp.c, lp.gamma_sq_p)?;
    let b = c2 / (4.0 * g);
    let theta = c3 / c2;
    let sph = sphere_r3(mp.kappa, p2, p3, b, theta, quad);
    let a = mp.alpha;
    let s_c2 = sph.d_b / (4.0 * g) - sph.d_theta * c3 / (c2 * c2);
    let s_c3 = sph.d_theta / c2;
    let s_g = -sph.d_b * c2 / (4.0 * g * g);
    let values = vec![
        -0.5 * p3 * c3 + x.d_q[1],
        -0.5 * p2 * c2 + 0.5 * p2 * c3 + x.d_q[0],
        -0.5 * q3 * c3 - a / c3 * sph.d_p3,
        -0.5 * q2 * c2 + 0.5 * q2 * c3 - a / c3 * sph.d_p2,
        0.5 * (p2 * q2 - p3 * q3) + x.d_c[1] + a / (c3 * c3) * sph.value - a / c3 * s_c3,
        0.5 * (1.0 - p2 * q2) + x.d_c[0] - a / c3 * s_c2,
        -1.0 + x.d_gamma_p,
        1.0 - a / c3 * s_g,
    ];
    Ok(ResidualVector::new(&NAMES_3F, values))
}

/// Analytic gradient for any level; level 1 has no free parameters.
pub fn gradient(mp: &ModelPoint, lp: &LiftingParams, quad: &Quadrature) -> Result<ResidualVector> {
    match lp.level {
        Level::One => Ok(ResidualVector::new(&[], vec![])),
        Level::TwoPartial => grad_r2_partial(mp, lp.c2(), lp.gamma_sq, lp.gamma_sq_p),
        Level::TwoFull => grad_r2_full(mp, lp, &quad.outer),
        Level::ThreeFull => grad_r3_full(mp, lp, quad),
    }
}

fn expect_level(lp: &LiftingParams, level: Level) -> Result<()> {
    if lp.level != level {
        return Err(Error::InvalidInput(format!(
            "expected level {level} parameters, got {}",
            lp.level
        )));
    }
    Ok(())
}

/// `gamma_p` and `(c_2, ..., c_r)` as functions of the chains
/// `p = (p_2, ..., p_r)`, `q = (q_2, ..., q_r)`, with `r = p.len() + 1`.
///
/// For `c_i` the square-root factor is `(q_r / p_r)^(+-1/2)` with sign
/// `(-1)^(r - i)`, so that `r = 2` gives `c_2 = sqrt(p2/q2)/(1-p2) - ...`.
pub fn closed_form_params(p: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput("p and q must have equal length".into()));
    }
    let r = p.len() + 1;
    if r == 1 {
        return Ok((0.5, vec![]));
    }
    // 1-based with p_1 = q_1 = 1
    let mut pp = vec![f64::NAN, 1.0];
    pp.extend_from_slice(p);
    let mut qq = vec![f64::NAN, 1.0];
    qq.extend_from_slice(q);
    for chain in [&pp, &qq] {
        for k in 1..r {
            if !(chain[k] > chain[k + 1]) {
                return Err(Error::InvalidInput(format!(
                    "chain {:?} must be strictly decreasing from 1",
                    &chain[1..]
                )));
            }
        }
        if !(chain[r] > 0.0) {
            return Err(Error::InvalidInput(
                "last chain entry must be positive".into(),
            ));
        }
    }
    let dp = |k: usize| pp[k] - pp[k + 1];
    let dq = |k: usize| qq[k] - qq[k + 1];
    // prod_{k=i:2:r-1} dp_k/dq_k * prod_{k=i:2:r-2} dq_{k+1}/dp_{k+1}
    let ratio = |i: usize| {
        let mut out = 1.0;
        let mut k = i;
        while k < r {
            out *= dp(k) / dq(k);
            if k + 1 < r {
                out *= dq(k + 1) / dp(k + 1);
            }
            k += 2;
        }
        out
    };
    let root = (qq[r] / pp[r]).sqrt();
    let pow_root = |e: i32| if e > 0 { root } else { 1.0 / root };
    let gamma_sq_p = 0.5 * dq(1) / dp(1) * ratio(2) * pow_root(if r % 2 == 1 { 1 } else { -1 });
    let mut c = Vec::with_capacity(r - 1);
    for i in 2..=r {
        let e = if (r - i).is_multiple_of(2) { -1 } else { 1 };
        let rt = ratio(i);
        c.push(pow_root(e) * rt / dp(i - 1) - pow_root(-e) / (rt * dq(i - 1)));
    }
    Ok((gamma_sq_p, c))
}

/// Outcome of a stationary solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stationary {
    pub params: LiftingParams,
    /// All partial derivatives of the full system at `params`.
    pub residual: ResidualVector,
    pub branch: Branch,
    pub iterations: usize,
    pub psi: f64,
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct NewtonOutcome {
    x: Vec<f64>,
    residual_inf: f64,
    iterations: usize,
}

/// Damped Newton with forward-difference Jacobian, backtracking on the
/// residual norm and on rejected (out-of-domain) trial points, and a
/// Levenberg–Marquardt step when the Newton direction stalls.
fn newton<F>(f: F, x0: Vec<f64>, cfg: &SolverConfig) -> Result<NewtonOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x)?;
    let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if fx.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "non-finite residual at the starting point".into(),
        ));
    }
    let mut best = inf(&fx);
    let mut mu = 1e-6;
    for it in 0..cfg.max_iter {
        if inf(&fx) < cfg.residual_tol {
            return Ok(NewtonOutcome {
                residual_inf: inf(&fx),
                x,
                iterations: it,
            });
        }
        let mut jac = DMatrix::<f64>::zeros(fx.len(), n);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let fp = match f(&xp) {
                Ok(v) => v,
                Err(_) => {
                    xp[j] = x[j] - h;
                    let fm = f(&xp)?;
                    for i in 0..fx.len() {
                        jac[(i, j)] = (fx[i] - fm[i]) / h;
                    }
                    continue;
                }
            };
            for i in 0..fx.len() {
                jac[(i, j)] = (fp[i] - fx[i]) / h;
            }
        }
        let rhs = -DVector::from_column_slice(&fx);
        let newton_dir = jac.clone().lu().solve(&rhs);
        let f_norm = norm2(&fx);

        let mut accepted = false;
        let try_direction = |dir: &DVector<f64>, x: &mut Vec<f64>, fx: &mut Vec<f64>| {
            let mut scale = 1.0;
            let big = dir.amax();
            if big > 3.0 {
                scale = 3.0 / big;
            }
            let mut t = cfg.damping * scale;
            for _ in 0..40 {
                let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
                if let Ok(ft) = f(&trial) {
                    if ft.iter().all(|v| v.is_finite()) && norm2(&ft) < (1.0 - 1e-4 * t) * f_norm {
                        *x = trial;
                        *fx = ft;
                        return true;
                    }
                }
                t *= 0.5;
            }
            false
        };
        if let Some(dir) = newton_dir.as_ref() {
            if dir.iter().all(|v| v.is_finite()) {
                accepted = try_direction(dir, &mut x, &mut fx);
            }
        }
        if !accepted {
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let g = &jt * &rhs;
            for _ in 0..12 {
                let mut m = jtj.clone();
                for d in 0..n {
                    m[(d, d)] += mu * (1.0 + jtj[(d, d)]);
                }
                if let Some(dir) = m.lu().solve(&g) {
                    if try_direction(&dir, &mut x, &mut fx) {
                        accepted = true;
                        mu = (mu * 0.3).max(1e-12);
                        break;
                    }
                }
                mu *= 10.0;
            }
        }
        best = best.min(inf(&fx));
        if !accepted {
            return Err(Error::NonConvergence {
                iterations: it,
                best_residual: best,
            });
        }
    }
    if inf(&fx) < cfg.residual_tol {
        return Ok(NewtonOutcome {
            residual_inf: inf(&fx),
            x,
            iterations: cfg.max_iter,
        });
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iter,
        best_residual: best,
    })
}

fn chain_to_params(level: Level, p: &[f64], q: &[f64], gamma_sq: f64) -> Result<LiftingParams> {
    let (gp, c) = closed_form_params(p, q)?;
    if c.iter().any(|&v| !(v > 0.0 && v.is_finite())) || !(gp > 0.0 && gp.is_finite()) {
        return Err(Error::OutOfDomain(format!(
            "closed forms give c = {c:?}, gamma_p = {gp}"
        )));
    }
    let lp = LiftingParams {
        level,
        p: p.to_vec(),
        q: q.to_vec(),
        c,
        gamma_sq,
        gamma_sq_p: gp,
    };
    lp.validate()?;
    Ok(lp)
}

/// Reduced coordinates `(p chain, q chain, ln gamma)`.
fn encode_reduced(lp: &LiftingParams) -> Vec<f64> {
    let mut out = encode_chain(&lp.p);
    out.extend(encode_chain(&lp.q));
    out.push(lp.gamma_sq.ln());
    out
}

fn encode_chain(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut prev = 1.0;
    for &x in v {
        out.push(logit((x / prev).clamp(1e-12, 1.0 - 1e-12)));
        prev = x;
    }
    out
}

fn decode_chain(z: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    let mut prev = 1.0;
    for &a in z {
        prev *= sigmoid(a);
        out.push(prev);
    }
    out
}

fn decode_reduced(level: Level, z: &[f64]) -> Result<LiftingParams> {
    let k = level.depth() - 1;
    let p = decode_chain(&z[..k]);
    let q = decode_chain(&z[k..2 * k]);
    chain_to_params(level, &p, &q, z[2 * k].exp())
}

fn encode_full(lp: &LiftingParams, with_c: bool) -> Vec<f64> {
    let mut out = encode_chain(&lp.p);
    out.extend(encode_chain(&lp.q));
    if with_c {
        out.extend(lp.c.iter().map(|c| c.ln()));
    }
    out.push(lp.gamma_sq_p.ln());
    out.push(lp.gamma_sq.ln());
    out
}

fn decode_full(level: Level, z: &[f64], fixed_c: Option<&[f64]>) -> Result<LiftingParams> {
    let k = level.depth() - 1;
    let p = decode_chain(&z[..k]);
    let q = decode_chain(&z[k..2 * k]);
    let (c, rest) = match fixed_c {
        Some(c) => (c.to_vec(), &z[2 * k..]),
        None => (
            z[2 * k..3 * k].iter().map(|v| v.exp()).collect(),
            &z[3 * k..],
        ),
    };
    let lp = LiftingParams {
        level,
        p,
        q,
        c,
        gamma_sq_p: rest[0].exp(),
        gamma_sq: rest[1].exp(),
    };
    lp.validate()?;
    Ok(lp)
}

fn reduced_names(level: Level) -> &'static [&'static str] {
    match level {
        Level::TwoFull => &["p2", "c2", "gamma_sq"],
        Level::ThreeFull => &["p3", "p2", "c3", "c2", "gamma_sq"],
        _ => &[],
    }
}

fn full_names(level: Level) -> &'static [&'static str] {
    match level {
        Level::TwoFull => &["p2", "q2", "c2", "gamma_sq_p", "gamma_sq"],
        Level::ThreeFull => &["p2", "p3", "q2", "q3", "c2", "c3", "gamma_sq_p", "gamma_sq"],
        _ => &[],
    }
}

fn fixed_c_names(level: Level) -> &'static [&'static str] {
    match level {
        Level::TwoFull => &["p2", "q2", "gamma_sq_p", "gamma_sq"],
        Level::ThreeFull => &["p2", "p3", "q2", "q3", "gamma_sq_p", "gamma_sq"],
        _ => &[],
    }
}

fn finish(
    mp: &ModelPoint,
    lp: LiftingParams,
    quad: &Quadrature,
    iterations: usize,
    branch: Branch,
) -> Result<Stationary> {
    let residual = gradient(mp, &lp, quad)?;
    let psi = psi(mp, &lp, quad)?;
    Ok(Stationary {
        params: lp,
        residual,
        branch,
        iterations,
        psi,
    })
}

/// Newton solve of one full level from a given start.
fn solve_full_level_from(
    mp: &ModelPoint,
    start: &LiftingParams,
    cfg: &SolverConfig,
    quad: &Quadrature,
) -> Result<Stationary> {
    let level = start.level;
    let out = match cfg.mode {
        SolveMode::Reduced => {
            let names = reduced_names(level);
            let f = |z: &[f64]| -> Result<Vec<f64>> {
                let lp = decode_reduced(level, z)?;
                Ok(gradient(mp, &lp, quad)?.pick(names))
            };
            let res = newton(f, encode_reduced(start), cfg)?;
            (
                decode_reduced(level, &res.x)?,
                res.iterations,
                res.residual_inf,
            )
        }
        SolveMode::Full => {
            let names = full_names(level);
            let f = |z: &[f64]| -> Result<Vec<f64>> {
                let lp = decode_full(level, z, None)?;
                Ok(gradient(mp, &lp, quad)?.pick(names))
            };
            let res = newton(f, encode_full(start, true), cfg)?;
            (
                decode_full(level, &res.x, None)?,
                res.iterations,
                res.residual_inf,
            )
        }
    };
    let (lp, iterations, _) = out;
    finish(mp, lp, quad, iterations, Branch::Interior)
}

/// Re-stationarize `p`, `q`, `gamma_p`, `gamma` with `c` held at the values
/// in `start`.
pub fn solve_fixed_c(
    mp: &ModelPoint,
    start: &LiftingParams,
    cfg: &SolverConfig,
    quad: &Quadrature,
) -> Result<Stationary> {
    let level = start.level;
    if !level.is_full() {
        return Err(Error::InvalidInput(
            "fixed-c solves need a full level".into(),
        ));
    }
    start.validate()?;
    let names = fixed_c_names(level);
    let c = start.c.clone();
    let f = |z: &[f64]| -> Result<Vec<f64>> {
        let lp = decode_full(level, z, Some(&c))?;
        Ok(gradient(mp, &lp, quad)?.pick(names))
    };
    let res = newton(f, encode_full(start, false), cfg)?;
    let lp = decode_full(level, &res.x, Some(&c))?;
    finish(mp, lp, quad, res.iterations, Branch::Interior)
}

fn solve_partial_interior(
    mp: &ModelPoint,
    start: (f64, f64),
    cfg: &SolverConfig,
    quad: &Quadrature,
) -> Result<Stationary> {
    let f = |z: &[f64]| -> Result<Vec<f64>> {
        let (c2, g) = (z[0].exp(), z[1].exp());
        let r = grad_r2_partial(mp, c2, g, gamma_sq_p_partial(c2))?;
        Ok(vec![r.values[0], r.values[2]])
    };
    let res = newton(f, vec![start.0.ln(), start.1.ln()], cfg)?;
    let (c2, g) = (res.x[0].exp(), res.x[1].exp());
    let lp = LiftingParams::two_partial(c2, g, gamma_sq_p_partial(c2));
    finish(mp, lp, quad, res.iterations, Branch::Interior)
}

/// The `c2 -> 0` limit of the partial level, i.e. the level-1 point.
fn degenerate_partial(mp: &ModelPoint) -> Stationary {
    Stationary {
        params: LiftingParams {
            level: Level::TwoPartial,
            p: vec![0.0],
            q: vec![0.0],
            c: vec![0.0],
            gamma_sq: gamma_sq_r1(mp),
            gamma_sq_p: 0.5,
        },
        residual: ResidualVector::new(&[], vec![]),
        branch: Branch::DegenerateC2Zero,
        iterations: 0,
        psi: psi_r1(mp),
    }
}

fn partial_starts(mp: &ModelPoint, warm: Option<&LiftingParams>) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if let Some(w) = warm.filter(|w| w.level == Level::TwoPartial && w.c2() > 0.0) {
        out.push((w.c2(), w.gamma_sq));
    }
    let g1 = gamma_sq_r1(mp);
    for &c2 in &[2.5, 1.0, 5.0, 0.3, 10.0] {
        for &f in &[0.35, 0.2, 0.6] {
            out.push((c2, f * g1));
        }
    }
    out
}

/// Generic starting chains for the full second level, ordered by a crude
/// guess of where the solution sits as a function of `kappa`.
fn two_full_starts(mp: &ModelPoint, warm: Option<&LiftingParams>) -> Vec<LiftingParams> {
    let mut out = Vec::new();
    if let Some(w) = warm {
        match w.level {
            Level::TwoFull => out.push(w.clone()),
            Level::ThreeFull => out.push(LiftingParams::two_full(
                w.p3(),
                w.q3(),
                w.c3(),
                w.gamma_sq * 2.0,
                w.gamma_sq_p,
            )),
            _ => {}
        }
    }
    let g1 = gamma_sq_r1(mp);
    let mut grid: Vec<(f64, f64)> = vec![
        (0.05, 0.0015),
        (0.15, 0.007),
        (0.27, 0.022),
        (0.4, 0.06),
        (0.47, 0.1),
        (0.55, 0.15),
        (0.66, 0.28),
        (0.78, 0.46),
        (0.86, 0.62),
        (0.93, 0.8),
    ];
    // p2 grows roughly linearly in kappa over the working range
    let target = (0.47 + 0.3 * (mp.kappa + 1.5)).clamp(0.03, 0.95);
    grid.sort_by(|a, b| (a.0 - target).abs().total_cmp(&(b.0 - target).abs()));
    for (p2, q2) in grid {
        for &f in &[0.28, 0.18, 0.45] {
            if let Ok(lp) = chain_to_params(Level::TwoFull, &[p2], &[q2], f * g1) {
                out.push(lp);
            }
        }
    }
    out
}

/// Third-level starts built from a second-level solution `(P, Q)`: the
/// lower entries of the chains stay near `(P, Q)`, the upper ones move
/// towards 1.
fn three_full_starts(level2: &LiftingParams, warm: Option<&LiftingParams>) -> Vec<LiftingParams> {
    let mut out = Vec::new();
    if let Some(w) = warm.filter(|w| w.level == Level::ThreeFull) {
        out.push(w.clone());
    }
    let (pp, qq, g) = (level2.p2(), level2.q2(), level2.gamma_sq);
    let shapes: [(f64, f64, f64, f64, f64); 5] = [
        (0.97, 0.0, 0.88, 0.8, 0.5),
        (0.98, 0.0, 0.85, 0.75, 0.45),
        (0.95, 0.0, 0.9, 0.85, 0.6),
        (0.985, 0.1, 0.8, 0.7, 0.4),
        (0.9, -0.1, 0.93, 0.9, 0.7),
    ];
    for &(up, uq, lp_f, lq_f, gf) in &shapes {
        let p2 = up.max(pp + 0.5 * (1.0 - pp));
        let q2 = (0.5 * (1.0 + qq) + uq).clamp(qq + 0.05, 0.97).max(0.54);
        let p3 = (lp_f * pp).min(0.95 * p2);
        let q3 = (lq_f * qq).min(0.95 * q2);
        if let Ok(lp) = chain_to_params(Level::ThreeFull, &[p2, p3], &[q2, q3], gf * g) {
            out.push(lp);
        }
    }
    out
}

fn best_of(candidates: Vec<Stationary>) -> Option<Stationary> {
    // several roots: prefer the one with the largest energy
    candidates
        .into_iter()
        .max_by(|a, b| a.psi.total_cmp(&b.psi))
}

/// Solves the stationarity system of `level` at `mp`.
///
/// Starts are tried in order (warm start first) and the first converged
/// interior point is returned. Level 3 is seeded from a level-2 solve unless
/// a level-3 warm start is supplied and converges. At level 2p the interior
/// branch is compared with the `c2 -> 0` limit and the larger energy wins.
pub fn solve_stationary(mp: &ModelPoint, level: Level, cfg: &SolverConfig) -> Result<Stationary> {
    cfg.validate()?;
    let quad = cfg.quadrature()?;
    let warm = cfg.warm_start.as_ref();
    match level {
        Level::One => {
            let lp = LiftingParams::level_one(gamma_sq_r1(mp));
            Ok(Stationary {
                params: lp,
                residual: ResidualVector::new(&[], vec![]),
                branch: Branch::Interior,
                iterations: 0,
                psi: psi_r1(mp),
            })
        }
        Level::TwoPartial => {
            let degenerate = degenerate_partial(mp);
            let mut found = Vec::new();
            for start in partial_starts(mp, warm) {
                if let Ok(st) = solve_partial_interior(mp, start, cfg, &quad) {
                    if st.params.c2() > 1e-6 {
                        found.push(st);
                        break;
                    }
                }
            }
            match best_of(found) {
                Some(st) if st.psi > degenerate.psi + 1e-12 => Ok(st),
                _ => Ok(degenerate),
            }
        }
        Level::TwoFull => {
            let mut last_err = None;
            for start in two_full_starts(mp, warm) {
                match solve_full_level_from(mp, &start, cfg, &quad) {
                    Ok(st) => return Ok(st),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(last_err.unwrap_or(Error::NonConvergence {
                iterations: 0,
                best_residual: f64::INFINITY,
            }))
        }
        Level::ThreeFull => {
            if let Some(w) = warm.filter(|w| w.level == Level::ThreeFull) {
                if let Ok(st) = solve_full_level_from(mp, w, cfg, &quad) {
                    return Ok(st);
                }
            }
            let cfg2 = SolverConfig {
                warm_start: warm.cloned(),
                ..cfg.clone()
            };
            let level2 = solve_stationary(mp, Level::TwoFull, &cfg2)?;
            let mut last_err = None;
            for start in three_full_starts(&level2.params, None) {
                match solve_full_level_from(mp, &start, cfg, &quad) {
                    Ok(st) => return Ok(st),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(last_err.unwrap_or(Error::NonConvergence {
                iterations: 0,
                best_residual: f64::INFINITY,
            }))
        }
    }
}

/// Per-component comparison of the analytic gradient with central
/// differences of the energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub level: Level,
    pub names: Vec<String>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|analytic - numeric| / max(1, |numeric|)`.
    pub rel_error: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradientCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_error.iter().fold(0.0f64, |m, v| m.max(*v))
    }
}

fn set_param(lp: &mut LiftingParams, name: &str, v: f64) {
    match name {
        "p2" => lp.p[0] = v,
        "p3" => lp.p[1] = v,
        "q2" => lp.q[0] = v,
        "q3" => lp.q[1] = v,
        "c2" => lp.c[0] = v,
        "c3" => lp.c[1] = v,
        "gamma_sq" => lp.gamma_sq = v,
        "gamma_sq_p" => lp.gamma_sq_p = v,
        _ => unreachable!("unknown parameter {name}"),
    }
}

fn get_param(lp: &LiftingParams, name: &str) -> f64 {
    match name {
        "p2" => lp.p2(),
        "p3" => lp.p3(),
        "q2" => lp.q2(),
        "q3" => lp.q3(),
        "c2" => lp.c2(),
        "c3" => lp.c3(),
        "gamma_sq" => lp.gamma_sq,
        "gamma_sq_p" => lp.gamma_sq_p,
        _ => unreachable!("unknown parameter {name}"),
    }
}

/// Numerical derivative of the energy in one parameter: central where both
/// neighbours are in the domain, second-order one-sided otherwise.
pub fn numeric_partial(
    mp: &ModelPoint,
    lp: &LiftingParams,
    quad: &Quadrature,
    name: &str,
    fd_step: f64,
) -> Result<f64> {
    let x = get_param(lp, name);
    let h = fd_step * x.abs().max(1.0);
    let eval = |v: f64| -> Result<f64> {
        let mut t = lp.clone();
        set_param(&mut t, name, v);
        psi(mp, &t, quad)
    };
    match (eval(x + h), eval(x - h)) {
        (Ok(a), Ok(b)) => Ok((a - b) / (2.0 * h)),
        (Ok(a), Err(_)) => Ok((-3.0 * eval(x)? + 4.0 * a - eval(x + 2.0 * h)?) / (2.0 * h)),
        (Err(_), Ok(b)) => Ok((3.0 * eval(x)? - 4.0 * b + eval(x - 2.0 * h)?) / (2.0 * h)),
        (Err(e), Err(_)) => Err(e),
    }
}

pub fn check_gradient(
    mp: &ModelPoint,
    lp: &LiftingParams,
    quad: &Quadrature,
    fd_step: f64,
) -> Result<GradientCheck> {
    let analytic = gradient(mp, lp, quad)?;
    let tolerance = if lp.level == Level::ThreeFull {
        1e-4
    } else {
        1e-5
    };
    let mut numeric = Vec::with_capacity(analytic.names.len());
    let mut rel_error = Vec::with_capacity(analytic.names.len());
    for (name, a) in analytic.names.iter().zip(&analytic.values) {
        let n = numeric_partial(mp, lp, quad, name, fd_step)?;
        rel_error.push((a - n).abs() / n.abs().max(1.0));
        numeric.push(n);
    }
    let pass = rel_error.iter().all(|e| *e < tolerance);
    Ok(GradientCheck {
        level: lp.level,
        names: analytic.names,
        analytic: analytic.values,
        numeric,
        rel_error,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad() -> Quadrature {
        Quadrature::new(40, 40).unwrap()
    }

    #[test]
    fn closed_form_level_two_matches_table_row() {
        let (gp, c) = closed_form_params(&[0.4747], &[0.0981]).unwrap();
        assert!((gp - 1.8884).abs() < 2e-3);
        assert!((c[0] - 3.6835).abs() < 2e-3);
    }

    #[test]
    fn closed_form_symmetric_chain_is_degenerate() {
        let (gp, c) = closed_form_params(&[0.3], &[0.3]).unwrap();
        assert_relative_eq!(gp, 0.5, epsilon = 1e-15);
        assert!(c[0].abs() < 1e-15);
    }

    #[test]
    fn closed_form_rejects_unordered_chains() {
        assert!(closed_form_params(&[0.2, 0.4], &[0.5, 0.1]).is_err());
        assert!(closed_form_params(&[0.2], &[0.0]).is_err());
    }

    #[test]
    fn closed_forms_zero_q_and_gamma_p_equations_at_depth_four() {
        let p = [0.95, 0.7, 0.3];
        let q = [0.8, 0.4, 0.05];
        let (gp, c) = closed_form_params(&p, &q).unwrap();
        let x = x_side(&q, &c, gp).unwrap();
        // d/dq_k of 1/2 sum (p_{k-1} q_{k-1} - p_k q_k) c_k is p_k (c_{k+1} - c_k) / 2
        for k in 0..3 {
            let next = c.get(k + 1).copied().unwrap_or(0.0);
            let d = 0.5 * p[k] * (next - c[k]) + x.d_q[k];
            assert!(d.abs() < 1e-12, "q{}: {d}", k + 2);
        }
        assert!((x.d_gamma_p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_gamma_p_zeroes_its_equation() {
        let mp = ModelPoint::new(-1.5, 37.36).unwrap();
        for &c2 in &[0.1, 2.5, 9.0] {
            let r = grad_r2_partial(&mp, c2, 0.17, gamma_sq_p_partial(c2)).unwrap();
            assert!(r.values[1].abs() < 1e-13);
        }
    }

    #[test]
    fn level_two_gradient_matches_differences() {
        let mp = ModelPoint::new(-1.2, 20.0).unwrap();
        let lp = LiftingParams::two_full(0.5, 0.15, 3.0, 0.14, 1.9);
        let chk = check_gradient(&mp, &lp, &quad(), 1e-6).unwrap();
        assert!(chk.pass, "{chk:?}");
    }

    #[test]
    fn level_two_gradient_at_zero_overlap() {
        let mp = ModelPoint::new(-1.5, 36.0).unwrap();
        let lp = LiftingParams::two_full(0.0, 0.1, 2.5, 0.15, 1.9);
        let chk = check_gradient(&mp, &lp, &quad(), 1e-6).unwrap();
        assert!(chk.pass, "{chk:?}");
    }

    #[test]
    fn level_three_gradient_matches_differences() {
        let mp = ModelPoint::new(-1.0, 12.0).unwrap();
        let lp = LiftingParams::three_full(0.96, 0.6, 0.65, 0.25, 12.0, 3.0, 0.085, 3.0);
        let chk = check_gradient(&mp, &lp, &quad(), 1e-6).unwrap();
        assert!(chk.pass, "{chk:?}");
    }

    #[test]
    fn level_three_gradient_at_collapse_and_zero_overlap() {
        let mp = ModelPoint::new(-1.0, 12.0).unwrap();
        let q = quad();
        let lp = LiftingParams::three_full(0.6, 0.6, 0.3, 0.2, 4.0, 2.0, 0.14, 1.9);
        let chk = check_gradient(&mp, &lp, &q, 1e-6).unwrap();
        assert!(chk.pass, "{chk:?}");
        let lp = LiftingParams::three_full(0.6, 0.0, 0.3, 0.2, 4.0, 2.0, 0.14, 1.9);
        let chk = check_gradient(&mp, &lp, &q, 1e-6).unwrap();
        assert!(chk.pass, "{chk:?}");
    }

    #[test]
    fn newton_solves_a_small_system() {
        let cfg = SolverConfig::default();
        let f = |z: &[f64]| Ok(vec![z[0] * z[0] - 2.0, z[0] * z[1] - 1.0]);
        let out = newton(f, vec![1.0, 1.0], &cfg).unwrap();
        assert_relative_eq!(out.x[0], 2f64.sqrt(), epsilon = 1e-10);
        assert_relative_eq!(out.x[1], 1.0 / 2f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn chain_codec_round_trips() {
        let v = [0.97, 0.41];
        let back = decode_chain(&encode_chain(&v));
        assert_relative_eq!(back[0], v[0], epsilon = 1e-14);
        assert_relative_eq!(back[1], v[1], epsilon = 1e-14);
    }
}
