//! Ground-state free energy of the negative spherical perceptron at lifting
//! levels 1, 2 (partial and full) and 3 (full).
//!
//! The evaluated quantity is the stationarized dual objective
//!
//! ```text
//! psi = 1/2 sum_k (p_{k-1} q_{k-1} - p_k q_k) c_k - gamma_p + X(q, c, gamma_p)
//!       + gamma - (alpha / c_r) * S(p, c, gamma; kappa)
//! ```
//!
//! where `X` is the closed form of the nested Gaussian integral on the
//! perceptron side and `S` the nested expectation of `ln f_zt` on the sphere
//! side. The capacity is the `alpha` at which `psi` crosses zero at a
//! stationary point.

use std::f64::consts::{LN_2, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{
    erfc, gauss_hermite, ln_add_exp, ln_erfc, ln_erfc_deriv, log_power_mean_unchecked, normal_pdf,
    QuadratureGrid,
};

/// Smallest quadrature order accepted by the level-2/3 evaluators.
pub const MIN_EVAL_ORDER: usize = 16;
pub const DEFAULT_ORDER: usize = 60;

/// Threshold `kappa` and constraint ratio `alpha = m / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub kappa: f64,
    pub alpha: f64,
}

impl ModelPoint {
    pub fn new(kappa: f64, alpha: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kappa must be finite, got {kappa}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self { kappa, alpha })
    }
}

/// Lifting level together with its variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2p")]
    TwoPartial,
    #[serde(rename = "2f")]
    TwoFull,
    #[serde(rename = "3f")]
    ThreeFull,
}

impl Level {
    pub const ALL: [Level; 4] = [
        Level::One,
        Level::TwoPartial,
        Level::TwoFull,
        Level::ThreeFull,
    ];

    /// Lifting depth `r`.
    pub fn depth(self) -> usize {
        match self {
            Level::One => 1,
            Level::TwoPartial | Level::TwoFull => 2,
            Level::ThreeFull => 3,
        }
    }

    pub fn is_full(self) -> bool {
        matches!(self, Level::TwoFull | Level::ThreeFull)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::One => "1",
            Level::TwoPartial => "2p",
            Level::TwoFull => "2f",
            Level::ThreeFull => "3f",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "1f" => Ok(Level::One),
            "2p" => Ok(Level::TwoPartial),
            "2f" => Ok(Level::TwoFull),
            "3f" => Ok(Level::ThreeFull),
            other => Err(Error::InvalidInput(format!(
                "unknown level '{other}' (expected 1, 2p, 2f or 3f)"
            ))),
        }
    }
}

/// Lifting parameters of one level.
///
/// `p`, `q` and `c` hold the non-fixed entries `(x_2, ..., x_r)`; the
/// boundary values `p_1 = q_1 = 1` and `p_{r+1} = q_{r+1} = c_{r+1} = 0` are
/// implicit. At level 1 all three are empty, at the partial second level
/// `p = q = [0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingParams {
    pub level: Level,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub c: Vec<f64>,
    pub gamma_sq: f64,
    pub gamma_sq_p: f64,
}

impl LiftingParams {
    pub fn level_one(gamma_sq: f64) -> Self {
        Self {
            level: Level::One,
            p: vec![],
            q: vec![],
            c: vec![],
            gamma_sq,
            gamma_sq_p: 0.5,
        }
    }

    pub fn two_partial(c2: f64, gamma_sq: f64, gamma_sq_p: f64) -> Self {
        Self {
            level: Level::TwoPartial,
            p: vec![0.0],
            q: vec![0.0],
            c: vec![c2],
            gamma_sq,
            gamma_sq_p,
        }
    }

    pub fn two_full(p2: f64, q2: f64, c2: f64, gamma_sq: f64, gamma_sq_p: f64) -> Self {
        Self {
            level: Level::TwoFull,
            p: vec![p2],
            q: vec![q2],
            c: vec![c2],
            gamma_sq,
            gamma_sq_p,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn three_full(
        p2: f64,
        p3: f64,
        q2: f64,
        q3: f64,
        c2: f64,
        c3: f64,
        gamma_sq: f64,
        gamma_sq_p: f64,
    ) -> Self {
        Self {
            level: Level::ThreeFull,
            p: vec![p2, p3],
            q: vec![q2, q3],
            c: vec![c2, c3],
            gamma_sq,
            gamma_sq_p,
        }
    }

    pub fn p2(&self) -> f64 {
        self.p.first().copied().unwrap_or(0.0)
    }
    pub fn p3(&self) -> f64 {
        self.p.get(1).copied().unwrap_or(0.0)
    }
    pub fn q2(&self) -> f64 {
        self.q.first().copied().unwrap_or(0.0)
    }
    pub fn q3(&self) -> f64 {
        self.q.get(1).copied().unwrap_or(0.0)
    }
    pub fn c2(&self) -> f64 {
        self.c.first().copied().unwrap_or(0.0)
    }
    pub fn c3(&self) -> f64 {
        self.c.get(1).copied().unwrap_or(0.0)
    }

    /// Shape, chain-order and log-argument checks for the stored level.
    pub fn validate(&self) -> Result<()> {
        let expected = match self.level {
            Level::One => 0,
            Level::TwoPartial | Level::TwoFull => 1,
            Level::ThreeFull => 2,
        };
        if self.p.len() != expected || self.q.len() != expected || self.c.len() != expected {
            return Err(Error::InvalidInput(format!(
                "level {} expects {expected} entries in p, q and c",
                self.level
            )));
        }
        let all = self.p.iter().chain(&self.q).chain(&self.c);
        if all
            .chain([&self.gamma_sq, &self.gamma_sq_p])
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("non-finite lifting parameter".into()));
        }
        if !(self.gamma_sq > 0.0) || !(self.gamma_sq_p > 0.0) {
            return Err(Error::OutOfDomain(format!(
                "gamma_sq = {}, gamma_sq_p = {} must be positive",
                self.gamma_sq, self.gamma_sq_p
            )));
        }
        if self.level == Level::TwoPartial && (self.p[0] != 0.0 || self.q[0] != 0.0) {
            return Err(Error::InvalidInput(
                "partial level requires p2 = q2 = 0".into(),
            ));
        }
        for chain in [&self.p, &self.q] {
            let mut prev = 1.0;
            for &v in chain.iter() {
                if v > prev || v < 0.0 {
                    return Err(Error::OutOfDomain(format!(
                        "chain {chain:?} is not monotone within [0, 1]"
                    )));
                }
                if v >= 1.0 {
                    return Err(Error::OutOfDomain(format!("chain {chain:?} touches 1")));
                }
                prev = v;
            }
        }
        let degenerate = self.level == Level::TwoPartial && self.c[0] == 0.0;
        if !degenerate && self.c.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::OutOfDomain(format!(
                "c = {:?} must be positive",
                self.c
            )));
        }
        if self.level != Level::One && !degenerate {
            x_side(&self.q, &self.c, self.gamma_sq_p)?;
        }
        Ok(())
    }
}

/// Parameters of the closed-form sphere-side inner integral
/// `f_zt = E exp(-B max(C + sqrt(one_minus_p) g, 0)^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereIntegrand {
    pub h: f64,
    pub b: f64,
    pub c: f64,
    pub one_minus_p: f64,
}

impl SphereIntegrand {
    /// Integrand with the consistent threshold `h = -C / sqrt(one_minus_p)`.
    pub fn from_mean(c: f64, b: f64, one_minus_p: f64) -> Self {
        Self {
            h: -c / one_minus_p.sqrt(),
            b,
            c,
            one_minus_p,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.b > 0.0) {
            return Err(Error::InvalidInput(format!(
                "B = {} must be positive",
                self.b
            )));
        }
        if !(self.one_minus_p > 0.0 && self.one_minus_p <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "one_minus_p = {} outside (0, 1]",
                self.one_minus_p
            )));
        }
        Ok(())
    }

    /// Down part: the Gaussian mass above the threshold, damped by the
    /// exponential.
    pub fn f_zd(&self) -> f64 {
        let d = 2.0 * self.one_minus_p * self.b + 1.0;
        (-self.b * self.c * self.c / d).exp() / (2.0 * d.sqrt()) * erfc(self.h / (2.0 * d).sqrt())
    }

    /// Up part: the untouched mass below the threshold.
    pub fn f_zu(&self) -> f64 {
        0.5 * erfc(-self.h / SQRT_2)
    }

    /// `ln f_zt`, computed without forming `f_zd` or `f_zu`.
    pub fn ln_f_zt(&self) -> f64 {
        let d = 2.0 * self.one_minus_p * self.b + 1.0;
        let down = -self.b * self.c * self.c / d - LN_2 - 0.5 * d.ln()
            + ln_erfc(self.h / (2.0 * d).sqrt());
        let up = -LN_2 + ln_erfc(-self.h / SQRT_2);
        ln_add_exp(down, up)
    }
}

/// `f_zt = f_zd + f_zu`, a value in `(0, 1]`.
pub fn f_zt(si: &SphereIntegrand) -> Result<f64> {
    si.check()?;
    Ok(si.f_zd() + si.f_zu())
}

/// `E max(kappa + g, 0)^2` for `g ~ N(0, 1)`.
pub fn e_max_sq(kappa: f64) -> f64 {
    kappa * normal_pdf(kappa) + 0.5 * (kappa * kappa + 1.0) * erfc(-kappa / SQRT_2)
}

/// `ln f_zt` at consistent `(C, B, s = 1 - p_2)` with its partial derivatives.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LnFzt {
    pub value: f64,
    pub d_c: f64,
    pub d_b: f64,
    pub d_s: f64,
}

pub(crate) fn ln_f_zt_value(c: f64, b: f64, s: f64) -> f64 {
    SphereIntegrand::from_mean(c, b, s).ln_f_zt()
}

pub(crate) fn ln_f_zt_with_grad(c: f64, b: f64, s: f64) -> LnFzt {
    let d = 2.0 * s * b + 1.0;
    let t = 2.0 * s * d;
    let rt = t.sqrt();
    let z = -c / rt;
    let rs2 = (2.0 * s).sqrt();
    let v = c / rs2;

    let la = -b * c * c / d - LN_2 - 0.5 * d.ln() + ln_erfc(z);
    let lb = -LN_2 + ln_erfc(v);
    let value = ln_add_exp(la, lb);
    let wa = (la - value).exp();
    let wb = (lb - value).exp();

    let lz = ln_erfc_deriv(z);
    let lv = ln_erfc_deriv(v);
    let dz_dc = -1.0 / rt;
    let dz_db = 2.0 * c * s * s / (t * rt);
    let dz_ds = c * (d + 2.0 * s * b) / (t * rt);

    let la_c = -2.0 * b * c / d + lz * dz_dc;
    let la_b = -c * c / d + 2.0 * s * b * c * c / (d * d) - s / d + lz * dz_db;
    let la_s = 2.0 * b * b * c * c / (d * d) - b / d + lz * dz_ds;
    let lb_c = lv / rs2;
    let lb_s = -lv * c / rs2.powi(3);

    LnFzt {
        value,
        d_c: wa * la_c + wb * lb_c,
        d_b: wa * la_b,
        d_s: wa * la_s + wb * lb_s,
    }
}

/// Perceptron-side closed form and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct XSide {
    pub value: f64,
    pub d_q: Vec<f64>,
    pub d_c: Vec<f64>,
    pub d_gamma_p: f64,
}

/// `X = sum_k ln(D_{k-1} / D_{k-2}) / (2 c_k) - q_r / (2 D_{r-1})` with
/// `D_0 = 2 gamma_p` and `D_j = D_{j-1} - c_{j+1} (q_j - q_{j+1})`, `q_1 = 1`.
///
/// Every log carries `gamma_p` (never `gamma`): the Gaussian width of the
/// perceptron-side field is `1 / (4 gamma_p)`.
pub fn x_side(q: &[f64], c: &[f64], gamma_sq_p: f64) -> Result<XSide> {
    let r1 = q.len();
    if r1 == 0 || c.len() != r1 {
        return Err(Error::InvalidInput(
            "x_side needs matching non-empty q and c".into(),
        ));
    }
    let qk = |k: usize| if k == 0 { 1.0 } else { q[k - 1] };
    let mut dd = Vec::with_capacity(r1 + 1);
    dd.push(2.0 * gamma_sq_p);
    for j in 1..=r1 {
        let next = dd[j - 1] - c[j - 1] * (qk(j - 1) - qk(j));
        if !(next > 0.0) {
            return Err(Error::OutOfDomain(format!(
                "log argument D_{j} = {next:.6e} not positive (gamma_p = {gamma_sq_p}, c = {c:?}, q = {q:?})"
            )));
        }
        dd.push(next);
    }
    let mut value = 0.0;
    for j in 1..=r1 {
        value += (dd[j] / dd[j - 1]).ln() / (2.0 * c[j - 1]);
    }
    value -= q[r1 - 1] / (2.0 * dd[r1]);

    // adjoints of D_j
    let mut g_d = vec![0.0; r1 + 1];
    for j in 1..=r1 {
        let w = 1.0 / (2.0 * c[j - 1]);
        g_d[j] += w / dd[j];
        g_d[j - 1] -= w / dd[j - 1];
    }
    g_d[r1] += q[r1 - 1] / (2.0 * dd[r1] * dd[r1]);

    let mut d_c = vec![0.0; r1];
    let mut d_q = vec![0.0; r1];
    for j in 1..=r1 {
        d_c[j - 1] -= (dd[j] / dd[j - 1]).ln() / (2.0 * c[j - 1] * c[j - 1]);
    }
    d_q[r1 - 1] -= 1.0 / (2.0 * dd[r1]);
    // suffix sum of adjoints: D_j for j >= k-1 all depend on c_k and q_k
    let mut suffix = vec![0.0; r1 + 2];
    for j in (0..=r1).rev() {
        suffix[j] = suffix[j + 1] + g_d[j];
    }
    let d_gamma_p = 2.0 * suffix[0];
    for k in 1..=r1 {
        // D_j, j >= k, contains -c_k (q_{k-1} - q_k)
        d_c[k - 1] -= (qk(k - 1) - qk(k)) * suffix[k];
        // q_k appears as +c_k q_k (j >= k) and -c_{k+1} q_k (j >= k + 1)
        d_q[k - 1] += c[k - 1] * suffix[k];
        if k < r1 {
            d_q[k - 1] -= c[k] * suffix[k + 1];
        }
    }
    Ok(XSide {
        value,
        d_q,
        d_c,
        d_gamma_p,
    })
}

/// Gauss–Hermite grids used by the level-2 (outer only) and level-3
/// (inner `u_3` times outer `u_4`) evaluators.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub inner: QuadratureGrid,
    pub outer: QuadratureGrid,
}

impl Quadrature {
    pub fn new(inner_order: usize, outer_order: usize) -> Result<Self> {
        Ok(Self {
            inner: gauss_hermite(inner_order)?,
            outer: gauss_hermite(outer_order)?,
        })
    }
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::new(DEFAULT_ORDER, DEFAULT_ORDER).expect("default orders are valid")
    }
}

fn check_order(grid: &QuadratureGrid) -> Result<()> {
    if grid.order() < MIN_EVAL_ORDER {
        return Err(Error::InvalidInput(format!(
            "quadrature order {} below the minimum {MIN_EVAL_ORDER}",
            grid.order()
        )));
    }
    Ok(())
}

/// Level-1 energy with both `gamma`s at their analytic optimum:
/// `-1 + sqrt(alpha E max(kappa + g, 0)^2)`.
pub fn psi_r1(mp: &ModelPoint) -> f64 {
    -1.0 + (mp.alpha * e_max_sq(mp.kappa)).sqrt()
}

/// Level-1 optimal `gamma_sq = sqrt(alpha E max(kappa + g, 0)^2) / 2`.
pub fn gamma_sq_r1(mp: &ModelPoint) -> f64 {
    0.5 * (mp.alpha * e_max_sq(mp.kappa)).sqrt()
}

/// Partial second level (`p_2 = q_2 = 0`, free `c_2`).
pub fn psi_r2_partial(mp: &ModelPoint, c2: f64, gamma_sq: f64, gamma_sq_p: f64) -> Result<f64> {
    if !(c2 > 0.0) || !(gamma_sq > 0.0) || !(gamma_sq_p > 0.0) {
        return Err(Error::OutOfDomain(format!(
            "c2 = {c2}, gamma_sq = {gamma_sq}, gamma_sq_p = {gamma_sq_p} must be positive"
        )));
    }
    let arg = 2.0 * gamma_sq_p - c2;
    if !(arg > 0.0) {
        return Err(Error::OutOfDomain(format!(
            "2 gamma_sq_p - c2 = {arg:.6e} not positive"
        )));
    }
    let x = (arg / (2.0 * gamma_sq_p)).ln() / (2.0 * c2);
    let ln_f = ln_f_zt_value(mp.kappa, c2 / (4.0 * gamma_sq), 1.0);
    Ok(0.5 * c2 - gamma_sq_p + x + gamma_sq - mp.alpha / c2 * ln_f)
}

/// `E_u ln f_zt(C = sqrt(p2) u + kappa, B, 1 - p2)` on `grid`.
pub fn sphere_mean_ln_r2(kappa: f64, p2: f64, b: f64, grid: &QuadratureGrid) -> f64 {
    let sp = p2.sqrt();
    grid.iter()
        .map(|(u, w)| w * ln_f_zt_value(sp * u + kappa, b, 1.0 - p2))
        .sum()
}

/// `E_{u4} ln E_{u3} f_zt^theta` with `C = sqrt(p2 - p3) u3 + sqrt(p3) u4 + kappa`.
pub fn sphere_nested_r3(
    kappa: f64,
    p2: f64,
    p3: f64,
    b: f64,
    theta: f64,
    quad: &Quadrature,
) -> f64 {
    let a3 = (p2 - p3).sqrt();
    let a4 = p3.sqrt();
    let s = 1.0 - p2;
    let mut logs = vec![0.0; quad.inner.order()];
    let mut total = 0.0;
    for (u4, w4) in quad.outer.iter() {
        let base = a4 * u4 + kappa;
        for (slot, &u3) in logs.iter_mut().zip(quad.inner.nodes()) {
            *slot = ln_f_zt_value(a3 * u3 + base, b, s);
        }
        total += w4 * log_power_mean_unchecked(&logs, quad.inner.weights(), theta);
    }
    total
}

fn check_level(lp: &LiftingParams, level: Level) -> Result<()> {
    if lp.level != level {
        return Err(Error::InvalidInput(format!(
            "expected level {level} parameters, got {}",
            lp.level
        )));
    }
    lp.validate()
}

/// Full second level.
pub fn psi_r2_full(mp: &ModelPoint, lp: &LiftingParams, grid: &QuadratureGrid) -> Result<f64> {
    check_level(lp, Level::TwoFull)?;
    check_order(grid)?;
    let (p2, q2, c2) = (lp.p2(), lp.q2(), lp.c2());
    let x = x_side(&lp.q, &lp.c, lp.gamma_sq_p)?;
    let s = sphere_mean_ln_r2(mp.kappa, p2, c2 / (4.0 * lp.gamma_sq), grid);
    Ok(0.5 * (1.0 - p2 * q2) * c2 - lp.gamma_sq_p + x.value + lp.gamma_sq - mp.alpha / c2 * s)
}

/// Full third level; the inner power mean runs in the log domain.
pub fn psi_r3_full(mp: &ModelPoint, lp: &LiftingParams, quad: &Quadrature) -> Result<f64> {
    check_level(lp, Level::ThreeFull)?;
    check_order(&quad.inner)?;
    check_order(&quad.outer)?;
    let (p2, p3, q2, q3, c2, c3) = (lp.p2(), lp.p3(), lp.q2(), lp.q3(), lp.c2(), lp.c3());
    let x = x_side(&lp.q, &lp.c, lp.gamma_sq_p)?;
    let s = sphere_nested_r3(mp.kappa, p2, p3, c2 / (4.0 * lp.gamma_sq), c3 / c2, quad);
    Ok(
        0.5 * (1.0 - p2 * q2) * c2 + 0.5 * (p2 * q2 - p3 * q3) * c3 - lp.gamma_sq_p
            + x.value
            + lp.gamma_sq
            - mp.alpha / c3 * s,
    )
}

/// Dispatches on `lp.level`. Level 1 and the degenerate partial point
/// (`c2 = 0`) ignore the stored `gamma`s and use their optimum.
pub fn psi(mp: &ModelPoint, lp: &LiftingParams, quad: &Quadrature) -> Result<f64> {
    match lp.level {
        Level::One => Ok(psi_r1(mp)),
        Level::TwoPartial if lp.c2() == 0.0 => Ok(psi_r1(mp)),
        Level::TwoPartial => psi_r2_partial(mp, lp.c2(), lp.gamma_sq, lp.gamma_sq_p),
        Level::TwoFull => psi_r2_full(mp, lp, &quad.outer),
        Level::ThreeFull => psi_r3_full(mp, lp, quad),
    }
}

/// Sphere-side term `S` of `psi = ... - alpha / c_r * S`; `psi` is affine in
/// `alpha` with slope `-S / c_r`.
pub fn sphere_term(mp: &ModelPoint, lp: &LiftingParams, quad: &Quadrature) -> Result<f64> {
    lp.validate()?;
    Ok(match lp.level {
        Level::One => -e_max_sq(mp.kappa),
        Level::TwoPartial if lp.c2() == 0.0 => -e_max_sq(mp.kappa),
        Level::TwoPartial => ln_f_zt_value(mp.kappa, lp.c2() / (4.0 * lp.gamma_sq), 1.0),
        Level::TwoFull => sphere_mean_ln_r2(
            mp.kappa,
            lp.p2(),
            lp.c2() / (4.0 * lp.gamma_sq),
            &quad.outer,
        ),
        Level::ThreeFull => sphere_nested_r3(
            mp.kappa,
            lp.p2(),
            lp.p3(),
            lp.c2() / (4.0 * lp.gamma_sq),
            lp.c3() / lp.c2(),
            quad,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn e_max_sq_values() {
        assert_relative_eq!(e_max_sq(0.0), 0.5, epsilon = 1e-15);
        assert!((1.0 / e_max_sq(-1.5) - 43.77).abs() < 5e-3);
        assert!((1.0 / e_max_sq(-1.0) - 13.27).abs() < 5e-3);
    }

    #[test]
    fn f_zt_half_gaussian_value() {
        let si = SphereIntegrand {
            h: 0.0,
            b: 0.5,
            c: 0.0,
            one_minus_p: 1.0,
        };
        let v = f_zt(&si).unwrap();
        assert_relative_eq!(v, 0.5 + 1.0 / (2.0 * 2f64.sqrt()), epsilon = 1e-15);
        assert_relative_eq!(si.ln_f_zt(), v.ln(), epsilon = 1e-15);
    }

    #[test]
    fn f_zt_vanishing_b_gives_total_mass() {
        for &c in &[-2.0, 0.0, 1.3] {
            let si = SphereIntegrand::from_mean(c, 1e-14, 1.0);
            assert_relative_eq!(f_zt(&si).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn f_zt_rejects_nonpositive_b() {
        let si = SphereIntegrand::from_mean(0.0, 0.0, 1.0);
        assert!(f_zt(&si).is_err());
    }

    #[test]
    fn ln_f_zt_partials_match_differences() {
        for &(c, b, s) in &[
            (-1.5, 3.6, 1.0),
            (0.4, 0.7, 0.3),
            (2.5, 12.0, 0.05),
            (-4.0, 0.2, 0.6),
        ] {
            let g = ln_f_zt_with_grad(c, b, s);
            let h = 1e-6;
            let fc = (ln_f_zt_value(c + h, b, s) - ln_f_zt_value(c - h, b, s)) / (2.0 * h);
            let fb = (ln_f_zt_value(c, b + h, s) - ln_f_zt_value(c, b - h, s)) / (2.0 * h);
            let fs = (ln_f_zt_value(c, b, s + h) - ln_f_zt_value(c, b, s - h)) / (2.0 * h);
            assert!(
                (g.d_c - fc).abs() < 1e-7 * (1.0 + fc.abs()),
                "{c} {b} {s}: {} vs {fc}",
                g.d_c
            );
            assert!(
                (g.d_b - fb).abs() < 1e-7 * (1.0 + fb.abs()),
                "{c} {b} {s}: {} vs {fb}",
                g.d_b
            );
            assert!(
                (g.d_s - fs).abs() < 1e-7 * (1.0 + fs.abs()),
                "{c} {b} {s}: {} vs {fs}",
                g.d_s
            );
        }
    }

    #[test]
    fn x_side_gradient_matches_differences() {
        let q = [0.6, 0.2];
        let c = [4.0, 2.5];
        let gp = 2.2;
        let x = x_side(&q, &c, gp).unwrap();
        let h = 1e-6;
        let f = |q: &[f64], c: &[f64], gp: f64| x_side(q, c, gp).unwrap().value;
        let fd_gp = (f(&q, &c, gp + h) - f(&q, &c, gp - h)) / (2.0 * h);
        assert_relative_eq!(x.d_gamma_p, fd_gp, max_relative = 1e-7);
        for i in 0..2 {
            let (mut qp, mut qm) = (q, q);
            qp[i] += h;
            qm[i] -= h;
            assert_relative_eq!(
                x.d_q[i],
                (f(&qp, &c, gp) - f(&qm, &c, gp)) / (2.0 * h),
                max_relative = 1e-6
            );
            let (mut cp, mut cm) = (c, c);
            cp[i] += h;
            cm[i] -= h;
            assert_relative_eq!(
                x.d_c[i],
                (f(&q, &cp, gp) - f(&q, &cm, gp)) / (2.0 * h),
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn x_side_flags_bad_log_argument() {
        assert!(matches!(
            x_side(&[0.1], &[5.0], 1.0),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn psi_r1_zero_threshold() {
        let mp = ModelPoint::new(0.0, 2.0).unwrap();
        assert_relative_eq!(psi_r1(&mp), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn level_parsing() {
        for l in Level::ALL {
            assert_eq!(l.as_str().parse::<Level>().unwrap(), l);
        }
        assert!("4f".parse::<Level>().is_err());
    }

    #[test]
    fn validate_rejects_broken_chains() {
        let lp = LiftingParams::three_full(0.3, 0.5, 0.5, 0.1, 10.0, 3.0, 0.1, 4.0);
        assert!(lp.validate().is_err());
        let lp = LiftingParams::two_full(0.5, 0.1, -1.0, 0.1, 2.0);
        assert!(lp.validate().is_err());
    }

    #[test]
    fn order_guard() {
        let mp = ModelPoint::new(-1.5, 36.57).unwrap();
        let lp = LiftingParams::two_full(0.4747, 0.0981, 3.6835, 0.1324, 1.8884);
        let small = gauss_hermite(8).unwrap();
        assert!(psi_r2_full(&mp, &lp, &small).is_err());
    }
}
