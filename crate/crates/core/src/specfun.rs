//! Special functions and Gaussian quadrature primitives.
//!
//! Every expectation over a standard normal variable in this crate goes
//! through a [`QuadratureGrid`], which stores Gauss–Hermite nodes and weights
//! already rescaled to the probabilists' measure N(0, 1).  The error function
//! family follows W. J. Cody's rational Chebyshev approximations, with a
//! scaled path (`erfcx`) so that `ln erfc(x)` stays finite far into the tail.

use std::f64::consts::{LN_2, PI, SQRT_2};

use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const CODY_THRESHOLD: f64 = 0.46875;
const CODY_XBIG: f64 = 26.543;
#[allow(clippy::excessive_precision)]
const CODY_XNEG: f64 = -26.628_735_713_751_4;

#[allow(clippy::excessive_precision)]
const CODY_A: [f64; 5] = [
    3.161_123_743_870_565_6,
    113.864_154_151_050_16,
    377.485_237_685_302_02,
    3_209.377_589_138_469_5,
    0.185_777_706_184_603_15,
];
#[allow(clippy::excessive_precision)]
const CODY_B: [f64; 4] = [
    23.601_290_952_344_122,
    244.024_637_934_444_17,
    1_282.616_526_077_372_3,
    2_844.236_833_439_170_6,
];
#[allow(clippy::excessive_precision)]
const CODY_C: [f64; 9] = [
    0.564_188_496_988_670_1,
    8.883_149_794_388_376,
    66.119_190_637_141_63,
    298.635_138_197_400_1,
    881.952_221_241_769_1,
    1_712.047_612_634_070_6,
    2_051.078_377_826_071_5,
    1_230.339_354_797_997_2,
    2.153_115_354_744_038_5e-8,
];
#[allow(clippy::excessive_precision)]
const CODY_D: [f64; 8] = [
    15.744_926_110_709_835,
    117.693_950_891_312_5,
    537.181_101_862_009_9,
    1_621.389_574_566_690_2,
    3_290.799_235_733_459_6,
    4_362.619_090_143_247,
    3_439.367_674_143_721_6,
    1_230.339_354_803_749_4,
];
#[allow(clippy::excessive_precision)]
const CODY_P: [f64; 6] = [
    0.305_326_634_961_232_36,
    0.360_344_899_949_804_45,
    0.125_781_726_111_229_26,
    0.016_083_785_148_742_275,
    6.587_491_615_298_378e-4,
    0.016_315_387_137_302_097,
];
#[allow(clippy::excessive_precision)]
const CODY_Q: [f64; 5] = [
    2.568_520_192_289_822,
    1.872_952_849_923_460_4,
    0.527_905_102_951_428_4,
    0.060_518_341_312_441_32,
    0.002_335_204_976_268_691_8,
];

#[inline]
fn cody_small(z: f64) -> f64 {
    let a = &CODY_A;
    let b = &CODY_B;
    ((((a[4] * z + a[0]) * z + a[1]) * z + a[2]) * z + a[3])
        / ((((z + b[0]) * z + b[1]) * z + b[2]) * z + b[3])
}

#[inline]
fn cody_mid(y: f64) -> f64 {
    let c = &CODY_C;
    let d = &CODY_D;
    let mut num = c[8] * y;
    for &ci in &c[..7] {
        num = (num + ci) * y;
    }
    num += c[7];
    let mut den = y;
    for &di in &d[..7] {
        den = (den + di) * y;
    }
    den += d[7];
    num / den
}

#[inline]
fn cody_large(z: f64) -> f64 {
    let p = &CODY_P;
    let q = &CODY_Q;
    z * (((((p[5] * z + p[0]) * z + p[1]) * z + p[2]) * z + p[3]) * z + p[4])
        / (((((z + q[0]) * z + q[1]) * z + q[2]) * z + q[3]) * z + q[4])
}

/// `exp(-y^2)` split as `exp(-t^2) * exp(-(y - t)(y + t))` with `t` rounded to
/// 1/16, which removes the cancellation error of squaring `y` directly.
#[inline]
fn exp_neg_square(y: f64) -> f64 {
    let t = (y * 16.0).trunc() / 16.0;
    (-t * t).exp() * (-(y - t) * (y + t)).exp()
}

#[inline]
fn exp_pos_square(y: f64) -> f64 {
    let t = (y * 16.0).trunc() / 16.0;
    (t * t).exp() * ((y - t) * (y + t)).exp()
}

/// `erfcx(y) = exp(y^2) erfc(y)` for `y > 0.46875`.
#[inline]
fn erfcx_upper(y: f64) -> f64 {
    if y <= 4.0 {
        cody_mid(y)
    } else {
        (FRAC_1_SQRT_PI - cody_large(1.0 / (y * y))) / y
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= CODY_THRESHOLD {
        return 1.0 - x * cody_small(y * y);
    }
    let tail = if y >= CODY_XBIG {
        // subnormal range: one rounding instead of two
        let t = (y * 16.0).trunc() / 16.0;
        (erfcx_upper(y).ln() - t * t - (y - t) * (y + t)).exp()
    } else {
        erfcx_upper(y) * exp_neg_square(y)
    };
    if x < 0.0 {
        2.0 - tail
    } else {
        tail
    }
}

/// Error function, `1 - erfc(x)` evaluated without cancellation near zero.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= CODY_THRESHOLD {
        return x * cody_small(y * y);
    }
    let tail = if y >= CODY_XBIG {
        0.0
    } else {
        erfcx_upper(y) * exp_neg_square(y)
    };
    if x < 0.0 {
        tail - 1.0
    } else {
        1.0 - tail
    }
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
///
/// Saturates at `f64::MAX` for `x` below about -26.6 where the true value
/// overflows.
pub fn erfcx(x: f64) -> f64 {
    let y = x.abs();
    if y <= CODY_THRESHOLD {
        let z = y * y;
        return z.exp() * (1.0 - x * cody_small(z));
    }
    if x < CODY_XNEG {
        return f64::MAX;
    }
    let upper = erfcx_upper(y);
    if x < 0.0 {
        2.0 * exp_pos_square(y) - upper
    } else {
        upper
    }
}

/// Natural logarithm of `erfc(x)`, finite for every finite `x`.
pub fn ln_erfc(x: f64) -> f64 {
    if x <= CODY_THRESHOLD {
        erfc(x).ln()
    } else {
        -x * x + erfcx_upper(x).ln()
    }
}

/// Derivative of [`ln_erfc`]: `-2 exp(-x^2) / (sqrt(pi) erfc(x))`.
pub fn ln_erfc_deriv(x: f64) -> f64 {
    if x <= CODY_THRESHOLD {
        if x < CODY_XNEG {
            return 0.0;
        }
        -2.0 * FRAC_1_SQRT_PI * (-x * x).exp() / erfc(x)
    } else {
        -2.0 * FRAC_1_SQRT_PI / erfcx_upper(x)
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal upper tail `P(g > x)`.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Gauss–Hermite rule normalized to the standard normal measure.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E f(g)` for `g ~ N(0, 1)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

pub const MIN_GH_ORDER: usize = 2;
pub const MAX_GH_ORDER: usize = 512;

/// Builds the `order`-point Gauss–Hermite rule for N(0, 1).
///
/// Each root of the orthonormal Hermite function is bracketed by bisection
/// on the Sturm count of the Jacobi matrix, then polished by Newton steps on
/// the three-term recurrence. Nodes are mapped by `sqrt(2)` and weights
/// divided by `sqrt(pi)`. For orders above roughly 350 the weights of the
/// outermost nodes underflow to zero.
pub fn gauss_hermite(order: usize) -> Result<QuadratureGrid> {
    if !(MIN_GH_ORDER..=MAX_GH_ORDER).contains(&order) {
        return Err(Error::InvalidInput(format!(
            "Gauss-Hermite order {order} outside [{MIN_GH_ORDER}, {MAX_GH_ORDER}]"
        )));
    }
    let n = order;
    let nf = n as f64;
    let pim4 = PI.powf(-0.25);
    let half = n.div_ceil(2);
    let mut roots = vec![0.0f64; n];
    let mut raw_w = vec![0.0f64; n];

    // number of roots below z
    let count_below = |z: f64| -> usize {
        let mut count = 0;
        let mut d = -z;
        if d < 0.0 {
            count += 1;
        }
        for k in 1..n {
            let prev = if d == 0.0 { f64::EPSILON } else { d };
            d = -z - 0.5 * k as f64 / prev;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    // (h_n(z), sqrt(2n) h_{n-1}(z)) for the orthonormal Hermite functions;
    // the exp(-z^2 / 2) factor keeps the recurrence in range.
    let eval = |z: f64| -> (f64, f64) {
        let mut p1 = pim4 * (-0.5 * z * z).exp();
        let mut p2 = 0.0;
        for j in 1..=n {
            let p3 = p2;
            p2 = p1;
            let jf = j as f64;
            p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
        }
        (p1, (2.0 * nf).sqrt() * p2)
    };

    let mut hi = (2.0 * nf + 1.0).sqrt() + 1.0;
    for i in 0..half {
        if n % 2 == 1 && i == half - 1 {
            // the middle root of an odd order is exactly zero
            let pp = eval(0.0).1;
            raw_w[i] = (LN_2 - 2.0 * pp.abs().ln()).exp();
            break;
        }
        let rank = n - 1 - i;
        let mut lo = 0.0;
        while hi - lo > 1e-9 * hi.max(1e-3) {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) > rank {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (bracket_lo, bracket_hi) = (lo - 1e-9 * hi, hi + 1e-9 * hi);
        let mut z = 0.5 * (lo + hi);
        let mut pp = eval(z).1;
        for _ in 0..8 {
            let (p, d) = eval(z);
            pp = d;
            let dz = p / d;
            let next = z - dz;
            if !(next > bracket_lo && next < bracket_hi) {
                break;
            }
            z = next;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                pp = eval(z).1;
                break;
            }
        }
        if !z.is_finite() || !pp.is_finite() || pp == 0.0 && z > 1.0 {
            return Err(Error::Numerical(format!(
                "Gauss-Hermite root {i} of order {order} is not representable"
            )));
        }
        roots[i] = z;
        roots[n - 1 - i] = -z;
        let w = (LN_2 - 2.0 * pp.abs().ln() - z * z).exp();
        raw_w[i] = w;
        raw_w[n - 1 - i] = w;
        hi = z;
    }
    if n % 2 == 1 {
        roots[half - 1] = 0.0;
    }
    let mut pairs: Vec<(f64, f64)> = roots
        .iter()
        .zip(&raw_w)
        .map(|(&x, &w)| (x * SQRT_2, w / PI.sqrt()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let nodes = pairs.iter().map(|p| p.0).collect();
    let weights = pairs.iter().map(|p| p.1 / total).collect();
    Ok(QuadratureGrid { nodes, weights })
}

/// `ln sum_i w_i exp(theta * l_i)`, i.e. the log of `E[f^theta]` given
/// `l_i = ln f(x_i)`, shifted by the largest term before exponentiating.
pub fn log_weighted_power_mean(log_values: &[f64], weights: &[f64], exponent: f64) -> Result<f64> {
    if log_values.is_empty() || log_values.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "log_weighted_power_mean: {} values vs {} weights",
            log_values.len(),
            weights.len()
        )));
    }
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "log_weighted_power_mean: exponent {exponent} must be positive"
        )));
    }
    if log_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "log_weighted_power_mean: non-finite log value".into(),
        ));
    }
    Ok(log_power_mean_unchecked(log_values, weights, exponent))
}

/// Unchecked core of [`log_weighted_power_mean`] for hot loops.
#[inline]
pub(crate) fn log_power_mean_unchecked(log_values: &[f64], weights: &[f64], exponent: f64) -> f64 {
    let shift = log_values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&l, _)| exponent * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = log_values
        .iter()
        .zip(weights)
        .map(|(&l, &w)| w * (exponent * l - shift).exp())
        .sum();
    shift + s.ln()
}
