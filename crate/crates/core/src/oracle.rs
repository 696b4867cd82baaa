//! Monte Carlo estimates of the Gaussian expectations behind `free_energy`,
//! and a finite-n ground-state estimator for the raw feasibility problem.
//!
//! Every random draw comes from a `ChaCha8Rng` addressed by `(seed, stream)`,
//! and partial sums are combined in a fixed binary tree, so results do not
//! depend on the number of threads.

use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::{
    e_max_sq, f_zt, ln_f_zt_value, sphere_mean_ln_r2, sphere_nested_r3, Level, LiftingParams,
    ModelPoint, Quadrature, SphereIntegrand,
};
use crate::specfun::log_power_mean_unchecked;

pub const MIN_SAMPLES: usize = 1000;
pub const DEFAULT_INNER_SAMPLES: usize = 10_000;
pub const DEFAULT_THRESHOLD: f64 = 1e-3;
const CHUNK: usize = 1 << 12;
const NESTED_CHUNK: usize = 16;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub kind: String,
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
    /// Inner draws per outer draw for the nested kind. `E ln` of a finite
    /// inner mean is biased low by roughly `Var / (2 n mean^2)`.
    pub inner_samples: Option<usize>,
}

impl McEstimate {
    /// Distance to `value` in standard errors.
    pub fn z_score(&self, value: f64) -> f64 {
        let d = (self.mean - value).abs();
        if self.std_error == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / self.std_error
        }
    }
}

/// Expectations that can be sampled directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum McKind {
    /// `E max(kappa + g, 0)^2`.
    EMaxSq { kappa: f64 },
    /// `E exp(-b max(c + sqrt(one_minus_p) g, 0)^2)`, sampled without the
    /// closed form.
    FztLevel2 { c: f64, b: f64, one_minus_p: f64 },
    /// `E_u ln f_zt(sqrt(p2) u + kappa, b, 1 - p2)`.
    InnerLogLevel2 { kappa: f64, p2: f64, b: f64 },
    /// `E_{u4} ln mean_{u3} f_zt^theta` with `C = sqrt(p2 - p3) u3 + sqrt(p3) u4 + kappa`.
    NestedLevel3 {
        kappa: f64,
        p2: f64,
        p3: f64,
        b: f64,
        theta: f64,
        inner_samples: usize,
    },
}

impl McKind {
    pub const NAMES: [&'static str; 4] = [
        "e_max_sq",
        "f_zt_level2",
        "inner_log_level2",
        "nested_level3",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            McKind::EMaxSq { .. } => "e_max_sq",
            McKind::FztLevel2 { .. } => "f_zt_level2",
            McKind::InnerLogLevel2 { .. } => "inner_log_level2",
            McKind::NestedLevel3 { .. } => "nested_level3",
        }
    }

    /// Builds the named expectation at a lifting point. `f_zt_level2` is
    /// taken one outer standard deviation above the mean, `C = kappa + sqrt(p2)`.
    pub fn at_point(
        name: &str,
        kappa: f64,
        lp: &LiftingParams,
        inner_samples: usize,
    ) -> Result<Self> {
        lp.validate()?;
        let b = || {
            if lp.level == Level::One || lp.c2() <= 0.0 {
                Err(Error::InvalidInput(format!(
                    "{name} needs a point with c2 > 0"
                )))
            } else {
                Ok(lp.c2() / (4.0 * lp.gamma_sq))
            }
        };
        let p2 = if lp.level.is_full() { lp.p2() } else { 0.0 };
        match name {
            "e_max_sq" => Ok(McKind::EMaxSq { kappa }),
            "f_zt_level2" => Ok(McKind::FztLevel2 {
                c: kappa + p2.sqrt(),
                b: b()?,
                one_minus_p: 1.0 - p2,
            }),
            "inner_log_level2" => Ok(McKind::InnerLogLevel2 { kappa, p2, b: b()? }),
            "nested_level3" => {
                if lp.level != Level::ThreeFull {
                    return Err(Error::InvalidInput(
                        "nested_level3 needs a level-3 point".into(),
                    ));
                }
                Ok(McKind::NestedLevel3 {
                    kappa,
                    p2: lp.p2(),
                    p3: lp.p3(),
                    b: b()?,
                    theta: lp.c3() / lp.c2(),
                    inner_samples,
                })
            }
            other => Err(Error::InvalidInput(format!(
                "unknown expectation kind {other:?}; expected one of {:?}",
                Self::NAMES
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            McKind::EMaxSq { kappa } if !kappa.is_finite() => bad(format!("kappa = {kappa}")),
            McKind::FztLevel2 { c, b, one_minus_p } => {
                if !finite(&[c, b]) || b < 0.0 || !(one_minus_p > 0.0 && one_minus_p <= 1.0) {
                    bad(format!(
                        "f_zt_level2: c = {c}, b = {b}, one_minus_p = {one_minus_p}"
                    ))
                } else {
                    Ok(())
                }
            }
            McKind::InnerLogLevel2 { kappa, p2, b } => {
                if !finite(&[kappa, b]) || !(b > 0.0) || !(0.0..1.0).contains(&p2) {
                    bad(format!(
                        "inner_log_level2: kappa = {kappa}, p2 = {p2}, b = {b}"
                    ))
                } else {
                    Ok(())
                }
            }
            McKind::NestedLevel3 {
                kappa,
                p2,
                p3,
                b,
                theta,
                inner_samples,
            } => {
                if !finite(&[kappa, b, theta])
                    || !(b > 0.0 && theta > 0.0)
                    || !(0.0 <= p3 && p3 <= p2 && p2 < 1.0)
                    || inner_samples < 1
                {
                    bad(format!(
                        "nested_level3: kappa = {kappa}, p2 = {p2}, p3 = {p3}, b = {b}, theta = {theta}, inner = {inner_samples}"
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// The deterministic value the library computes for the same quantity.
    pub fn deterministic_value(&self, quad: &Quadrature) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            McKind::EMaxSq { kappa } => e_max_sq(kappa),
            McKind::FztLevel2 { b: 0.0, .. } => 1.0,
            McKind::FztLevel2 { c, b, one_minus_p } => {
                f_zt(&SphereIntegrand::from_mean(c, b, one_minus_p))?
            }
            McKind::InnerLogLevel2 { kappa, p2, b } => sphere_mean_ln_r2(kappa, p2, b, &quad.outer),
            McKind::NestedLevel3 {
                kappa,
                p2,
                p3,
                b,
                theta,
                ..
            } => sphere_nested_r3(kappa, p2, p3, b, theta, quad),
        })
    }
}

/// Running mean and centred sum of squares.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0.0 {
            return b;
        }
        if b.n == 0.0 {
            return a;
        }
        let n = a.n + b.n;
        let d = b.mean - a.mean;
        Moments {
            n,
            mean: a.mean + d * b.n / n,
            m2: a.m2 + b.m2 + d * d * a.n * b.n / n,
        }
    }
}

fn tree_merge(parts: &[Moments]) -> Moments {
    match parts.len() {
        0 => Moments::default(),
        1 => parts[0],
        n => Moments::merge(tree_merge(&parts[..n / 2]), tree_merge(&parts[n / 2..])),
    }
}

fn one_draw(kind: &McKind, rng: &mut ChaCha8Rng, scratch: &mut [f64], weights: &[f64]) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    match *kind {
        McKind::EMaxSq { kappa } => {
            let t = (kappa + g).max(0.0);
            t * t
        }
        McKind::FztLevel2 { c, b, one_minus_p } => {
            let t = (c + one_minus_p.sqrt() * g).max(0.0);
            (-b * t * t).exp()
        }
        McKind::InnerLogLevel2 { kappa, p2, b } => {
            ln_f_zt_value(p2.sqrt() * g + kappa, b, 1.0 - p2)
        }
        McKind::NestedLevel3 {
            kappa,
            p2,
            p3,
            b,
            theta,
            ..
        } => {
            let base = p3.sqrt() * g + kappa;
            let a3 = (p2 - p3).sqrt();
            for slot in scratch.iter_mut() {
                let u: f64 = rng.sample(StandardNormal);
                *slot = ln_f_zt_value(a3 * u + base, b, 1.0 - p2);
            }
            log_power_mean_unchecked(scratch, weights, theta)
        }
    }
}

/// Sample mean of `kind` over `samples` outer draws.
pub fn mc_expectation(kind: &McKind, samples: usize, seed: u64) -> Result<McEstimate> {
    kind.validate()?;
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "samples = {samples} below the minimum {MIN_SAMPLES}"
        )));
    }
    let inner = match *kind {
        McKind::NestedLevel3 { inner_samples, .. } => Some(inner_samples),
        _ => None,
    };
    let chunk = if inner.is_some() { NESTED_CHUNK } else { CHUNK };
    let chunks = samples.div_ceil(chunk);
    let weights = vec![1.0 / inner.unwrap_or(1) as f64; inner.unwrap_or(0)];
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut scratch = vec![0.0; inner.unwrap_or(0)];
            let mut m = Moments::default();
            let len = chunk.min(samples - i * chunk);
            for _ in 0..len {
                m.push(one_draw(kind, &mut rng, &mut scratch, &weights));
            }
            m
        })
        .collect();
    let m = tree_merge(&parts);
    let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
    Ok(McEstimate {
        kind: kind.name().to_string(),
        mean: m.mean,
        std_error: (var / m.n).sqrt(),
        samples,
        seed,
        inner_samples: inner,
    })
}

/// A random instance of `G x >= kappa 1` with `G` of shape `m x n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteNInstance {
    pub n: usize,
    pub m: usize,
    pub kappa: f64,
    pub seed: u64,
}

impl FiniteNInstance {
    /// `m = round(alpha n)`.
    pub fn new(n: usize, alpha: f64, kappa: f64, seed: u64) -> Result<Self> {
        if n < 2 || !(alpha > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidInput(format!(
                "instance needs n >= 2, alpha > 0: n = {n}, alpha = {alpha}, kappa = {kappa}"
            )));
        }
        let m = (alpha * n as f64).round() as usize;
        if m < 1 {
            return Err(Error::InvalidInput(format!(
                "alpha n = {} rounds to zero rows",
                alpha * n as f64
            )));
        }
        Ok(Self { n, m, kappa, seed })
    }

    pub fn alpha(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// Row-major standard normal entries from stream 0 of `seed`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut rng = stream_rng(self.seed, 0);
        DMatrix::from_row_iterator(
            self.m,
            self.n,
            (0..self.m * self.n).map(|_| rng.sample(StandardNormal)),
        )
    }
}

/// `0.5 ||max(kappa - G x, 0)||^2` and its Euclidean gradient.
fn half_sq_violation(g: &DMatrix<f64>, kappa: f64, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let mut v = g * x;
    v.apply(|t| *t = (kappa - *t).max(0.0));
    let f = 0.5 * v.norm_squared();
    (f, -(g.tr_mul(&v)))
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let x = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let r = x.norm();
        if r > 0.0 {
            return x / r;
        }
    }
}

/// One projected-gradient descent on the unit sphere. Returns the final
/// half squared violation.
fn sphere_descent(g: &DMatrix<f64>, kappa: f64, mut x: DVector<f64>, max_iter: usize) -> f64 {
    let (mut f, mut grad) = half_sq_violation(g, kappa, &x);
    // 1 / L with L ~ (sqrt(m) + sqrt(n))^2
    let mut step = 1.0 / ((g.nrows() as f64).sqrt() + (g.ncols() as f64).sqrt()).powi(2);
    for _ in 0..max_iter {
        if f == 0.0 {
            break;
        }
        let radial = x.dot(&grad);
        let tangent = &grad - &x * radial;
        let tn2 = tangent.norm_squared();
        if tn2 == 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let mut y = &x - &tangent * step;
            y /= y.norm();
            let (fy, gy) = half_sq_violation(g, kappa, &y);
            if fy <= f - 1e-4 * step * tn2 {
                accepted = Some((y, fy, gy));
                break;
            }
            step *= 0.5;
        }
        let Some((y, fy, gy)) = accepted else { break };
        let decrease = f - fy;
        x = y;
        grad = gy;
        let prev = f;
        f = fy;
        step *= 1.5;
        if decrease <= 1e-10 * prev {
            break;
        }
    }
    f
}

/// The violation as a function of an unnormalized direction `y`, which
/// turns the sphere problem into an unconstrained one.
struct RadialObjective<'a> {
    g: &'a DMatrix<f64>,
    kappa: f64,
}

impl RadialObjective<'_> {
    fn eval(&self, y: &[f64]) -> (f64, DVector<f64>) {
        let y = DVector::from_column_slice(y);
        let r = y.norm();
        let x = &y / r;
        let (f, grad) = half_sq_violation(self.g, self.kappa, &x);
        let tangent = &grad - &x * x.dot(&grad);
        (f, tangent / r)
    }
}

impl CostFunction for RadialObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, y: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(y).0)
    }
}

impl Gradient for RadialObjective<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;
    fn gradient(&self, y: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(y).1.as_slice().to_vec())
    }
}

/// L-BFGS on the unnormalized direction; the result is projected back onto
/// the sphere. `None` if the solver errored.
fn quasi_newton(g: &DMatrix<f64>, kappa: f64, x0: DVector<f64>) -> Option<DVector<f64>> {
    let problem = RadialObjective { g, kappa };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
        .with_tolerance_grad(1e-12)
        .ok()?
        .with_tolerance_cost(1e-13)
        .ok()?;
    let res = Executor::new(problem, solver)
        .configure(|s| {
            s.param(x0.as_slice().to_vec())
                .max_iters(20_000)
                .target_cost(0.0)
        })
        .run()
        .ok()?;
    let y = DVector::from_vec(res.state.best_param?);
    let r = y.norm();
    (r > 0.0 && r.is_finite()).then(|| y / r)
}

/// Lowest `xi(G) / sqrt(n)` over `restarts` projected-gradient descents
/// from uniform random starts, where `xi(G) = min_{|x| = 1} |max(kappa - G x, 0)|`.
/// An upper bound on the true value.
pub fn finite_n_ground_state(inst: &FiniteNInstance, restarts: usize, seed: u64) -> Result<f64> {
    if restarts < 1 {
        return Err(Error::InvalidInput("restarts must be at least 1".into()));
    }
    let g = inst.matrix();
    Ok(ground_state_of(&g, inst, restarts, seed))
}

fn ground_state_of(g: &DMatrix<f64>, inst: &FiniteNInstance, restarts: usize, seed: u64) -> f64 {
    let best = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, 1 + r as u64);
            let x0 = random_unit(inst.n, &mut rng);
            let x1 = quasi_newton(g, inst.kappa, x0.clone()).unwrap_or(x0);
            sphere_descent(g, inst.kappa, x1, 100_000)
        })
        .reduce(|| f64::INFINITY, f64::min);
    (2.0 * best).sqrt() / (inst.n as f64).sqrt()
}

/// Certified value of the sphere problem for `kappa >= 0`, or `None` when no
/// certificate exists.
///
/// For `mu >= 0` the penalized problem
/// `min_x 0.5 |max(kappa - G x, 0)|^2 + 0.5 mu |x|^2` is convex; its minimizer
/// shrinks in norm as `mu` grows. When some `mu` puts the minimizer on the
/// unit sphere, weak duality makes it the global minimum over the sphere.
/// That fails when even the unpenalized minimizer lies strictly inside the
/// ball, which always happens at `kappa = 0` above capacity.
pub fn exact_convex_ground_state(inst: &FiniteNInstance) -> Result<Option<f64>> {
    if inst.kappa < 0.0 {
        return Err(Error::InvalidInput(format!(
            "the convex certificate needs kappa >= 0, got {}",
            inst.kappa
        )));
    }
    let g = inst.matrix();
    let scale = (inst.n as f64).sqrt();
    let gram_scale = g.norm_squared() / inst.n as f64;

    let mut lo = 1e-12 * gram_scale;
    let x_lo = penalized_minimizer(&g, inst.kappa, lo);
    let norm_lo = x_lo.norm();
    if norm_lo < 1.0 {
        // feasible on the sphere iff the scaled point is
        if norm_lo > 0.0 {
            let z = &x_lo / norm_lo;
            let (f, _) = half_sq_violation(&g, inst.kappa, &z);
            if f == 0.0 {
                return Ok(Some(0.0));
            }
        }
        return Ok(None);
    }
    let mut hi = gram_scale;
    while penalized_minimizer(&g, inst.kappa, hi).norm() > 1.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("penalty bracket diverged".into()));
        }
    }
    let mut x = x_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        x = penalized_minimizer(&g, inst.kappa, mid);
        let r = x.norm();
        if (r - 1.0).abs() < 1e-14 || hi - lo <= 1e-15 * hi {
            break;
        }
        if r > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = &x / x.norm();
    let (f, _) = half_sq_violation(&g, inst.kappa, &z);
    Ok(Some((2.0 * f).sqrt() / scale))
}

/// Semismooth Newton for `0.5 |max(kappa - G x, 0)|^2 + 0.5 mu |x|^2`.
fn penalized_minimizer(g: &DMatrix<f64>, kappa: f64, mu: f64) -> DVector<f64> {
    let n = g.ncols();
    let objective = |x: &DVector<f64>| {
        let (f, grad) = half_sq_violation(g, kappa, x);
        (f + 0.5 * mu * x.norm_squared(), grad + x * mu)
    };
    let mut x = DVector::zeros(n);
    let (mut f, mut grad) = objective(&x);
    for _ in 0..200 {
        let gx = g * &x;
        let mut h = DMatrix::<f64>::identity(n, n) * mu;
        for (i, &t) in gx.iter().enumerate() {
            if kappa - t > 0.0 {
                let row = g.row(i);
                h += row.transpose() * row;
            }
        }
        let Some(chol) = h.cholesky() else { break };
        let d = -chol.solve(&grad);
        let slope = grad.dot(&d);
        if slope >= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let y = &x + &d * t;
            let (fy, gy) = objective(&y);
            if fy <= f + 1e-4 * t * slope {
                x = y;
                f = fy;
                grad = gy;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || grad.norm() <= 1e-13 * (1.0 + f.sqrt()) {
            break;
        }
    }
    x
}

/// A random model point and parameter set strictly inside the domain of
/// `level`, for derivative checks away from any stationary point.
pub fn random_in_domain(level: Level, seed: u64) -> (ModelPoint, LiftingParams) {
    let mut rng = stream_rng(seed, 0);
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();
    let kappa = u(-2.5, -0.3);
    let alpha = u(3.0, 150.0);
    let gamma_sq = u(0.03, 0.5);
    let lp = match level {
        Level::One => LiftingParams::level_one(gamma_sq),
        Level::TwoPartial => {
            let c2 = u(0.3, 8.0);
            LiftingParams::two_partial(c2, gamma_sq, 0.5 * c2 * u(1.05, 3.0))
        }
        Level::TwoFull => {
            let (p2, q2, c2) = (u(0.05, 0.95), u(0.02, 0.9), u(0.5, 12.0));
            let gp = 0.5 * c2 * (1.0 - q2) * u(1.05, 3.0);
            LiftingParams::two_full(p2, q2, c2, gamma_sq, gp)
        }
        Level::ThreeFull => {
            let (p2, q2) = (u(0.1, 0.98), u(0.1, 0.9));
            let (p3, q3) = (p2 * u(0.05, 0.95), q2 * u(0.05, 0.95));
            let (c2, c3) = (u(1.0, 16.0), u(0.5, 6.0));
            let gp = 0.5 * (c2 * (1.0 - q2) + c3 * (q2 - q3)) * u(1.05, 3.0);
            LiftingParams::three_full(p2, p3, q2, q3, c2, c3, gamma_sq, gp)
        }
    };
    let mp = ModelPoint { kappa, alpha };
    (mp, lp)
}

/// One row of a transition scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub alpha: f64,
    pub m: usize,
    pub trials: usize,
    pub positive: usize,
    pub fraction_positive: f64,
    pub mean_ground_state: f64,
}

/// Knobs for [`transition_scan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub restarts: usize,
    pub threshold: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            restarts: 4,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Fraction of random instances whose ground state exceeds the threshold,
/// at each `alpha`. Diagnostic only: finite-n transitions sit away from
/// the asymptotic capacity.
pub fn transition_scan(
    kappa: f64,
    alphas: &[f64],
    n: usize,
    trials: usize,
    seed: u64,
    scan: ScanConfig,
) -> Result<Vec<TransitionRow>> {
    if trials < 10 {
        return Err(Error::InvalidInput(format!("trials = {trials} below 10")));
    }
    alphas
        .iter()
        .enumerate()
        .map(|(ai, &alpha)| {
            let values = (0..trials)
                .map(|t| {
                    let s = splitmix(seed ^ splitmix(((ai as u64) << 32) | t as u64));
                    let inst = FiniteNInstance::new(n, alpha, kappa, s)?;
                    finite_n_ground_state(&inst, scan.restarts, s)
                })
                .collect::<Result<Vec<f64>>>()?;
            let positive = values.iter().filter(|&&v| v > scan.threshold).count();
            Ok(TransitionRow {
                alpha,
                m: (alpha * n as f64).round() as usize,
                trials,
                positive,
                fraction_positive: positive as f64 / trials as f64,
                mean_ground_state: values.iter().sum::<f64>() / trials as f64,
            })
        })
        .collect()
}
