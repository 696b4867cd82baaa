use nsp_capacity::capacity::{alpha_c_r1, partial_branch_slope};
use nsp_capacity::free_energy::{
    e_max_sq, f_zt, gamma_sq_r1, psi, psi_r1, psi_r2_full, psi_r2_partial, psi_r3_full, Quadrature,
    SphereIntegrand,
};
use nsp_capacity::oracle::random_in_domain;
use nsp_capacity::specfun::{normal_pdf, normal_sf};
use nsp_capacity::stationarity::gamma_sq_p_partial;
use nsp_capacity::{Level, LiftingParams, ModelPoint};
use proptest::prelude::*;

fn e_max_sq_closed(kappa: f64) -> f64 {
    (1.0 + kappa * kappa) * normal_sf(-kappa) + kappa * normal_pdf(kappa)
}

#[test]
fn level_one_energy_vanishes_at_its_capacity() {
    for kappa in [-2.5, -1.5, -0.5, 0.0, 0.7] {
        let a = alpha_c_r1(kappa);
        let v = psi_r1(&ModelPoint::new(kappa, a).unwrap());
        assert!(v.abs() < 1e-13, "kappa {kappa}: {v}");
    }
    assert!((alpha_c_r1(0.0) - 2.0).abs() < 1e-14);
}

#[test]
fn e_max_sq_matches_direct_quadrature() {
    // integrate (kappa + g)^2 phi(g) over g > -kappa with the trapezoid rule
    for kappa in [-2.0, -1.0, 0.0, 1.5] {
        let (lo, hi, n) = (-kappa, 12.0, 200_000);
        let h = (hi - lo) / n as f64;
        let f = |g: f64| (kappa + g) * (kappa + g) * normal_pdf(g);
        let s: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum::<f64>() + 0.5 * (f(lo) + f(hi));
        assert!((s * h - e_max_sq(kappa)).abs() < 1e-9);
        assert!((e_max_sq_closed(kappa) - e_max_sq(kappa)).abs() < 1e-14);
    }
}

#[test]
fn weakly_damped_sphere_integrand_is_one() {
    for c in [-3.0, 0.0, 2.0] {
        let v = f_zt(&SphereIntegrand::from_mean(c, 1e-12, 0.7)).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }
    assert!(f_zt(&SphereIntegrand::from_mean(0.0, 0.0, 0.7)).is_err());
}

#[test]
fn energy_rejects_points_outside_the_domain() {
    let mp = ModelPoint::new(-1.5, 36.57).unwrap();
    let quad = Quadrature::default();
    assert!(psi_r2_partial(&mp, 3.0, 0.2, 1.0).is_err());
    assert!(psi(
        &mp,
        &LiftingParams::two_full(1.2, 0.1, 3.0, 0.1, 2.0),
        &quad
    )
    .is_err());
    assert!(ModelPoint::new(-1.0, -3.0).is_err());
    assert!(ModelPoint::new(f64::NAN, 3.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn level_three_collapses_to_level_two(seed in any::<u64>(), ratio in 0.2f64..3.0) {
        let (mp, two) = random_in_domain(Level::TwoFull, seed);
        let quad = Quadrature::default();
        let (p2, q2, c2) = (two.p2(), two.q2(), two.c2());
        let three = LiftingParams::three_full(p2, p2, q2, q2, c2, ratio * c2, two.gamma_sq, two.gamma_sq_p);
        let a = psi_r3_full(&mp, &three, &quad).unwrap();
        let b = psi_r2_full(&mp, &two, &quad.outer).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn level_two_at_zero_overlap_is_the_partial_level(seed in any::<u64>()) {
        let (mp, lp) = random_in_domain(Level::TwoPartial, seed);
        let quad = Quadrature::default();
        let full = LiftingParams::two_full(0.0, 0.0, lp.c2(), lp.gamma_sq, lp.gamma_sq_p);
        let a = psi(&mp, &full, &quad).unwrap();
        let b = psi_r2_partial(&mp, lp.c2(), lp.gamma_sq, lp.gamma_sq_p).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    // the gap to level 1 is linear in c2 with a kappa-only slope
    #[test]
    fn partial_level_leaves_level_one_linearly(seed in any::<u64>()) {
        let (mp, _) = random_in_domain(Level::TwoPartial, seed);
        let c2 = 1e-5;
        let v = psi_r2_partial(&mp, c2, gamma_sq_r1(&mp), gamma_sq_p_partial(c2)).unwrap();
        let gap = v - psi_r1(&mp);
        // rounding in ln f_zt at tiny damping dominates the second-order term
        prop_assert!((gap - c2 * partial_branch_slope(mp.kappa)).abs() < 1e-3 * c2, "gap {}", gap);
    }
}
