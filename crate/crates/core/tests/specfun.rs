use nsp_capacity::specfun::{erfc, erfcx, gauss_hermite, ln_erfc, log_weighted_power_mean};
use proptest::prelude::*;

// x, erfc(x), erfcx(x) to 20 digits from an arbitrary-precision evaluation
#[allow(clippy::excessive_precision)]
const REFERENCE: &[(f64, f64, f64)] = &[
    (-6.0, 1.9999999999999999785, 8622463094230390.3615),
    (-3.0, 1.9999779095030014146, 16205.988853999586625),
    (-1.0606602, 1.866385607800212144, 5.7488727398750722948),
    (-0.5, 1.5204998778130465377, 1.9523604891825570933),
    (-0.47, 1.4937450508860821124, 1.8629968922548011256),
    (-0.001, 1.0011283787909692364, 1.0011293799198485917),
    (0.0, 1.0, 1.0),
    (1e-08, 0.99999998871620832904, 0.99999998871620842904),
    (0.3, 0.67137324054087258381, 0.73459933456765515237),
    (0.47, 0.50625494911391788759, 0.631400516660034325),
    (0.4699, 0.50634542645283617906, 0.63145400672856590904),
    (0.5, 0.47950012218695346232, 0.61569034419292587487),
    (0.75, 0.2888443663464848684, 0.50693765029314480579),
    (1.0606602, 0.13361439219978785604, 0.41156132674945158228),
    (2.0, 0.0046777349810472658379, 0.25539567631050574387),
    (3.9, 3.4792248597231767129e-8, 0.14031418160068970328),
    (4.0, 1.5417257900280018852e-8, 0.13699945762506138989),
    (4.1, 6.7000276540849184417e-9, 0.13383411641865221245),
    (5.5, 7.3578479179743980631e-15, 0.10096221839949908823),
    (8.0, 1.122429717298292708e-29, 0.069985166200880927723),
    (10.0, 2.088487583762544757e-45, 0.056140992743822585858),
    (15.0, 7.2129941724512066666e-100, 0.037529606388505765746),
    (26.5, 2.2109076642637342759e-307, 0.021275046685371105955),
    (27.0, 5.237048923789255685e-319, 0.020881607990420940674),
];

#[test]
fn erfc_matches_reference_values() {
    for &(x, ec, _) in REFERENCE {
        let got = erfc(x);
        let rel = ((got - ec) / ec).abs();
        // subnormal results carry fewer significant bits
        let tol = 1e-14f64.max(4.0 * f64::from_bits(1) / ec);
        assert!(
            rel < tol,
            "erfc({x}) = {got:e}, expected {ec:e}, rel {rel:e}"
        );
    }
}

#[test]
fn erfcx_matches_reference_values() {
    for &(x, _, ex) in REFERENCE {
        let got = erfcx(x);
        let rel = ((got - ex) / ex).abs();
        assert!(
            rel < 1e-14,
            "erfcx({x}) = {got:e}, expected {ex:e}, rel {rel:e}"
        );
    }
}

#[test]
fn ln_erfc_stays_finite_past_underflow() {
    // erfc(40) underflows; its log is -1600 - ln(40 sqrt(pi)) + O(1e-4)
    let v = ln_erfc(40.0);
    let asym = -1600.0 - (40.0 * std::f64::consts::PI.sqrt()).ln() - 1.0 / 3200.0;
    assert!((v - asym).abs() < 1e-6, "{v} vs {asym}");
}

fn double_factorial(k: u32) -> f64 {
    (1..=k).rev().step_by(2).map(f64::from).product()
}

#[test]
fn gauss_hermite_is_exact_for_low_degree_moments() {
    for order in [2usize, 5, 16, 60, 128, 512] {
        let g = gauss_hermite(order).unwrap();
        assert_eq!(g.order(), order);
        let s: f64 = g.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        let max_deg = (2 * order - 1).min(24) as u32;
        for k in (2..=max_deg).step_by(2) {
            let m = g.expect(|u| u.powi(k as i32));
            let exact = double_factorial(k - 1);
            assert!(
                ((m - exact) / exact).abs() < 1e-12,
                "order {order} moment {k}: {m} vs {exact}"
            );
        }
        let odd = g.expect(|u| u.powi(3));
        assert!(odd.abs() < 1e-12);
    }
}

#[test]
fn gauss_hermite_rejects_bad_orders() {
    assert!(gauss_hermite(0).is_err());
    assert!(gauss_hermite(1).is_err());
    assert!(gauss_hermite(513).is_err());
}

#[test]
fn gaussian_moment_generating_function() {
    let g = gauss_hermite(60).unwrap();
    for t in [0.05, 0.3, 1.0, 2.5] {
        let v = log_weighted_power_mean(g.nodes(), g.weights(), t).unwrap();
        assert!((v - 0.5 * t * t).abs() < 1e-12, "t {t}: {v}");
    }
}

fn log_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..5.0, 2..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // (1/t) ln E f^t grows with t
    #[test]
    fn power_mean_is_monotone_in_exponent(l in log_values(), t1 in 0.05f64..3.0, dt in 0.01f64..3.0) {
        let w = vec![1.0 / l.len() as f64; l.len()];
        let a = log_weighted_power_mean(&l, &w, t1).unwrap() / t1;
        let b = log_weighted_power_mean(&l, &w, t1 + dt).unwrap() / (t1 + dt);
        prop_assert!(b >= a - 1e-12 * a.abs().max(1.0));
    }

    // ln E f^t >= t E ln f
    #[test]
    fn power_mean_dominates_geometric_mean(l in log_values(), t in 0.01f64..5.0) {
        let w = vec![1.0 / l.len() as f64; l.len()];
        let lhs = log_weighted_power_mean(&l, &w, t).unwrap();
        let rhs = t * l.iter().sum::<f64>() / l.len() as f64;
        prop_assert!(lhs >= rhs - 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn power_mean_survives_extreme_logs(shift in -800.0f64..800.0, t in 0.1f64..4.0) {
        let l = [shift, shift - 1.0, shift - 50.0];
        let w = [0.5, 0.3, 0.2];
        let v = log_weighted_power_mean(&l, &w, t).unwrap();
        prop_assert!(v.is_finite());
        let plain = (0.5 + 0.3 * (-t).exp() + 0.2 * (-50.0 * t).exp()).ln() + t * shift;
        prop_assert!((v - plain).abs() < 1e-9 * plain.abs().max(1.0));
    }

    #[test]
    fn erfc_reflection(x in -6.0f64..6.0) {
        prop_assert!((erfc(x) + erfc(-x) - 2.0).abs() < 1e-15);
    }
}
