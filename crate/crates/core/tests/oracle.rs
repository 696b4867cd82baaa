use nsp_capacity::oracle::{
    exact_convex_ground_state, finite_n_ground_state, mc_expectation, transition_scan,
    FiniteNInstance, McKind, ScanConfig,
};
use nsp_capacity::{alpha_c, Level, SolverConfig};

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
}

fn kinds_at_level_three() -> Vec<McKind> {
    let cap = alpha_c(-1.5, Level::ThreeFull, &SolverConfig::default()).unwrap();
    McKind::NAMES
        .iter()
        .map(|n| McKind::at_point(n, cap.kappa, &cap.params, 1_000).unwrap())
        .collect()
}

#[test]
fn sampled_expectations_agree_with_quadrature() {
    let quad = SolverConfig::default().quadrature().unwrap();
    for kind in kinds_at_level_three() {
        let n = if matches!(kind, McKind::NestedLevel3 { .. }) {
            2_000
        } else {
            200_000
        };
        let est = mc_expectation(&kind, n, 3).unwrap();
        let det = kind.deterministic_value(&quad).unwrap();
        assert!(est.z_score(det) < 3.0, "{}: {est:?} vs {det}", kind.name());
    }
}

#[test]
fn standard_error_shrinks_as_root_n() {
    let kind = McKind::EMaxSq { kappa: -1.0 };
    let a = mc_expectation(&kind, 100_000, 1).unwrap();
    let b = mc_expectation(&kind, 400_000, 1).unwrap();
    let ratio = a.std_error / b.std_error;
    assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
}

#[test]
fn same_seed_same_estimate_for_any_thread_count() {
    let kind = McKind::FztLevel2 {
        c: -1.5,
        b: 2.0,
        one_minus_p: 0.5,
    };
    let a = pool(1).install(|| mc_expectation(&kind, 50_000, 9).unwrap());
    let b = pool(3).install(|| mc_expectation(&kind, 50_000, 9).unwrap());
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    let c = mc_expectation(&kind, 50_000, 10).unwrap();
    assert_ne!(a.mean, c.mean);
}

#[test]
fn bad_requests_are_rejected() {
    let kind = McKind::EMaxSq { kappa: 0.0 };
    assert!(mc_expectation(&kind, 10, 0).is_err());
    assert!(mc_expectation(&McKind::EMaxSq { kappa: f64::NAN }, 10_000, 0).is_err());
    assert!(FiniteNInstance::new(0, 2.0, 0.0, 0).is_err());
    assert!(transition_scan(-1.5, &[10.0], 20, 3, 0, ScanConfig::default()).is_err());
    let inst = FiniteNInstance::new(20, 2.0, -1.0, 0).unwrap();
    assert!(exact_convex_ground_state(&inst).is_err());
}

#[test]
fn descent_matches_the_certified_optimum() {
    for seed in 0..5 {
        let inst = FiniteNInstance::new(60, 2.0, 1.0, seed).unwrap();
        let exact = exact_convex_ground_state(&inst)
            .unwrap()
            .expect("certificate");
        let descent = finite_n_ground_state(&inst, 4, seed).unwrap();
        assert!(
            (descent - exact).abs() < 1e-6,
            "seed {seed}: {descent} vs {exact}"
        );
    }
}

#[test]
fn descent_is_thread_independent() {
    let inst = FiniteNInstance::new(50, 20.0, -1.0, 4).unwrap();
    let a = pool(1).install(|| finite_n_ground_state(&inst, 3, 2).unwrap());
    let b = pool(2).install(|| finite_n_ground_state(&inst, 3, 2).unwrap());
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn feasible_instances_have_zero_ground_state() {
    // far below capacity
    let inst = FiniteNInstance::new(60, 3.0, -1.5, 1).unwrap();
    assert_eq!(finite_n_ground_state(&inst, 2, 0).unwrap(), 0.0);
}

#[test]
fn transition_scan_rows() {
    let rows = transition_scan(-1.0, &[4.0, 40.0], 40, 10, 2, ScanConfig::default()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].m, 160);
    assert_eq!(rows[0].positive, 0);
    assert_eq!(rows[1].positive, 10);
    assert!(rows[1].mean_ground_state > 0.0);
}
