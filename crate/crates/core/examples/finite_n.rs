//! Finite-size ground states of random instances, a certified value where
//! the problem allows one, and a small scan across alpha.

use nsp_capacity::oracle::{
    exact_convex_ground_state, finite_n_ground_state, transition_scan, FiniteNInstance, ScanConfig,
};

fn main() -> nsp_capacity::Result<()> {
    for seed in 0..3 {
        let inst = FiniteNInstance::new(100, 2.0, 1.0, seed)?;
        let descent = finite_n_ground_state(&inst, 8, seed)?;
        let exact = exact_convex_ground_state(&inst)?;
        println!("kappa 1, alpha 2, seed {seed}: descent {descent:.10}, certified {exact:?}");
    }

    let alphas = [10.0, 25.0, 40.0, 55.0];
    for row in transition_scan(-1.5, &alphas, 60, 10, 5, ScanConfig::default())? {
        println!(
            "kappa -1.5, n 60, alpha {:>4}: {}/{} instances infeasible",
            row.alpha, row.positive, row.trials
        );
    }
    Ok(())
}
