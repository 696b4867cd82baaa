//! Capacities of every lifting level at one threshold.
//!
//!     cargo run --example capacity -- -1.5

use nsp_capacity::{alpha_c, Level, SolverConfig};

fn main() -> nsp_capacity::Result<()> {
    let kappa: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("kappa must be a number"))
        .unwrap_or(-1.5);
    let cfg = SolverConfig::default();
    println!("kappa = {kappa}");
    for level in Level::ALL {
        let r = alpha_c(kappa, level, &cfg)?;
        println!(
            "  {:<3} alpha_c = {:>10.5}  ({}, psi {:.1e}, {} evaluations)",
            level.as_str(),
            r.alpha_c,
            r.branch.as_str(),
            r.psi_residual,
            r.diagnostics.alpha_evaluations
        );
    }
    Ok(())
}
