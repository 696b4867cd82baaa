//! Analytic derivatives of the free energy against central differences,
//! at a stationary point and at random points of the domain.

use nsp_capacity::oracle::random_in_domain;
use nsp_capacity::stationarity::check_gradient;
use nsp_capacity::{solve_stationary, Level, ModelPoint, SolverConfig};

fn main() -> nsp_capacity::Result<()> {
    let cfg = SolverConfig::default();
    let quad = cfg.quadrature()?;
    let mp = ModelPoint::new(-1.5, 36.4)?;
    let st = solve_stationary(&mp, Level::ThreeFull, &cfg)?;
    let chk = check_gradient(&mp, &st.params, &quad, cfg.fd_step)?;
    for ((n, a), e) in chk.names.iter().zip(&chk.analytic).zip(&chk.rel_error) {
        println!("{n:>11}: analytic {a:>12.3e}, rel error {e:.1e}");
    }

    for level in [Level::TwoPartial, Level::TwoFull, Level::ThreeFull] {
        let mut worst = 0.0f64;
        for seed in 0..25 {
            let (mp, lp) = random_in_domain(level, seed);
            worst = worst.max(check_gradient(&mp, &lp, &quad, cfg.fd_step)?.max_rel_error());
        }
        println!("level {level}: worst rel error over 25 random points {worst:.1e}");
    }
    Ok(())
}
