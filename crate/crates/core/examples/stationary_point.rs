//! Solves the stationarity system at a fixed (kappa, alpha) and compares the
//! solved `gamma_p` and `c` with the closed forms in `p`, `q`.

use nsp_capacity::stationarity::closed_form_params;
use nsp_capacity::{solve_stationary, Level, ModelPoint, SolverConfig};

fn main() -> nsp_capacity::Result<()> {
    let mp = ModelPoint::new(-1.5, 36.4)?;
    let cfg = SolverConfig::default();
    for level in [Level::TwoFull, Level::ThreeFull] {
        let st = solve_stationary(&mp, level, &cfg)?;
        let lp = &st.params;
        println!(
            "level {level}: psi = {:.6e}, largest residual {:.1e}",
            st.psi,
            st.residual.max_abs()
        );
        println!("  p = {:?}\n  q = {:?}\n  c = {:?}", lp.p, lp.q, lp.c);
        println!(
            "  gamma_sq = {:.6}, gamma_sq_p = {:.6}",
            lp.gamma_sq, lp.gamma_sq_p
        );
        let (gp, c) = closed_form_params(&lp.p, &lp.q)?;
        println!("  closed form: gamma_sq_p = {gp:.6}, c = {c:?}");
    }
    Ok(())
}
