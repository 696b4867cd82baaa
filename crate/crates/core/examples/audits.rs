//! The level-ordering audit, the c-maximization check and the threshold
//! below which the partial second level departs from the first.

use nsp_capacity::capacity::{modulo_m_check, ordering_audit};
use nsp_capacity::{kappa_c, Level, SolverConfig};

fn main() -> nsp_capacity::Result<()> {
    let cfg = SolverConfig::default();
    println!("partial lifting helps below kappa = {:.5}", kappa_c()?);
    for kappa in [-2.0, -1.0, -0.5] {
        let o = ordering_audit(kappa, &cfg)?;
        println!(
            "kappa {kappa}: capacities {:.4?}, ordered: {}",
            o.alphas, o.pass
        );
    }
    for level in [Level::TwoFull, Level::ThreeFull] {
        let r = modulo_m_check(-1.5, level, &cfg, 0.1, 5)?;
        println!(
            "level {level}: {} perturbed c, largest psi excess {:.2e}, maximum: {}",
            r.evaluated, r.max_excess, r.pass
        );
    }
    Ok(())
}
