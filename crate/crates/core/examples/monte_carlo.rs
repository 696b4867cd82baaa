//! Monte Carlo estimates of each expectation against the deterministic
//! evaluators, at the level-3 stationary point for kappa = -1.5.

use nsp_capacity::oracle::{mc_expectation, McKind};
use nsp_capacity::{alpha_c, Level, SolverConfig};

fn main() -> nsp_capacity::Result<()> {
    let cfg = SolverConfig::default();
    let quad = cfg.quadrature()?;
    let cap = alpha_c(-1.5, Level::ThreeFull, &cfg)?;
    for name in McKind::NAMES {
        let kind = McKind::at_point(name, cap.kappa, &cap.params, 2_000)?;
        let samples = if name == "nested_level3" {
            4_000
        } else {
            1_000_000
        };
        let est = mc_expectation(&kind, samples, 11)?;
        let det = kind.deterministic_value(&quad)?;
        println!(
            "{name:<17} {:.7} +- {:.1e}  vs {det:.7}  ({:.2} s.e.)",
            est.mean,
            est.std_error,
            est.z_score(det)
        );
    }
    Ok(())
}
