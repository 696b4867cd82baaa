//! Recomputes the published tables and prints the worst cell of each.

use nsp_capacity::golden::{reproduce, TABLES};
use nsp_capacity::SolverConfig;

fn main() -> nsp_capacity::Result<()> {
    let cfg = SolverConfig::default();
    for t in TABLES {
        let rep = reproduce(t, &cfg)?;
        let worst = rep
            .cells
            .iter()
            .filter_map(|c| c.rel_error.map(|e| (e, c)))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        print!("table {t}: {} cells, ", rep.cells.len());
        match worst {
            Some((e, c)) => println!(
                "worst {} at kappa {} level {} ({:.2}%, tolerance {:.1}%)",
                c.quantity,
                c.kappa,
                c.level,
                100.0 * e,
                100.0 * c.tolerance
            ),
            None => println!("nothing computed"),
        }
        for c in rep.failures() {
            println!(
                "    out of tolerance: {} {} {}: published {} computed {:?}",
                c.kappa, c.level, c.quantity, c.published, c.computed
            );
        }
    }
    Ok(())
}
