//! Capacity curves over kappa as CSV, one row per (kappa, level).
//!
//!     cargo run --example sweep > curves.csv

use nsp_capacity::capacity::write_csv;
use nsp_capacity::{sweep, Level, SolverConfig};

fn main() -> nsp_capacity::Result<()> {
    let kappas: Vec<f64> = (0..=12).map(|i| (-27 + 2 * i) as f64 / 10.0).collect();
    let levels = [
        Level::One,
        Level::TwoPartial,
        Level::TwoFull,
        Level::ThreeFull,
    ];
    let points = sweep(&kappas, &levels, &SolverConfig::default(), false);
    for p in points.iter().filter(|p| p.result.is_err()) {
        eprintln!("kappa {} level {} failed", p.kappa, p.level);
    }
    write_csv(&points, std::io::stdout().lock())
}
