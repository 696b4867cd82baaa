//! The special-function layer: erfc in both tails, Gauss-Hermite moments,
//! and the log-domain power mean used by nested expectations.

use nsp_capacity::specfun::{erfc, erfcx, gauss_hermite, log_weighted_power_mean};

fn main() -> nsp_capacity::Result<()> {
    for x in [-3.0, 0.0, 1.5 / 2f64.sqrt(), 5.0, 26.0] {
        println!(
            "erfc({x:>7.4}) = {:.16e}   erfcx = {:.16e}",
            erfc(x),
            erfcx(x)
        );
    }

    for order in [8, 60, 256] {
        let g = gauss_hermite(order)?;
        let m4 = g.expect(|u| u.powi(4));
        let m2 = g.expect(|u| u * u);
        println!("order {order:>3}: E u^2 = {m2:.15}, E u^4 = {m4:.15}");
    }

    // ln E[f^theta] for f = exp(u) and theta = 0.3 is 0.045 exactly
    let g = gauss_hermite(60)?;
    let v = log_weighted_power_mean(g.nodes(), g.weights(), 0.3)?;
    println!("ln E exp(0.3 u) = {v:.15}");
    Ok(())
}
