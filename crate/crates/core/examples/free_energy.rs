//! Free energies at the published second-level point and the identities
//! that tie the levels together.

use nsp_capacity::free_energy::{
    psi, psi_r1, psi_r2_full, psi_r2_partial, psi_r3_full, Quadrature,
};
use nsp_capacity::{LiftingParams, ModelPoint};

fn main() -> nsp_capacity::Result<()> {
    let quad = Quadrature::default();
    let mp = ModelPoint::new(-1.5, 36.57)?;

    let two = LiftingParams::two_full(0.4747, 0.0981, 3.6835, 0.1324, 1.8884);
    println!(
        "level 2f at the published point: psi = {:.3e}",
        psi_r2_full(&mp, &two, &quad.outer)?
    );

    // a level-3 chain whose upper links coincide is the level-2 energy
    let collapsed =
        LiftingParams::three_full(0.4747, 0.4747, 0.0981, 0.0981, 3.6835, 5.0, 0.1324, 1.8884);
    println!(
        "collapsed level 3 minus level 2: {:.1e}",
        psi_r3_full(&mp, &collapsed, &quad)? - psi_r2_full(&mp, &two, &quad.outer)?
    );

    let partial = LiftingParams::two_full(0.0, 0.0, 2.532, 0.1737, 1.4397);
    println!(
        "level 2f at p2 = q2 = 0 minus level 2p: {:.1e}",
        psi(&mp, &partial, &quad)? - psi_r2_partial(&mp, 2.532, 0.1737, 1.4397)?
    );

    let g = 0.5 * (mp.alpha * nsp_capacity::free_energy::e_max_sq(mp.kappa)).sqrt();
    println!(
        "level 2p at c2 = 1e-6 minus level 1: {:.1e}",
        psi_r2_partial(&mp, 1e-6, g, 0.5 + 0.25e-6)? - psi_r1(&mp)
    );
    Ok(())
}
