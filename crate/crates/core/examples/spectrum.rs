//! Harmonic levels from the finite-difference Hamiltonian, the Fermi
//! projector and its rank against the Weyl count.

use fermion_clt::experiments::fermi_projector;
use fermion_clt::potential::PotentialSpec;
use fermion_clt::schrodinger::{build_grid, solve, weyl_count, Truncation};

fn main() -> fermion_clt::Result<()> {
    let hbar = 0.05;
    let grid = build_grid(-8.0, 8.0, 2047)?;
    let dec = solve(&grid, &PotentialSpec::Harmonic, hbar, 1.0, Truncation::new(1.0))?;
    for (k, l) in dec.eigenvalues().iter().take(5).enumerate() {
        let exact = (2 * k + 1) as f64 * hbar;
        println!("level {k}: {l:.10}  exact {exact:.10}  error {:.2e}", (l - exact).abs());
    }

    let mu = 1.0;
    for (hbar, n) in [(0.04, 2000), (0.02, 4000), (0.01, 8000)] {
        let grid = build_grid(-2.0, 2.0, n)?;
        let p = fermi_projector(&PotentialSpec::Harmonic, &grid, hbar, mu, 2.0)?;
        let weyl = weyl_count(&PotentialSpec::Harmonic, mu, hbar, (-2.0, 2.0));
        println!(
            "hbar {hbar}: N = {}  Weyl {weyl:.3}  ||P^2 - P|| = {:.1e}",
            p.rank(),
            p.idempotency_residual()
        );
    }
    Ok(())
}
