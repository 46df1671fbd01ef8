//! Matrix elements of f in the eigenbasis near the Fermi level against the
//! Fourier coefficients of f along the classical flow.

use fermion_clt::classical::Dynamics;
use fermion_clt::determinantal::toeplitz_deviation;
use fermion_clt::potential::PotentialSpec;
use fermion_clt::schrodinger::{build_grid, solve, Truncation};
use fermion_clt::test_function::TestFunction;

fn main() -> fermion_clt::Result<()> {
    let mu = 1.0;
    let domain = (-2.0, 2.0);
    let dynamics = Dynamics::new(&PotentialSpec::Harmonic, domain);
    let f = TestFunction::identity();
    for (hbar, n) in [(0.02, 4000), (0.01, 8000)] {
        let grid = build_grid(domain.0, domain.1, n)?;
        let cap = mu + 0.5;
        let dec = solve(&grid, &PotentialSpec::Harmonic, hbar, cap, Truncation::new(cap))?;
        let r = toeplitz_deviation(&dec, &dynamics, &f, mu, 2, 4)?;
        println!("hbar {hbar}: window {}..{}  max deviation {:.3e}", r.window_start, r.window_end, r.max_deviation);
        for (j, k, a, coeff) in r.entries.iter().filter(|e| e.0 == r.window_start + 4) {
            println!("  <{j}|x|{k}> = {a:+.6}  flow coefficient {coeff:+.6}");
        }
    }
    Ok(())
}
