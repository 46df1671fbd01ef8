//! Log-Laplace transform of X(f) as a Fredholm determinant, its cumulants,
//! and the Upsilon expansion of the gap to the first-order term.

use fermion_clt::classical::Dynamics;
use fermion_clt::determinantal::{cumulants, log_laplace, szego_residual, upsilon_coefficients, GridOperator};
use fermion_clt::experiments::fermi_projector;
use fermion_clt::potential::PotentialSpec;
use fermion_clt::schrodinger::build_grid;
use fermion_clt::test_function::TestFunction;
use num_complex::Complex64;

fn main() -> fermion_clt::Result<()> {
    let (mu, hbar) = (1.0, 0.02);
    let grid = build_grid(-2.0, 2.0, 4000)?;
    let p = fermi_projector(&PotentialSpec::Harmonic, &grid, hbar, mu, 2.0)?;
    let f = TestFunction::identity();
    let sigma2 = Dynamics::new(&PotentialSpec::Harmonic, (-2.0, 2.0)).predicted_variance_fourier(&f, mu)?;

    for eta in [0.1, 0.2, 0.3] {
        let l = log_laplace(&p, &f, Complex64::new(eta, 0.0))?;
        println!("eta {eta}: log E e^(eta X) = {:.8}  eta^2 Sigma^2 / 2 = {:.8}", l.re, 0.5 * eta * eta * sigma2);
    }
    let residual = szego_residual(&p, &f, sigma2, &[-0.3, -0.15, 0.15, 0.3])?;
    println!("Szego residual {residual:.3e}");

    let bump = TestFunction::GaussianBump { center: 0.3, width: 0.4, amplitude: 1.0 };
    let c = cumulants(&p, &bump, "bump", 0.05)?;
    println!("bump: k2 {:.6}  k3 {:.2e}  k4 {:.2e}", c.kappa2_exact, c.kappa3, c.kappa4);

    let a = GridOperator::laplace_symbol(&p, &f, Complex64::new(0.2, 0.0));
    let ups = upsilon_coefficients(&p, &a, Some(8))?;
    for t in &ups.terms {
        println!("n = {}: |bracket| {:.3e}  bound {:.3e}", t.n, t.bracket.norm(), t.bound);
    }
    Ok(())
}
