//! The limiting variance of a linear statistic by three classical routes,
//! against the exact finite-N variance.

use fermion_clt::classical::Dynamics;
use fermion_clt::determinantal::exact_variance;
use fermion_clt::experiments::fermi_projector;
use fermion_clt::potential::PotentialSpec;
use fermion_clt::schrodinger::build_grid;
use fermion_clt::test_function::TestFunction;

fn main() -> fermion_clt::Result<()> {
    let mu = 1.0;
    let domain = (-2.0, 2.0);
    let f = TestFunction::GaussianBump { center: 0.3, width: 0.4, amplitude: 1.0 };
    for potential in [PotentialSpec::Harmonic, PotentialSpec::Quartic] {
        let dynamics = Dynamics::new(&potential, domain);
        let fourier = dynamics.predicted_variance_fourier(&f, mu)?;
        let devinatz = dynamics.devinatz_variance(&f, mu)?;
        let gff = dynamics.gff_variance(&f, mu)?;
        // quartic: Var - Sigma^2 stalls unless N hbar tracks g(mu), see configs/quartic.toml
        println!("{potential:?}: fourier {fourier:.8}  devinatz {devinatz:.8}  gff {gff:.8}");
        for (hbar, n) in [(0.04, 2000), (0.02, 4000), (0.01, 8000)] {
            let grid = build_grid(domain.0, domain.1, n)?;
            let p = fermi_projector(&potential, &grid, hbar, mu, 2.0)?;
            let v = exact_variance(&p, &f);
            println!("  hbar {hbar}: N = {:3}  Var = {v:.8}  gap {:.2e}", p.rank(), (v - fourier).abs());
        }
    }
    Ok(())
}
