//! Double well below the barrier: separation of the well spectra, the
//! projector decomposition and additivity of the variance.

use fermion_clt::multicut::{
    build_well_family, multicut_variance_check, projector_decomposition_error, resonance_scan, separation_report,
};
use fermion_clt::potential::PotentialSpec;
use fermion_clt::schrodinger::build_grid;
use fermion_clt::test_function::TestFunction;

fn main() -> fermion_clt::Result<()> {
    let (mu, eps, domain) = (-0.05, 0.01, (-1.6, 1.6));
    let base = PotentialSpec::DoubleWell;

    let grid = build_grid(domain.0, domain.1, 1600)?;
    let symmetric = build_well_family(&base, mu, &[0.0, 0.0], eps, domain)?;
    let sep = separation_report(&symmetric, &grid, 0.02)?;
    println!("w = 0: cross gap {:.2e} against threshold {:.1e}", sep.min_cross_gap, sep.threshold);

    let (summary, _) = resonance_scan(&base, mu, eps, domain, &[(0.02, grid.clone())], 50, 1)?;
    println!("pass rate over 50 draws: {:.2}", summary[0].pass_rate);

    let fam = build_well_family(&base, mu, &[0.0042, -0.0061], eps, domain)?;
    for (hbar, n) in [(0.02, 1600), (0.01, 3200)] {
        let grid = build_grid(domain.0, domain.1, n)?;
        let d = projector_decomposition_error(&fam, &grid, hbar)?;
        let a = multicut_variance_check(&fam, &grid, hbar, &TestFunction::identity(), 0.2)?;
        println!(
            "hbar {hbar}: N = {} = {:?}  HS error {:.2e}  Var {:.5}  sum Sigma_j^2 {:.5}  log-Laplace gap {:.1e}",
            d.rank_full,
            d.ranks,
            d.error,
            a.variance_full,
            a.sigma2_wells.iter().sum::<f64>(),
            a.log_laplace_gap
        );
    }
    Ok(())
}
