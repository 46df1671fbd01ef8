//! Exact samples of the determinantal process, compared with the Fredholm
//! predictions for the moments of X(x).

use fermion_clt::experiments::fermi_projector;
use fermion_clt::potential::PotentialSpec;
use fermion_clt::sampling::{monte_carlo_clt, SampleBatch};
use fermion_clt::schrodinger::build_grid;
use fermion_clt::test_function::TestFunction;

fn main() -> fermion_clt::Result<()> {
    let grid = build_grid(-2.0, 2.0, 4000)?;
    let p = fermi_projector(&PotentialSpec::Harmonic, &grid, 0.02, 1.0, 2.0)?;
    let batch = SampleBatch::generate(&p, 2000, 7)?;
    let first: Vec<String> = batch.positions(0).take(5).map(|x| format!("{x:.4}")).collect();
    println!("{} samples of {} points; first sample starts {}", batch.len(), batch.rank, first.join(" "));

    let m = monte_carlo_clt(&p, &TestFunction::identity(), &batch, Some(0.25));
    println!("mean     {:+.4} +- {:.4}  exact {:+.4}", m.mean, m.se_mean, m.exact_mean);
    println!("variance {:.4} +- {:.4}  exact {:.4}", m.variance, m.se_variance, m.exact_variance);
    println!("skewness {:+.4} +- {:.4}", m.skewness, m.se_skewness);
    println!("kurtosis {:+.4} +- {:.4}", m.excess_kurtosis, m.se_kurtosis);
    Ok(())
}
