//! Strong Szego limit for Toeplitz determinants and the matching CUE
//! Fredholm determinant.

use fermion_clt::reference::{cue_log_laplace, szego_sweep, CircleSymbol};

fn main() {
    let symbol = CircleSymbol::cosine(0.0, 1.0, 1);
    for row in szego_sweep(&symbol, &[1, 2, 4, 8, 16, 32, 64]) {
        let cue = cue_log_laplace(&symbol, row.n, 512);
        println!(
            "N = {:3}: log det T_N {:.12}  limit {:.12}  residual {:.2e}  CUE {:.12}",
            row.n, row.log_det, row.prediction, row.residual, cue
        );
    }
}
