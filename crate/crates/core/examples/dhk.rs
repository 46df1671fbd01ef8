//! Exhaustive exact check of the combinatorial identity
//! sum over permutations of the running maximum against the partial sums.

use fermion_clt::determinantal::{dhk_check, dhk_sides};

fn main() -> fermion_clt::Result<()> {
    let (lhs, rhs) = dhk_sides(&[2, -1, -1]);
    println!("(2, -1, -1): {lhs} = {rhs}");
    for n in 2..=6 {
        let out = dhk_check(n, 3)?;
        println!("n = {n}: {} tuples, holds = {}", out.tuples_checked, out.holds);
    }
    Ok(())
}
