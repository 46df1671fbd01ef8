//! Symmetric tridiagonal eigensolver: Sturm-sequence bisection for the
//! eigenvalues, inverse iteration with in-cluster reorthogonalization for the
//! eigenvectors.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SymTridiagonal {
    pub diagonal: Vec<f64>,
    /// `off_diagonal[i]` couples rows `i` and `i + 1`.
    pub off_diagonal: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diagonal: Vec<f64>, off_diagonal: Vec<f64>) -> Self {
        assert_eq!(diagonal.len(), off_diagonal.len() + 1);
        SymTridiagonal { diagonal, off_diagonal }
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let left = if i > 0 { self.off_diagonal[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < n { self.off_diagonal[i].abs() } else { 0.0 };
            lo = lo.min(self.diagonal[i] - left - right);
            hi = hi.max(self.diagonal[i] + left + right);
        }
        (lo, hi)
    }

    pub fn norm_one(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs())
    }

    /// Number of eigenvalues strictly below `x` (Sturm count of the `LDL^T`
    /// pivots of `T - x`).
    pub fn count_below(&self, x: f64) -> usize {
        let pivmin = f64::MIN_POSITIVE.max(
            f64::EPSILON * f64::EPSILON * self.off_diagonal.iter().fold(1.0f64, |m, e| m.max(e * e)),
        );
        let mut count = 0;
        let mut q = self.diagonal[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.len() {
            let e = self.off_diagonal[i - 1];
            q = self.diagonal[i] - x - e * e / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k`-th smallest eigenvalue (0-based), bisected to full precision.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let pad = f64::EPSILON * lo.abs().max(hi.abs()) * 4.0 + f64::MIN_POSITIVE;
        lo -= pad;
        hi += pad;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// All eigenvalues `<= cap`, ascending.
    pub fn eigenvalues_below(&self, cap: f64) -> Vec<f64> {
        let m = self.count_below(cap.next_up());
        (0..m).into_par_iter().map(|k| self.eigenvalue(k)).collect()
    }

    /// Eigenvector for the (already accurate) eigenvalue `lambda` by inverse
    /// iteration, orthogonalized against `cluster` (unit vectors whose
    /// eigenvalues are close to `lambda`).
    pub fn inverse_iteration(&self, lambda: f64, cluster: &[&[f64]]) -> Result<Vec<f64>> {
        let n = self.len();
        let norm = self.norm_one();
        let mut shift = lambda;
        let lu = loop {
            match TridiagonalLu::factor(self, shift) {
                Some(lu) => break lu,
                None => shift += f64::EPSILON * norm,
            }
        };
        let mut v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * ((i as f64 * 0.7548776662466927).fract() - 0.5))
            .collect();
        normalize(&mut v);
        let tol = 1e3 * f64::EPSILON * norm * (n as f64).sqrt();
        for _ in 0..8 {
            for u in cluster {
                project_out(&mut v, u);
            }
            let mut y = lu.solve(&v);
            for u in cluster {
                project_out(&mut y, u);
            }
            if !normalize(&mut y) {
                return Err(Error::EigenNotConverged(format!("inverse iteration collapsed at {lambda}")));
            }
            v = y;
            if self.residual(&v, lambda) <= tol {
                for u in cluster {
                    project_out(&mut v, u);
                }
                normalize(&mut v);
                return Ok(v);
            }
        }
        Err(Error::EigenNotConverged(format!(
            "inverse iteration for eigenvalue {lambda} exceeded its iteration cap (residual {:e})",
            self.residual(&v, lambda)
        )))
    }

    /// `|| T v - lambda v ||_2`
    pub fn residual(&self, v: &[f64], lambda: f64) -> f64 {
        let n = self.len();
        let mut s = 0.0;
        for i in 0..n {
            let mut r = (self.diagonal[i] - lambda) * v[i];
            if i > 0 {
                r += self.off_diagonal[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                r += self.off_diagonal[i] * v[i + 1];
            }
            s += r * r;
        }
        s.sqrt()
    }

    /// Eigenpairs with eigenvalue `<= cap`; eigenvectors are the columns of the
    /// returned matrix, unit length in the Euclidean norm.
    pub fn eigenpairs_below(&self, cap: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let values = self.eigenvalues_below(cap);
        let n = self.len();
        let ortol = 1e-3 * self.norm_one();
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(values.len());
        let mut cluster_start = 0;
        for (k, &lambda) in values.iter().enumerate() {
            if k > 0 && lambda - values[k - 1] > ortol {
                cluster_start = k;
            }
            let cluster: Vec<&[f64]> = vectors[cluster_start..k].iter().map(|v| v.as_slice()).collect();
            let v = self.inverse_iteration(lambda, &cluster)?;
            vectors.push(v);
        }
        let mut mat = DMatrix::zeros(n, values.len());
        for (j, v) in vectors.iter().enumerate() {
            mat.column_mut(j).copy_from_slice(v);
        }
        Ok((values, mat))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_out(v: &mut [f64], u: &[f64]) {
    let c = dot(v, u);
    v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
}

fn normalize(v: &mut [f64]) -> bool {
    let s = dot(v, v).sqrt();
    if !(s > 0.0) || !s.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= s);
    true
}

/// `T - shift I = P L U` with partial pivoting; `U` has two superdiagonals.
struct TridiagonalLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    multipliers: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagonalLu {
    fn factor(t: &SymTridiagonal, shift: f64) -> Option<Self> {
        let n = t.len();
        let mut d: Vec<f64> = t.diagonal.iter().map(|a| a - shift).collect();
        let mut du: Vec<f64> = t.off_diagonal.clone();
        let mut dl: Vec<f64> = t.off_diagonal.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut multipliers = vec![0.0; n.saturating_sub(1)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        let tiny = f64::EPSILON * t.norm_one().max(f64::MIN_POSITIVE);
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let m = dl[i] / d[i];
                multipliers[i] = m;
                d[i + 1] -= m * du[i];
            } else {
                let m = d[i] / dl[i];
                multipliers[i] = m;
                swapped[i] = true;
                d[i] = dl[i];
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - m * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -m * du[i + 1];
                }
            }
            dl[i] = 0.0;
        }
        if n > 0 && d[n - 1] == 0.0 {
            d[n - 1] = tiny;
        }
        if d.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some(TridiagonalLu { u0: d, u1: du, u2: du2, multipliers, swapped })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.u0.len();
        let mut x = b.to_vec();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                x.swap(i, i + 1);
                x[i + 1] -= self.multipliers[i] * x[i];
            } else {
                x[i + 1] -= self.multipliers[i] * x[i];
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            if i + 1 < n {
                s -= self.u1[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= self.u2[i] * x[i + 2];
            }
            x[i] = s / self.u0[i];
        }
        // rescale to avoid overflow across iterations
        let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 1e150 {
            x.iter_mut().for_each(|v| *v /= m);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplacian(n: usize) -> SymTridiagonal {
        SymTridiagonal::new(vec![2.0; n], vec![-1.0; n - 1])
    }

    #[test]
    fn dirichlet_laplacian_spectrum() {
        let n = 50;
        let t = laplacian(n);
        let (vals, vecs) = t.eigenpairs_below(10.0).unwrap();
        assert_eq!(vals.len(), n);
        for (k, v) in vals.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-13, "{k}: {v} vs {exact}");
        }
        let gram = vecs.transpose() * &vecs;
        let err = (gram - DMatrix::identity(n, n)).abs().max();
        assert!(err < 1e-12, "orthonormality {err}");
    }

    #[test]
    fn degenerate_pairs_get_orthogonal_vectors() {
        // two decoupled identical blocks: every eigenvalue is doubly degenerate
        let mut d = vec![2.0; 20];
        d.extend(vec![2.0; 20]);
        let mut e = vec![-1.0; 19];
        e.push(0.0);
        e.extend(vec![-1.0; 19]);
        let t = SymTridiagonal::new(d, e);
        let (vals, vecs) = t.eigenpairs_below(1.0).unwrap();
        assert!(vals.len() >= 4);
        let gram = vecs.transpose() * &vecs;
        let err = (gram - DMatrix::identity(vals.len(), vals.len())).abs().max();
        assert!(err < 1e-10, "orthonormality {err}");
        for (j, &l) in vals.iter().enumerate() {
            let col: Vec<f64> = vecs.column(j).iter().copied().collect();
            assert!(t.residual(&col, l) < 1e-12);
        }
    }

    #[test]
    fn cap_selects_prefix() {
        let t = laplacian(30);
        let all = t.eigenvalues_below(10.0);
        let some = t.eigenvalues_below(all[7]);
        assert_eq!(some.len(), 8);
    }

    proptest! {
        #[test]
        fn eigenpairs_satisfy_residual_and_sorting(
            diag in proptest::collection::vec(-3.0f64..3.0, 12),
            off in proptest::collection::vec(0.05f64..1.0, 11),
        ) {
            let t = SymTridiagonal::new(diag, off);
            let (vals, vecs) = t.eigenpairs_below(1e3).unwrap();
            prop_assert_eq!(vals.len(), 12);
            for w in vals.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            let trace: f64 = t.diagonal.iter().sum();
            prop_assert!((vals.iter().sum::<f64>() - trace).abs() < 1e-11);
            for (j, &l) in vals.iter().enumerate() {
                let col: Vec<f64> = vecs.column(j).iter().copied().collect();
                prop_assert!(t.residual(&col, l) < 1e-11);
            }
        }
    }
}
