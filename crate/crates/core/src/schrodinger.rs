//! Finite-difference discretization of `-hbar^2 d^2/dx^2 + V` on a truncated
//! box, its low-lying spectrum, and the rank-`N` spectral projector.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::classical;
use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::tridiag::SymTridiagonal;

pub const MIN_GRID_POINTS: usize = 16;

/// Uniform interior grid of `[x_min, x_max]` with Dirichlet ends.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    dx: f64,
    points: Vec<f64>,
}

impl Grid {
    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    /// Spacing, which doubles as the quadrature weight.
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn points(&self) -> &[f64] {
        &self.points
    }
    /// Index of the last grid point `<= x`, if any.
    pub fn last_index_at_or_below(&self, x: f64) -> Option<usize> {
        let k = self.points.partition_point(|&p| p <= x);
        k.checked_sub(1)
    }
}

/// `n` interior points with spacing `(x_max - x_min) / (n + 1)`.
pub fn build_grid(x_min: f64, x_max: f64, n: usize) -> Result<Grid> {
    if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
        return Err(Error::InvalidGrid(format!("degenerate interval [{x_min}, {x_max}]")));
    }
    if n < MIN_GRID_POINTS {
        return Err(Error::InvalidGrid(format!("n = {n} is below the minimum of {MIN_GRID_POINTS}")));
    }
    Ok(uniform_interior(x_min, x_max, n))
}

fn uniform_interior(x_min: f64, x_max: f64, n: usize) -> Grid {
    let dx = (x_max - x_min) / (n + 1) as f64;
    let points = (1..=n).map(|i| x_min + i as f64 * dx).collect();
    Grid { x_min, x_max, dx, points }
}

/// Level the potential must reach at both box ends: `mu_max + margin`.
#[derive(Clone, Copy, Debug)]
pub struct Truncation {
    pub mu_max: f64,
    pub margin: f64,
}

impl Truncation {
    pub const DEFAULT_MARGIN: f64 = 2.0;

    pub fn new(mu_max: f64) -> Self {
        Truncation { mu_max, margin: Self::DEFAULT_MARGIN }
    }

    /// No wall requirement (e.g. for the free Laplacian).
    pub fn unchecked() -> Self {
        Truncation { mu_max: f64::NEG_INFINITY, margin: 0.0 }
    }

    fn required(&self) -> f64 {
        self.mu_max + self.margin
    }
}

/// Three-point stencil: diagonal `2 hbar^2 / dx^2 + V(x_i)`, off-diagonal
/// `-hbar^2 / dx^2`.
pub fn discretize_hamiltonian(
    grid: &Grid,
    potential: &dyn Potential,
    hbar: f64,
    truncation: Truncation,
) -> Result<SymTridiagonal> {
    if !(hbar > 0.0) {
        return Err(Error::Config(format!("hbar must be positive, got {hbar}")));
    }
    let required = truncation.required();
    for &x in &[grid.x_min, grid.x_max] {
        let v = potential.value(x);
        if v < required {
            return Err(Error::BoxTooSmall { x, value: v, required });
        }
    }
    let kinetic = hbar * hbar / (grid.dx * grid.dx);
    let diagonal = grid.points.iter().map(|&x| 2.0 * kinetic + potential.value(x)).collect();
    let off_diagonal = vec![-kinetic; grid.len() - 1];
    Ok(SymTridiagonal::new(diagonal, off_diagonal))
}

/// Eigenvalues and grid-sampled eigenfunctions, normalized so that
/// `sum_i phi_j(x_i)^2 dx = 1`.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    hbar: f64,
    eigenvalues: Vec<f64>,
    eigenfunctions: DMatrix<f64>,
    grid: Grid,
}

/// All eigenpairs with eigenvalue `<= lambda_cap`.
///
/// Each eigenfunction is positive at the first grid point where its modulus
/// exceeds `1e-3` of its maximum.
pub fn eigendecompose(
    hamiltonian: &SymTridiagonal,
    lambda_cap: f64,
    grid: &Grid,
    hbar: f64,
) -> Result<SpectralDecomposition> {
    assert_eq!(hamiltonian.len(), grid.len());
    let (eigenvalues, mut vectors) = hamiltonian.eigenpairs_below(lambda_cap)?;
    let scale = 1.0 / grid.dx.sqrt();
    for mut col in vectors.column_iter_mut() {
        let peak = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let first = col.iter().position(|v| v.abs() > 1e-3 * peak).unwrap_or(0);
        let sign = if col[first] < 0.0 { -scale } else { scale };
        col *= sign;
    }
    Ok(SpectralDecomposition { hbar, eigenvalues, eigenfunctions: vectors, grid: grid.clone() })
}

/// Convenience pipeline: discretize, then eigendecompose up to `lambda_cap`.
pub fn solve(
    grid: &Grid,
    potential: &dyn Potential,
    hbar: f64,
    lambda_cap: f64,
    truncation: Truncation,
) -> Result<SpectralDecomposition> {
    let h = discretize_hamiltonian(grid, potential, hbar, truncation)?;
    eigendecompose(&h, lambda_cap, grid, hbar)
}

impl SpectralDecomposition {
    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    /// Column `j` samples `phi_j` on the grid.
    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }
    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `max_{j,k} |sum_i phi_j phi_k dx - delta_jk|`
    pub fn orthonormality_residual(&self) -> f64 {
        let m = self.len();
        let gram = self.eigenfunctions.tr_mul(&self.eigenfunctions) * self.grid.dx;
        (gram - DMatrix::identity(m, m)).abs().max()
    }

    /// Midpoint of the spectral gap enclosing `mu`. If `mu` sits on an
    /// eigenvalue, that eigenvalue is kept below the new level.
    pub fn gap_midpoint(&self, mu: f64) -> Option<f64> {
        let tol = gap_tolerance(self.hbar);
        let k = self.eigenvalues.iter().filter(|&&l| l <= mu + tol).count();
        match (k.checked_sub(1), self.eigenvalues.get(k)) {
            (Some(lo), Some(&hi)) => Some(0.5 * (self.eigenvalues[lo] + hi)),
            _ => None,
        }
    }

    /// CSV of `(j, lambda_j)` rows.
    pub fn write_eigenvalues_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "lambda"])?;
        for (j, l) in self.eigenvalues.iter().enumerate() {
            w.write_record([j.to_string(), crate::output::fmt_f64(*l)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV matrix: one row per grid point, `x` followed by `phi_j(x)`.
    pub fn write_eigenfunctions_csv<W: Write>(&self, out: W, count: usize) -> Result<()> {
        let count = count.min(self.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string()];
        header.extend((0..count).map(|j| format!("phi_{j}")));
        w.write_record(&header)?;
        for (i, &x) in self.grid.points.iter().enumerate() {
            let mut row = vec![crate::output::fmt_f64(x)];
            row.extend((0..count).map(|j| crate::output::fmt_f64(self.eigenfunctions[(i, j)])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimum admissible distance between the Fermi level and the spectrum.
pub fn gap_tolerance(hbar: f64) -> f64 {
    1e-3 * hbar
}

/// The orthogonal projector onto eigenfunctions with eigenvalue `<= mu`.
///
/// Internally the range is stored as an orthonormal basis of the weighted
/// grid space (`u_j = phi_j sqrt(dx)`), so the projector matrix is `U U^T`
/// and the kernel is `K(x_a, x_b) = (U U^T)_{ab} / dx`.
#[derive(Clone, Debug)]
pub struct Projector {
    mu: f64,
    basis: DMatrix<f64>,
    density: Vec<f64>,
    source: Arc<SpectralDecomposition>,
}

pub fn spectral_projector(dec: Arc<SpectralDecomposition>, mu: f64) -> Result<Projector> {
    let tol = gap_tolerance(dec.hbar);
    spectral_projector_with_tolerance(dec, mu, tol)
}

/// As [`spectral_projector`] with an explicit ambiguity tolerance around `mu`.
pub fn spectral_projector_with_tolerance(dec: Arc<SpectralDecomposition>, mu: f64, tol: f64) -> Result<Projector> {
    if let Some(&l) = dec.eigenvalues.iter().find(|&&l| (l - mu).abs() <= tol) {
        return Err(Error::AmbiguousFermiLevel { mu, eigenvalue: l, tol });
    }
    let rank = dec.eigenvalues.iter().filter(|&&l| l <= mu).count();
    if rank == dec.len() && dec.eigenvalues.last().map_or(false, |&l| l < mu) {
        // every computed level is occupied: cannot certify the rank
        let available = dec.len();
        if available > 0 {
            return Err(Error::InsufficientSpectrum { available, required: available + 1 });
        }
    }
    let sqrt_dx = dec.grid.dx.sqrt();
    let basis = dec.eigenfunctions.columns(0, rank).into_owned() * sqrt_dx;
    let density = basis.row_iter().map(|r| r.norm_squared()).collect();
    Ok(Projector { mu, basis, density, source: dec })
}

impl Projector {
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
    pub fn hbar(&self) -> f64 {
        self.source.hbar
    }
    pub fn grid(&self) -> &Grid {
        &self.source.grid
    }
    pub fn source(&self) -> &Arc<SpectralDecomposition> {
        &self.source
    }
    /// Orthonormal columns `u_j = phi_j sqrt(dx)`, `j < N`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
    /// Diagonal of the projector matrix, `K(x_i, x_i) dx`.
    pub fn density(&self) -> &[f64] {
        &self.density
    }
    /// The first `N` eigenfunction columns.
    pub fn columns(&self) -> DMatrix<f64> {
        self.source.eigenfunctions.columns(0, self.rank()).into_owned()
    }

    /// Kernel matrix `K = Phi Phi^T` (function units). Quadratic in the grid
    /// size; intended for small grids.
    pub fn kernel_matrix(&self) -> DMatrix<f64> {
        let phi = self.columns();
        &phi * phi.transpose()
    }

    /// `max |K (dx K) - K|` evaluated through the factorization
    /// `K dx K - K = Phi (G - I) Phi^T` with `G` the weighted Gram matrix.
    pub fn idempotency_residual(&self) -> f64 {
        let phi = self.columns();
        let n = self.rank();
        let gram_defect = phi.tr_mul(&phi) * self.grid().dx - DMatrix::<f64>::identity(n, n);
        let m = &phi * gram_defect;
        // max_{a,b} |m_a . phi_b| without forming the n x n matrix
        let row_max = (0..phi.nrows())
            .map(|a| m.row(a).norm())
            .fold(0.0f64, f64::max);
        let phi_max = (0..phi.nrows())
            .map(|b| phi.row(b).norm())
            .fold(0.0f64, f64::max);
        row_max * phi_max
    }
}

/// Semiclassical particle count `(1 / pi hbar) int (mu - V)_+^{1/2} dx`,
/// summed over every component of the droplet inside `domain`.
pub fn weyl_count(potential: &dyn Potential, mu: f64, hbar: f64, domain: (f64, f64)) -> f64 {
    classical::sublevel_components(potential, mu, domain)
        .iter()
        .map(|&(a, b)| classical::action_between(potential, mu, a, b))
        .sum::<f64>()
        / hbar
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialSpec;
    use std::f64::consts::PI;

    #[test]
    fn grid_spacing_and_errors() {
        let g = build_grid(-8.0, 8.0, 4095).unwrap();
        assert_eq!(g.dx(), 16.0 / 4096.0);
        assert!(build_grid(0.0, 0.0, 100).is_err());
        assert!(build_grid(-1.0, 1.0, 3).is_err());
        let small = uniform_interior(-1.0, 1.0, 3);
        assert_eq!(small.points(), &[-0.5, 0.0, 0.5]);
        assert_eq!(small.dx(), 0.5);
        for w in g.points().windows(2) {
            assert!((w[1] - w[0] - g.dx()).abs() < 1e-12);
        }
    }

    #[test]
    fn free_laplacian_matches_closed_form() {
        let g = build_grid(0.0, 1.0, 63).unwrap();
        let zero = PotentialSpec::CustomPolynomial { coefficients: vec![0.0] };
        let h = discretize_hamiltonian(&g, &zero, 1.0, Truncation::unchecked()).unwrap();
        let dec = eigendecompose(&h, 1e9, &g, 1.0).unwrap();
        for (k, l) in dec.eigenvalues().iter().enumerate() {
            let exact = 2.0 / (g.dx() * g.dx()) * (1.0 - ((k + 1) as f64 * PI / 64.0).cos());
            assert!((l - exact).abs() < 1e-9 * exact.max(1.0));
        }
        assert!(dec.orthonormality_residual() < 1e-8);
    }

    #[test]
    fn harmonic_levels_count_and_rank() {
        let g = build_grid(-3.0, 3.0, 2047).unwrap();
        let dec = Arc::new(solve(&g, &PotentialSpec::Harmonic, 0.05, 1.2, Truncation::new(1.0)).unwrap());
        let below_one = dec.eigenvalues().iter().filter(|&&l| l <= 1.0).count();
        assert_eq!(below_one, 10);
        assert!((dec.eigenvalues()[0] - 0.05).abs() < 1e-4);
        let p = spectral_projector(dec.clone(), 1.0).unwrap();
        assert_eq!(p.rank(), 10);
        let trace: f64 = p.density().iter().sum();
        assert!((trace - 10.0).abs() < 1e-10);
        assert!(p.idempotency_residual() < 1e-8);
        let empty = spectral_projector(dec.clone(), 0.01).unwrap();
        assert_eq!(empty.rank(), 0);
        let near = dec.eigenvalues()[3] + 1e-6;
        assert!(matches!(spectral_projector(dec, near), Err(Error::AmbiguousFermiLevel { .. })));
    }

    #[test]
    fn box_that_is_too_small_is_rejected() {
        let g = build_grid(-1.2, 1.2, 64).unwrap();
        let err = discretize_hamiltonian(&g, &PotentialSpec::Harmonic, 0.05, Truncation::new(1.0));
        assert!(matches!(err, Err(Error::BoxTooSmall { .. })));
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let g = build_grid(-3.0, 3.0, 511).unwrap();
        let dec = solve(&g, &PotentialSpec::Harmonic, 0.1, 1.0, Truncation::new(1.0)).unwrap();
        for col in dec.eigenfunctions().column_iter() {
            let peak = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let first = col.iter().find(|v| v.abs() > 1e-3 * peak).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn weyl_count_closed_forms() {
        let d = (-4.0, 4.0);
        assert!((weyl_count(&PotentialSpec::Harmonic, 1.0, 0.01, d) - 50.0).abs() < 1e-9);
        assert!((weyl_count(&PotentialSpec::Harmonic, 1.0, 0.05, d) - 10.0).abs() < 1e-10);
        assert_eq!(weyl_count(&PotentialSpec::Harmonic, -0.5, 0.05, d), 0.0);
    }

    #[test]
    fn gap_midpoint_keeps_level_on_mu() {
        let g = build_grid(-3.0, 3.0, 1023).unwrap();
        let dec = solve(&g, &PotentialSpec::Harmonic, 0.1, 2.0, Truncation::new(1.0)).unwrap();
        let l = dec.eigenvalues()[2];
        let mid = dec.gap_midpoint(l).unwrap();
        assert!(mid > l && mid < dec.eigenvalues()[3]);
    }
}
