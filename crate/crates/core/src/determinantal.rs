//! Exact finite-`hbar` statistics of the projection DPP: moments of linear
//! statistics, Fredholm-determinant Laplace transforms, cumulants, the
//! `Upsilon` expansion, matrix elements and counting covariances.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::classical::{Dynamics, FlowFourier, DEFAULT_ANGLE_SAMPLES};
use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::schrodinger::{Projector, SpectralDecomposition};
use crate::test_function::TestFunction;

type CMatrix = DMatrix<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `E X(f) = tr(f Pi) = sum_i f(x_i) K(x_i, x_i) dx`
pub fn linear_statistic_mean(projector: &Projector, f: &TestFunction) -> f64 {
    if f.is_constant() {
        return f.value(0.0) * projector.rank() as f64;
    }
    projector
        .grid()
        .points()
        .iter()
        .zip(projector.density())
        .map(|(&x, &k)| f.value(x) * k)
        .sum()
}

/// The variance in its two algebraic forms.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct VarianceForms {
    /// `tr(f^2 Pi) - tr(f Pi f Pi)`
    pub trace: f64,
    /// `||(1 - Pi) f Pi||_HS^2 = ||[Pi, f]||_HS^2 / 2`
    pub commutator: f64,
}

pub fn variance_forms(projector: &Projector, f: &TestFunction) -> VarianceForms {
    let u = projector.basis();
    let values = f.sample(projector.grid().points());
    let fu = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| values[i] * u[(i, j)]);
    let g = u.tr_mul(&fu);
    let first: f64 = values.iter().zip(projector.density()).map(|(v, k)| v * v * k).sum();
    let trace = first - g.norm_squared();
    let commutator = (&fu - u * &g).norm_squared();
    VarianceForms { trace, commutator }
}

/// `Var X(f)`; zero for constant `f`.
pub fn exact_variance(projector: &Projector, f: &TestFunction) -> f64 {
    if f.is_constant() {
        return 0.0;
    }
    variance_forms(projector, f).commutator
}

/// `a_i = exp(eta f(x_i)) - 1` on the grid.
fn symbol(projector: &Projector, f: &TestFunction, eta: Complex64) -> Vec<Complex64> {
    projector
        .grid()
        .points()
        .iter()
        .map(|&x| (eta * f.value(x)).exp() - 1.0)
        .collect()
}

fn sup_norm(a: &[Complex64]) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

/// Sum of principal logarithms of the LU pivots of `I + G`.
fn log_det_identity_plus(g: &CMatrix) -> Complex64 {
    let n = g.nrows();
    if n == 0 {
        return c(0.0);
    }
    let m = CMatrix::identity(n, n) + g;
    let lu = m.lu();
    let u = lu.u();
    let mut acc: Complex64 = (0..n).map(|k| u[(k, k)].ln()).sum();
    if lu.p().determinant::<f64>() < 0.0 {
        acc += Complex64::new(0.0, PI);
    }
    acc
}

fn wrap_phase(z: Complex64) -> Complex64 {
    let im = z.im - 2.0 * PI * ((z.im + PI) / (2.0 * PI)).floor();
    Complex64::new(z.re, im)
}

/// `U^T diag(a) U`
fn compress(projector: &Projector, a: &[Complex64]) -> CMatrix {
    let u = projector.basis();
    let (n, rank) = (u.nrows(), u.ncols());
    let uc = u.map(c);
    let au = CMatrix::from_fn(n, rank, |i, j| a[i] * u[(i, j)]);
    uc.transpose() * au
}

/// `log E exp(eta X(f)) = log det(I_N + U^T (e^{eta f} - 1) U)`.
///
/// The branch is fixed by `tr(log(1 + a) Pi)`, which carries the whole
/// phase up to a correction bounded by `||[Pi, a]||_HS^2 / (4 (1 - rho)^2)`.
pub fn log_laplace(projector: &Projector, f: &TestFunction, eta: Complex64) -> Result<Complex64> {
    let a = symbol(projector, f, eta);
    let rho = sup_norm(&a);
    if rho >= 1.0 {
        return Err(Error::SymbolTooLarge { norm: rho });
    }
    if f.is_constant() {
        return Ok(eta * f.value(0.0) * projector.rank() as f64);
    }
    let g = compress(projector, &a);
    let anchor: Complex64 = a.iter().zip(projector.density()).map(|(ai, &k)| (1.0 + ai).ln() * k).sum();
    let commutator = commutator_norm_sqr_diagonal(projector, &a, &g);
    let bound = commutator / (4.0 * (1.0 - rho) * (1.0 - rho));
    if bound >= PI {
        return Err(Error::BranchAmbiguous { bound });
    }
    let raw = log_det_identity_plus(&g);
    Ok(anchor + wrap_phase(raw - anchor))
}

pub fn log_laplace_real(projector: &Projector, f: &TestFunction, eta: f64) -> Result<f64> {
    Ok(log_laplace(projector, f, c(eta))?.re)
}

fn commutator_norm_sqr_diagonal(projector: &Projector, a: &[Complex64], g: &CMatrix) -> f64 {
    let first: f64 = a.iter().zip(projector.density()).map(|(ai, &k)| ai.norm_sqr() * k).sum();
    (2.0 * (first - g.norm_squared())).max(0.0)
}

/// `sup_{eta in samples} |log E e^{eta X} - eta kappa_1 - eta^2 Sigma^2 / 2|`
pub fn szego_residual(projector: &Projector, f: &TestFunction, sigma2: f64, etas: &[f64]) -> Result<f64> {
    let mean = linear_statistic_mean(projector, f);
    let values = etas
        .par_iter()
        .map(|&eta| Ok((log_laplace_real(projector, f, eta)? - eta * mean - 0.5 * eta * eta * sigma2).abs()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// Symmetric sample of `[-eta_max, eta_max]` without zero.
pub fn eta_samples(eta_max: f64, per_side: usize) -> Vec<f64> {
    (1..=per_side)
        .flat_map(|k| {
            let e = eta_max * k as f64 / per_side as f64;
            [-e, e]
        })
        .collect()
}

/// Cumulants of a linear statistic together with the classical predictions.
#[derive(Clone, Debug, Serialize)]
pub struct CumulantReport {
    pub hbar: f64,
    pub f: String,
    pub n: usize,
    pub kappa1: f64,
    pub kappa2_exact: f64,
    pub kappa2_fd: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    /// `|kappa(eta_step) - kappa(eta_step / 2)|`
    pub kappa2_fd_error: f64,
    pub kappa3_error: f64,
    pub kappa4_error: f64,
    pub eta_step: f64,
    pub sigma2_fourier: Option<f64>,
    pub sigma2_devinatz: Option<f64>,
    pub sigma2_gff: Option<f64>,
    pub szego_residual: Option<f64>,
}

fn stencil_cumulants(l: impl Fn(f64) -> Result<f64>, h: f64) -> Result<(f64, f64, f64)> {
    let (m2, m1, z, p1, p2) = (l(-2.0 * h)?, l(-h)?, l(0.0)?, l(h)?, l(2.0 * h)?);
    let k2 = (-p2 + 16.0 * p1 - 30.0 * z + 16.0 * m1 - m2) / (12.0 * h * h);
    let k3 = (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h * h * h);
    let k4 = (p2 - 4.0 * p1 + 6.0 * z - 4.0 * m1 + m2) / (h * h * h * h);
    Ok((k2, k3, k4))
}

/// `kappa_1` and `kappa_2` exactly; `kappa_2..kappa_4` by five-point central
/// differences of `eta -> log E e^{eta X}` with a check at half the step.
pub fn cumulants(projector: &Projector, f: &TestFunction, label: &str, eta_step: f64) -> Result<CumulantReport> {
    let kappa1 = linear_statistic_mean(projector, f);
    let mut report = CumulantReport {
        hbar: projector.hbar(),
        f: label.to_string(),
        n: projector.rank(),
        kappa1,
        kappa2_exact: 0.0,
        kappa2_fd: 0.0,
        kappa3: 0.0,
        kappa4: 0.0,
        kappa2_fd_error: 0.0,
        kappa3_error: 0.0,
        kappa4_error: 0.0,
        eta_step,
        sigma2_fourier: None,
        sigma2_devinatz: None,
        sigma2_gff: None,
        szego_residual: None,
    };
    let reach = sup_norm(&symbol(projector, f, c(4.0 * eta_step)));
    if reach >= 1.0 {
        return Err(Error::SymbolTooLarge { norm: reach });
    }
    if f.is_constant() {
        return Ok(report);
    }
    report.kappa2_exact = exact_variance(projector, f);
    // subtracting the exact linear term leaves the differences unchanged but
    // removes most of the cancellation
    let centred = |eta: f64| Ok(log_laplace_real(projector, f, eta)? - eta * kappa1);
    let (k2, k3, k4) = stencil_cumulants(centred, eta_step)?;
    let (k2h, k3h, k4h) = stencil_cumulants(centred, 0.5 * eta_step)?;
    report.kappa2_fd = k2;
    report.kappa3 = k3;
    report.kappa4 = k4;
    report.kappa2_fd_error = (k2 - k2h).abs();
    report.kappa3_error = (k3 - k3h).abs();
    report.kappa4_error = (k4 - k4h).abs();
    Ok(report)
}

impl CumulantReport {
    /// Fills the three classical variance predictions.
    pub fn with_classical(mut self, dynamics: &Dynamics, f: &TestFunction, mu: f64) -> Result<Self> {
        self.sigma2_fourier = Some(dynamics.predicted_variance_fourier(f, mu)?);
        self.sigma2_devinatz = Some(dynamics.devinatz_variance(f, mu)?);
        self.sigma2_gff = Some(dynamics.gff_variance(f, mu)?);
        Ok(self)
    }

    pub const CSV_HEADER: [&'static str; 10] = [
        "hbar",
        "N",
        "kappa1",
        "kappa2",
        "kappa3",
        "kappa4",
        "sigma2_fourier",
        "sigma2_devinatz",
        "sigma2_gff",
        "szego_residual",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        vec![
            fmt_f64(self.hbar),
            self.n.to_string(),
            fmt_f64(self.kappa1),
            fmt_f64(self.kappa2_exact),
            fmt_f64(self.kappa3),
            fmt_f64(self.kappa4),
            opt(self.sigma2_fourier),
            opt(self.sigma2_devinatz),
            opt(self.sigma2_gff),
            opt(self.szego_residual),
        ]
    }
}

/// An operator on the weighted grid space.
#[derive(Clone, Debug)]
pub enum GridOperator {
    /// Multiplication by a grid function.
    Multiplication(Vec<Complex64>),
    /// A general matrix in the orthonormal grid coordinates.
    Dense(CMatrix),
}

impl GridOperator {
    /// `e^{eta f} - 1` as a multiplication operator.
    pub fn laplace_symbol(projector: &Projector, f: &TestFunction, eta: Complex64) -> Self {
        GridOperator::Multiplication(symbol(projector, f, eta))
    }

    /// Operator norm: exact for multiplications, power iteration on `A* A`
    /// otherwise.
    pub fn norm_estimate(&self) -> f64 {
        match self {
            GridOperator::Multiplication(a) => sup_norm(a),
            GridOperator::Dense(m) => {
                let n = m.nrows();
                let mut v = nalgebra::DVector::from_fn(n, |i, _| c(1.0 + 0.1 * (i % 7) as f64));
                v /= c(v.norm());
                let mut est = 0.0;
                for _ in 0..500 {
                    let w = m.adjoint() * (m * &v);
                    let norm = w.norm();
                    if norm == 0.0 {
                        return 0.0;
                    }
                    let next = norm.sqrt();
                    v = w / c(norm);
                    if (next - est).abs() <= 1e-14 * next {
                        return next;
                    }
                    est = next;
                }
                est
            }
        }
    }
}

/// One term of the `Upsilon` expansion.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct UpsilonTerm {
    pub n: usize,
    /// `tr(Pi A^n Pi) - tr((Pi A Pi)^n)`
    pub bracket: Complex64,
    /// `(-1)^n / n` times the bracket
    pub term: Complex64,
    /// `n (n - 1) / 4 ||[Pi, A]||_HS^2 rho^{n - 2}`
    pub bound: f64,
}

impl UpsilonTerm {
    pub fn within_bound(&self) -> bool {
        self.bracket.norm() <= self.bound * (1.0 + 1e-12) + 1e-14
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct UpsilonExpansion {
    pub rho: f64,
    pub commutator_hs2: f64,
    pub terms: Vec<UpsilonTerm>,
}

impl UpsilonExpansion {
    pub fn sum(&self) -> Complex64 {
        self.terms.iter().map(|t| t.term).sum()
    }
}

const UPSILON_CAP: usize = 400;

/// Terms `n = 2..=n_max` of `log det(I + A Pi) - tr(log(1 + A) Pi)`. With
/// `n_max = None` the series runs until two consecutive terms fall below
/// `1e-16` (capped at 400 terms).
pub fn upsilon_coefficients(projector: &Projector, a: &GridOperator, n_max: Option<usize>) -> Result<UpsilonExpansion> {
    let rho = a.norm_estimate();
    if rho >= 1.0 {
        return Err(Error::NormTooLarge { norm: rho });
    }
    let u = projector.basis().map(c);
    let (g, commutator_hs2) = match a {
        GridOperator::Multiplication(d) => {
            let g = compress(projector, d);
            let hs = commutator_norm_sqr_diagonal(projector, d, &g);
            (g, hs)
        }
        GridOperator::Dense(m) => {
            let ut = u.transpose();
            let au = m * &u;
            let g = &ut * &au;
            let comm = &u * (&ut * m) - &au * &ut;
            (g, comm.norm_squared())
        }
    };
    let cap = n_max.unwrap_or(UPSILON_CAP);
    // running quantities for n = 1
    let mut g_pow = g.clone();
    let mut diag_pow: Vec<Complex64> = match a {
        GridOperator::Multiplication(d) => d.clone(),
        GridOperator::Dense(_) => Vec::new(),
    };
    let mut dense_pow = match a {
        GridOperator::Dense(m) => Some(m * &u),
        GridOperator::Multiplication(_) => None,
    };
    let mut terms = Vec::new();
    let mut small_run = 0;
    for n in 2..=cap {
        g_pow = &g_pow * &g;
        let outer = match a {
            GridOperator::Multiplication(d) => {
                for (p, x) in diag_pow.iter_mut().zip(d) {
                    *p *= x;
                }
                diag_pow.iter().zip(projector.density()).map(|(p, &k)| p * k).sum::<Complex64>()
            }
            GridOperator::Dense(m) => {
                let next = m * dense_pow.as_ref().unwrap();
                let tr = u.dot(&next);
                dense_pow = Some(next);
                tr
            }
        };
        let bracket = outer - g_pow.trace();
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let term = bracket * (sign / n as f64);
        let bound = (n * (n - 1)) as f64 / 4.0 * commutator_hs2 * rho.powi(n as i32 - 2);
        terms.push(UpsilonTerm { n, bracket, term, bound });
        if n_max.is_none() {
            small_run = if term.norm() < 1e-16 && bound / (n as f64) < 1e-16 { small_run + 1 } else { 0 };
            if small_run >= 2 {
                break;
            }
        }
    }
    Ok(UpsilonExpansion { rho, commutator_hs2, terms })
}

/// `tr(log(1 + a) Pi) + sum_n Upsilon^n`, an independent evaluation of the
/// log-Laplace transform.
pub fn log_laplace_via_upsilon(projector: &Projector, f: &TestFunction, eta: Complex64) -> Result<Complex64> {
    let a = symbol(projector, f, eta);
    let anchor: Complex64 = a.iter().zip(projector.density()).map(|(ai, &k)| (1.0 + ai).ln() * k).sum();
    let ups = upsilon_coefficients(projector, &GridOperator::Multiplication(a), None)?;
    Ok(anchor + ups.sum())
}

/// Matrix elements `A_jk = <phi_j, f phi_k>` on a window of indices.
///
/// Phases follow the orbit convention: each eigenfunction is made positive
/// at the last grid point where it exceeds `1e-3` of its maximum, i.e. next
/// to the right turning point where the angle variable starts.
#[derive(Clone, Debug)]
pub struct MatrixElements {
    pub window: std::ops::Range<usize>,
    pub band: usize,
    entries: DMatrix<f64>,
}

impl MatrixElements {
    pub fn compute(dec: &SpectralDecomposition, f: &TestFunction, window: std::ops::Range<usize>, band: usize) -> Result<Self> {
        if window.end > dec.len() {
            return Err(Error::InsufficientSpectrum { available: dec.len(), required: window.end });
        }
        let phi = dec.eigenfunctions().columns(window.start, window.len()).into_owned();
        let signs: Vec<f64> = phi
            .column_iter()
            .map(|col| {
                let peak = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let last = col.iter().rposition(|v| v.abs() > 1e-3 * peak).unwrap_or(0);
                col[last].signum()
            })
            .collect();
        let values = f.sample(dec.grid().points());
        let fphi = DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, j| values[i] * phi[(i, j)]);
        let mut entries = phi.tr_mul(&fphi) * dec.grid().dx();
        for j in 0..entries.nrows() {
            for k in 0..entries.ncols() {
                entries[(j, k)] *= signs[j] * signs[k];
            }
        }
        Ok(MatrixElements { window, band, entries })
    }

    /// Absolute indices.
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[(j - self.window.start, k - self.window.start)]
    }

    pub fn hermitian_residual(&self) -> f64 {
        (&self.entries - self.entries.transpose()).abs().max()
    }

    /// `max_{|j - k| = band} |A_jk|`
    pub fn off_band_max(&self) -> f64 {
        let n = self.entries.nrows();
        (0..n.saturating_sub(self.band))
            .map(|j| self.entries[(j, j + self.band)].abs().max(self.entries[(j + self.band, j)].abs()))
            .fold(0.0, f64::max)
    }
}

/// Result of comparing matrix elements with orbit Fourier coefficients.
#[derive(Clone, Debug, Serialize)]
pub struct ToeplitzReport {
    pub hbar: f64,
    pub window_start: usize,
    pub window_end: usize,
    pub band: usize,
    pub max_deviation: f64,
    /// `(j, k, A_jk, a_{k-j}((j + k) hbar / 2))`
    pub entries: Vec<(usize, usize, f64, f64)>,
}

/// `max |A_jk - a_{k-j}(g^{-1}((j + k) hbar / 2))|` over `j, k` in the window
/// `[N - half_width, N + half_width)` with `|j - k| <= band`.
pub fn toeplitz_deviation(
    dec: &SpectralDecomposition,
    dynamics: &Dynamics,
    f: &TestFunction,
    mu: f64,
    band: usize,
    half_width: usize,
) -> Result<ToeplitzReport> {
    let hbar = dec.hbar();
    let rank = dec.eigenvalues().iter().filter(|&&l| l <= mu).count();
    let lo = rank.saturating_sub(half_width);
    let hi = rank + half_width;
    let elements = MatrixElements::compute(dec, f, lo..hi, band)?;
    let bracket_hi = dec.eigenvalues()[hi - 1] + 1.0;
    let bracket_lo = dec.eigenvalues()[0].min(mu) - 1.0;
    let sums: Vec<usize> = (2 * lo..=2 * (hi - 1)).collect();
    let fourier = sums
        .par_iter()
        .map(|&s| {
            let action = s as f64 * hbar / 2.0;
            let lambda = dynamics.invert_action(action, bracket_lo, bracket_hi)?;
            let orbit = dynamics.angle_parametrization(lambda, DEFAULT_ANGLE_SAMPLES)?;
            Ok(FlowFourier::from_orbit(&orbit, f, band))
        })
        .collect::<Result<Vec<FlowFourier>>>()?;
    let mut entries = Vec::new();
    let mut max_deviation = 0.0f64;
    for j in lo..hi {
        for k in lo..hi {
            if j.abs_diff(k) > band {
                continue;
            }
            let coeff = fourier[j + k - 2 * lo].coefficient(k as i64 - j as i64).re;
            let a = elements.get(j, k);
            max_deviation = max_deviation.max((a - coeff).abs());
            entries.push((j, k, a, coeff));
        }
    }
    Ok(ToeplitzReport { hbar, window_start: lo, window_end: hi, band, max_deviation, entries })
}

/// Outcome of the exhaustive check of the Dyson-Hunt-Kac identity.
#[derive(Clone, Debug, Serialize)]
pub struct DhkOutcome {
    pub holds: bool,
    pub tuples_checked: usize,
    pub counterexample: Option<Vec<i64>>,
}

/// `max(i_1, i_1 + i_2, ..., i_1 + ... + i_n)`
pub fn running_max(i: &[i64]) -> i64 {
    let mut s = 0;
    let mut m = i64::MIN;
    for &x in i {
        s += x;
        m = m.max(s);
    }
    m
}

fn lcm_up_to(n: usize) -> i128 {
    fn gcd(a: i128, b: i128) -> i128 {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    (1..=n as i128).fold(1, |l, k| l / gcd(l, k) * k)
}

/// Both sides of the identity scaled by `2 lcm(1..n)`.
pub fn dhk_sides(tuple: &[i64]) -> (i128, i128) {
    let n = tuple.len();
    let l = lcm_up_to(n);
    let mut perm = tuple.to_vec();
    let mut lhs: i128 = 0;
    let mut partial_abs = vec![0i128; n];
    let mut visit = |p: &[i64]| {
        lhs += running_max(p) as i128;
        let mut s = 0i64;
        for (r, &x) in p.iter().enumerate() {
            s += x;
            partial_abs[r] += s.unsigned_abs() as i128;
        }
    };
    heap_permutations(&mut perm, &mut visit);
    let rhs: i128 = partial_abs.iter().enumerate().map(|(r, &a)| l / (r as i128 + 1) * a).sum();
    (2 * l * lhs, rhs)
}

fn heap_permutations(a: &mut [i64], visit: &mut impl FnMut(&[i64])) {
    let n = a.len();
    let mut c = vec![0usize; n];
    visit(a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            visit(a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Checks the identity for every integer tuple of length `n` with zero sum
/// and entries bounded by `range`.
pub fn dhk_check(n: usize, range: i64) -> Result<DhkOutcome> {
    if !(2..=7).contains(&n) {
        return Err(Error::Config(format!("tuple length {n} outside 2..=7")));
    }
    let mut tuple = vec![-range; n - 1];
    let mut checked = 0;
    loop {
        let last = -tuple.iter().sum::<i64>();
        if last.abs() <= range {
            let mut full = tuple.clone();
            full.push(last);
            let (lhs, rhs) = dhk_sides(&full);
            checked += 1;
            if lhs != rhs {
                return Ok(DhkOutcome { holds: false, tuples_checked: checked, counterexample: Some(full) });
            }
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n - 1 {
                return Ok(DhkOutcome { holds: true, tuples_checked: checked, counterexample: None });
            }
            if tuple[pos] < range {
                tuple[pos] += 1;
                break;
            }
            tuple[pos] = -range;
            pos += 1;
        }
    }
}

/// Number of grid points `x_i <= x`.
fn prefix_len(projector: &Projector, x: f64) -> usize {
    projector.grid().last_index_at_or_below(x).map_or(0, |i| i + 1)
}

/// `Cov(X(1_{<= x}), X(1_{<= z})) = tr(1_x Pi 1_z) - tr(1_x Pi 1_z Pi)`
pub fn counting_covariance(projector: &Projector, x: f64, z: f64) -> f64 {
    counting_covariance_matrix(projector, &[x, z])[(0, 1)]
}

/// Covariance matrix of the counting function at the probe positions.
pub fn counting_covariance_matrix(projector: &Projector, probes: &[f64]) -> DMatrix<f64> {
    let u = projector.basis();
    let lens: Vec<usize> = probes.iter().map(|&x| prefix_len(projector, x)).collect();
    let grams: Vec<DMatrix<f64>> = lens
        .iter()
        .map(|&l| {
            let rows = u.rows(0, l);
            rows.tr_mul(&rows)
        })
        .collect();
    let mass: Vec<f64> = lens.iter().map(|&l| projector.density()[..l].iter().sum()).collect();
    let p = probes.len();
    DMatrix::from_fn(p, p, |a, b| {
        let shared = if lens[a] <= lens[b] { mass[a] } else { mass[b] };
        shared - grams[a].dot(&grams[b])
    })
}

/// Writes cumulant reports as CSV rows.
pub fn write_cumulant_csv<W: Write>(out: W, reports: &[CumulantReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CumulantReport::CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialSpec;
    use crate::schrodinger::{build_grid, solve, spectral_projector, Truncation};
    use std::sync::Arc;

    fn harmonic_projector(hbar: f64, n: usize) -> Projector {
        let grid = build_grid(-2.0, 2.0, n).unwrap();
        let dec = solve(&grid, &PotentialSpec::Harmonic, hbar, 1.5, Truncation::new(1.0)).unwrap();
        spectral_projector(Arc::new(dec), 1.0).unwrap()
    }

    #[test]
    fn mean_and_variance_elementary_cases() {
        let p = harmonic_projector(0.05, 1000);
        assert!((linear_statistic_mean(&p, &TestFunction::constant(1.0)) - 10.0).abs() < 1e-10);
        assert_eq!(linear_statistic_mean(&p, &TestFunction::constant(0.0)), 0.0);
        assert!(linear_statistic_mean(&p, &TestFunction::identity()).abs() < 1e-8);
        assert_eq!(exact_variance(&p, &TestFunction::constant(3.0)), 0.0);
        let forms = variance_forms(&p, &TestFunction::monomial(3));
        assert!((forms.trace - forms.commutator).abs() < 1e-10);
        // f = x is exactly Gaussian for the harmonic oscillator: Var = N hbar / 2
        let v = exact_variance(&p, &TestFunction::identity());
        assert!((v - 0.25).abs() < 1e-3);
    }

    #[test]
    fn log_laplace_elementary_cases() {
        let p = harmonic_projector(0.05, 1000);
        let f = TestFunction::identity();
        assert_eq!(log_laplace(&p, &f, c(0.0)).unwrap(), c(0.0));
        let l = log_laplace(&p, &TestFunction::constant(0.7), c(0.2)).unwrap();
        assert!((l.re - 10.0 * 0.14).abs() < 1e-12);
        assert!(matches!(log_laplace(&p, &f, c(1.0)), Err(Error::SymbolTooLarge { .. })));
        // exactly Gaussian: L(eta) = eta^2 Var / 2
        let var = exact_variance(&p, &f);
        for eta in [-0.3, 0.1, 0.3] {
            let l = log_laplace_real(&p, &f, eta).unwrap();
            assert!((l - 0.5 * eta * eta * var).abs() < 1e-10);
        }
        let z = log_laplace(&p, &f, Complex64::new(0.1, 0.2)).unwrap();
        let expected = 0.5 * Complex64::new(0.1, 0.2).powi(2) * var;
        assert!((z - expected).norm() < 1e-10);
    }

    #[test]
    fn cumulant_stencil_matches_exact_variance() {
        let p = harmonic_projector(0.05, 1000);
        let bump = TestFunction::GaussianBump { center: 0.3, width: 0.35, amplitude: 1.0 };
        let r = cumulants(&p, &bump, "bump", 0.05).unwrap();
        assert!((r.kappa2_fd - r.kappa2_exact).abs() < 1e-4 * r.kappa2_exact);
        let k = cumulants(&p, &TestFunction::constant(2.0), "const", 0.05).unwrap();
        assert_eq!((k.kappa1, k.kappa2_exact, k.kappa3, k.kappa4), (20.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn upsilon_series_reconstructs_log_laplace() {
        let p = harmonic_projector(0.05, 600);
        let f = TestFunction::GaussianBump { center: 0.3, width: 0.35, amplitude: 1.0 };
        for eta in [c(0.3), c(-0.4), Complex64::new(0.2, 0.3)] {
            let direct = log_laplace(&p, &f, eta).unwrap();
            let series = log_laplace_via_upsilon(&p, &f, eta).unwrap();
            assert!((direct - series).norm() < 1e-8);
            let ups = upsilon_coefficients(&p, &GridOperator::laplace_symbol(&p, &f, eta), Some(8)).unwrap();
            assert!(ups.terms.iter().all(UpsilonTerm::within_bound));
        }
    }

    #[test]
    fn upsilon_vanishes_for_operators_commuting_with_projector() {
        let p = harmonic_projector(0.1, 200);
        let u = p.basis().map(c);
        let a = &u * u.transpose() * c(0.5);
        let ups = upsilon_coefficients(&p, &GridOperator::Dense(a), Some(10)).unwrap();
        assert!((ups.rho - 0.5).abs() < 1e-10);
        for t in &ups.terms {
            assert!(t.term.norm() < 1e-12);
        }
    }

    #[test]
    fn dhk_identity_small_cases() {
        assert_eq!(dhk_sides(&[1, -1]), (4, 4));
        assert_eq!(dhk_sides(&[0, 0, 0]), (0, 0));
        let out = dhk_check(3, 3).unwrap();
        assert!(out.holds);
        assert_eq!(out.tuples_checked, 37);
        assert!(dhk_check(8, 1).is_err());
    }

    #[test]
    fn counting_covariance_properties() {
        let p = harmonic_projector(0.05, 800);
        assert!(counting_covariance(&p, 0.3, 2.0).abs() < 1e-12);
        assert!(counting_covariance(&p, 0.3, 0.3) >= 0.0);
        let m = counting_covariance_matrix(&p, &[-0.5, 0.0, 0.5]);
        assert!((m[(0, 2)] - m[(2, 0)]).abs() < 1e-14);
    }
}
