//! Reference ensembles with closed-form asymptotics: Toeplitz determinants
//! (the circular unitary ensemble) and the Chebyshev variance of the
//! Gaussian unitary ensemble.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::test_function::TestFunction;

const MIN_SAMPLES: usize = 4096;

/// Discrete Fourier coefficients `g_k = (1/M) sum_m g(theta_m) e^{-i k theta_m}`.
fn fourier_samples(g: impl Fn(f64) -> f64, samples: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..samples)
        .map(|m| Complex64::new(g(2.0 * PI * m as f64 / samples as f64) / samples as f64, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(samples).process(&mut buf);
    buf
}

fn at(buf: &[Complex64], k: i64) -> Complex64 {
    buf[k.rem_euclid(buf.len() as i64) as usize]
}

/// A real function on the circle through its Fourier coefficients `|k| <= K`.
#[derive(Clone, Debug)]
pub struct CircleSymbol {
    k_max: usize,
    coefficients: Vec<Complex64>,
}

impl CircleSymbol {
    /// Coefficients `f_k` for `k = -K..=K`, given for `k >= 0`; the negative
    /// ones follow from reality.
    pub fn from_nonnegative(coefficients: &[Complex64]) -> Self {
        let k_max = coefficients.len().saturating_sub(1);
        let mut all = Vec::with_capacity(2 * k_max + 1);
        all.extend(coefficients.iter().skip(1).rev().map(|c| c.conj()));
        all.push(Complex64::new(coefficients.first().map_or(0.0, |c| c.re), 0.0));
        all.extend(coefficients.iter().skip(1).copied());
        CircleSymbol { k_max, coefficients: all }
    }

    /// Samples `f` on a fine grid and keeps `|k| <= k_max`.
    pub fn from_function(f: impl Fn(f64) -> f64, k_max: usize) -> Self {
        let samples = MIN_SAMPLES.max((4 * k_max + 4).next_power_of_two());
        let buf = fourier_samples(f, samples);
        let coefficients = (-(k_max as i64)..=k_max as i64).map(|k| at(&buf, k)).collect();
        CircleSymbol { k_max, coefficients }
    }

    /// `c + 2 a cos(k theta)`
    pub fn cosine(constant: f64, amplitude: f64, k: usize) -> Self {
        let mut c = vec![Complex64::new(0.0, 0.0); k + 1];
        c[0] = Complex64::new(constant, 0.0);
        c[k] += Complex64::new(amplitude, 0.0);
        Self::from_nonnegative(&c)
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn coefficient(&self, k: i64) -> Complex64 {
        if k.unsigned_abs() as usize > self.k_max {
            return Complex64::new(0.0, 0.0);
        }
        self.coefficients[(k + self.k_max as i64) as usize]
    }

    pub fn value(&self, theta: f64) -> f64 {
        (-(self.k_max as i64)..=self.k_max as i64)
            .map(|k| (self.coefficient(k) * Complex64::from_polar(1.0, k as f64 * theta)).re)
            .sum()
    }

    /// `|f_K|`, the size of the last retained coefficient.
    pub fn tail(&self) -> f64 {
        self.coefficient(self.k_max as i64).norm()
    }
}

/// `log det` of a Hermitian positive matrix through LU pivots.
fn log_det_hermitian(m: DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let lu = m.lu();
    let u = lu.u();
    (0..n).map(|k| u[(k, k)].norm().ln()).sum()
}

/// `log det T_N(e^f)` with `T_N(g)_{ij} = g_{i-j}`; the coefficients of `e^f`
/// come from an FFT of the sampled symbol.
pub fn toeplitz_log_det(symbol: &CircleSymbol, n: usize) -> f64 {
    let samples = MIN_SAMPLES.max((4 * n).next_power_of_two());
    let buf = fourier_samples(|t| symbol.value(t).exp(), samples);
    let t = DMatrix::from_fn(n, n, |i, j| at(&buf, i as i64 - j as i64));
    log_det_hermitian(t)
}

/// `(1/2) sum_{|k| <= K} |k| f_k f_{-k}`
pub fn szego_rhs(symbol: &CircleSymbol) -> f64 {
    (1..=symbol.k_max as i64)
        .map(|k| k as f64 * (symbol.coefficient(k) * symbol.coefficient(-k)).re)
        .sum()
}

/// `sum_{k >= 1} k |f_k|^2` with `f_k` the coefficients of `theta -> f(cos theta)`.
pub fn gue_chebyshev_variance(f: &TestFunction) -> f64 {
    if f.is_constant() {
        return 0.0;
    }
    let buf = fourier_samples(|t| f.value(t.cos()), MIN_SAMPLES);
    (1..(MIN_SAMPLES / 2) as i64).map(|k| k as f64 * at(&buf, k).norm_sqr()).sum()
}

/// `log E exp(X(f))` for the CUE with `N` points, computed as a Fredholm
/// determinant of the Fourier-basis projector on a `samples`-point circle
/// grid: `det(I_N + U^* diag(e^f - 1) U)`.
pub fn cue_log_laplace(symbol: &CircleSymbol, n: usize, samples: usize) -> f64 {
    let a: Vec<f64> = (0..samples)
        .map(|m| symbol.value(2.0 * PI * m as f64 / samples as f64).exp() - 1.0)
        .collect();
    let norm = 1.0 / (samples as f64).sqrt();
    let u = DMatrix::from_fn(samples, n, |m, j| {
        Complex64::from_polar(norm, 2.0 * PI * (m * j) as f64 / samples as f64)
    });
    let au = DMatrix::from_fn(samples, n, |m, j| u[(m, j)] * a[m]);
    let g = u.adjoint() * au;
    log_det_hermitian(DMatrix::identity(n, n) + g)
}

#[derive(Clone, Debug, Serialize)]
pub struct SzegoRow {
    pub n: usize,
    pub log_det: f64,
    pub prediction: f64,
    pub residual: f64,
}

/// `(N, log det T_N(e^f), N f_0 + rhs, |difference|)` for each `N`.
pub fn szego_sweep(symbol: &CircleSymbol, sizes: &[usize]) -> Vec<SzegoRow> {
    let rhs = szego_rhs(symbol);
    sizes
        .iter()
        .map(|&n| {
            let log_det = toeplitz_log_det(symbol, n);
            let prediction = n as f64 * symbol.coefficient(0).re + rhs;
            SzegoRow { n, log_det, prediction, residual: (log_det - prediction).abs() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_symbols() {
        let zero = CircleSymbol::cosine(0.0, 0.0, 1);
        assert!(toeplitz_log_det(&zero, 8).abs() < 1e-13);
        let c = CircleSymbol::cosine(0.4, 0.0, 1);
        assert!((toeplitz_log_det(&c, 16) - 6.4).abs() < 1e-12);
        assert_eq!(szego_rhs(&c), 0.0);
    }

    #[test]
    fn szego_rhs_closed_forms() {
        assert!((szego_rhs(&CircleSymbol::cosine(0.0, 1.0, 1)) - 1.0).abs() < 1e-15);
        assert!((szego_rhs(&CircleSymbol::cosine(0.0, 0.5, 2)) - 0.5).abs() < 1e-15);
        let sampled = CircleSymbol::from_function(|t| (2.0 * t).cos(), 8);
        assert!((szego_rhs(&sampled) - 0.5).abs() < 1e-14);
        assert!(sampled.tail() < 1e-10);
    }

    #[test]
    fn strong_szego_for_two_cosine() {
        let s = CircleSymbol::cosine(0.0, 1.0, 1);
        let rows = szego_sweep(&s, &[16, 64, 256]);
        assert!(rows.last().unwrap().residual < 1e-6);
    }

    #[test]
    fn gue_variance_of_identity() {
        assert!((gue_chebyshev_variance(&TestFunction::identity()) - 0.25).abs() < 1e-14);
        assert!((gue_chebyshev_variance(&TestFunction::monomial(2)) - 0.125).abs() < 1e-14);
        assert_eq!(gue_chebyshev_variance(&TestFunction::constant(2.0)), 0.0);
    }

    #[test]
    fn cue_projector_matches_toeplitz() {
        let s = CircleSymbol::from_nonnegative(&[
            Complex64::new(0.1, 0.0),
            Complex64::new(0.3, 0.1),
            Complex64::new(0.0, -0.2),
        ]);
        for n in [1, 5, 9] {
            let a = toeplitz_log_det(&s, n);
            let b = cue_log_laplace(&s, n, 256);
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}
