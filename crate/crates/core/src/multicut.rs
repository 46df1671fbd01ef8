//! Multi-well droplets: localized single-well potentials, the eigenvalue
//! separation conditions, projector decomposition and variance additivity.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::classical::{sublevel_components, Dynamics};
use crate::determinantal::{exact_variance, log_laplace_real};
use crate::error::{Error, Result};
use crate::potential::{quintic_step, quintic_step_derivative, Potential, PotentialSpec, WellPerturbation};
use crate::sampling::stream_rng;
use crate::schrodinger::{discretize_hamiltonian, eigendecompose, spectral_projector_with_tolerance, Grid, Projector, Truncation};
use crate::test_function::TestFunction;

/// Height of the plateau above `mu` that localized wells rise to.
pub const PLATEAU_OFFSET: f64 = 2.0;

/// `(1 - q) V_w + q P`, where `q` rises from 0 to 1 by a quintic over a
/// bridge next to each side of the host interval that faces another well.
#[derive(Clone, Debug)]
pub struct LocalizedWell {
    pub base: PotentialSpec,
    pub plateau: f64,
    pub host: (f64, f64),
    /// `(start, width)` of the bridge left of the host interval.
    pub left_bridge: Option<(f64, f64)>,
    pub right_bridge: Option<(f64, f64)>,
}

impl LocalizedWell {
    fn blend(&self, x: f64) -> (f64, f64) {
        if let Some((end, width)) = self.left_bridge {
            if x < end {
                let t = (end - x) / width;
                return (quintic_step(t), -quintic_step_derivative(t) / width);
            }
        }
        if let Some((start, width)) = self.right_bridge {
            if x > start {
                let t = (x - start) / width;
                return (quintic_step(t), quintic_step_derivative(t) / width);
            }
        }
        (0.0, 0.0)
    }
}

impl Potential for LocalizedWell {
    fn value(&self, x: f64) -> f64 {
        let (q, _) = self.blend(x);
        if q == 1.0 {
            return self.plateau;
        }
        (1.0 - q) * self.base.value(x) + q * self.plateau
    }

    fn derivative(&self, x: f64) -> f64 {
        let (q, dq) = self.blend(x);
        if q == 1.0 {
            return 0.0;
        }
        (1.0 - q) * self.base.derivative(x) + dq * (self.plateau - self.base.value(x))
    }
}

#[derive(Clone, Debug)]
pub struct WellFamily {
    pub mu: f64,
    pub epsilon: f64,
    pub weights: Vec<f64>,
    /// `V + sum_j w_j chi_j`
    pub full: PotentialSpec,
    /// Components of `{V <= mu + 2 epsilon}`.
    pub hosts: Vec<(f64, f64)>,
    pub wells: Vec<LocalizedWell>,
    pub domain: (f64, f64),
}

/// Splits `{V <= mu}` into its wells and builds one localized potential per
/// well, each carrying the weight `w_j`.
pub fn build_well_family(
    base: &PotentialSpec,
    mu: f64,
    weights: &[f64],
    epsilon: f64,
    domain: (f64, f64),
) -> Result<WellFamily> {
    let at_mu = sublevel_components(base, mu, domain);
    let hosts = sublevel_components(base, mu + 2.0 * epsilon, domain);
    if at_mu.len() < 2 || hosts.len() != at_mu.len() || weights.len() != at_mu.len() {
        return Err(Error::NotMultiCut { expected: weights.len(), found: at_mu.len() });
    }
    let l = hosts.len();
    let gap_left = |j: usize| (j > 0).then(|| hosts[j].0 - hosts[j - 1].1);
    let gap_right = |j: usize| (j + 1 < l).then(|| hosts[j + 1].0 - hosts[j].1);
    let min_gap = (0..l - 1).map(|j| hosts[j + 1].0 - hosts[j].1).fold(f64::INFINITY, f64::min);
    let perturbation = (0..l)
        .map(|j| {
            let ramp = 0.5 * gap_left(j).unwrap_or(min_gap).min(gap_right(j).unwrap_or(min_gap));
            WellPerturbation { weight: weights[j], start: hosts[j].0, end: hosts[j].1, ramp }
        })
        .collect();
    let full = PotentialSpec::perturbed(base.clone(), perturbation);
    let plateau = mu + PLATEAU_OFFSET;
    let wells: Vec<LocalizedWell> = (0..l)
        .map(|j| LocalizedWell {
            base: full.clone(),
            plateau,
            host: hosts[j],
            left_bridge: gap_left(j).map(|g| (hosts[j].0, 0.5 * g)),
            right_bridge: gap_right(j).map(|g| (hosts[j].1, 0.5 * g)),
        })
        .collect();
    for w in &wells {
        Dynamics::new(w, domain).turning_points(mu)?;
    }
    Ok(WellFamily { mu, epsilon, weights: weights.to_vec(), full, hosts, wells, domain })
}

impl WellFamily {
    pub fn len(&self) -> usize {
        self.wells.len()
    }
    pub fn is_empty(&self) -> bool {
        self.wells.is_empty()
    }

    /// Smallest value of `W_j` on grid points outside `I_j'`.
    pub fn min_outside_host(&self, grid: &Grid) -> f64 {
        self.wells
            .iter()
            .flat_map(|w| {
                grid.points()
                    .iter()
                    .filter(move |&&x| x < w.host.0 || x > w.host.1)
                    .map(move |&x| w.value(x))
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn truncation(&self) -> Truncation {
        Truncation::new(self.mu)
    }

    fn cap(&self) -> f64 {
        self.mu + self.epsilon.max(0.05) + 0.1
    }

    /// Eigenvalues of every localized well up to just above `mu + epsilon`.
    pub fn well_spectra(&self, grid: &Grid, hbar: f64) -> Result<Vec<Vec<f64>>> {
        self.wells
            .iter()
            .map(|w| {
                let h = discretize_hamiltonian(grid, w, hbar, self.truncation())?;
                Ok(h.eigenvalues_below(self.cap()))
            })
            .collect()
    }

    fn projector_for(&self, potential: &dyn Potential, grid: &Grid, hbar: f64) -> Result<Projector> {
        let h = discretize_hamiltonian(grid, potential, hbar, self.truncation())?;
        let dec = eigendecompose(&h, self.cap(), grid, hbar)?;
        // separated families keep every level at least hbar^3 from mu
        spectral_projector_with_tolerance(Arc::new(dec), self.mu, 0.5 * separation_threshold(hbar))
    }

    pub fn full_projector(&self, grid: &Grid, hbar: f64) -> Result<Projector> {
        self.projector_for(&self.full, grid, hbar)
    }

    pub fn well_projectors(&self, grid: &Grid, hbar: f64) -> Result<Vec<Projector>> {
        self.wells.par_iter().map(|w| self.projector_for(w, grid, hbar)).collect()
    }
}

/// The two eigenvalue separation conditions, checked on every level
/// `<= mu + eps` so that all occupied states take part.
#[derive(Clone, Debug, Serialize)]
pub struct SeparationReport {
    pub hbar: f64,
    pub threshold: f64,
    /// Smallest gap between eigenvalues of different wells; infinite when
    /// there is nothing to compare.
    pub min_cross_gap: f64,
    pub min_mu_distance: f64,
    pub cross_pass: bool,
    pub distance_pass: bool,
    pub pass: bool,
}

/// Separation threshold `hbar^3`.
pub fn separation_threshold(hbar: f64) -> f64 {
    hbar * hbar * hbar
}

pub fn separation_from_spectra(spectra: &[Vec<f64>], mu: f64, epsilon: f64, hbar: f64) -> SeparationReport {
    let window = |l: &&f64| **l <= mu + epsilon;
    let mut min_cross_gap = f64::INFINITY;
    for (i, a) in spectra.iter().enumerate() {
        for b in &spectra[i + 1..] {
            for x in a.iter().filter(window) {
                for y in b.iter().filter(window) {
                    min_cross_gap = min_cross_gap.min((x - y).abs());
                }
            }
        }
    }
    let min_mu_distance = spectra
        .iter()
        .flatten()
        .filter(window)
        .map(|l| (l - mu).abs())
        .fold(f64::INFINITY, f64::min);
    let threshold = separation_threshold(hbar);
    let cross_pass = min_cross_gap > threshold;
    let distance_pass = min_mu_distance > threshold;
    SeparationReport {
        hbar,
        threshold,
        min_cross_gap,
        min_mu_distance,
        cross_pass,
        distance_pass,
        pass: cross_pass && distance_pass,
    }
}

pub fn separation_report(family: &WellFamily, grid: &Grid, hbar: f64) -> Result<SeparationReport> {
    let spectra = family.well_spectra(grid, hbar)?;
    Ok(separation_from_spectra(&spectra, family.mu, family.epsilon, hbar))
}

fn require_separation(family: &WellFamily, grid: &Grid, hbar: f64) -> Result<SeparationReport> {
    let sep = separation_report(family, grid, hbar)?;
    if !sep.pass {
        return Err(Error::SeparationFailed {
            cross_gap: sep.min_cross_gap,
            mu_distance: sep.min_mu_distance,
            threshold: sep.threshold,
        });
    }
    Ok(sep)
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    pub hbar: f64,
    pub rank_full: usize,
    pub ranks: Vec<usize>,
    /// `||Pi - sum_j Pi_j||_HS`
    pub error: f64,
    /// `max_{i != j} ||[Pi_i, Pi_j]||_HS`
    pub max_commutator: f64,
    pub separation: SeparationReport,
}

/// `||P - Q||_F` for the projector `P = U U^T` and `Q = sum_j W_j W_j^T`:
/// `N - 2 ||U^T W||^2 + ||W^T W||^2` under the square root.
pub fn decomposition_error(full: &Projector, wells: &[Projector]) -> f64 {
    let n = full.basis().nrows();
    let cols: usize = wells.iter().map(|p| p.rank()).sum();
    let mut w = DMatrix::zeros(n, cols);
    let mut at = 0;
    for p in wells {
        w.columns_mut(at, p.rank()).copy_from(p.basis());
        at += p.rank();
    }
    let cross = full.basis().tr_mul(&w).norm_squared();
    let gram = w.tr_mul(&w).norm_squared();
    (full.rank() as f64 - 2.0 * cross + gram).max(0.0).sqrt()
}

/// `||[P_i, P_j]||_F = sqrt(2 (||C||^2 - ||C C^T||^2))` with `C = V_i^T V_j`.
pub fn commutator_norm(a: &Projector, b: &Projector) -> f64 {
    let c = a.basis().tr_mul(b.basis());
    let cct = &c * c.transpose();
    (2.0 * (c.norm_squared() - cct.norm_squared())).max(0.0).sqrt()
}

pub fn projector_decomposition_error(family: &WellFamily, grid: &Grid, hbar: f64) -> Result<DecompositionReport> {
    let separation = require_separation(family, grid, hbar)?;
    let full = family.full_projector(grid, hbar)?;
    let wells = family.well_projectors(grid, hbar)?;
    let mut max_commutator = 0.0f64;
    for i in 0..wells.len() {
        for j in i + 1..wells.len() {
            max_commutator = max_commutator.max(commutator_norm(&wells[i], &wells[j]));
        }
    }
    Ok(DecompositionReport {
        hbar,
        rank_full: full.rank(),
        ranks: wells.iter().map(Projector::rank).collect(),
        error: decomposition_error(&full, &wells),
        max_commutator,
        separation,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AdditivityReport {
    pub hbar: f64,
    pub variance_full: f64,
    /// `sum_j Var_{Pi_j}`
    pub variance_wells: Vec<f64>,
    /// `sum_j Sigma^2(W_j)` classical predictions, one per well
    pub sigma2_wells: Vec<f64>,
    /// `|Var_full / sum_j Sigma^2_j - 1|`
    pub relative_gap_classical: f64,
    pub relative_gap_exact: f64,
    pub eta: f64,
    pub log_laplace_full: f64,
    pub log_laplace_wells: Vec<f64>,
    pub log_laplace_gap: f64,
}

pub fn multicut_variance_check(
    family: &WellFamily,
    grid: &Grid,
    hbar: f64,
    f: &TestFunction,
    eta: f64,
) -> Result<AdditivityReport> {
    require_separation(family, grid, hbar)?;
    let full = family.full_projector(grid, hbar)?;
    let wells = family.well_projectors(grid, hbar)?;
    let variance_full = exact_variance(&full, f);
    let variance_wells: Vec<f64> = wells.iter().map(|p| exact_variance(p, f)).collect();
    let sigma2_wells = family
        .wells
        .iter()
        .map(|w| Dynamics::new(w, family.domain).predicted_variance_fourier(f, family.mu))
        .collect::<Result<Vec<f64>>>()?;
    let classical: f64 = sigma2_wells.iter().sum();
    let exact: f64 = variance_wells.iter().sum();
    let log_laplace_full = log_laplace_real(&full, f, eta)?;
    let log_laplace_wells = wells
        .iter()
        .map(|p| log_laplace_real(p, f, eta))
        .collect::<Result<Vec<f64>>>()?;
    Ok(AdditivityReport {
        hbar,
        variance_full,
        relative_gap_classical: (variance_full / classical - 1.0).abs(),
        relative_gap_exact: (variance_full / exact - 1.0).abs(),
        variance_wells,
        sigma2_wells,
        eta,
        log_laplace_gap: (log_laplace_full - log_laplace_wells.iter().sum::<f64>()).abs(),
        log_laplace_full,
        log_laplace_wells,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub hbar: f64,
    pub draw: usize,
    pub weights: Vec<f64>,
    pub pass: bool,
    pub min_gap: f64,
    pub min_mu_distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanSummary {
    pub hbar: f64,
    pub draws: usize,
    pub pass_rate: f64,
}

/// For each `hbar`, draws `w` uniformly in `[-eps, eps]^l` (stream `k` of
/// `seed` for draw `k`) and records whether the separation conditions hold.
pub fn resonance_scan(
    base: &PotentialSpec,
    mu: f64,
    epsilon: f64,
    domain: (f64, f64),
    sweep: &[(f64, Grid)],
    draws: usize,
    seed: u64,
) -> Result<(Vec<ScanSummary>, Vec<ScanRow>)> {
    let wells = sublevel_components(base, mu, domain).len();
    let weights: Vec<Vec<f64>> = (0..draws as u64)
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            (0..wells)
                .map(|_| if epsilon > 0.0 { rng.gen_range(-epsilon..=epsilon) } else { 0.0 })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (hbar, grid) in sweep {
        let batch = weights
            .par_iter()
            .enumerate()
            .map(|(k, w)| {
                let family = build_well_family(base, mu, w, epsilon, domain)?;
                let sep = separation_report(&family, grid, *hbar)?;
                Ok(ScanRow {
                    hbar: *hbar,
                    draw: k,
                    weights: w.clone(),
                    pass: sep.pass,
                    min_gap: sep.min_cross_gap,
                    min_mu_distance: sep.min_mu_distance,
                })
            })
            .collect::<Result<Vec<ScanRow>>>()?;
        let passed = batch.iter().filter(|r| r.pass).count();
        summary.push(ScanSummary { hbar: *hbar, draws, pass_rate: passed as f64 / draws.max(1) as f64 });
        rows.extend(batch);
    }
    Ok((summary, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schrodinger::build_grid;

    const DOMAIN: (f64, f64) = (-1.6, 1.6);

    #[test]
    fn double_well_splits_into_two_wells() {
        let fam = build_well_family(&PotentialSpec::DoubleWell, -0.05, &[0.0, 0.0], 0.01, DOMAIN).unwrap();
        assert_eq!(fam.len(), 2);
        assert!((fam.hosts[0].0 + fam.hosts[1].1).abs() < 1e-12);
        let grid = build_grid(DOMAIN.0, DOMAIN.1, 800).unwrap();
        assert!(fam.min_outside_host(&grid) >= -0.05 + 0.005);
        let err = build_well_family(&PotentialSpec::Harmonic, 1.0, &[0.0], 0.01, (-3.0, 3.0));
        assert!(matches!(err, Err(Error::NotMultiCut { found: 1, .. })));
    }

    #[test]
    fn weights_shift_turning_points_monotonically() {
        let flat = build_well_family(&PotentialSpec::DoubleWell, -0.05, &[0.0, 0.0], 0.01, DOMAIN).unwrap();
        let tilted = build_well_family(&PotentialSpec::DoubleWell, -0.05, &[0.01, -0.01], 0.01, DOMAIN).unwrap();
        let tp = |f: &WellFamily, j: usize| Dynamics::new(&f.wells[j], DOMAIN).turning_points(-0.05).unwrap();
        let (a0, b0) = tp(&flat, 0);
        let (a1, b1) = tp(&tilted, 0);
        assert!(b1 - a1 < b0 - a0);
        let (c0, d0) = tp(&flat, 1);
        let (c1, d1) = tp(&tilted, 1);
        assert!(d1 - c1 > d0 - c0);
        // the lifted well matches the closed-form root of x^4 - x^2 + 0.01 = -0.05
        let root = ((1.0 - (1.0f64 - 4.0 * 0.06).sqrt()) / 2.0).sqrt();
        assert!((b1 + root).abs() < 1e-10);
    }

    #[test]
    fn localized_well_derivative_matches_differences() {
        let fam = build_well_family(&PotentialSpec::DoubleWell, -0.05, &[0.004, -0.002], 0.01, DOMAIN).unwrap();
        for w in &fam.wells {
            for i in 0..300 {
                let x = -1.5 + 0.01 * i as f64;
                let h = 1e-6;
                let fd = (w.value(x + h) - w.value(x - h)) / (2.0 * h);
                assert!((fd - w.derivative(x)).abs() < 1e-6, "x = {x}");
            }
        }
    }

    #[test]
    fn separation_conditions() {
        let grid = build_grid(DOMAIN.0, DOMAIN.1, 1200).unwrap();
        let sym = build_well_family(&PotentialSpec::DoubleWell, -0.05, &[0.0, 0.0], 0.01, DOMAIN).unwrap();
        assert!(!separation_report(&sym, &grid, 0.02).unwrap().pass);
        let generic = build_well_family(&PotentialSpec::DoubleWell, -0.05, &[0.0042, -0.0061], 0.01, DOMAIN).unwrap();
        assert!(separation_report(&generic, &grid, 0.02).unwrap().pass);
        let single = separation_from_spectra(&[vec![-0.3, -0.1, 0.2]], -0.05, 0.01, 0.02);
        assert!(single.pass && single.min_cross_gap.is_infinite());
    }

    #[test]
    fn commutator_and_decomposition_of_orthogonal_pieces() {
        let grid = build_grid(DOMAIN.0, DOMAIN.1, 1200).unwrap();
        let fam = build_well_family(&PotentialSpec::DoubleWell, -0.05, &[0.0042, -0.0061], 0.01, DOMAIN).unwrap();
        let report = projector_decomposition_error(&fam, &grid, 0.02).unwrap();
        assert_eq!(report.rank_full, report.ranks.iter().sum::<usize>());
        assert!(report.max_commutator < 1.0);
        let p = fam.full_projector(&grid, 0.02).unwrap();
        assert!(commutator_norm(&p, &p) < 1e-7);
        assert!(decomposition_error(&p, std::slice::from_ref(&p)) < 1e-7);
    }
}
