//! Exact sampling of the projection DPP on grid nodes and Monte Carlo
//! estimates built on it.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::schrodinger::Projector;
use crate::test_function::TestFunction;

const DEGENERACY_TOL: f64 = 1e-10;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const JACKKNIFE_BLOCKS: usize = 20;

/// Generator for the `index`-th independent stream of `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sequential sampler for a fixed projector. Proposals come from the
/// normalized diagonal and are accepted with probability
/// `residual(i) / K(i, i)`, where the residual is the squared distance of the
/// coefficient row `u_i` from the span of the rows already chosen.
pub struct DppSampler<'a> {
    projector: &'a Projector,
    cumulative: Vec<f64>,
}

impl<'a> DppSampler<'a> {
    pub fn new(projector: &'a Projector) -> Self {
        let mut acc = 0.0;
        let cumulative = projector
            .density()
            .iter()
            .map(|&k| {
                acc += k;
                acc
            })
            .collect();
        DppSampler { projector, cumulative }
    }

    fn propose(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let target = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= target).min(self.cumulative.len() - 1)
    }

    /// One configuration as sorted grid indices.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let u = self.projector.basis();
        let rank = u.ncols();
        let density = self.projector.density();
        let mut frame: Vec<DVector<f64>> = Vec::with_capacity(rank);
        let mut chosen = Vec::with_capacity(rank);
        for step in 0..rank {
            loop {
                let i = self.propose(rng);
                let row = u.row(i).transpose();
                let captured: f64 = frame.iter().map(|b| b.dot(&row).powi(2)).sum();
                let residual = density[i] - captured;
                if residual < -DEGENERACY_TOL {
                    return Err(Error::NumericalDegeneracy { step, value: residual });
                }
                if rng.gen::<f64>() * density[i] < residual.max(0.0) {
                    let mut v = row;
                    // two passes of Gram-Schmidt keep the frame orthonormal
                    for _ in 0..2 {
                        for b in &frame {
                            let p = b.dot(&v);
                            v.axpy(-p, b, 1.0);
                        }
                    }
                    let norm = v.norm();
                    if norm <= DEGENERACY_TOL {
                        return Err(Error::NumericalDegeneracy { step, value: norm });
                    }
                    frame.push(v / norm);
                    chosen.push(i);
                    break;
                }
            }
        }
        chosen.sort_unstable();
        Ok(chosen)
    }
}

/// `sample_dpp` with one generator stream per `(seed, index)`.
pub fn sample_dpp(projector: &Projector, seed: u64, index: u64) -> Result<Vec<usize>> {
    DppSampler::new(projector).sample(&mut stream_rng(seed, index))
}

/// Independent configurations drawn with streams `0..n_samples` of `seed`.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub seed: u64,
    pub rank: usize,
    pub configurations: Vec<Vec<usize>>,
    points: Vec<f64>,
}

impl SampleBatch {
    pub fn generate(projector: &Projector, n_samples: usize, seed: u64) -> Result<Self> {
        let sampler = DppSampler::new(projector);
        let configurations = (0..n_samples as u64)
            .into_par_iter()
            .map(|k| sampler.sample(&mut stream_rng(seed, k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleBatch {
            seed,
            rank: projector.rank(),
            configurations,
            points: projector.grid().points().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.configurations.len()
    }
    pub fn is_empty(&self) -> bool {
        self.configurations.is_empty()
    }

    pub fn positions(&self, sample: usize) -> impl Iterator<Item = f64> + '_ {
        self.configurations[sample].iter().map(|&i| self.points[i])
    }

    /// `X(f)` for every configuration.
    pub fn linear_statistics(&self, f: &TestFunction) -> Vec<f64> {
        (0..self.len()).map(|s| self.positions(s).map(|x| f.value(x)).sum()).collect()
    }

    /// `h(x) = #{points <= x}` for every configuration.
    pub fn counts_below(&self, x: f64) -> Vec<f64> {
        let cut = self.points.partition_point(|&p| p <= x);
        self.configurations
            .iter()
            .map(|c| c.partition_point(|&i| i < cut) as f64)
            .collect()
    }

    /// `sample_id,points` with points separated by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "points"])?;
        for (s, _) in self.configurations.iter().enumerate() {
            let pts: Vec<String> = self.positions(s).map(crate::output::fmt_f64).collect();
            w.write_record([s.to_string(), pts.join(";")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sample mean, variance, skewness and excess kurtosis.
pub fn moments(values: &[f64]) -> [f64; 4] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return [mean, 0.0, 0.0, 0.0];
    }
    [mean, m2 * n / (n - 1.0), m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0]
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub n_samples: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub se_skewness: f64,
    pub se_kurtosis: f64,
    pub exact_mean: f64,
    pub exact_variance: f64,
    pub sigma2_reference: Option<f64>,
    pub z_mean: f64,
    pub z_variance_exact: f64,
    pub z_variance_reference: Option<f64>,
    pub z_skewness: f64,
    pub z_kurtosis: f64,
}

fn z(diff: f64, se: f64) -> f64 {
    if diff == 0.0 { 0.0 } else { diff / se }
}

/// Empirical moments of `X(f)` with bootstrap standard errors, compared with
/// the exact mean and variance and with a reference variance.
pub fn monte_carlo_clt(
    projector: &Projector,
    f: &TestFunction,
    batch: &SampleBatch,
    sigma2_reference: Option<f64>,
) -> MomentReport {
    let values = batch.linear_statistics(f);
    let [mean, variance, skewness, kurt] = moments(&values);
    let n = values.len();
    let boot: Vec<[f64; 4]> = (0..BOOTSTRAP_RESAMPLES as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(batch.seed, u64::MAX - b);
            let resample: Vec<f64> = (0..n).map(|_| values[rng.gen_range(0..n)]).collect();
            moments(&resample)
        })
        .collect();
    let se = |k: usize| {
        let m = boot.iter().map(|r| r[k]).sum::<f64>() / boot.len() as f64;
        (boot.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (boot.len() - 1) as f64).sqrt()
    };
    let (se_mean, se_variance, se_skewness, se_kurtosis) = (se(0), se(1), se(2), se(3));
    let exact_mean = crate::determinantal::linear_statistic_mean(projector, f);
    let exact_variance = crate::determinantal::exact_variance(projector, f);
    MomentReport {
        n_samples: n,
        mean,
        variance,
        skewness,
        excess_kurtosis: kurt,
        se_mean,
        se_variance,
        se_skewness,
        se_kurtosis,
        exact_mean,
        exact_variance,
        sigma2_reference,
        z_mean: z(mean - exact_mean, se_mean),
        z_variance_exact: z(variance - exact_variance, se_variance),
        z_variance_reference: sigma2_reference.map(|s| z(variance - s, se_variance)),
        z_skewness: z(skewness, se_skewness),
        z_kurtosis: z(kurt, se_kurtosis),
    }
}

/// Empirical covariance of the counting function with block-jackknife errors.
#[derive(Clone, Debug)]
pub struct CountingField {
    pub probes: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub standard_error: DMatrix<f64>,
}

fn covariance_of(columns: &[Vec<f64>], rows: impl Iterator<Item = usize> + Clone) -> DMatrix<f64> {
    let p = columns.len();
    let count = rows.clone().count() as f64;
    let means: Vec<f64> = columns.iter().map(|c| rows.clone().map(|r| c[r]).sum::<f64>() / count).collect();
    DMatrix::from_fn(p, p, |a, b| {
        rows.clone()
            .map(|r| (columns[a][r] - means[a]) * (columns[b][r] - means[b]))
            .sum::<f64>()
            / (count - 1.0)
    })
}

pub fn empirical_counting_field(batch: &SampleBatch, probes: &[f64]) -> CountingField {
    let columns: Vec<Vec<f64>> = probes.iter().map(|&x| batch.counts_below(x)).collect();
    let n = batch.len();
    let covariance = covariance_of(&columns, 0..n);
    let blocks = JACKKNIFE_BLOCKS.min(n);
    let block_len = n / blocks;
    let leave_out: Vec<DMatrix<f64>> = (0..blocks)
        .map(|b| {
            let (lo, hi) = (b * block_len, (b + 1) * block_len);
            covariance_of(&columns, (0..n).filter(move |&r| r < lo || r >= hi))
        })
        .collect();
    let mean = leave_out.iter().fold(DMatrix::zeros(probes.len(), probes.len()), |acc, m| acc + m) / blocks as f64;
    let g = blocks as f64;
    let var = leave_out
        .iter()
        .fold(DMatrix::zeros(probes.len(), probes.len()), |acc, m| acc + (m - &mean).map(|v| v * v))
        * ((g - 1.0) / g);
    CountingField { probes: probes.to_vec(), covariance, standard_error: var.map(f64::sqrt) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialSpec;
    use crate::schrodinger::{build_grid, solve, spectral_projector, Truncation};
    use std::sync::Arc;

    fn projector(hbar: f64, mu: f64) -> Projector {
        let grid = build_grid(-2.5, 2.5, 400).unwrap();
        let dec = solve(&grid, &PotentialSpec::Harmonic, hbar, mu + 1.0, Truncation::new(mu + 1.0)).unwrap();
        spectral_projector(Arc::new(dec), mu).unwrap()
    }

    #[test]
    fn cardinality_and_reproducibility() {
        let p = projector(0.05, 1.0);
        let a = SampleBatch::generate(&p, 50, 7).unwrap();
        let b = SampleBatch::generate(&p, 50, 7).unwrap();
        assert_eq!(a.configurations, b.configurations);
        for c in &a.configurations {
            assert_eq!(c.len(), 10);
            assert!(c.windows(2).all(|w| w[0] < w[1]));
        }
        let other = SampleBatch::generate(&p, 50, 8).unwrap();
        assert_ne!(a.configurations, other.configurations);
    }

    #[test]
    fn constant_statistic_has_zero_variance() {
        let p = projector(0.05, 1.0);
        let batch = SampleBatch::generate(&p, 1000, 1).unwrap();
        let r = monte_carlo_clt(&p, &TestFunction::constant(0.3), &batch, None);
        assert_eq!(r.variance, 0.0);
    }

    #[test]
    fn moments_of_known_data() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m[0] - 2.5).abs() < 1e-15);
        assert!((m[1] - 5.0 / 3.0).abs() < 1e-15);
        assert!(m[2].abs() < 1e-15);
    }
}
