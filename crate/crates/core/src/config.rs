//! TOML experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::PotentialSpec;
use crate::schrodinger::{Truncation, MIN_GRID_POINTS};
use crate::test_function::TestFunction;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub potential: PotentialSpec,
    pub mu: f64,
    /// Strictly decreasing.
    pub hbar: Vec<f64>,
    pub grid: GridConfig,
    /// Test functions by name.
    #[serde(default)]
    pub functions: BTreeMap<String, TestFunction>,
    #[serde(default)]
    pub variance: Option<VarianceConfig>,
    #[serde(default)]
    pub clt: Option<CltConfig>,
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub toeplitz: Option<ToeplitzConfig>,
    #[serde(default)]
    pub szego: Option<SzegoConfig>,
    #[serde(default)]
    pub multicut: Option<MulticutConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    /// Interior points, one entry per `hbar`.
    pub points: Vec<usize>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    Truncation::DEFAULT_MARGIN
}

/// Harmonic refinement check on its own box.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub hbar: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub points: Vec<usize>,
    pub levels: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    pub functions: Vec<String>,
    /// Function whose exact variance is swept against the classical value.
    pub sweep: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    #[serde(default = "default_eta_max")]
    pub eta_max: f64,
    #[serde(default = "default_eta_per_side")]
    pub eta_per_side: usize,
    #[serde(default = "default_eta_step")]
    pub eta_step: f64,
    #[serde(default = "default_upsilon_terms")]
    pub upsilon_terms: usize,
    /// Functions for the log-Laplace residual sweep.
    #[serde(default)]
    pub szego: Vec<String>,
    /// Functions for the third and fourth cumulants.
    #[serde(default)]
    pub cumulants: Vec<String>,
    /// Functions for the trace-expansion bound; defaults to the union of the
    /// two lists above.
    #[serde(default)]
    pub upsilon: Vec<String>,
}

impl CltConfig {
    pub fn upsilon_functions(&self) -> Vec<String> {
        if !self.upsilon.is_empty() {
            return self.upsilon.clone();
        }
        let mut all: Vec<String> = self.szego.iter().chain(&self.cumulants).cloned().collect();
        all.sort();
        all.dedup();
        all
    }
}

fn default_eta_max() -> f64 {
    0.3
}
fn default_eta_per_side() -> usize {
    6
}
fn default_eta_step() -> f64 {
    0.05
}
fn default_upsilon_terms() -> usize {
    8
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub hbar: f64,
    pub points: usize,
    pub function: String,
    /// Counting-field run on a finer `hbar`.
    pub counting: Option<CountingConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingConfig {
    pub hbar: f64,
    pub points: usize,
    pub probes: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToeplitzConfig {
    pub function: String,
    pub hbar: Vec<f64>,
    pub points: Vec<usize>,
    #[serde(default = "default_band")]
    pub band: usize,
    #[serde(default = "default_half_width")]
    pub half_width: usize,
}

fn default_band() -> usize {
    2
}
fn default_half_width() -> usize {
    4
}

/// Circle reference sweep and the exhaustive combinatorial identity.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SzegoConfig {
    /// Real cosine coefficients `c_k`, the symbol is `c_0 + 2 sum c_k cos(k theta)`.
    pub cosine: Vec<f64>,
    pub sizes: Vec<usize>,
    #[serde(default = "default_dhk_n")]
    pub dhk_max_n: usize,
    #[serde(default = "default_dhk_range")]
    pub dhk_range: i64,
}

fn default_dhk_n() -> usize {
    6
}
fn default_dhk_range() -> i64 {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MulticutConfig {
    pub epsilon: f64,
    pub draws: usize,
    pub seed: u64,
    /// A fixed generic draw used for the decomposition checks.
    pub weights: Vec<f64>,
    pub function: String,
    #[serde(default = "default_multicut_eta")]
    pub eta: f64,
}

fn default_multicut_eta() -> f64 {
    0.2
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_hbar_list(what: &str, hbar: &[f64], points: &[usize]) -> Result<()> {
    if hbar.is_empty() {
        return Err(invalid(format!("{what}: hbar list is empty")));
    }
    if hbar.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(invalid(format!("{what}: hbar values must be positive")));
    }
    if hbar.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid(format!("{what}: hbar list must be strictly decreasing, got {hbar:?}")));
    }
    if points.len() != hbar.len() {
        return Err(invalid(format!(
            "{what}: {} grid sizes for {} hbar values",
            points.len(),
            hbar.len()
        )));
    }
    check_points(what, points)
}

fn check_points(what: &str, points: &[usize]) -> Result<()> {
    if let Some(n) = points.iter().find(|&&n| n < MIN_GRID_POINTS) {
        return Err(invalid(format!("{what}: grid size {n} below {MIN_GRID_POINTS}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.grid.x_min, self.grid.x_max)
    }

    pub fn function(&self, name: &str) -> Result<&TestFunction> {
        self.functions
            .get(name)
            .ok_or_else(|| invalid(format!("unknown test function '{name}'")))
    }

    /// Overrides every seed in the file.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(s) = &mut self.sampler {
            s.seed = seed;
        }
        if let Some(m) = &mut self.multicut {
            m.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(invalid("name is empty"));
        }
        self.potential.validate().map_err(invalid)?;
        if !self.mu.is_finite() {
            return Err(invalid("mu must be finite"));
        }
        let g = &self.grid;
        if !(g.x_min < g.x_max) || !g.x_min.is_finite() || !g.x_max.is_finite() {
            return Err(invalid(format!("grid box [{}, {}] is empty", g.x_min, g.x_max)));
        }
        if !(g.margin >= 0.0) {
            return Err(invalid("grid margin must be nonnegative"));
        }
        check_hbar_list("hbar", &self.hbar, &g.points)?;
        for (name, f) in &self.functions {
            if let TestFunction::GaussianBump { width, .. } = f {
                if !(*width > 0.0) {
                    return Err(invalid(format!("function '{name}': width must be positive")));
                }
            }
        }
        if let Some(v) = &self.variance {
            for name in v.functions.iter().chain(v.sweep.iter()) {
                self.function(name)?;
            }
        }
        if let Some(c) = &self.clt {
            for name in c.szego.iter().chain(&c.cumulants).chain(&c.upsilon) {
                self.function(name)?;
            }
            if !(c.eta_max > 0.0) || c.eta_per_side == 0 || !(c.eta_step > 0.0) {
                return Err(invalid("clt: eta_max, eta_per_side and eta_step must be positive"));
            }
            if c.upsilon_terms < 2 {
                return Err(invalid("clt: upsilon_terms must be at least 2"));
            }
        }
        if let Some(s) = &self.spectrum {
            if !(s.hbar > 0.0) || !(s.x_min < s.x_max) || s.levels == 0 || s.points.is_empty() {
                return Err(invalid("spectrum: malformed refinement check"));
            }
            check_points("spectrum", &s.points)?;
        }
        if let Some(s) = &self.sampler {
            self.function(&s.function)?;
            if s.n_samples < 2 || !(s.hbar > 0.0) {
                return Err(invalid("sampler: need n_samples >= 2 and positive hbar"));
            }
            check_points("sampler", &[s.points])?;
            if let Some(c) = &s.counting {
                if !(c.hbar > 0.0) {
                    return Err(invalid("sampler.counting: hbar must be positive"));
                }
                check_points("sampler.counting", &[c.points])?;
            }
        }
        if let Some(t) = &self.toeplitz {
            self.function(&t.function)?;
            check_hbar_list("toeplitz", &t.hbar, &t.points)?;
            if t.half_width == 0 {
                return Err(invalid("toeplitz: half_width must be positive"));
            }
        }
        if let Some(s) = &self.szego {
            if s.cosine.is_empty() || s.sizes.is_empty() || s.sizes.contains(&0) {
                return Err(invalid("szego: need cosine coefficients and positive sizes"));
            }
            if s.sizes.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("szego: sizes must be strictly increasing"));
            }
            if s.dhk_range < 0 {
                return Err(invalid("szego: dhk_range must be nonnegative"));
            }
        }
        if let Some(m) = &self.multicut {
            self.function(&m.function)?;
            if !(m.epsilon >= 0.0) || m.draws == 0 {
                return Err(invalid("multicut: need epsilon >= 0 and draws >= 1"));
            }
            if m.weights.iter().any(|w| w.abs() > m.epsilon) {
                return Err(invalid("multicut: weights must lie in [-epsilon, epsilon]"));
            }
        }
        Ok(())
    }
}
