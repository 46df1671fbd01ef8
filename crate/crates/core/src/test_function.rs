//! Smooth test functions `f` for linear statistics `X(f) = sum_i f(x_i)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A closure-backed test function with an explicit derivative.
#[derive(Clone)]
pub struct CustomSmooth {
    pub name: String,
    value: ScalarFn,
    derivative: ScalarFn,
}

impl fmt::Debug for CustomSmooth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSmooth").field("name", &self.name).finish()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `sum_k c_k x^k`
    Polynomial { coefficients: Vec<f64> },
    /// `amplitude * exp(-(x - center)^2 / (2 width^2))`
    GaussianBump {
        center: f64,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    #[serde(skip)]
    CustomSmooth(CustomSmooth),
}

fn one() -> f64 {
    1.0
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        TestFunction::Polynomial { coefficients: vec![c] }
    }

    pub fn identity() -> Self {
        TestFunction::Polynomial { coefficients: vec![0.0, 1.0] }
    }

    pub fn monomial(degree: usize) -> Self {
        let mut coefficients = vec![0.0; degree + 1];
        coefficients[degree] = 1.0;
        TestFunction::Polynomial { coefficients }
    }

    pub fn custom<F, D>(name: &str, value: F, derivative: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TestFunction::CustomSmooth(CustomSmooth {
            name: name.to_string(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        })
    }

    /// `c f`
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            TestFunction::Polynomial { coefficients } => TestFunction::Polynomial {
                coefficients: coefficients.iter().map(|a| c * a).collect(),
            },
            TestFunction::GaussianBump { center, width, amplitude } => TestFunction::GaussianBump {
                center: *center,
                width: *width,
                amplitude: c * amplitude,
            },
            TestFunction::CustomSmooth(inner) => {
                let (v, d) = (inner.value.clone(), inner.derivative.clone());
                TestFunction::custom(&format!("{c}*{}", inner.name), move |x| c * v(x), move |x| c * d(x))
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            TestFunction::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
            }
            TestFunction::GaussianBump { center, width, amplitude } => {
                let u = (x - center) / width;
                amplitude * (-0.5 * u * u).exp()
            }
            TestFunction::CustomSmooth(c) => (c.value)(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            TestFunction::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c),
            TestFunction::GaussianBump { center, width, amplitude } => {
                let u = (x - center) / width;
                -amplitude * u / width * (-0.5 * u * u).exp()
            }
            TestFunction::CustomSmooth(c) => (c.derivative)(x),
        }
    }

    /// True when `f` is identically constant, in which case every fluctuation
    /// quantity vanishes exactly.
    pub fn is_constant(&self) -> bool {
        match self {
            TestFunction::Polynomial { coefficients } => coefficients.iter().skip(1).all(|&c| c == 0.0),
            TestFunction::GaussianBump { amplitude, .. } => *amplitude == 0.0,
            TestFunction::CustomSmooth(_) => false,
        }
    }

    pub fn sample(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&x| self.value(x)).collect()
    }
}
