//! Confining potentials `V` and the smooth cutoffs used to perturb them.

use serde::{Deserialize, Serialize};

/// A real potential on the line together with its derivative.
pub trait Potential: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

/// Smooth cutoff `chi` equal to one on `[start, end]` and zero outside
/// `[start - ramp, end + ramp]`, carrying the weight `w` in `V + w chi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellPerturbation {
    pub weight: f64,
    pub start: f64,
    pub end: f64,
    pub ramp: f64,
}

impl WellPerturbation {
    pub fn cutoff(&self, x: f64) -> f64 {
        if x < self.start {
            smooth_step((x - (self.start - self.ramp)) / self.ramp)
        } else if x > self.end {
            1.0 - smooth_step((x - self.end) / self.ramp)
        } else {
            1.0
        }
    }

    pub fn cutoff_derivative(&self, x: f64) -> f64 {
        if x < self.start {
            smooth_step_derivative((x - (self.start - self.ramp)) / self.ramp) / self.ramp
        } else if x > self.end {
            -smooth_step_derivative((x - self.end) / self.ramp) / self.ramp
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `x^2`
    Harmonic,
    /// `x^4 - x^2`
    DoubleWell,
    /// `x^4`
    Quartic,
    /// `sum_k c_k x^k`
    CustomPolynomial { coefficients: Vec<f64> },
    /// `V + sum_j w_j chi_j`
    MulticutPerturbed {
        base: Box<PotentialSpec>,
        perturbation: Vec<WellPerturbation>,
    },
}

impl PotentialSpec {
    pub fn perturbed(base: PotentialSpec, perturbation: Vec<WellPerturbation>) -> Self {
        PotentialSpec::MulticutPerturbed {
            base: Box::new(base),
            perturbation,
        }
    }

    /// Coarse structural check: polynomials must have even degree and a
    /// positive leading coefficient to be confining.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            PotentialSpec::CustomPolynomial { coefficients } => {
                let lead = coefficients.iter().rposition(|&c| c != 0.0);
                match lead {
                    Some(d) if d >= 2 && d % 2 == 0 && coefficients[d] > 0.0 => Ok(()),
                    _ => Err("custom polynomial must have even degree >= 2 and positive leading coefficient".into()),
                }
            }
            PotentialSpec::MulticutPerturbed { base, perturbation } => {
                for p in perturbation {
                    if !(p.ramp > 0.0) || !(p.end >= p.start) {
                        return Err(format!("malformed cutoff {p:?}"));
                    }
                }
                base.validate()
            }
            _ => Ok(()),
        }
    }
}

fn horner(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl Potential for PotentialSpec {
    fn value(&self, x: f64) -> f64 {
        match self {
            PotentialSpec::Harmonic => x * x,
            PotentialSpec::DoubleWell => {
                let x2 = x * x;
                x2 * x2 - x2
            }
            PotentialSpec::Quartic => {
                let x2 = x * x;
                x2 * x2
            }
            PotentialSpec::CustomPolynomial { coefficients } => horner(coefficients, x),
            PotentialSpec::MulticutPerturbed { base, perturbation } => {
                base.value(x)
                    + perturbation
                        .iter()
                        .map(|p| p.weight * p.cutoff(x))
                        .sum::<f64>()
            }
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            PotentialSpec::Harmonic => 2.0 * x,
            PotentialSpec::DoubleWell => 4.0 * x * x * x - 2.0 * x,
            PotentialSpec::Quartic => 4.0 * x * x * x,
            PotentialSpec::CustomPolynomial { coefficients } => {
                let d: Vec<f64> = coefficients
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, &c)| k as f64 * c)
                    .collect();
                horner(&d, x)
            }
            PotentialSpec::MulticutPerturbed { base, perturbation } => {
                base.derivative(x)
                    + perturbation
                        .iter()
                        .map(|p| p.weight * p.cutoff_derivative(x))
                        .sum::<f64>()
            }
        }
    }
}

impl<P: Potential + ?Sized> Potential for &P {
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        (**self).derivative(x)
    }
}

/// `C^infinity` transition from 0 (t <= 0) to 1 (t >= 1).
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

pub fn smooth_step_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        let da = a / (t * t);
        let db = -b / ((1.0 - t) * (1.0 - t));
        (da * b - a * db) / ((a + b) * (a + b))
    }
}

/// Monotone quintic `t^3 (10 - 15 t + 6 t^2)`, `C^2` at both ends.
pub fn quintic_step(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

pub fn quintic_step_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        30.0 * t * t * (1.0 - t) * (1.0 - t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(PotentialSpec::Harmonic.value(1.0), 1.0);
        assert_eq!(PotentialSpec::DoubleWell.value(1.0), 0.0);
        assert_eq!(PotentialSpec::Quartic.value(-2.0), 16.0);
        let p = PotentialSpec::CustomPolynomial {
            coefficients: vec![1.0, 0.0, -3.0, 0.0, 1.0],
        };
        assert_eq!(p.value(2.0), 1.0 - 12.0 + 16.0);
        assert_eq!(p.derivative(2.0), -12.0 + 32.0);
    }

    #[test]
    fn perturbation_is_flat_inside_its_interval() {
        let spec = PotentialSpec::perturbed(
            PotentialSpec::DoubleWell,
            vec![
                WellPerturbation { weight: 0.01, start: -1.0, end: -0.2, ramp: 0.1 },
                WellPerturbation { weight: 0.0, start: 0.2, end: 1.0, ramp: 0.1 },
            ],
        );
        let x: f64 = -0.7;
        assert!((spec.value(x) - (x.powi(4) - x * x + 0.01)).abs() < 1e-15);
        assert_eq!(spec.value(0.0), 0.0);
        assert!((spec.value(0.9) - PotentialSpec::DoubleWell.value(0.9)).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let spec = PotentialSpec::perturbed(
            PotentialSpec::DoubleWell,
            vec![WellPerturbation { weight: 0.3, start: -0.8, end: -0.3, ramp: 0.25 }],
        );
        for &x in &[-1.0, -0.9, -0.5, -0.2, -0.1, 0.4] {
            let h = 1e-6;
            let fd = (spec.value(x + h) - spec.value(x - h)) / (2.0 * h);
            assert!((fd - spec.derivative(x)).abs() < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn steps_are_monotone_with_correct_ends() {
        let mut prev = 0.0;
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let (s, q) = (smooth_step(t), quintic_step(t));
            assert!(s >= prev - 1e-15);
            prev = s;
            assert!((0.0..=1.0).contains(&q));
        }
        assert_eq!(smooth_step(1.0), 1.0);
        assert_eq!(quintic_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
    }
}
