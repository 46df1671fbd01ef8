use std::f64::consts::PI;
use std::path::PathBuf;

use fermion_clt::classical::Dynamics;
use fermion_clt::config::ExperimentConfig;
use fermion_clt::determinantal::linear_statistic_mean;
use fermion_clt::experiments::fermi_projector;
use fermion_clt::potential::PotentialSpec;
use fermion_clt::schrodinger::{build_grid, Projector};
use fermion_clt::test_function::TestFunction;

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    ExperimentConfig::load(&path).unwrap()
}

fn coarsest(cfg: &ExperimentConfig) -> Projector {
    let grid = build_grid(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.points[0]).unwrap();
    fermi_projector(&cfg.potential, &grid, cfg.hbar[0], cfg.mu, cfg.grid.margin).unwrap()
}

#[test]
fn shipped_projectors_are_orthonormal_and_idempotent() {
    for name in ["harmonic", "quartic", "double_well"] {
        let p = coarsest(&config(name));
        assert!(p.rank() > 0, "{name}");
        assert!(p.source().orthonormality_residual() < 1e-10, "{name}");
        assert!(p.idempotency_residual() < 1e-10, "{name}");
    }
}

#[test]
fn level_spacing_at_the_fermi_level_follows_the_period() {
    for name in ["harmonic", "quartic"] {
        let cfg = config(name);
        let p = coarsest(&cfg);
        let ev = p.source().eigenvalues();
        let spacing = ev[p.rank()] - ev[p.rank() - 1];
        let period = Dynamics::new(&cfg.potential, cfg.domain()).period(cfg.mu).unwrap();
        let unit = 2.0 * PI * cfg.hbar[0] / period;
        let r = spacing / unit;
        assert!((0.2..=5.0).contains(&r), "{name}: spacing / (2 pi hbar / T) = {r}");
    }
}

/// Density at `x = 2` relative to its maximum, for the harmonic droplet `[-1, 1]`.
fn outside_ratio(hbar: f64) -> f64 {
    let grid = build_grid(-4.0, 4.0, 1600).unwrap();
    let p = fermi_projector(&PotentialSpec::Harmonic, &grid, hbar, 1.0, 2.0).unwrap();
    let rho = p.density();
    let at = grid.last_index_at_or_below(2.0).unwrap();
    rho[at] / rho.iter().cloned().fold(0.0, f64::max)
}

#[test]
fn density_decays_exponentially_outside_the_droplet() {
    let coarse = outside_ratio(0.2);
    let fine = outside_ratio(0.1);
    assert!(coarse < 1e-3, "{coarse}");
    assert!(fine < 1e-3 * coarse, "{fine} vs {coarse}");
    // leading order only: the hbar-dependent prefactor is not modelled
    let action = 2.0 * (3f64.sqrt() - 0.5 * (2.0 + 3f64.sqrt()).ln());
    let rate = -(fine.ln() - coarse.ln()) / (1.0 / 0.1 - 1.0 / 0.2);
    assert!((rate / action - 1.0).abs() < 0.25, "rate {rate}, action {action}");
}

#[test]
fn odd_statistics_have_zero_mean_in_even_potentials() {
    let cfg = config("harmonic");
    let p = coarsest(&cfg);
    let mean = linear_statistic_mean(&p, &TestFunction::identity());
    assert!(mean.abs() < 1e-8 * p.rank() as f64, "{mean}");
    let m2 = linear_statistic_mean(&p, &TestFunction::monomial(2));
    assert!(m2 > 0.0);
}
