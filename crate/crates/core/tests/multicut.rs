use fermion_clt::multicut::{build_well_family, multicut_variance_check, projector_decomposition_error, resonance_scan};
use fermion_clt::potential::PotentialSpec;
use fermion_clt::schrodinger::build_grid;
use fermion_clt::test_function::TestFunction;

const MU: f64 = -0.05;
const EPS: f64 = 0.01;
const DOMAIN: (f64, f64) = (-1.6, 1.6);
const WEIGHTS: [f64; 2] = [0.0042, -0.0061];

#[test]
fn decomposition_error_shrinks_with_hbar() {
    let fam = build_well_family(&PotentialSpec::DoubleWell, MU, &WEIGHTS, EPS, DOMAIN).unwrap();
    let errors: Vec<f64> = [(0.02, 1600), (0.01, 3200)]
        .iter()
        .map(|&(h, n)| {
            let grid = build_grid(DOMAIN.0, DOMAIN.1, n).unwrap();
            let d = projector_decomposition_error(&fam, &grid, h).unwrap();
            assert_eq!(d.rank_full, d.ranks.iter().sum::<usize>());
            d.error
        })
        .collect();
    assert!(errors[1] <= errors[0], "{errors:?}");
}

#[test]
fn pass_rate_does_not_drop_as_hbar_shrinks() {
    let sweep: Vec<_> =
        [(0.02, 1600), (0.01, 3200)].iter().map(|&(h, n)| (h, build_grid(DOMAIN.0, DOMAIN.1, n).unwrap())).collect();
    let (summary, rows) = resonance_scan(&PotentialSpec::DoubleWell, MU, EPS, DOMAIN, &sweep, 40, 8).unwrap();
    assert_eq!(rows.len(), 80);
    assert!(summary[1].pass_rate >= summary[0].pass_rate, "{summary:?}");
    let (_, symmetric) = resonance_scan(&PotentialSpec::DoubleWell, MU, 0.0, DOMAIN, &sweep[..1], 3, 8).unwrap();
    assert!(symmetric.iter().all(|r| !r.pass));
}

#[test]
fn statistic_inside_one_well_sees_only_that_well() {
    let fam = build_well_family(&PotentialSpec::DoubleWell, MU, &WEIGHTS, EPS, DOMAIN).unwrap();
    let grid = build_grid(DOMAIN.0, DOMAIN.1, 3200).unwrap();
    let f = TestFunction::GaussianBump { center: 0.6, width: 0.08, amplitude: 1.0 };
    let a = multicut_variance_check(&fam, &grid, 0.01, &f, 0.2).unwrap();
    let (left, right) = (a.variance_wells[0], a.variance_wells[1]);
    assert!(left < 1e-8 * right, "{left} {right}");
    assert!(a.sigma2_wells[0] < 1e-8 * a.sigma2_wells[1], "{:?}", a.sigma2_wells);
    assert!((a.variance_full / right - 1.0).abs() < 0.05, "{} vs {right}", a.variance_full);
}
