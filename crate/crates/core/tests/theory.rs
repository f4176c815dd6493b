use phasesep::theory::{
    relation_convergence, relation_residual, SampledSignal, TfGrid, TheoryConfig, QUADRATURE_FLOOR,
};
use phasesep::Error;
use std::f64::consts::PI;

#[test]
fn chirp_satisfies_both_relations_and_converges() {
    let cfg = TheoryConfig::default();
    let (coarse, fine) = relation_convergence(&cfg.signal(), &cfg.grid().unwrap(), cfg.threshold).unwrap();
    println!("coarse {}", coarse.summary());
    println!("fine   {}", fine.summary());
    assert!(coarse.passes(0.05));
    assert!(fine.passes(0.05));
    // centred differences are exact on a linear chirp; only quadrature error remains
    assert!(fine.median_relative_a <= coarse.median_relative_a.max(QUADRATURE_FLOOR));
    assert!(fine.median_relative_b <= coarse.median_relative_b.max(QUADRATURE_FLOOR));
}

#[test]
fn doubled_lambda_still_satisfies_both_relations() {
    let cfg = TheoryConfig {
        lambda: 0.04,
        duration: 1.0,
        ..TheoryConfig::default()
    };
    let report = relation_residual(&cfg.signal(), &cfg.grid().unwrap(), cfg.threshold).unwrap();
    println!("{}", report.summary());
    assert!(report.passes(0.05));
}

#[test]
fn residuals_are_finite_on_the_mask() {
    let cfg = TheoryConfig::default();
    let report = relation_residual(&cfg.signal(), &cfg.grid().unwrap(), cfg.threshold).unwrap();
    for ((i, j), &m) in report.mask.indexed_iter() {
        if m {
            assert!(report.residual_a[[i, j]].is_finite());
            assert!(report.residual_b[[i, j]].is_finite());
        }
    }
    let csv = report.to_csv();
    assert!(csv.starts_with("omega,t,residual_a,residual_b\n"));
    assert_eq!(csv.lines().count(), report.masked_points + 1);
}

#[test]
fn pure_tone_relation_a_holds_along_its_frequency() {
    let omega0 = 2.0 * PI * 100.0;
    let grid = TfGrid::spanning((0.4, 0.6), 1e-3, (omega0 - 40.0, omega0 + 40.0), 2.0, 0.02).unwrap();
    let report = relation_residual(&SampledSignal::tone(omega0, 0.0, 1.0, 2000.0), &grid, 0.01).unwrap();
    let i0 = 20;
    assert!((grid.omega(i0) - omega0).abs() < 1e-9);
    for j in 1..grid.t_count - 1 {
        assert!(report.residual_a[[i0, j]].abs() < 1e-6);
    }
}

#[test]
fn silence_is_an_empty_mask() {
    let cfg = TheoryConfig::default();
    let silent = cfg.signal().rotated(0.0);
    let silent = SampledSignal {
        samples: vec![Default::default(); silent.samples.len()],
        ..silent
    };
    assert!(matches!(
        relation_residual(&silent, &cfg.grid().unwrap(), 0.01),
        Err(Error::EmptyMask)
    ));
}

#[test]
fn quadratic_fm_converges_at_second_order() {
    let sig = SampledSignal::quadratic_fm(100.0, 2000.0, 0.5, 1.0, 2000.0);
    let grid = TfGrid::spanning((0.4, 0.6), 2e-3, (2.0 * PI * 60.0, 2.0 * PI * 160.0), 4.0, 0.02).unwrap();
    let (coarse, fine) = relation_convergence(&sig, &grid, 0.01).unwrap();
    let ratio_a = coarse.median_relative_a / fine.median_relative_a;
    let ratio_b = coarse.median_relative_b / fine.median_relative_b;
    assert!(ratio_a > 3.0 && ratio_b > 3.0, "{ratio_a} {ratio_b}");
}
