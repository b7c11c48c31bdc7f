mod common;

use common::frozen::*;
use mte_core::config::{bundled, LawSpec};
use mte_core::distributions::{joint_cdf_v, McOptions};
use mte_core::estimation::*;
use mte_core::population::{ApproachSchedule, BoundaryPoint, PopulationProbabilities};
use mte_core::selection::{thresholds, GFunction, ThresholdVector};
use mte_core::MteError;

#[test]
fn empty_samples_are_rejected() {
    let scn = bundled("figure1").unwrap().scenario().unwrap();
    assert!(simulate(&scn, 0, 1).is_err());
}

#[test]
fn same_seed_gives_identical_bytes() {
    let scn = bundled("figure1").unwrap().scenario().unwrap();
    let a = simulate(&scn, 5_000, 42).unwrap().to_csv();
    let b = simulate(&scn, 5_000, 42).unwrap().to_csv();
    let c = simulate(&scn, 5_000, 43).unwrap().to_csv();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn figure1_shares_match_monte_carlo() {
    let scn = bundled("figure1").unwrap().scenario().unwrap();
    let n = 100_000;
    let s = simulate(&scn, n, 3).unwrap();
    let shares = s.shares();
    for (p, (m, se)) in shares.iter().zip([FIGURE1_SHARE_0, FIGURE1_SHARE_1, FIGURE1_SHARE_2]) {
        let sd = (p * (1.0 - p) / n as f64).sqrt().hypot(se);
        assert!((p - m).abs() < 3.0 * sd, "{p} vs {m}");
    }
}

#[test]
fn dominant_baseline_gives_unit_h() {
    let mut cfg = bundled("figure1").unwrap();
    cfg.errors[0] = LawSpec::Normal { mean: 60.0, spread: 0.5 };
    cfg.errors[2] = LawSpec::Normal { mean: 60.0, spread: 1.0 };
    let scn = cfg.scenario().unwrap();
    let s = simulate(&scn, 20_000, 4).unwrap();
    assert_eq!(s.shares()[1], 1.0);
    for z in [[0.0, 0.0], [0.5, -0.3]] {
        assert!((estimate_h(&s, &z, KernelSpec::default()).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn figure1_h_is_close_to_population() {
    let scn = bundled("figure1").unwrap().scenario().unwrap();
    let s = simulate(&scn, 100_000, 5).unwrap();
    for z in [[0.0, 0.0], [0.3, -0.2], [-0.2, 0.3]] {
        let q = thresholds(&scn, &z).unwrap();
        let truth = joint_cdf_v(scn.errors(), scn.laws(), &q.values, McOptions::default()).unwrap().value;
        let hat = estimate_h(&s, &z, KernelSpec::default()).unwrap();
        assert!((hat - truth).abs() < 0.02, "{z:?}: {hat} vs {truth}");
    }
}

#[test]
fn far_instrument_is_sparse() {
    let scn = bundled("figure1").unwrap().scenario().unwrap();
    let s = simulate(&scn, 20_000, 6).unwrap();
    assert!(matches!(
        estimate_h(&s, &[40.0, 0.0], KernelSpec::default()),
        Err(MteError::SparseRegion { .. })
    ));
}

#[test]
fn gaussian_thresholds_at_central_point() {
    let cfg = bundled("gaussian_linear").unwrap();
    let scn = cfg.scenario().unwrap();
    let s = simulate(&scn, 100_000, 7).unwrap();
    let probs = SampleProbabilities::new(&s, cfg.estimation.kernel_spec()).unwrap();
    let z = [0.1, 1.0];
    let est = estimate_thresholds(&probs, &scn, &z, &cfg.estimation.schedule()).unwrap();
    let truth = thresholds(&scn, &z).unwrap();
    for t in &est.targets {
        assert!((t.estimate - truth.get(t.target).unwrap()).abs() <= 0.05, "{t:?}");
    }
}

#[test]
fn population_fed_thresholds_are_exact() {
    let cfg = bundled("figure1").unwrap();
    let scn = cfg.scenario().unwrap();
    let probs = PopulationProbabilities {
        scenario: &scn,
        mc: McOptions::default(),
    };
    for z in &cfg.grids.z_points {
        let est = estimate_thresholds(&probs, &scn, z, &cfg.schedule()).unwrap();
        let got: ThresholdVector = est.vector(scn.baseline());
        let truth = thresholds(&scn, z).unwrap();
        for (a, b) in got.values.iter().zip(&truth.values) {
            assert!((a - b).abs() < 1e-4, "{z:?}: {a} vs {b}");
        }
    }
}

#[test]
fn single_step_schedule_warns() {
    let cfg = bundled("figure1").unwrap();
    let scn = cfg.scenario().unwrap();
    let s = simulate(&scn, 50_000, 8).unwrap();
    let probs = SampleProbabilities::new(&s, cfg.estimation.kernel_spec()).unwrap();
    let schedule = ApproachSchedule {
        steps: 1,
        ..cfg.estimation.schedule()
    };
    let est = estimate_thresholds(&probs, &scn, &[0.0, 0.0], &schedule).unwrap();
    for t in &est.targets {
        assert_eq!(t.points.len(), 1);
        assert_eq!(t.estimate, t.points[0].h);
        assert!(!t.warnings.is_empty());
    }
}

#[test]
fn trivial_mte_is_near_zero() {
    let cfg = bundled("trivial").unwrap();
    let scn = cfg.scenario().unwrap();
    let spec = cfg.estimation.kernel_spec();
    let s = simulate(&scn, 200_000, 9).unwrap();
    let probs = SampleProbabilities::new(&s, spec).unwrap();
    let ot = observation_thresholds(&probs, &s, &scn, &cfg.estimation.schedule(), cfg.estimation.threshold_grid, &spec)
        .unwrap();
    let b = BoundaryPoint::new(2, 0.5, 0.04).unwrap();
    let m = estimate_mte(&s, &scn, &GFunction::Identity, &b, &spec, &ot).unwrap();
    assert!(m.mte.abs() < 0.1, "{m:?}");
    assert!(m.se > 0.0 && m.baseline.effective >= MIN_BOUNDARY_EFFECTIVE);
    assert!((m.report(0.0).abs_error - m.mte.abs()).abs() < 1e-15);
}

#[test]
fn bounded_instruments_cannot_reach_the_boundary() {
    let mut cfg = bundled("trivial").unwrap();
    cfg.instruments = vec![LawSpec::Uniform { lo: 0.0, hi: 1.0 }; 2];
    let scn = cfg.scenario().unwrap();
    let spec = cfg.estimation.kernel_spec();
    let s = simulate(&scn, 50_000, 10).unwrap();
    // even exact thresholds leave no data near Q = 1
    let values: Vec<Vec<f64>> = {
        let q: Vec<Vec<f64>> = (0..s.len()).map(|i| thresholds(&scn, s.z_row(i)).unwrap().values).collect();
        (0..2).map(|c| q.iter().map(|r| r[c]).collect()).collect()
    };
    let ot = ObservationThresholds {
        grids: Vec::new(),
        values,
        warnings: Vec::new(),
    };
    let b = BoundaryPoint::new(2, 0.5, 0.04).unwrap();
    assert!(matches!(
        estimate_mte(&s, &scn, &GFunction::Identity, &b, &spec, &ot),
        Err(MteError::BoundarySparsity { .. })
    ));
}
