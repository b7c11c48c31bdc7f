mod common;

use common::frozen::*;
use common::*;
use mte_core::config::{bundled, LawSpec, OutcomeSpec, ScenarioConfig};
use mte_core::distributions::McOptions;
use mte_core::expr::Expr;
use mte_core::population::*;
use mte_core::selection::{thresholds, GFunction, Scenario};

fn outcome(mean: &str, noise: Option<LawSpec>) -> OutcomeSpec {
    OutcomeSpec {
        mean: Expr::parse(mean).unwrap(),
        noise,
    }
}

fn build(cfg: &ScenarioConfig) -> Scenario {
    cfg.scenario().unwrap()
}

fn pop<'a>(cfg: &ScenarioConfig, scn: &'a Scenario) -> Population<'a> {
    Population::new(scn, cfg.population_settings()).unwrap()
}

#[test]
fn constant_outcome_on_independent_v_gives_product_mass() {
    let mut cfg = bundled("trivial").unwrap();
    cfg.errors[1] = LawSpec::Normal { mean: 0.0, spread: 1e-10 };
    cfg.outcomes[1] = outcome("1", None);
    let scn = build(&cfg);
    let p = pop(&cfg, &scn);
    for q in [[0.3, 0.6], [0.9, 0.15], [0.5, 0.5]] {
        let e = p.cond_mean_gd(&GFunction::Identity, 1, &q).unwrap();
        assert!((e.value - q[0] * q[1]).abs() < 1e-6, "{q:?}: {}", e.value);
    }
}

#[test]
fn figure1_cond_mean_matches_monte_carlo() {
    let mut cfg = bundled("figure1").unwrap();
    cfg.outcomes[1] = outcome("v[2]", None);
    let scn = build(&cfg);
    let e = pop(&cfg, &scn).cond_mean_gd(&GFunction::Identity, 1, &[0.9, 0.5]).unwrap();
    let (m, se) = FIGURE1_COND_MEAN_V2_D1;
    assert!((e.value - m).abs() < 3.0 * se, "{} vs {m}", e.value);
}

#[test]
fn contrast_mass_vanishes_at_unit_threshold() {
    let cfg = bundled("figure1").unwrap();
    let scn = build(&cfg);
    let e = pop(&cfg, &scn).cond_mean_gd(&GFunction::Identity, 2, &[0.4, 1.0]).unwrap();
    assert!(e.value.abs() < 1e-12);
}

#[test]
fn constant_outcomes_extend_to_uniform_mass() {
    let mut cfg = bundled("figure1").unwrap();
    cfg.outcomes[1] = outcome("2.5", None);
    cfg.outcomes[2] = outcome("2.5", None);
    let scn = build(&cfg);
    let p = pop(&cfg, &scn);
    let b = BoundaryPoint::new(2, 0.4, 0.04).unwrap();
    for qj in [0.37, 0.4, 0.43] {
        let base = p.extended_cond_mean_gd(&GFunction::Identity, 1, &b, qj).unwrap();
        let con = p.extended_cond_mean_gd(&GFunction::Identity, 2, &b, qj).unwrap();
        assert!((base.value - 2.5 * qj).abs() < 1e-6);
        assert!((con.value - 2.5 * (1.0 - qj)).abs() < 1e-6);
    }
    assert!(p.extended_cond_mean_gd(&GFunction::Identity, 1, &b, 0.5).is_err());
}

#[test]
fn interior_values_converge_toward_the_boundary() {
    let cfg = bundled("figure1").unwrap();
    let scn = build(&cfg);
    let p = pop(&cfg, &scn);
    for t in [1, 2] {
        let target = p.boundary_values(&[GFunction::Identity], t, 2, 0.5).unwrap().0[0];
        let errs: Vec<f64> = [0.9, 0.99, 0.999]
            .iter()
            .map(|&o| {
                let q = p.point(2, 0.5, o).unwrap();
                (p.cond_mean_gd(&GFunction::Identity, t, &q).unwrap().value - target).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        assert!(errs[2] < 1e-3);
    }
}

#[test]
fn trivial_outcomes_give_linear_mte() {
    let cfg = bundled("trivial").unwrap();
    let scn = build(&cfg);
    let p = pop(&cfg, &scn);
    for q in [0.1, 0.35, 0.5, 0.8] {
        let b = BoundaryPoint::new(2, q, 0.04).unwrap();
        let m = p.mte_identified(&GFunction::Identity, &b, None).unwrap();
        assert!((m.mte - (2.0 * q - 1.0)).abs() < 1e-3);
        assert!((m.baseline.value - q).abs() < 1e-3);
        assert!((m.contrast_value.value - (1.0 - q)).abs() < 1e-3);
    }
}

#[test]
fn gaussian_linear_branches_match_closed_form() {
    let cfg = bundled("gaussian_linear").unwrap();
    let scn = build(&cfg);
    let p = pop(&cfg, &scn);
    let o = gaussian_linear_errors();
    let y1 = Linear::new(2.0, &[(0, 0.5), (2, 1.5)]);
    let y2 = Linear::new(-1.0, &[(0, 2.0), (2, -0.5)]);
    let b = BoundaryPoint::new(2, 0.5, 0.04).unwrap();
    let m = p.mte_identified(&GFunction::Identity, &b, None).unwrap();
    assert!((m.baseline.value - y1.cond_mean(&o, 2, 0.5)).abs() < 1e-3);
    assert!((m.contrast_value.value - y2.cond_mean(&o, 2, 0.5)).abs() < 1e-3);
    let (a, c) = p.oracle_mte(&GFunction::Identity, 2, 0.5).unwrap();
    assert!((a - y1.cond_mean(&o, 2, 0.5)).abs() < 1e-8);
    assert!((c - y2.cond_mean(&o, 2, 0.5)).abs() < 1e-8);
}

#[test]
fn k4_branches_match_closed_form() {
    let cfg = bundled("k4_general").unwrap();
    let scn = build(&cfg);
    let p = pop(&cfg, &scn);
    let o = k4_errors();
    let y1 = Linear::new(1.0, &[(0, 1.0), (2, -1.0), (3, 2.0)]);
    let y3 = Linear::new(0.5, &[(0, 0.5), (2, 1.0), (3, -1.0)]);
    let b = BoundaryPoint::new(3, 0.5, 0.04).unwrap();
    let m = p.mte_identified(&GFunction::Identity, &b, None).unwrap();
    assert!((m.baseline.value - y1.cond_mean(&o, 3, 0.5)).abs() < 2e-3);
    assert!((m.contrast_value.value - y3.cond_mean(&o, 3, 0.5)).abs() < 2e-3);
}

#[test]
fn limit_traces_recover_thresholds() {
    let cfg = bundled("gaussian_linear").unwrap();
    let scn = build(&cfg);
    let mc = McOptions::default();
    for z in &cfg.grids.z_points[..3] {
        let r = identify_thresholds_by_limit(&scn, z, &cfg.schedule(), mc).unwrap();
        let truth = thresholds(&scn, z).unwrap();
        assert_eq!(r.traces.len(), 2);
        for t in &r.traces {
            assert!((t.limit - truth.get(t.target).unwrap()).abs() < 1e-4);
            assert!(t.h.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        }
        assert!(r.all_pushed > 1.0 - 1e-4);
    }
}

#[test]
fn location_shift_gives_constant_qte() {
    let mut cfg = bundled("figure1").unwrap();
    let noise = Some(LawSpec::Normal { mean: 0.0, spread: 1.0 });
    cfg.outcomes[1] = outcome("3 + v[2]", noise.clone());
    cfg.outcomes[2] = outcome("v[2]", noise);
    let scn = build(&cfg);
    let p = pop(&cfg, &scn);
    let b = BoundaryPoint::new(2, 0.5, 0.04).unwrap();
    for tau in [0.25, 0.5, 0.75] {
        let r = p.qte(&b, tau, &cfg.grids.y, None).unwrap();
        assert!((r.qte - 3.0).abs() < 1e-3, "tau {tau}: {}", r.qte);
    }
}

#[test]
fn gaussian_linear_median_effect_matches_conditional_law() {
    let cfg = bundled("gaussian_linear").unwrap();
    let scn = build(&cfg);
    let p = pop(&cfg, &scn);
    let o = gaussian_linear_errors();
    let q = 0.5;
    let cdf = |a: f64, b: f64, c: f64, y: f64| {
        let f = |t: f64| {
            let v0 = o.cond_v_at(0, 2, q, t);
            (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt() * phi((y - a - b * v0 - c * q) / 0.5)
        };
        simpson(f, -9.0, 9.0, 2000)
    };
    let median = |a: f64, b: f64, c: f64| {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if cdf(a, b, c, mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let want = median(2.0, 0.5, 1.5) - median(-1.0, 2.0, -0.5);
    let grid: Vec<f64> = (0..=500).map(|i| -3.0 + i as f64 * 0.02).collect();
    let b = BoundaryPoint::new(2, q, 0.04).unwrap();
    let r = p.qte(&b, 0.5, &grid, None).unwrap();
    assert!((r.qte - want).abs() < 2e-3, "{} vs {want}", r.qte);
}

#[test]
fn extreme_quantile_stays_in_bounded_support() {
    let mut cfg = bundled("trivial").unwrap();
    // outcomes in [0, 1] up to light noise that keeps the integrands smooth
    let noise = Some(LawSpec::Normal { mean: 0.0, spread: 0.01 });
    cfg.outcomes[1] = outcome("v[2]", noise.clone());
    cfg.outcomes[2] = outcome("1 - v[2]", noise);
    let scn = build(&cfg);
    let p = pop(&cfg, &scn);
    let grid: Vec<f64> = (0..=200).map(|i| -0.5 + i as f64 * 0.01).collect();
    let b = BoundaryPoint::new(2, 0.5, 0.04).unwrap();
    let r = p.qte(&b, 0.01, &grid, Some(0.005)).unwrap();
    for x in [r.quantile_baseline, r.quantile_contrast] {
        assert!(x.is_finite() && (-0.4..=1.4).contains(&x), "{x}");
    }
}

#[test]
fn boundary_point_validates_its_arguments() {
    assert!(BoundaryPoint::new(2, 0.0, 0.04).is_err());
    assert!(BoundaryPoint::new(2, 0.5, 0.0).is_err());
    let cfg = bundled("figure1").unwrap();
    let scn = build(&cfg);
    let b = BoundaryPoint::new(1, 0.5, 0.04).unwrap();
    assert!(pop(&cfg, &scn).mte_identified(&GFunction::Identity, &b, None).is_err());
}
