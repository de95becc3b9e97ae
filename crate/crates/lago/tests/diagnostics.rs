use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lago::cost::{CostFunction, CostTerm};
use lago::diagnostics::{dominance_design, dominance_threshold, sample_ball, verify_assumption7, Assumption7Config};
use lago::model::{Bounds, FittedModel, Link};
use lago::optimizer::Direction;
use lago::power::Approach;

const BETA: [f64; 3] = [0.1, 0.3, 0.15];

fn config(epsilon: f64) -> Assumption7Config {
    Assumption7Config { epsilon, samples: 200, eta: 0.05, extended: false, grid_points: 1, seed: 11, direction: Direction::Increase }
}

fn fitted() -> FittedModel {
    let mut m = FittedModel::from_beta(BETA.to_vec(), Link::Logit);
    m.covariance = vec![vec![0.03, 0.0, 0.0], vec![0.0, 0.01, 0.0], vec![0.0, 0.0, 0.002]];
    m
}

#[test]
fn delta_shrinks_with_epsilon() {
    let bounds = Bounds::new(vec![0.0, 0.0], vec![2.0, 8.0]).unwrap();
    let cost = CostFunction::scenario_cubic();
    let mut last = f64::INFINITY;
    for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
        let r = verify_assumption7(&fitted(), &cost, &bounds, 0.7, &config(eps)).unwrap();
        assert!(r.failures.is_empty());
        assert!(r.delta_max < last, "eps {eps}: {} !< {last}", r.delta_max);
        last = r.delta_max;
    }
    assert!(last < 1e-3);
    let r = verify_assumption7(&fitted(), &cost, &bounds, 0.7, &config(1e-4)).unwrap();
    assert!(r.pass);
    assert_eq!(r.norm, "l2");
}

#[test]
fn tied_linear_ratios_fail() {
    // c/β equal for both components: the cheapest package jumps between corners.
    let m = FittedModel::from_beta(vec![0.1, 0.3, 0.15], Link::Logit);
    let cost = CostFunction::new(
        2,
        &[CostTerm { component: 0, degree: 1, coeff: 2.0 }, CostTerm { component: 1, degree: 1, coeff: 1.0 }],
        0.0,
    )
    .unwrap();
    let bounds = Bounds::new(vec![0.0, 0.0], vec![4.0, 8.0]).unwrap();
    let r = verify_assumption7(&m, &cost, &bounds, 0.7, &config(1e-6)).unwrap();
    assert!(!r.pass);
    assert!(r.delta_max > 1.0, "{}", r.delta_max);
}

#[test]
fn extended_mode_checks_every_center() {
    let bounds = Bounds::new(vec![0.0, 0.0], vec![2.0, 8.0]).unwrap();
    let cfg = Assumption7Config { extended: true, grid_points: 5, samples: 50, ..config(1e-4) };
    let r = verify_assumption7(&fitted(), &CostFunction::scenario_cubic(), &bounds, 0.7, &cfg).unwrap();
    assert_eq!(r.centers.len() + r.failures.iter().filter(|f| f.sample == 0).count(), 5);
    assert_eq!(r.centers[0].beta, BETA.to_vec());
    assert_eq!(r, verify_assumption7(&fitted(), &CostFunction::scenario_cubic(), &bounds, 0.7, &cfg).unwrap());
}

#[test]
fn ball_samples_stay_inside() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max: f64 = 0.0;
    for _ in 0..5000 {
        let d = sample_ball(&mut rng, 3, 0.5);
        max = max.max(d.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    assert!(max <= 0.5 && max > 0.45);
}

#[test]
fn invalid_config() {
    let bounds = Bounds::new(vec![0.0, 0.0], vec![2.0, 8.0]).unwrap();
    let err = verify_assumption7(&fitted(), &CostFunction::scenario_cubic(), &bounds, 0.7, &config(0.0)).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn dominance_rises_with_power_goal() {
    let d = dominance_design(40);
    let mut last = 0.0;
    for pi in [0.6, 0.7, 0.8, 0.9, 0.95] {
        let t = dominance_threshold(&d, &BETA, 0.05, pi, Approach::Unconditional).unwrap();
        assert!(t.threshold > last);
        last = t.threshold;
    }
}

#[test]
fn dominance_falls_with_sample_size() {
    let mut last = f64::INFINITY;
    for n in [20, 40, 60, 100, 200] {
        let t = dominance_threshold(&dominance_design(n), &BETA, 0.05, 0.8, Approach::Unconditional).unwrap();
        assert!(t.threshold < last || t.threshold == t.control);
        last = t.threshold;
    }
}

#[test]
fn dominance_reports_relative_increase() {
    let t = dominance_threshold(&dominance_design(40), &BETA, 0.05, 0.8, Approach::Conditional).unwrap();
    assert!((t.relative_increase_pct - 100.0 * (t.threshold / t.control - 1.0)).abs() < 1e-12);
    assert!(dominance_threshold(&dominance_design(40), &BETA, 0.05, 1.5, Approach::Unconditional).is_err());
}
