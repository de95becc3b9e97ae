use approx::assert_relative_eq;
use proptest::prelude::*;

use lago::cost::{evaluate, CostFunction, CostTerm};
use lago::model::{expit, logit, predict, Arm, Bounds, Center, FittedModel, Link, StageRecord};
use lago::optimizer::{
    min_cost_subject_to_threshold, p_max, plan_stage1, power_constraint_holds, power_threshold, recommend,
    shrinking_method, Direction, GoalSpec, Regime,
};
use lago::power::{Approach, ArmSummary, PlannedStage, TestKind};
use lago::LagoError;

const BETA: [f64; 3] = [0.1, 0.3, 0.15];

fn truth() -> FittedModel {
    FittedModel::from_beta(BETA.to_vec(), Link::Logit)
}

fn b2() -> Bounds {
    Bounds::new(vec![0.0, 0.0], vec![2.0, 8.0]).unwrap()
}

/// Fine scan along the constraint curve η(x) = logit(goal).
fn curve_scan(beta: &[f64], cost: &CostFunction, bounds: &Bounds, goal: f64) -> (Vec<f64>, f64) {
    let target = logit(goal);
    let mut best = (vec![f64::NAN; 2], f64::INFINITY);
    let steps = 200_000;
    for i in 0..=steps {
        let x1 = bounds.lower()[0] + (bounds.upper()[0] - bounds.lower()[0]) * i as f64 / steps as f64;
        let x2 = (target - beta[0] - beta[1] * x1) / beta[2];
        if x2 < bounds.lower()[1] || x2 > bounds.upper()[1] {
            continue;
        }
        let c = evaluate(cost, &[x1, x2]);
        if c < best.1 {
            best = (vec![x1, x2], c);
        }
    }
    best
}

#[test]
fn cubic_solver_matches_constraint_curve_scan() {
    let cost = CostFunction::scenario_cubic();
    for goal in [0.62, 0.7, 0.75, 0.8] {
        let x = min_cost_subject_to_threshold(&truth(), &cost, &b2(), goal, Direction::Increase).unwrap();
        let (xs, cs) = curve_scan(&BETA, &cost, &b2(), goal);
        assert!(evaluate(&cost, &x) <= cs + 1e-6, "goal {goal}: {x:?} vs scan {xs:?}");
        assert_relative_eq!(x[0], xs[0], epsilon = 1e-3);
        assert_relative_eq!(x[1], xs[1], epsilon = 1e-3);
    }
}

#[test]
fn linear_solver_fills_cheapest_ratio_first() {
    let b = Bounds::new(vec![0.0, 0.0], vec![4.0, 8.0]).unwrap();
    let x = min_cost_subject_to_threshold(&truth(), &CostFunction::scenario_linear(), &b, 0.7455, Direction::Increase)
        .unwrap();
    // ratios 1/0.3 < 4/0.15: only x₁ moves
    assert_eq!(x[1], 0.0);
    assert_relative_eq!(x[0], (logit(0.7455) - 0.1) / 0.3, epsilon = 1e-12);
}

#[test]
fn unreachable_goal_is_infeasible() {
    let err = min_cost_subject_to_threshold(&truth(), &CostFunction::scenario_cubic(), &b2(), 0.95, Direction::Increase)
        .unwrap_err();
    match err {
        LagoError::Infeasible { best, .. } => assert_relative_eq!(best, expit(0.1 + 0.6 + 1.2), epsilon = 1e-12),
        e => panic!("{e:?}"),
    }
}

#[test]
fn p_max_uses_effect_signs() {
    let m = FittedModel::from_beta(vec![0.0, 0.5, -0.25], Link::Logit);
    assert_relative_eq!(p_max(&m, &b2(), Direction::Increase), expit(1.0), epsilon = 1e-15);
    assert_relative_eq!(p_max(&m, &b2(), Direction::Decrease), expit(-2.0), epsilon = 1e-15);
}

#[test]
fn decrease_mirrors_increase() {
    let cost = CostFunction::scenario_cubic();
    let up = min_cost_subject_to_threshold(&truth(), &cost, &b2(), 0.72, Direction::Increase).unwrap();
    let mirrored = FittedModel::from_beta(BETA.iter().map(|b| -b).collect(), Link::Logit);
    let down = min_cost_subject_to_threshold(&mirrored, &cost, &b2(), 1.0 - 0.72, Direction::Decrease).unwrap();
    assert_relative_eq!(up[0], down[0], epsilon = 1e-8);
    assert_relative_eq!(up[1], down[1], epsilon = 1e-8);
}

#[test]
fn shrinking_by_hand() {
    let x1 = [1.0, 4.0];
    let goal = 0.9;
    let x = shrinking_method(&truth(), &b2(), &x1, goal, Direction::Increase).unwrap();
    let target = logit(goal) - 0.1;
    let best = [0.3 * 2.0, 0.15 * 8.0];
    let expect = |p: usize, b: f64, u: f64| {
        let bmax = (target - (best[0] + best[1] - best[p])) / u;
        let bmin = bmax / 2.0;
        if b <= bmin {
            x1[p]
        } else {
            (x1[p] + (u - x1[p]) * (b - bmin) / (bmax - bmin)).min(u)
        }
    };
    assert_relative_eq!(x[0], expect(0, 0.3, 2.0), epsilon = 1e-12);
    assert_relative_eq!(x[1], expect(1, 0.15, 8.0), epsilon = 1e-12);
}

fn stage1() -> StageRecord {
    StageRecord::new(
        1,
        vec![
            Center::from_counts(Arm::Control, vec![0.0, 0.0], 40.0, 21.0),
            Center::from_counts(Arm::Intervention, vec![1.0, 0.0], 40.0, 23.0),
            Center::from_counts(Arm::Intervention, vec![0.0, 4.0], 40.0, 26.0),
            Center::from_counts(Arm::Intervention, vec![1.0, 4.0], 40.0, 29.0),
        ],
    )
    .unwrap()
}

fn summary() -> ArmSummary {
    ArmSummary::new(vec![stage1()], vec![PlannedStage::balanced(2, 2, 40.0)])
}

#[test]
fn recommend_regimes() {
    let cost = CostFunction::scenario_cubic();
    let s = ArmSummary::default();
    let r = recommend(&truth(), &s, &GoalSpec::outcome(0.7), &cost, &b2(), &[1.0, 4.0]).unwrap();
    assert_eq!(r.regime, Regime::GoalFeasible);
    assert_relative_eq!(r.achieved_outcome, 0.7, epsilon = 1e-9);

    let r = recommend(&truth(), &s, &GoalSpec::outcome(0.9), &cost, &b2(), &[1.0, 4.0]).unwrap();
    assert_eq!(r.regime, Regime::ShrinkingFallback);

    // Power goal out of reach: solve at p_max.
    let tiny = ArmSummary::new(vec![stage1()], vec![PlannedStage::balanced(1, 1, 2.0)]);
    let g = GoalSpec::outcome(0.7).with_power(0.99, Approach::Unconditional);
    let r = recommend(&truth(), &tiny, &g, &cost, &b2(), &[1.0, 4.0]).unwrap();
    assert_eq!(r.regime, Regime::PmaxFallback);
    assert_relative_eq!(r.achieved_outcome, r.p_max, epsilon = 1e-9);
}

#[test]
fn power_threshold_is_the_smallest_satisfying_outcome() {
    let cost = CostFunction::scenario_cubic();
    for approach in [Approach::Unconditional, Approach::Conditional] {
        let g = GoalSpec::outcome(0.6).with_power(0.8, approach);
        let t = power_threshold(&truth(), &summary(), &g, &cost, &b2()).unwrap();
        assert!(power_constraint_holds(t, &truth(), &summary(), &g, &cost, &b2()).unwrap());
        assert!(!power_constraint_holds(t - 1e-4, &truth(), &summary(), &g, &cost, &b2()).unwrap());
    }
}

#[test]
fn power_goal_raises_the_recommendation() {
    let cost = CostFunction::scenario_cubic();
    let base = recommend(&truth(), &summary(), &GoalSpec::outcome(0.62), &cost, &b2(), &[1.0, 4.0]).unwrap();
    let g = GoalSpec::outcome(0.62).with_power(0.9, Approach::Unconditional);
    let with = recommend(&truth(), &summary(), &g, &cost, &b2(), &[1.0, 4.0]).unwrap();
    assert_eq!(with.power_binding, Some(true));
    assert!(with.achieved_outcome > base.achieved_outcome);
    assert!(with.cost > base.cost);
    assert!(with.projected_power.unwrap() >= 0.9 - 1e-6);
}

#[test]
fn plan_stage1_rejects_conditional() {
    let g = GoalSpec::outcome(0.7).with_power(0.8, Approach::Conditional);
    let err = plan_stage1(&truth(), &g, &CostFunction::scenario_cubic(), &b2(), &[PlannedStage::balanced(3, 1, 40.0)])
        .unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn invalid_goals_are_validation_errors() {
    let cost = CostFunction::scenario_cubic();
    let s = ArmSummary::default();
    for g in [GoalSpec::outcome(1.2), GoalSpec::outcome(0.7).with_power(1.5, Approach::Unconditional)] {
        assert!(recommend(&truth(), &s, &g, &cost, &b2(), &[1.0, 4.0]).unwrap_err().is_validation());
    }
    let wald_conditional = GoalSpec::outcome(0.7).with_power(0.8, Approach::Conditional).with_test(TestKind::WaldBinary);
    assert!(recommend(&truth(), &summary(), &wald_conditional, &cost, &b2(), &[1.0, 4.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solution_is_feasible_and_no_worse_than_random_feasible_points(
        b1 in 0.05f64..1.0, b2_ in 0.05f64..1.0, frac in 0.05f64..0.95,
        probes in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 50),
    ) {
        let m = FittedModel::from_beta(vec![-0.5, b1, b2_], Link::Logit);
        let bounds = b2();
        let cost = CostFunction::scenario_cubic();
        let lo = expit(-0.5);
        let hi = p_max(&m, &bounds, Direction::Increase);
        let goal = lo + frac * (hi - lo);
        let x = min_cost_subject_to_threshold(&m, &cost, &bounds, goal, Direction::Increase).unwrap();
        prop_assert!(bounds.contains(&x));
        prop_assert!(predict(&m, &x) >= goal - 1e-9);
        let c = evaluate(&cost, &x);
        for (u, v) in probes {
            let y = [2.0 * u, 8.0 * v];
            if predict(&m, &y) >= goal {
                prop_assert!(c <= evaluate(&cost, &y) + 1e-7);
            }
        }
    }

    #[test]
    fn linear_cost_scales_leave_solution_unchanged(scale in 0.1f64..50.0) {
        let b = Bounds::new(vec![0.0, 0.0], vec![4.0, 8.0]).unwrap();
        let scaled = CostFunction::new(2, &[
            CostTerm { component: 0, degree: 1, coeff: scale },
            CostTerm { component: 1, degree: 1, coeff: 4.0 * scale },
        ], 0.0).unwrap();
        let a = min_cost_subject_to_threshold(&truth(), &CostFunction::scenario_linear(), &b, 0.72, Direction::Increase).unwrap();
        let s = min_cost_subject_to_threshold(&truth(), &scaled, &b, 0.72, Direction::Increase).unwrap();
        prop_assert_eq!(a, s);
    }
}
