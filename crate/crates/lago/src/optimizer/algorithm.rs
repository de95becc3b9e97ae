use super::solver::{min_cost_subject_to_threshold, p_max};
use super::{GoalSpec, Recommendation, Regime, WaldMode};
use crate::cost::{evaluate, CostFunction};
use crate::error::{invalid, LagoError, Result};
use crate::model::{predict, Bounds, FittedModel, StageRecord};
use crate::power::{
    conditional_power, lambda_min, one_df_terms, unconditional_lambda, wald_lambda, Approach, ArmSummary,
    Direction, PlannedStage,
};

const BISECTION_STEPS: usize = 60;
const BCD_SWEEPS: usize = 50;

/// Whether a package with predicted outcome `t` meets the power goal.
/// Wald tests evaluate the cost-minimal package reaching `t`.
pub fn power_constraint_holds(
    t: f64,
    model: &FittedModel,
    summary: &ArmSummary,
    goals: &GoalSpec,
    cost: &CostFunction,
    bounds: &Bounds,
) -> Result<bool> {
    let pi = match goals.power_goal {
        Some(pi) => pi,
        None => return invalid("power constraint requested without a power goal"),
    };
    if !summary.has_future() {
        return invalid("no planned future stages to project power over");
    }
    let test = goals.test;
    let dir = goals.direction;
    if test.is_wald() && goals.approach == Approach::Conditional {
        return invalid("the conditional approach is defined for 1-df tests only");
    }
    let lmin = lambda_min(goals.alpha, pi, test.df(model.dim()));
    if test.is_wald() {
        let x = min_cost_subject_to_threshold(model, cost, bounds, t, dir)?;
        let packages = vec![x; summary.future_intervention_centers()];
        return Ok(wald_lambda(model, summary, &packages, test)? >= lmin);
    }
    let terms = one_df_terms(t, model, summary, test)?;
    Ok(match goals.approach {
        Approach::Unconditional => {
            let u = terms.unconditional();
            if u.critical_scale == 1.0 {
                dir.sign() * u.drift.unwrap_or(0.0) > 0.0 && u.lambda >= lmin
            } else {
                u.satisfies(goals.alpha, pi, dir)
            }
        }
        Approach::Conditional => terms.conditional_slack(goals.alpha, pi, dir, goals.variance_form) <= 0.0,
    })
}

/// Smallest outcome `t` (in the goal direction) such that a package with
/// predicted outcome `t` satisfies the power constraint.
///
/// Bisects on t between the control value g⁻¹(β̂₀) and the best achievable
/// outcome. Returns the control value when the constraint already holds
/// there.
pub fn power_threshold(
    model: &FittedModel,
    summary: &ArmSummary,
    goals: &GoalSpec,
    cost: &CostFunction,
    bounds: &Bounds,
) -> Result<f64> {
    if goals.power_goal.is_none() {
        return invalid("power threshold requested without a power goal");
    }
    let dir = goals.direction;
    let satisfied = |t: f64| power_constraint_holds(t, model, summary, goals, cost, bounds);
    let control = model.control_value();
    let extreme = p_max(model, bounds, dir);
    if !dir.at_least(extreme, control) {
        return if satisfied(control)? { Ok(control) } else { Err(LagoError::NoThreshold) };
    }
    if satisfied(control)? {
        return Ok(control);
    }
    if !satisfied(extreme)? {
        return Err(LagoError::NoThreshold);
    }
    let (mut lo, mut hi) = (control, extreme);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if satisfied(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Fallback when the outcome goal is out of reach: each component moves from
/// its stage-1 level toward its upper bound in proportion to how close its
/// estimated effect comes to the effect that would have made the goal
/// reachable.
///
/// Works in the direction-signed frame, so for a decrease goal effects are
/// negated; components whose signed effect is at most half that value keep
/// their stage-1 level.
pub fn shrinking_method(
    model: &FittedModel,
    bounds: &Bounds,
    stage1_x: &[f64],
    outcome_goal: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    if stage1_x.len() != bounds.dim() || model.dim() != bounds.dim() {
        return invalid("stage-1 package, model and bounds disagree on the number of components");
    }
    let s = direction.sign();
    let target = s * (model.link.apply(outcome_goal) - model.intercept());
    let signed: Vec<f64> = model.effects().iter().map(|b| s * b).collect();
    let best: Vec<f64> = signed
        .iter()
        .zip(bounds.lower().iter().zip(bounds.upper()))
        .map(|(b, (l, u))| (b * l).max(b * u))
        .collect();
    let total: f64 = best.iter().sum();
    let x = (0..bounds.dim())
        .map(|p| {
            let upper = bounds.upper()[p];
            let x1 = stage1_x[p];
            if upper <= 0.0 {
                return x1;
            }
            let beta_max = (target - (total - best[p])) / upper;
            let beta_min = 0.5 * beta_max;
            if signed[p] <= beta_min || !(beta_max > beta_min) {
                x1
            } else {
                x1 + (upper - x1) * (signed[p] - beta_min) / (beta_max - beta_min)
            }
        })
        .collect::<Vec<_>>();
    Ok(bounds.clamp(&x))
}

fn validate_inputs(model: &FittedModel, goals: &GoalSpec, cost: &CostFunction, bounds: &Bounds) -> Result<()> {
    goals.validate(&model.link)?;
    if model.dim() != bounds.dim() || cost.dim() != bounds.dim() {
        return invalid("model, cost and bounds disagree on the number of components");
    }
    if model.beta.iter().any(|b| !b.is_finite()) {
        return Err(LagoError::NonFinite("model coefficients".into()));
    }
    Ok(())
}

/// Outcome goal actually enforced: the stated goal, or (power goal only) the
/// worse of the control value and the best achievable outcome.
fn effective_goal(model: &FittedModel, goals: &GoalSpec, pmax: f64) -> f64 {
    match goals.outcome_goal {
        Some(g) => g,
        None => {
            let control = model.control_value();
            if goals.direction.at_least(pmax, control) {
                control
            } else {
                pmax
            }
        }
    }
}

fn projected_power(
    x: &[f64],
    centers: Option<&[Vec<f64>]>,
    model: &FittedModel,
    summary: &ArmSummary,
    goals: &GoalSpec,
) -> Option<f64> {
    if !summary.has_future() {
        return None;
    }
    let power = match (goals.approach, centers) {
        (_, Some(xs)) if goals.test.is_wald() => wald_lambda(model, summary, xs, goals.test).map(|l| {
            crate::power::UnconditionalLambda { lambda: l, critical_scale: 1.0, drift: None, df: model.dim() }
                .power(goals.alpha)
        }),
        (Approach::Conditional, _) if !goals.test.is_wald() => {
            conditional_power(x, model, summary, goals.test, goals.alpha, goals.direction, goals.variance_form)
        }
        _ => unconditional_lambda(x, model, summary, goals.test).map(|u| u.power(goals.alpha)),
    };
    power.ok().filter(|p| p.is_finite())
}

/// Stage-k recommendation given the fit on completed stages.
///
/// Dispatch: if both the outcome goal and the power threshold are reachable,
/// solve at the stricter of the two; if only the outcome goal is reachable,
/// solve at the best achievable outcome; otherwise shrink toward the stage-1
/// package.
pub fn recommend(
    model: &FittedModel,
    summary: &ArmSummary,
    goals: &GoalSpec,
    cost: &CostFunction,
    bounds: &Bounds,
    stage1_fallback_x: &[f64],
) -> Result<Recommendation> {
    validate_inputs(model, goals, cost, bounds)?;
    if !bounds.contains(stage1_fallback_x) {
        return invalid("stage-1 fallback package lies outside the bounds");
    }
    let dir = goals.direction;
    let pmax = p_max(model, bounds, dir);
    let goal = effective_goal(model, goals, pmax);
    let pow = match goals.power_goal {
        Some(_) => match power_threshold(model, summary, goals, cost, bounds) {
            Ok(t) => Some(Some(t)),
            Err(LagoError::NoThreshold) => Some(None),
            Err(e) => return Err(e),
        },
        None => None,
    };

    let (regime, threshold, x) = if dir.at_least(pmax, goal) {
        match pow {
            Some(None) => (Regime::PmaxFallback, pmax, min_cost_subject_to_threshold(model, cost, bounds, pmax, dir)?),
            Some(Some(t)) => {
                let thr = dir.best(goal, t);
                (Regime::GoalFeasible, thr, min_cost_subject_to_threshold(model, cost, bounds, thr, dir)?)
            }
            None => (Regime::GoalFeasible, goal, min_cost_subject_to_threshold(model, cost, bounds, goal, dir)?),
        }
    } else {
        (Regime::ShrinkingFallback, goal, shrinking_method(model, bounds, stage1_fallback_x, goal, dir)?)
    };

    let power_t = pow.flatten();
    let center_packages = match (goals.test.is_wald(), goals.wald_mode, regime, goals.power_goal) {
        (true, WaldMode::PerCenter, Regime::GoalFeasible, Some(pi)) => {
            Some(per_center(model, summary, goals, cost, bounds, &x, goal, pi)?)
        }
        _ => None,
    };
    Ok(Recommendation {
        achieved_outcome: predict(model, &x),
        required_threshold: threshold,
        p_max: pmax,
        power_threshold: power_t,
        power_binding: match (regime, power_t) {
            (Regime::GoalFeasible, Some(t)) => Some(dir.sign() * (t - goal) > 0.0),
            _ => None,
        },
        projected_power: projected_power(&x, center_packages.as_deref(), model, summary, goals),
        cost: evaluate(cost, &x),
        regime,
        x_hat: x,
        center_packages,
        futile: None,
    })
}

/// Block-coordinate descent over per-center packages: each planned
/// intervention center in turn gets the cheapest package on the
/// cost-minimal path that keeps the mean predicted outcome at the goal and
/// the Wald noncentrality at λ_min, the others held fixed.
#[allow(clippy::too_many_arguments)]
fn per_center(
    model: &FittedModel,
    summary: &ArmSummary,
    goals: &GoalSpec,
    cost: &CostFunction,
    bounds: &Bounds,
    common: &[f64],
    goal: f64,
    pi: f64,
) -> Result<Vec<Vec<f64>>> {
    let dir = goals.direction;
    let j = summary.future_intervention_centers();
    let lmin = lambda_min(goals.alpha, pi, model.dim());
    let mut xs = vec![common.to_vec(); j];
    if j == 0 {
        return Ok(xs);
    }
    let feasible = |xs: &[Vec<f64>]| -> Result<bool> {
        let mean = xs.iter().map(|x| predict(model, x)).sum::<f64>() / xs.len() as f64;
        Ok(dir.sign() * (mean - goal) >= -1e-12 && wald_lambda(model, summary, xs, goals.test)? >= lmin)
    };
    let control = model.control_value();
    let extreme = p_max(model, bounds, dir);
    for _ in 0..BCD_SWEEPS {
        let mut changed = false;
        for c in 0..j {
            let mut trial = xs.clone();
            let at = |t: f64, trial: &mut Vec<Vec<f64>>| -> Result<bool> {
                trial[c] = min_cost_subject_to_threshold(model, cost, bounds, t, dir)?;
                feasible(trial)
            };
            if !at(extreme, &mut trial)? {
                continue;
            }
            let (mut lo, mut hi) = (control, extreme);
            if at(lo, &mut trial)? {
                hi = lo;
            } else {
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if mid == lo || mid == hi {
                        break;
                    }
                    if at(mid, &mut trial)? {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
            }
            at(hi, &mut trial)?;
            if evaluate(cost, &trial[c]) < evaluate(cost, &xs[c]) - 1e-10 {
                xs = trial;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(xs)
}

/// Stage-1 package from pre-trial coefficients: outcome goal under β⁽⁰⁾ plus
/// the unconditional power constraint with every arm at its β⁽⁰⁾-implied
/// expectation.
pub fn plan_stage1(
    prior: &FittedModel,
    goals: &GoalSpec,
    cost: &CostFunction,
    bounds: &Bounds,
    planned: &[PlannedStage],
) -> Result<Recommendation> {
    validate_inputs(prior, goals, cost, bounds)?;
    if goals.power_goal.is_some() && goals.approach != Approach::Unconditional {
        return invalid("stage-1 planning supports only the unconditional approach");
    }
    let summary = ArmSummary::new(Vec::new(), planned.to_vec());
    let dir = goals.direction;
    let pmax = p_max(prior, bounds, dir);
    let goal = effective_goal(prior, goals, pmax);
    if !dir.at_least(pmax, goal) {
        return Err(LagoError::Infeasible { threshold: goal, best: pmax });
    }
    let pow = match goals.power_goal {
        Some(_) => match power_threshold(prior, &summary, goals, cost, bounds) {
            Ok(t) => Some(Some(t)),
            Err(LagoError::NoThreshold) => Some(None),
            Err(e) => return Err(e),
        },
        None => None,
    };
    let (regime, threshold) = match pow {
        Some(Some(t)) => (Regime::GoalFeasible, dir.best(goal, t)),
        Some(None) => (Regime::PmaxFallback, pmax),
        None => (Regime::GoalFeasible, goal),
    };
    let x = min_cost_subject_to_threshold(prior, cost, bounds, threshold, dir)?;
    let power_t = pow.flatten();
    Ok(Recommendation {
        achieved_outcome: predict(prior, &x),
        required_threshold: threshold,
        p_max: pmax,
        power_threshold: power_t,
        power_binding: match (regime, power_t) {
            (Regime::GoalFeasible, Some(t)) => Some(dir.sign() * (t - goal) > 0.0),
            _ => None,
        },
        projected_power: projected_power(&x, None, prior, &summary, goals),
        cost: evaluate(cost, &x),
        regime,
        x_hat: x,
        center_packages: None,
        futile: None,
    })
}

/// Stage-k recommendation: stages 1..k−1 observed, stages k..K projected at
/// the candidate package. `plan` lists the layout of all K stages.
#[allow(clippy::too_many_arguments)]
pub fn recommend_stage_k(
    model: &FittedModel,
    completed: &[StageRecord],
    plan: &[PlannedStage],
    goals: &GoalSpec,
    cost: &CostFunction,
    bounds: &Bounds,
    stage1_fallback_x: &[f64],
    k: usize,
) -> Result<Recommendation> {
    if k < 2 || k > plan.len() {
        return invalid(format!("stage {k} is not a recommendation stage of a {}-stage trial", plan.len()));
    }
    if completed.len() < k - 1 {
        return invalid(format!("stage {k} needs {} completed stages, have {}", k - 1, completed.len()));
    }
    let summary = ArmSummary::new(completed[..k - 1].to_vec(), plan[k - 1..].to_vec());
    recommend(model, &summary, goals, cost, bounds, stage1_fallback_x)
}
