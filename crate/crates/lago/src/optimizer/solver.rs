//! Minimum-cost package subject to a linear-predictor threshold.
//!
//! Under a monotone link the outcome constraint is the half-space
//! aᵀx ≥ b in the direction-signed frame, so the problem is a separable
//! polynomial minimized over a box cut by one affine constraint.

use crate::cost::{evaluate, CostFunction};
use crate::error::{invalid, LagoError, Result};
use crate::model::{Bounds, FittedModel};
use crate::power::Direction;

const STARTS: usize = 32;
const MAX_SWEEPS: usize = 500;

/// Best achievable outcome within `bounds`: the maximum for an increase goal,
/// the minimum for a decrease goal.
pub fn p_max(model: &FittedModel, bounds: &Bounds, direction: Direction) -> f64 {
    model.link.inverse(model.intercept() + extreme_terms(model, bounds, direction).iter().sum::<f64>())
}

/// β₁ₚ times the most favorable bound of each component.
fn extreme_terms(model: &FittedModel, bounds: &Bounds, direction: Direction) -> Vec<f64> {
    let s = direction.sign();
    model
        .effects()
        .iter()
        .zip(bounds.lower().iter().zip(bounds.upper()))
        .map(|(b, (l, u))| if s * b > 0.0 { b * u } else if s * b < 0.0 { b * l } else { 0.0 })
        .collect()
}

/// Global minimizer of one component's polynomial cost on [lo, hi].
pub(crate) fn component_argmin(cost: &CostFunction, p: usize, lo: f64, hi: f64) -> f64 {
    let mut best = lo;
    let mut best_cost = cost.component(p, lo);
    for v in stationary_candidates(cost.coefficients(p), lo, hi).into_iter().chain([hi]) {
        let c = cost.component(p, v);
        if c < best_cost {
            best = v;
            best_cost = c;
        }
    }
    best
}

/// Real roots of the derivative of c₁t + c₂t² + c₃t³ inside (lo, hi).
fn stationary_candidates(c: [f64; 4], lo: f64, hi: f64) -> Vec<f64> {
    let (qa, qb, qc) = (3.0 * c[3], 2.0 * c[2], c[1]);
    let mut roots = Vec::new();
    if qa.abs() > 1e-300 {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // numerically stable pair
            let q = -0.5 * (qb + qb.signum() * sq);
            if q != 0.0 {
                roots.push(q / qa);
                roots.push(qc / q);
            } else {
                roots.push(0.0);
            }
        }
    } else if qb.abs() > 1e-300 {
        roots.push(-qc / qb);
    }
    roots.retain(|r| r.is_finite() && *r > lo && *r < hi);
    roots.sort_by(f64::total_cmp);
    roots
}

/// Coefficients in t of c(x₀ + k t), where c has coefficients [0, c₁, c₂, c₃].
fn shifted(c: [f64; 4], x0: f64, k: f64) -> [f64; 4] {
    let d0 = ((c[3] * x0 + c[2]) * x0 + c[1]) * x0;
    let d1 = (3.0 * c[3] * x0 * x0 + 2.0 * c[2] * x0 + c[1]) * k;
    let d2 = (3.0 * c[3] * x0 + c[2]) * k * k;
    let d3 = c[3] * k * k * k;
    [d0, d1, d2, d3]
}

fn cubic_at(c: [f64; 4], t: f64) -> f64 {
    ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
}

/// Exact minimizer of a cubic on [lo, hi].
fn cubic_argmin(c: [f64; 4], lo: f64, hi: f64) -> f64 {
    let mut best = lo;
    let mut best_val = cubic_at(c, lo);
    for t in stationary_candidates(c, lo, hi).into_iter().chain([hi]) {
        let v = cubic_at(c, t);
        if v < best_val {
            best = t;
            best_val = v;
        }
    }
    best
}

struct Problem<'a> {
    cost: &'a CostFunction,
    lower: &'a [f64],
    upper: &'a [f64],
    a: Vec<f64>,
    b: f64,
}

impl Problem<'_> {
    fn lhs(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, v)| a * v).sum()
    }

    fn feasible(&self, x: &[f64]) -> bool {
        self.lhs(x) >= self.b - 1e-10 * (1.0 + self.b.abs())
    }
}

/// Minimum-cost package whose predicted outcome meets `threshold`
/// (at least `threshold` for an increase goal, at most for a decrease goal).
pub fn min_cost_subject_to_threshold(
    model: &FittedModel,
    cost: &CostFunction,
    bounds: &Bounds,
    threshold: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    let dim = bounds.dim();
    if model.dim() != dim || cost.dim() != dim {
        return invalid("model, cost and bounds disagree on the number of components");
    }
    let target = model.link.apply(threshold);
    let best = p_max(model, bounds, direction);
    if !target.is_finite() {
        return Err(LagoError::Infeasible { threshold, best });
    }
    let s = direction.sign();
    let problem = Problem {
        cost,
        lower: bounds.lower(),
        upper: bounds.upper(),
        a: model.effects().iter().map(|b| s * b).collect(),
        b: s * (target - model.intercept()),
    };
    let reach: f64 = extreme_terms(model, bounds, direction).iter().map(|t| s * t).sum();
    let tol = 1e-12 * (1.0 + problem.b.abs());
    if reach < problem.b - tol {
        return Err(LagoError::Infeasible { threshold, best });
    }

    let x = if reach <= problem.b + tol {
        extreme_point(&problem)
    } else if cost.is_linear() {
        greedy(&problem)
    } else {
        general(&problem)
    };
    Ok(bounds.clamp(&x))
}

/// Package at the extreme reachable outcome; free components at their
/// cheapest level.
fn extreme_point(pr: &Problem) -> Vec<f64> {
    (0..pr.a.len())
        .map(|p| {
            if pr.a[p] > 0.0 {
                pr.upper[p]
            } else if pr.a[p] < 0.0 {
                pr.lower[p]
            } else {
                component_argmin(pr.cost, p, pr.lower[p], pr.upper[p])
            }
        })
        .collect()
}

/// Exact solution for linear costs: start every component at its cheapest
/// bound, then buy constraint progress in order of cost per unit of aₚxₚ.
fn greedy(pr: &Problem) -> Vec<f64> {
    let dim = pr.a.len();
    let slope: Vec<f64> = (0..dim).map(|p| pr.cost.coefficients(p)[1]).collect();
    let mut x: Vec<f64> = (0..dim)
        .map(|p| {
            if slope[p] > 0.0 {
                pr.lower[p]
            } else if slope[p] < 0.0 || pr.a[p] >= 0.0 {
                pr.upper[p]
            } else {
                pr.lower[p]
            }
        })
        .collect();
    let mut need = pr.b - pr.lhs(&x);
    if need <= 0.0 {
        return x;
    }
    // Components whose move off the cheap bound increases aᵀx.
    let mut moves: Vec<(usize, f64)> = (0..dim)
        .filter(|&p| {
            (slope[p] > 0.0 && pr.a[p] > 0.0) || (slope[p] < 0.0 && pr.a[p] < 0.0)
        })
        .map(|p| (p, slope[p].abs() / pr.a[p].abs()))
        .collect();
    moves.sort_by(|l, r| l.1.total_cmp(&r.1).then(l.0.cmp(&r.0)));
    for (p, _) in moves {
        let span = pr.upper[p] - pr.lower[p];
        let gain = pr.a[p].abs() * span;
        let dir = if slope[p] > 0.0 { 1.0 } else { -1.0 };
        if gain >= need {
            x[p] += dir * need / pr.a[p].abs();
            break;
        }
        x[p] += dir * span;
        need -= gain;
    }
    x
}

fn general(pr: &Problem) -> Vec<f64> {
    let dim = pr.a.len();
    let free_min: Vec<f64> = (0..dim)
        .map(|p| component_argmin(pr.cost, p, pr.lower[p], pr.upper[p]))
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let consider = |x: Vec<f64>, best: &mut Option<(f64, Vec<f64>)>| {
        if !pr.feasible(&x) {
            return;
        }
        let c = evaluate(pr.cost, &x);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            *best = Some((c, x));
        }
    };

    // Constraint inactive: each component sits at a 1-D critical point.
    let candidates: Vec<Vec<f64>> = (0..dim)
        .map(|p| {
            let mut v = vec![pr.lower[p]];
            v.extend(stationary_candidates(pr.cost.coefficients(p), pr.lower[p], pr.upper[p]));
            v.push(pr.upper[p]);
            v
        })
        .collect();
    let combos: usize = candidates.iter().map(Vec::len).product();
    if combos <= 1 << 16 {
        for mut idx in 0..combos {
            let mut x = vec![0.0; dim];
            for p in 0..dim {
                let len = candidates[p].len();
                x[p] = candidates[p][idx % len];
                idx /= len;
            }
            consider(x, &mut best);
        }
    } else {
        consider(free_min.clone(), &mut best);
    }
    if let Some((_, x)) = &best {
        if pr.lhs(x) >= pr.b && x == &free_min {
            return x.clone();
        }
    }

    // Constraint active: search the surface aᵀx = b.
    let active: Vec<usize> = (0..dim).filter(|&p| pr.a[p] != 0.0).collect();
    let mut base = free_min.clone();
    for &p in &active {
        base[p] = pr.lower[p];
    }
    let surface = match active.len() {
        0 => None,
        1 => {
            let p = active[0];
            let mut x = base.clone();
            x[p] = ((pr.b - (pr.lhs(&base) - pr.a[p] * base[p])) / pr.a[p]).clamp(pr.lower[p], pr.upper[p]);
            Some(x)
        }
        _ => surface_search(pr, &base, &active),
    };
    if let Some(x) = surface {
        consider(x, &mut best);
    }
    best.map(|(_, x)| x).unwrap_or_else(|| extreme_point(pr))
}

/// Pairwise exact line searches along the active surface from a lattice of
/// starting points projected onto it.
fn surface_search(pr: &Problem, base: &[f64], active: &[usize]) -> Option<Vec<f64>> {
    let starts = if active.len() == 2 { 1 } else { STARTS };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..starts {
        let mut y = base.to_vec();
        for (k, &p) in active.iter().enumerate() {
            let frac = if starts == 1 {
                0.5
            } else {
                ((i as f64 + 0.5) * LATTICE[k % LATTICE.len()]).fract()
            };
            y[p] = pr.lower[p] + frac * (pr.upper[p] - pr.lower[p]);
        }
        let mut x = project(pr, &y, active);
        descend(pr, &mut x, active);
        let c = evaluate(pr.cost, &x);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, x));
        }
    }
    best.map(|(_, x)| x)
}

const LATTICE: [f64; 8] = [
    0.414_213_562_373_095,
    0.732_050_807_568_877,
    0.236_067_977_499_790,
    0.645_751_311_064_591,
    0.316_624_790_355_400,
    0.605_551_275_463_989,
    0.123_105_625_617_661,
    0.358_898_943_540_674,
];

/// clamp(y + ν a) with ν chosen by bisection so that aᵀx = b.
fn project(pr: &Problem, y: &[f64], active: &[usize]) -> Vec<f64> {
    let at = |nu: f64| {
        let mut x = y.to_vec();
        for &p in active {
            x[p] = (y[p] + nu * pr.a[p]).clamp(pr.lower[p], pr.upper[p]);
        }
        x
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while pr.lhs(&at(lo)) > pr.b && lo > -1e12 {
        lo *= 2.0;
    }
    while pr.lhs(&at(hi)) < pr.b && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pr.lhs(&at(mid)) < pr.b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

/// Move x_p by t and x_q by −(aₚ/a_q)t, keeping aᵀx fixed, minimizing the
/// resulting cubic in t exactly; sweep over pairs until no pair improves.
fn descend(pr: &Problem, x: &mut [f64], active: &[usize]) {
    for _ in 0..MAX_SWEEPS {
        let mut moved = 0.0_f64;
        for (i, &p) in active.iter().enumerate() {
            for &q in &active[i + 1..] {
                let r = pr.a[p] / pr.a[q];
                // feasible t: L_p ≤ x_p + t ≤ U_p and L_q ≤ x_q − r t ≤ U_q
                let mut lo = pr.lower[p] - x[p];
                let mut hi = pr.upper[p] - x[p];
                let (qa, qb) = ((x[q] - pr.upper[q]) / r, (x[q] - pr.lower[q]) / r);
                lo = lo.max(qa.min(qb));
                hi = hi.min(qa.max(qb));
                if !(hi > lo) {
                    continue;
                }
                let cp = shifted(pr.cost.coefficients(p), x[p], 1.0);
                let cq = shifted(pr.cost.coefficients(q), x[q], -r);
                let h = [cp[0] + cq[0], cp[1] + cq[1], cp[2] + cq[2], cp[3] + cq[3]];
                let t = cubic_argmin(h, lo, hi);
                if cubic_at(h, t) < cubic_at(h, 0.0) - 1e-14 * (1.0 + cubic_at(h, 0.0).abs()) {
                    x[p] = (x[p] + t).clamp(pr.lower[p], pr.upper[p]);
                    x[q] = (x[q] - r * t).clamp(pr.lower[q], pr.upper[q]);
                    moved = moved.max(t.abs()).max((r * t).abs());
                }
            }
        }
        if moved < 1e-9 {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_matches_direct() {
        let c = [0.0, 10.0, -1.19, 2.0];
        let s = shifted(c, 0.7, -1.3);
        for &t in &[-0.5, 0.0, 0.2, 1.1] {
            let x = 0.7 - 1.3 * t;
            let direct = ((c[3] * x + c[2]) * x + c[1]) * x;
            assert!((cubic_at(s, t) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_argmin_interior() {
        // (t-1)^2 expanded as a cubic with zero leading term
        assert!((cubic_argmin([1.0, -2.0, 1.0, 0.0], -5.0, 5.0) - 1.0).abs() < 1e-12);
    }
}
