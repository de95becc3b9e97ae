//! Outcome-goal dominance threshold and empirical checks that the
//! cost-minimal package is unique and moves continuously with β.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::error::{invalid, LagoError, Result};
use crate::model::{predict, Arm, Bounds, Center, FittedModel, Link, StageRecord};
use crate::optimizer::{min_cost_subject_to_threshold, power_constraint_holds, Direction, GoalSpec};
use crate::power::{normal_quantile, Approach, ArmSummary, PlannedStage};
use crate::sim::{Design, DesignCenter};

const BISECTION_TOL: f64 = 1e-6;

/// Four-center fractional factorial first stage, then two intervention and
/// two control centers, all with `n` participants.
pub fn dominance_design(n: usize) -> Design {
    let ic = |a: f64, b: f64| DesignCenter { arm: Arm::Intervention, package: vec![a, b] };
    Design {
        stage1: vec![DesignCenter { arm: Arm::Control, package: Vec::new() }, ic(1.0, 0.0), ic(0.0, 4.0), ic(1.0, 4.0)],
        stage2_intervention: 2,
        stage2_control: 2,
        n_stage1: n,
        n_stage2: n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceThreshold {
    /// Outcome at and beyond which the outcome goal alone meets the power goal.
    pub threshold: f64,
    pub control: f64,
    /// 100 (threshold / control − 1).
    pub relative_increase_pct: f64,
}

/// Stage-1 record with every center at its expected event count.
pub fn expected_stage1(design: &Design, truth: &FittedModel) -> Result<StageRecord> {
    let dim = truth.dim();
    let centers = design
        .stage1
        .iter()
        .map(|c| {
            let a = if c.arm == Arm::Control { vec![0.0; dim] } else { c.package.clone() };
            if a.len() != dim {
                return invalid("design package length differs from the coefficient vector");
            }
            let n = design.n_stage1 as f64;
            let mu = predict(truth, &a);
            Ok(Center { arm: c.arm, package: a, n, sum: n * mu, sum_sq: n * mu })
        })
        .collect::<Result<Vec<_>>>()?;
    StageRecord::new(1, centers)
}

/// Smallest outcome goal that dominates the power goal of the two-sample
/// unpooled z test for a binary outcome, with stage-1 sums at their
/// expectation under `beta_star`. Bisection over (control, 1) to 1e-6.
pub fn dominance_threshold(
    design: &Design,
    beta_star: &[f64],
    alpha: f64,
    pi: f64,
    approach: Approach,
) -> Result<DominanceThreshold> {
    let truth = FittedModel::from_beta(beta_star.to_vec(), Link::Logit);
    if truth.dim() == 0 || beta_star.iter().any(|b| !b.is_finite()) {
        return invalid("beta_star needs an intercept and at least one finite effect");
    }
    if design.n_stage1 == 0 || design.n_stage2 == 0 || design.stage2_intervention == 0 || design.stage2_control == 0 {
        return invalid("design sizes must be positive");
    }
    let goals = GoalSpec { outcome_goal: None, alpha, ..GoalSpec::outcome(0.5).with_power(pi, approach) };
    goals.validate(&Link::Logit)?;
    let summary = ArmSummary::new(
        vec![expected_stage1(design, &truth)?],
        vec![PlannedStage::balanced(design.stage2_intervention, design.stage2_control, design.n_stage2 as f64)],
    );
    // Cost and bounds only matter for Wald tests; the z test ignores them.
    let dim = truth.dim();
    let cost = CostFunction::new(dim, &[], 0.0)?;
    let bounds = Bounds::new(vec![0.0; dim], vec![1.0; dim])?;
    let holds = |t: f64| power_constraint_holds(t, &truth, &summary, &goals, &cost, &bounds);

    let control = truth.control_value();
    let report = |t: f64| DominanceThreshold { threshold: t, control, relative_increase_pct: 100.0 * (t / control - 1.0) };
    if holds(control)? {
        return Ok(report(control));
    }
    let (mut lo, mut hi) = (control, 1.0 - 1e-9);
    if !holds(hi)? {
        return Err(LagoError::NoThreshold);
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(report(hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption7Config {
    /// Ball radius ε around each center.
    pub epsilon: f64,
    /// Samples L per center.
    pub samples: usize,
    /// Tolerance η on δ^max.
    pub eta: f64,
    /// Also use `grid_points` centers spread inside the 95% CIs.
    #[serde(default)]
    pub extended: bool,
    #[serde(default = "one")]
    pub grid_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub direction: Direction,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub center: usize,
    pub sample: usize,
    pub beta: Vec<f64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterCheck {
    pub beta: Vec<f64>,
    pub x: Vec<f64>,
    pub delta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption7Report {
    /// Solution at the fitted coefficients.
    pub x_hat: Vec<f64>,
    /// Largest ℓ₂ distance between a perturbed solution and its center's.
    pub delta_max: f64,
    pub pass: bool,
    pub eta: f64,
    pub epsilon: f64,
    pub norm: String,
    pub seed: u64,
    pub samples: usize,
    pub centers: Vec<CenterCheck>,
    pub failures: Vec<SampleFailure>,
}

impl Assumption7Report {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "x_hat = {:?}\ndelta_max ({} norm) = {:.6e} over {} samples per center, {} center(s)\neta = {:e}, epsilon = {:e}, seed = {}\nresult: {}\n",
            self.x_hat,
            self.norm,
            self.delta_max,
            self.samples,
            self.centers.len(),
            self.eta,
            self.epsilon,
            self.seed,
            if self.pass { "PASS" } else { "FAIL" }
        );
        for f in &self.failures {
            s.push_str(&format!("  center {} sample {} failed: {}\n", f.center, f.sample, f.error));
        }
        s
    }
}

/// Uniform draw from the ℓ₂ ball of radius `r` in `dim` dimensions.
pub fn sample_ball<R: Rng>(rng: &mut R, dim: usize, r: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: f64 = rng.gen();
    let scale = r * u.powf(1.0 / dim as f64) / norm;
    g.iter().map(|v| v * scale).collect()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Grid centers inside the marginal 95% CIs: coefficient i of center m sits
/// at quantile 0.025 + 0.95·frac(m·√pᵢ) of its normal approximation,
/// pᵢ the i-th prime. Center 0 is the estimate itself.
fn grid_centers(model: &FittedModel, m: usize) -> Vec<Vec<f64>> {
    const PRIMES: [f64; 12] = [2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0];
    let se = model.standard_errors();
    let mut out = vec![model.beta.clone()];
    for k in 1..m {
        out.push(
            model
                .beta
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let step = PRIMES[i % PRIMES.len()].sqrt();
                    let u = ((k as f64) * step).fract();
                    b + se[i] * normal_quantile(0.025 + 0.95 * u)
                })
                .collect(),
        );
    }
    out
}

/// Samples coefficient vectors uniformly in the ε-ball around each center,
/// solves the cost minimization at each, and reports the largest ℓ₂
/// distance from the center's solution. Passes when δ^max < η and no
/// sample failed.
pub fn verify_assumption7(
    model: &FittedModel,
    cost: &CostFunction,
    bounds: &Bounds,
    goal: f64,
    config: &Assumption7Config,
) -> Result<Assumption7Report> {
    if !(config.epsilon > 0.0 && config.epsilon.is_finite()) || !(config.eta > 0.0 && config.eta.is_finite()) {
        return invalid("epsilon and eta must be positive");
    }
    if config.samples == 0 || config.grid_points == 0 {
        return invalid("samples and grid_points must be at least 1");
    }
    let dir = config.direction;
    let solve = |beta: &[f64]| {
        let m = FittedModel::from_beta(beta.to_vec(), model.link.clone());
        min_cost_subject_to_threshold(&m, cost, bounds, goal, dir)
    };
    let x_hat = solve(&model.beta)?;
    let centers = if config.extended { grid_centers(model, config.grid_points) } else { vec![model.beta.clone()] };
    let k = model.beta.len();

    let mut checks = Vec::new();
    let mut failures = Vec::new();
    for (ci, center) in centers.iter().enumerate() {
        let x_c = match solve(center) {
            Ok(x) => x,
            Err(e) => {
                failures.push(SampleFailure { center: ci, sample: 0, beta: center.clone(), error: e.to_string() });
                continue;
            }
        };
        let results: Vec<(Vec<f64>, Result<Vec<f64>>)> = (0..config.samples)
            .into_par_iter()
            .map(|l| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(((ci as u64) << 32) | l as u64);
                let d = sample_ball(&mut rng, k, config.epsilon);
                let beta: Vec<f64> = center.iter().zip(&d).map(|(b, e)| b + e).collect();
                let x = solve(&beta);
                (beta, x)
            })
            .collect();
        let mut delta_max: f64 = 0.0;
        for (l, (beta, x)) in results.into_iter().enumerate() {
            match x {
                Ok(x) => delta_max = delta_max.max(l2(&x, &x_c)),
                Err(e) => failures.push(SampleFailure { center: ci, sample: l, beta, error: e.to_string() }),
            }
        }
        checks.push(CenterCheck { beta: center.clone(), x: x_c, delta_max });
    }
    let delta_max = checks.iter().map(|c| c.delta_max).fold(0.0, f64::max);
    Ok(Assumption7Report {
        x_hat,
        delta_max,
        pass: failures.is_empty() && delta_max < config.eta,
        eta: config.eta,
        epsilon: config.epsilon,
        norm: "l2".into(),
        seed: config.seed,
        samples: config.samples,
        centers: checks,
        failures,
    })
}
