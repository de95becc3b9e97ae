//! Monte Carlo operating characteristics of two-stage trials.
//!
//! Each replicate draws stage-1 outcomes under the true coefficients, fits,
//! recommends the stage-2 package, draws stage 2 at that package, then runs
//! the final fit, the final test and the optimal-package estimate.
//! Replicate `r` uses ChaCha8 stream `r` of the spec seed, so serial and
//! parallel runs agree bitwise.

mod betterbirth;
mod fixtures;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use betterbirth::{betterbirth_power, BetterBirthCounts, BetterBirthFixture, BetterBirthLayout, OddsRatios};
pub use fixtures::{bundled_scenario, BUNDLED_SCENARIOS};

use crate::cost::CostFunction;
use crate::error::{invalid, LagoError, Result};
use crate::model::{binary_sandwich_covariance, predict, Arm, Bounds, Center, FittedModel, Link, StageRecord};
use crate::optimizer::{min_cost_subject_to_threshold, recommend, recommend_stage_k, GoalSpec, Regime};
use crate::power::{final_test, normal_quantile, Approach, PlannedStage};
use crate::trial::OutcomeKind;

fn identity() -> Link {
    Link::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SimOutcome {
    Binary,
    /// Gaussian errors with standard deviation `sigma` around g⁻¹(β*ᵀz).
    Continuous {
        sigma: f64,
        #[serde(default = "identity")]
        link: Link,
    },
}

impl SimOutcome {
    fn kind(&self) -> OutcomeKind {
        match self {
            SimOutcome::Binary => OutcomeKind::Binary,
            SimOutcome::Continuous { link, .. } => OutcomeKind::Continuous { link: link.clone() },
        }
    }
}

/// Which covariance feeds SE and coverage for binary fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    #[default]
    Naive,
    Sandwich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCenter {
    pub arm: Arm,
    /// Planned package; ignored (zero) for control centers.
    #[serde(default)]
    pub package: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub stage1: Vec<DesignCenter>,
    pub stage2_intervention: usize,
    pub stage2_control: usize,
    pub n_stage1: usize,
    pub n_stage2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub true_beta: Vec<f64>,
    pub outcome: SimOutcome,
    pub design: Design,
    pub cost: CostFunction,
    pub bounds: Bounds,
    pub goals: GoalSpec,
    /// Outcome goal defining the optimal package; defaults to the goal in `goals`.
    #[serde(default)]
    pub optimal_goal: Option<f64>,
    pub stage1_x: Vec<f64>,
    /// Repeat the stage-1 design in stage 2 instead of recommending.
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub covariance: CovarianceKind,
    pub replicates: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return invalid("replicates must be at least 1");
        }
        let dim = self.bounds.dim();
        if self.true_beta.len() != dim + 1 || self.true_beta.iter().any(|b| !b.is_finite()) {
            return invalid(format!("true_beta needs {} finite entries", dim + 1));
        }
        if self.cost.dim() != dim || self.stage1_x.len() != dim {
            return invalid("cost, bounds and stage1_x disagree on the number of components");
        }
        let d = &self.design;
        let arms = |a: Arm| d.stage1.iter().filter(|c| c.arm == a).count();
        if arms(Arm::Intervention) == 0 || arms(Arm::Control) == 0 {
            return invalid("stage-1 design needs intervention and control centers");
        }
        if !self.baseline && (d.stage2_intervention == 0 || d.stage2_control == 0) {
            return invalid("stage-2 design needs intervention and control centers");
        }
        if d.n_stage1 == 0 || d.n_stage2 == 0 {
            return invalid("per-center sample sizes must be positive");
        }
        for c in &d.stage1 {
            if c.arm == Arm::Intervention && c.package.len() != dim {
                return invalid("stage-1 intervention package has the wrong length");
            }
        }
        if let SimOutcome::Continuous { sigma, .. } = self.outcome {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return invalid("continuous sigma must be positive");
            }
        }
        if !self.bounds.contains(&self.stage1_x) {
            return invalid("stage1_x lies outside the bounds");
        }
        if let Some(g) = self.optimal_goal {
            GoalSpec { outcome_goal: Some(g), power_goal: None, ..self.goals.clone() }.validate(&self.outcome.kind().link())?;
        }
        if self.baseline {
            return Ok(());
        }
        self.goals.validate(&self.outcome.kind().link())
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.design.n_stage1 = n;
        self.design.n_stage2 = n;
        self
    }

    pub fn with_power(mut self, pi: Option<f64>, approach: Approach) -> Self {
        self.goals.power_goal = pi;
        self.goals.approach = approach;
        self
    }

    pub fn with_replicates(mut self, r: usize, seed: u64) -> Self {
        self.replicates = r;
        self.seed = seed;
        self
    }

    fn optimal_target(&self) -> Option<f64> {
        self.optimal_goal.or(self.goals.outcome_goal)
    }

    fn truth(&self) -> FittedModel {
        FittedModel::from_beta(self.true_beta.clone(), self.outcome.kind().link())
    }

    fn plan(&self) -> Vec<PlannedStage> {
        let d = &self.design;
        let n1 = d.n_stage1 as f64;
        let j1 = d.stage1.iter().filter(|c| c.arm == Arm::Intervention).count();
        vec![
            PlannedStage::balanced(j1, d.stage1.len() - j1, n1),
            PlannedStage::balanced(d.stage2_intervention, d.stage2_control, d.n_stage2 as f64),
        ]
    }
}

/// Deterministic map from planned to delivered package: `(stage, center, x)`.
pub type Distortion<'a> = &'a (dyn Fn(usize, usize, &[f64]) -> Vec<f64> + Sync);

/// One replicate's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub reject: bool,
    pub x_hat: Option<Vec<f64>>,
    pub regime: Option<Regime>,
    pub x_opt_stage1: Option<Vec<f64>>,
    pub x_opt_final: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMetrics {
    pub true_value: f64,
    pub mean: f64,
    /// |100(mean β̂ − β*)/β*|; `None` when β* = 0.
    pub rel_bias_pct: Option<f64>,
    pub mean_se: f64,
    pub emp_sd: f64,
    /// 100 × mean SE / empirical SD.
    pub se_ratio: f64,
    pub cp95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalMetrics {
    pub x_true: Vec<f64>,
    pub p_true: f64,
    pub mean_stage1: Vec<f64>,
    pub mean_final: Vec<f64>,
    /// Per component; `None` where the true component is zero.
    pub rel_bias_stage1: Vec<Option<f64>>,
    pub rel_bias_final: Vec<Option<f64>>,
    /// (Q2.5, Q97.5) of the true outcome at the estimated optimal package.
    pub propt_stage1: (f64, f64),
    pub propt_final: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegimeCounts {
    pub goal_feasible: usize,
    pub pmax_fallback: usize,
    pub shrinking_fallback: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub n_stage1: usize,
    pub n_stage2: usize,
    pub power_goal: Option<f64>,
    pub approach: Approach,
    pub baseline: bool,
    pub replicates: usize,
    pub failures: usize,
    pub seed: u64,
    pub coefficients: Vec<CoefficientMetrics>,
    pub power_pct: f64,
    /// Monte Carlo standard error of `power_pct`, in percentage points.
    pub power_mc_se: f64,
    pub optimal: Option<OptimalMetrics>,
    pub mean_x_hat: Option<Vec<f64>>,
    pub regimes: RegimeCounts,
}

impl MetricsReport {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "scenario", "n1", "n2", "power_goal", "approach", "baseline", "replicates", "failures", "seed",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for i in 0..self.coefficients.len() {
            for m in ["relbias", "se_ratio", "cp95"] {
                h.push(format!("b{i}_{m}"));
            }
        }
        h.push("power".into());
        h.push("power_mc_se".into());
        let p = self.coefficients.len().saturating_sub(1);
        for stage in ["stage1", "final"] {
            for c in 1..=p {
                h.push(format!("xopt{c}_relbias_{stage}"));
            }
            h.push(format!("propt_{stage}_q025"));
            h.push(format!("propt_{stage}_q975"));
        }
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:.4}");
        let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
        let mut r = vec![
            self.scenario.clone(),
            self.n_stage1.to_string(),
            self.n_stage2.to_string(),
            opt(self.power_goal),
            match (self.baseline, self.power_goal, self.approach) {
                (true, _, _) => "baseline".into(),
                (false, None, _) => String::new(),
                (false, Some(_), Approach::Unconditional) => "U".into(),
                (false, Some(_), Approach::Conditional) => "C".into(),
            },
            self.baseline.to_string(),
            self.replicates.to_string(),
            self.failures.to_string(),
            self.seed.to_string(),
        ];
        for c in &self.coefficients {
            r.push(opt(c.rel_bias_pct));
            r.push(f(c.se_ratio));
            r.push(f(c.cp95));
        }
        r.push(f(self.power_pct));
        r.push(f(self.power_mc_se));
        let p = self.coefficients.len().saturating_sub(1);
        match &self.optimal {
            Some(o) => {
                for (bias, q) in [(&o.rel_bias_stage1, o.propt_stage1), (&o.rel_bias_final, o.propt_final)] {
                    r.extend(bias.iter().map(|&b| opt(b)));
                    r.push(f(q.0));
                    r.push(f(q.1));
                }
            }
            None => r.extend(std::iter::repeat_n(String::new(), 2 * (p + 2))),
        }
        r
    }

    /// Header plus one data row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| LagoError::Invalid(e.to_string());
        w.write_record(self.csv_header()).map_err(io)?;
        w.write_record(self.csv_row()).map_err(io)?;
        let bytes = w.into_inner().map_err(|e| LagoError::Invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| LagoError::Invalid(e.to_string()))
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<MetricsReport> {
    run_scenario_with(spec, &|_, _, x: &[f64]| x.to_vec())
}

/// `run_scenario` with delivered packages `h(stage, center, x)` in place of
/// the planned ones.
pub fn run_scenario_with(spec: &ScenarioSpec, distort: Distortion<'_>) -> Result<MetricsReport> {
    spec.validate()?;
    let reps: Vec<Result<Replicate>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| run_replicate(spec, r as u64, distort))
        .collect();
    aggregate(spec, &reps)
}

fn draw_center<R: Rng>(rng: &mut R, truth: &FittedModel, outcome: &SimOutcome, arm: Arm, a: Vec<f64>, n: usize) -> Result<Center> {
    let mu = predict(truth, &a);
    match outcome {
        SimOutcome::Binary => {
            let b = Binomial::new(n as u64, mu).map_err(|e| LagoError::NonFinite(format!("binomial p = {mu}: {e}")))?;
            Ok(Center::from_counts(arm, a, n as f64, b.sample(rng) as f64))
        }
        SimOutcome::Continuous { sigma, .. } => {
            let ys: Vec<f64> = (0..n).map(|_| mu + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            Center::continuous(arm, a, &ys)
        }
    }
}

fn draw_stage<R: Rng>(
    rng: &mut R,
    spec: &ScenarioSpec,
    stage: usize,
    layout: &[DesignCenter],
    n: usize,
    distort: Distortion<'_>,
) -> Result<StageRecord> {
    let truth = spec.truth();
    let dim = spec.bounds.dim();
    let centers = layout
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let a = match c.arm {
                Arm::Control => vec![0.0; dim],
                Arm::Intervention => distort(stage, j, &c.package),
            };
            draw_center(rng, &truth, &spec.outcome, c.arm, a, n)
        })
        .collect::<Result<Vec<_>>>()?;
    StageRecord::new(stage, centers)
}

fn optimal_package(model: &FittedModel, spec: &ScenarioSpec, goal: f64) -> Result<Vec<f64>> {
    let goals = GoalSpec { outcome_goal: Some(goal), power_goal: None, ..spec.goals.clone() };
    let summary = Default::default();
    Ok(recommend(model, &summary, &goals, &spec.cost, &spec.bounds, &spec.stage1_x)?.x_hat)
}

fn standard_errors(spec: &ScenarioSpec, data: &[StageRecord], model: &FittedModel) -> Result<Vec<f64>> {
    match (&spec.outcome, spec.covariance) {
        (SimOutcome::Binary, CovarianceKind::Sandwich) => {
            let cov = binary_sandwich_covariance(data, model)?;
            Ok((0..cov.len()).map(|i| cov[i][i].max(0.0).sqrt()).collect())
        }
        _ => Ok(model.standard_errors()),
    }
}

/// Runs replicate `r` of `spec` on its own RNG stream.
pub fn run_replicate(spec: &ScenarioSpec, r: u64, distort: Distortion<'_>) -> Result<Replicate> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(r);
    let d = &spec.design;
    let kind = spec.outcome.kind();
    let stage1 = draw_stage(&mut rng, spec, 1, &d.stage1, d.n_stage1, distort)?;
    let fit1 = kind.fit(std::slice::from_ref(&stage1))?;
    let target = spec.optimal_target();
    let x_opt_stage1 = target.map(|g| optimal_package(&fit1, spec, g)).transpose()?;

    let (layout2, x_hat, regime) = if spec.baseline {
        (d.stage1.clone(), None, None)
    } else {
        let rec = recommend_stage_k(
            &fit1,
            std::slice::from_ref(&stage1),
            &spec.plan(),
            &spec.goals,
            &spec.cost,
            &spec.bounds,
            &spec.stage1_x,
            2,
        )?;
        let mut layout = vec![DesignCenter { arm: Arm::Intervention, package: rec.x_hat.clone() }; d.stage2_intervention];
        layout.extend(vec![DesignCenter { arm: Arm::Control, package: Vec::new() }; d.stage2_control]);
        (layout, Some(rec.x_hat), Some(rec.regime))
    };
    let stage2 = draw_stage(&mut rng, spec, 2, &layout2, d.n_stage2, distort)?;
    let data = [stage1, stage2];
    let fit = kind.fit(&data)?;
    let se = standard_errors(spec, &data, &fit)?;
    let test = final_test(&data, spec.goals.test, spec.goals.alpha, &kind.link())?;
    let x_opt_final = target.map(|g| optimal_package(&fit, spec, g)).transpose()?;
    Ok(Replicate { beta: fit.beta, se, reject: test.reject, x_hat, regime, x_opt_stage1, x_opt_final })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn rel_bias(estimate: f64, truth: f64) -> Option<f64> {
    (truth != 0.0).then(|| (100.0 * (estimate - truth) / truth).abs())
}

fn aggregate(spec: &ScenarioSpec, reps: &[Result<Replicate>]) -> Result<MetricsReport> {
    let ok: Vec<&Replicate> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failures = reps.len() - ok.len();
    if ok.is_empty() {
        let first = reps.iter().find_map(|r| r.as_ref().err()).map(|e| e.to_string()).unwrap_or_default();
        return Err(LagoError::NonFinite(format!("every replicate failed; first error: {first}")));
    }
    let m = ok.len() as f64;
    let z = normal_quantile(0.975);
    let coefficients = spec
        .true_beta
        .iter()
        .enumerate()
        .map(|(i, &truth)| {
            let mean_b = mean(ok.iter().map(|r| r.beta[i]));
            let var = if ok.len() > 1 {
                ok.iter().map(|r| (r.beta[i] - mean_b).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            let mean_se = mean(ok.iter().map(|r| r.se[i]));
            let covered = ok.iter().filter(|r| (r.beta[i] - truth).abs() <= z * r.se[i]).count();
            CoefficientMetrics {
                true_value: truth,
                mean: mean_b,
                rel_bias_pct: rel_bias(mean_b, truth),
                mean_se,
                emp_sd: var.sqrt(),
                se_ratio: 100.0 * mean_se / var.sqrt(),
                cp95: 100.0 * covered as f64 / m,
            }
        })
        .collect();

    let power = ok.iter().filter(|r| r.reject).count() as f64 / m;
    let truth = spec.truth();
    let optimal = match spec.optimal_target() {
        Some(goal) => {
            let x_true = min_cost_subject_to_threshold(&truth, &spec.cost, &spec.bounds, goal, spec.goals.direction).ok();
            x_true.map(|x_true| {
                let dim = x_true.len();
                let pick = |f: &dyn Fn(&Replicate) -> &Option<Vec<f64>>| -> Vec<Vec<f64>> {
                    ok.iter().filter_map(|r| f(r).clone()).collect()
                };
                let s1 = pick(&|r| &r.x_opt_stage1);
                let fin = pick(&|r| &r.x_opt_final);
                let means = |xs: &[Vec<f64>]| (0..dim).map(|p| mean(xs.iter().map(|x| x[p]))).collect::<Vec<_>>();
                let (m1, mf) = (means(&s1), means(&fin));
                let q = |xs: &[Vec<f64>]| {
                    let p: Vec<f64> = xs.iter().map(|x| predict(&truth, x)).collect();
                    (quantile(&p, 0.025), quantile(&p, 0.975))
                };
                OptimalMetrics {
                    p_true: predict(&truth, &x_true),
                    rel_bias_stage1: m1.iter().zip(&x_true).map(|(e, t)| rel_bias(*e, *t)).collect(),
                    rel_bias_final: mf.iter().zip(&x_true).map(|(e, t)| rel_bias(*e, *t)).collect(),
                    propt_stage1: q(&s1),
                    propt_final: q(&fin),
                    mean_stage1: m1,
                    mean_final: mf,
                    x_true,
                }
            })
        }
        None => None,
    };

    let hats: Vec<&Vec<f64>> = ok.iter().filter_map(|r| r.x_hat.as_ref()).collect();
    let mean_x_hat = (!hats.is_empty()).then(|| (0..spec.bounds.dim()).map(|p| mean(hats.iter().map(|x| x[p]))).collect());
    let mut regimes = RegimeCounts::default();
    for r in &ok {
        match r.regime {
            Some(Regime::GoalFeasible) => regimes.goal_feasible += 1,
            Some(Regime::PmaxFallback) => regimes.pmax_fallback += 1,
            Some(Regime::ShrinkingFallback) => regimes.shrinking_fallback += 1,
            None => {}
        }
    }

    Ok(MetricsReport {
        scenario: spec.name.clone(),
        n_stage1: spec.design.n_stage1,
        n_stage2: spec.design.n_stage2,
        power_goal: if spec.baseline { None } else { spec.goals.power_goal },
        approach: spec.goals.approach,
        baseline: spec.baseline,
        replicates: spec.replicates,
        failures,
        seed: spec.seed,
        coefficients,
        power_pct: 100.0 * power,
        power_mc_se: 100.0 * (power * (1.0 - power) / m).sqrt(),
        optimal,
        mean_x_hat,
        regimes,
    })
}
