//! BetterBirth retrospective: published odds ratios, arm counts rebuilt
//! from published totals, and stage-3 power by simulation.
//!
//! Stages 1–2 form the observed first stage; stage 3 is planned. Only
//! totals are published, so the arm split of each stage is a layout input.
//! The stages-1–2 control rate is then the one value making the stage-3
//! z test reproduce the published stage-3 p-value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::error::{invalid, LagoError, Result};
use crate::model::{predict, Arm, Bounds, Center, FittedModel, Link, StageRecord};
use crate::optimizer::{recommend, Direction, GoalSpec, Recommendation};
use crate::power::{normal_quantile, z_statistic, Approach, ArmSummary, ArmTotals, PlannedCenter, PlannedStage};

/// Intercept odds and per-unit odds ratios as published.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsRatios {
    pub intercept: f64,
    /// Odds ratio per `visits_per_or_unit` coaching visits.
    pub visits: f64,
    /// Odds ratio per launch day.
    pub launch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetterBirthLayout {
    pub n_stage12: f64,
    pub n_total: f64,
    pub control_share_stage12: f64,
    pub control_share_stage3: f64,
    pub rate_stage12: f64,
    pub control_rate_all: f64,
    pub intervention_rate_all: f64,
    pub stage3_p_value: f64,
    pub stage3_centers_per_arm: usize,
}

/// Reconstructed arm sizes and event counts (fractional).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetterBirthCounts {
    pub n1_12: f64,
    pub n0_12: f64,
    pub s1_12: f64,
    pub s0_12: f64,
    pub n1_3: f64,
    pub n0_3: f64,
    pub s1_3: f64,
    pub s0_3: f64,
}

impl BetterBirthLayout {
    pub fn n_stage3(&self) -> f64 {
        self.n_total - self.n_stage12
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.n_stage12 > 0.0 && self.n_total > self.n_stage12) {
            return invalid("need 0 < n_stage12 < n_total");
        }
        for (name, v) in [
            ("control_share_stage12", self.control_share_stage12),
            ("control_share_stage3", self.control_share_stage3),
            ("rate_stage12", self.rate_stage12),
            ("control_rate_all", self.control_rate_all),
            ("intervention_rate_all", self.intervention_rate_all),
            ("stage3_p_value", self.stage3_p_value),
        ] {
            if !unit(v) {
                return invalid(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.stage3_centers_per_arm == 0 {
            return invalid("stage3_centers_per_arm must be positive");
        }
        Ok(())
    }

    /// Arm counts consistent with every published total. Stage-3 control
    /// events exceed intervention events (the intervention lowers the rate).
    pub fn reconstruct(&self) -> Result<BetterBirthCounts> {
        self.validate()?;
        let n0_12 = self.control_share_stage12 * self.n_stage12;
        let n1_12 = self.n_stage12 - n0_12;
        let n0_3 = self.control_share_stage3 * self.n_stage3();
        let n1_3 = self.n_stage3() - n0_3;
        let s0_all = self.control_rate_all * (n0_12 + n0_3);
        let s1_all = self.intervention_rate_all * (n1_12 + n1_3);
        let s12 = self.rate_stage12 * self.n_stage12;
        let counts = |pc12: f64| {
            let s0_12 = pc12 * n0_12;
            let s1_12 = s12 - s0_12;
            BetterBirthCounts { n1_12, n0_12, s1_12, s0_12, n1_3, n0_3, s1_3: s1_all - s1_12, s0_3: s0_all - s0_12 }
        };
        let valid = |c: &BetterBirthCounts| {
            [(c.s1_12, c.n1_12), (c.s0_12, c.n0_12), (c.s1_3, c.n1_3), (c.s0_3, c.n0_3)]
                .iter()
                .all(|&(s, n)| s > 0.0 && s < n)
        };
        let z3 = |pc12: f64| {
            let c = counts(pc12);
            z_statistic(&ArmTotals::binary(c.s1_3, c.n1_3, c.s0_3, c.n0_3), false)
        };
        let target = -normal_quantile(1.0 - 0.5 * self.stage3_p_value);
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).filter(|&p| valid(&counts(p))).collect();
        let (mut lo, mut hi) = match (grid.first(), grid.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return invalid("no stage 1-2 control rate is consistent with the published totals"),
        };
        // z₃ increases with pc12: more stage-1–2 control events leave fewer for stage 3.
        if !(z3(lo)? <= target && z3(hi)? >= target) {
            return invalid("published stage-3 p-value is unreachable under this arm split");
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if z3(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(counts(0.5 * (lo + hi)))
    }
}

impl BetterBirthCounts {
    pub fn stage12_record(&self, package: &[f64]) -> Result<StageRecord> {
        StageRecord::new(
            1,
            vec![
                Center::from_counts(Arm::Intervention, package.to_vec(), self.n1_12, self.s1_12),
                Center::from_counts(Arm::Control, vec![0.0; package.len()], self.n0_12, self.s0_12),
            ],
        )
    }

    /// Observed stages 1–2 then observed stage 3, one aggregate center per arm.
    pub fn all_stage_records(&self, package: &[f64]) -> Result<Vec<StageRecord>> {
        Ok(vec![
            self.stage12_record(package)?,
            StageRecord::new(
                2,
                vec![
                    Center::from_counts(Arm::Intervention, package.to_vec(), self.n1_3, self.s1_3),
                    Center::from_counts(Arm::Control, vec![0.0; package.len()], self.n0_3, self.s0_3),
                ],
            )?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetterBirthFixture {
    pub name: String,
    pub visits_per_or_unit: f64,
    pub stage12: OddsRatios,
    pub all_data: OddsRatios,
    pub bounds: Bounds,
    pub cost: CostFunction,
    pub stage1_x: Vec<f64>,
    pub layout: BetterBirthLayout,
}

impl BetterBirthFixture {
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../../data/betterbirth.json")).expect("bundled BetterBirth fixture parses")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LagoError::Invalid(format!("BetterBirth fixture: {e}")))
    }

    fn model(&self, or: &OddsRatios) -> FittedModel {
        FittedModel::from_beta(
            vec![or.intercept.ln(), or.visits.ln() / self.visits_per_or_unit, or.launch.ln()],
            Link::Logit,
        )
    }

    /// Logistic model from the stages 1–2 odds ratios.
    pub fn stage12_model(&self) -> FittedModel {
        self.model(&self.stage12)
    }

    /// Logistic model from the all-data odds ratios, used as the truth.
    pub fn all_data_model(&self) -> FittedModel {
        self.model(&self.all_data)
    }

    /// Stage-3 plan: equal centers per arm sharing the arm totals.
    pub fn stage3_plan(&self, counts: &BetterBirthCounts) -> PlannedStage {
        let j = self.layout.stage3_centers_per_arm;
        let mut centers = vec![PlannedCenter { arm: Arm::Intervention, n: counts.n1_3 / j as f64 }; j];
        centers.extend(vec![PlannedCenter { arm: Arm::Control, n: counts.n0_3 / j as f64 }; j]);
        PlannedStage { centers }
    }

    pub fn summary(&self, counts: &BetterBirthCounts) -> Result<ArmSummary> {
        Ok(ArmSummary::new(vec![counts.stage12_record(&self.stage1_x)?], vec![self.stage3_plan(counts)]))
    }

    /// Decrease-direction goals with an optional power goal.
    pub fn goals(&self, outcome_goal: f64, power: Option<(f64, Approach)>) -> GoalSpec {
        let g = GoalSpec::outcome(outcome_goal).with_direction(Direction::Decrease);
        match power {
            Some((pi, approach)) => g.with_power(pi, approach),
            None => g,
        }
    }

    /// Stage-3 recommendation from the stages 1–2 model.
    pub fn recommend(&self, goals: &GoalSpec) -> Result<Recommendation> {
        let counts = self.layout.reconstruct()?;
        recommend(&self.stage12_model(), &self.summary(&counts)?, goals, &self.cost, &self.bounds, &self.stage1_x)
    }
}

/// Fraction of `replicates` simulated stage-3 draws under `truth` at
/// package `x` for which the all-stage two-sided unpooled z test rejects at
/// level 0.05. Stages 1–2 counts stay fixed.
pub fn betterbirth_power(truth: &FittedModel, counts: &BetterBirthCounts, x: &[f64], replicates: usize, seed: u64) -> f64 {
    let n1 = counts.n1_3.round() as u64;
    let n0 = counts.n0_3.round() as u64;
    let p1 = predict(truth, x);
    let p0 = truth.control_value();
    let crit = normal_quantile(0.975);
    let (b1, b0) = match (Binomial::new(n1, p1), Binomial::new(n0, p0)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return f64::NAN,
    };
    let hits: usize = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let s1 = b1.sample(&mut rng) as f64;
            let s0 = b0.sample(&mut rng) as f64;
            let t = ArmTotals::binary(counts.s1_12 + s1, counts.n1_12 + n1 as f64, counts.s0_12 + s0, counts.n0_12 + n0 as f64);
            usize::from(z_statistic(&t, false).map(|z| z.abs() > crit).unwrap_or(false))
        })
        .sum();
    hits as f64 / replicates.max(1) as f64
}
