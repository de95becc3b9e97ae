//! Multi-stage trial state machine.

use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::error::{invalid, LagoError, Result};
use crate::model::{fit_binary, fit_continuous, Bounds, FittedModel, Link, StageRecord};
use crate::optimizer::{recommend, recommend_stage_k, GoalSpec, Recommendation};
use crate::power::{final_test, unconditional_lambda, Approach, ArmSummary, FinalTest, PlannedStage};

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum OutcomeKind {
    Binary,
    Continuous { link: Link },
}

impl OutcomeKind {
    pub fn link(&self) -> Link {
        match self {
            OutcomeKind::Binary => Link::Logit,
            OutcomeKind::Continuous { link } => link.clone(),
        }
    }

    pub fn fit(&self, data: &[StageRecord]) -> Result<FittedModel> {
        match self {
            OutcomeKind::Binary => fit_binary(data),
            OutcomeKind::Continuous { link } => fit_continuous(data, link),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub outcome: OutcomeKind,
    /// Planned layout of every stage, stage 1 first.
    pub plan: Vec<PlannedStage>,
    pub bounds: Bounds,
    pub cost: CostFunction,
    pub goals: GoalSpec,
    /// Package the shrinking fallback starts from.
    pub stage1_x: Vec<f64>,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.plan.len() < 2 {
            return invalid("a trial needs at least two stages");
        }
        if self.cost.dim() != self.bounds.dim() {
            return invalid("cost and bounds disagree on the number of components");
        }
        if !self.bounds.contains(&self.stage1_x) {
            return invalid("stage-1 package lies outside the bounds");
        }
        self.goals.validate(&self.outcome.link())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "state")]
pub enum Status {
    AwaitingStage { stage: usize },
    Complete,
    StoppedFutility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub version: u32,
    pub config: TrialConfig,
    pub completed: Vec<StageRecord>,
    pub recommendations: Vec<Recommendation>,
    pub status: Status,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl TrialState {
    pub fn new(config: TrialConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            version: STATE_VERSION,
            config,
            completed: Vec::new(),
            recommendations: Vec::new(),
            status: Status::AwaitingStage { stage: 1 },
            warnings: Vec::new(),
        })
    }

    pub fn stages(&self) -> usize {
        self.config.plan.len()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| LagoError::Invalid(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(s).map_err(|e| LagoError::Invalid(format!("trial state: {e}")))?;
        if state.version != STATE_VERSION {
            return invalid(format!("unsupported trial state version {}", state.version));
        }
        state.config.validate()?;
        Ok(state)
    }

    /// Fit on every completed stage pooled.
    pub fn fit(&self) -> Result<FittedModel> {
        if self.completed.is_empty() {
            return invalid("no completed stages to fit");
        }
        self.config.outcome.fit(&self.completed)
    }

    /// Observed completed stages and the planned stages still to run.
    pub fn summary(&self) -> ArmSummary {
        let k = self.completed.len();
        ArmSummary::new(self.completed.clone(), self.config.plan[k.min(self.stages())..].to_vec())
    }

    /// Appends a recommendation computed from the current completed stages.
    pub fn push_recommendation(&self, rec: Recommendation) -> Self {
        let mut next = self.clone();
        next.recommendations.push(rec);
        next
    }
}

/// Records the next stage's data. Packages outside the bounds are accepted
/// with a warning since centers may deviate from the recommendation.
pub fn ingest_stage(state: &TrialState, record: StageRecord) -> Result<TrialState> {
    let expected = match state.status {
        Status::AwaitingStage { stage } => stage,
        Status::Complete | Status::StoppedFutility => return Err(LagoError::TrialComplete),
    };
    if record.stage != expected {
        return Err(LagoError::OutOfOrderStage { expected, got: record.stage });
    }
    record.validate()?;
    let mut next = state.clone();
    for (j, c) in record.centers.iter().enumerate() {
        if c.package.len() != state.config.bounds.dim() {
            return invalid(format!("stage {expected} center {j}: package has the wrong length"));
        }
        if c.arm == crate::model::Arm::Intervention && !state.config.bounds.contains(&c.package) {
            next.warnings.push(format!("stage {expected} center {j}: package {:?} outside bounds", c.package));
        }
    }
    next.completed.push(record);
    next.status = if expected == state.stages() {
        Status::Complete
    } else {
        Status::AwaitingStage { stage: expected + 1 }
    };
    Ok(next)
}

/// Recommendation for the next stage from the fit on all completed stages.
pub fn next_recommendation(state: &TrialState) -> Result<Recommendation> {
    let k = match state.status {
        Status::AwaitingStage { stage } => stage,
        _ => return Err(LagoError::TrialComplete),
    };
    if k < 2 {
        return invalid("stage 1 is planned from pre-trial coefficients; ingest stage 1 first");
    }
    let model = state.fit()?;
    let cfg = &state.config;
    let mut rec = recommend_stage_k(
        &model,
        &state.completed,
        &cfg.plan,
        &cfg.goals,
        &cfg.cost,
        &cfg.bounds,
        &cfg.stage1_x,
        k,
    )?;
    if cfg.goals.power_goal.is_some() {
        rec.futile = check_futility(state)?.map(|(f, _)| f);
    }
    Ok(rec)
}

/// Optimal package from the all-stage fit under the outcome goal alone.
pub fn final_optimal(state: &TrialState) -> Result<Recommendation> {
    if state.status != Status::Complete {
        return invalid("final optimal package needs a complete trial");
    }
    let cfg = &state.config;
    if cfg.goals.outcome_goal.is_none() {
        return invalid("final optimal package needs an outcome goal");
    }
    let model = state.fit()?;
    recommend(&model, &ArmSummary::default(), &cfg.goals.without_power(), &cfg.cost, &cfg.bounds, &cfg.stage1_x)
}

/// Projected power at the most favorable package within the bounds, and
/// whether it falls short of the power goal. `None` without a power goal or
/// without stages left to run.
pub fn check_futility(state: &TrialState) -> Result<Option<(bool, f64)>> {
    if state.completed.is_empty() {
        return invalid("futility needs at least one completed stage");
    }
    let cfg = &state.config;
    let pi = match cfg.goals.power_goal {
        Some(pi) => pi,
        None => return Ok(None),
    };
    let summary = state.summary();
    if !summary.has_future() {
        return Ok(None);
    }
    let model = state.fit()?;
    let dir = cfg.goals.direction;
    let x = extreme_package(&model, &cfg.bounds, dir);
    let power = match cfg.goals.approach {
        Approach::Conditional if !cfg.goals.test.is_wald() => crate::power::conditional_power(
            &x,
            &model,
            &summary,
            cfg.goals.test,
            cfg.goals.alpha,
            dir,
            cfg.goals.variance_form,
        )?,
        _ => unconditional_lambda(&x, &model, &summary, cfg.goals.test)?.power(cfg.goals.alpha),
    };
    Ok(Some((power < pi, power)))
}

fn extreme_package(model: &FittedModel, bounds: &Bounds, dir: crate::power::Direction) -> Vec<f64> {
    model
        .effects()
        .iter()
        .enumerate()
        .map(|(p, b)| if dir.sign() * b >= 0.0 { bounds.upper()[p] } else { bounds.lower()[p] })
        .collect()
}

/// Operator decision to stop; futility never stops a trial by itself.
pub fn stop_for_futility(state: &TrialState) -> TrialState {
    let mut next = state.clone();
    next.status = Status::StoppedFutility;
    next
}

/// Final test on the pooled all-stage data.
pub fn analyze(state: &TrialState) -> Result<FinalTest> {
    if state.status != Status::Complete {
        return invalid("final analysis needs a complete trial");
    }
    let cfg = &state.config;
    final_test(&state.completed, cfg.goals.test, cfg.goals.alpha, &cfg.outcome.link())
}
