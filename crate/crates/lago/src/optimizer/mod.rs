//! Recommended packages under outcome and power goals.

mod algorithm;
mod solver;

use serde::{Deserialize, Serialize};

pub use algorithm::{plan_stage1, power_constraint_holds, power_threshold, recommend, recommend_stage_k, shrinking_method};
pub use solver::{min_cost_subject_to_threshold, p_max};

use crate::error::{invalid, Result};
use crate::model::Link;
pub use crate::power::Direction;
use crate::power::{Approach, TestKind, VarianceForm};

/// How Wald-test designs assign packages to planned intervention centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaldMode {
    /// One package for every planned intervention center.
    #[default]
    Common,
    /// Per-center packages by block-coordinate descent.
    PerCenter,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_approach() -> Approach {
    Approach::Unconditional
}

fn default_test() -> TestKind {
    TestKind::ZUnpooled
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    /// Target success probability or mean; `None` leaves only the power goal.
    pub outcome_goal: Option<f64>,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub power_goal: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_approach")]
    pub approach: Approach,
    #[serde(default = "default_test")]
    pub test: TestKind,
    #[serde(default)]
    pub variance_form: VarianceForm,
    #[serde(default)]
    pub wald_mode: WaldMode,
}

impl GoalSpec {
    pub fn outcome(goal: f64) -> Self {
        Self {
            outcome_goal: Some(goal),
            direction: Direction::Increase,
            power_goal: None,
            alpha: 0.05,
            approach: Approach::Unconditional,
            test: TestKind::ZUnpooled,
            variance_form: VarianceForm::StandardDeviation,
            wald_mode: WaldMode::Common,
        }
    }

    pub fn with_power(mut self, pi: f64, approach: Approach) -> Self {
        self.power_goal = Some(pi);
        self.approach = approach;
        self
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_test(mut self, test: TestKind) -> Self {
        self.test = test;
        self
    }

    /// Same goals with the power requirement removed.
    pub fn without_power(&self) -> Self {
        Self { power_goal: None, ..self.clone() }
    }

    pub fn validate(&self, link: &Link) -> Result<()> {
        if let Some(g) = self.outcome_goal {
            if !g.is_finite() {
                return invalid("outcome goal must be finite");
            }
            if matches!(link, Link::Logit) && !(g > 0.0 && g < 1.0) {
                return invalid(format!("outcome goal {g} must lie in (0, 1) for binary outcomes"));
            }
        }
        if let Some(pi) = self.power_goal {
            if !(pi > 0.0 && pi < 1.0) {
                return invalid(format!("power goal {pi} must lie in (0, 1)"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if self.outcome_goal.is_none() && self.power_goal.is_none() {
            return invalid("need an outcome goal, a power goal, or both");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    GoalFeasible,
    PmaxFallback,
    ShrinkingFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub x_hat: Vec<f64>,
    pub regime: Regime,
    /// Predicted outcome at `x_hat`.
    pub achieved_outcome: f64,
    /// Threshold the solver was asked to meet.
    pub required_threshold: f64,
    /// Best achievable outcome within the bounds.
    pub p_max: f64,
    /// Smallest outcome meeting the power goal, when one exists.
    pub power_threshold: Option<f64>,
    /// Whether the power goal, rather than the outcome goal, set the threshold.
    pub power_binding: Option<bool>,
    pub projected_power: Option<f64>,
    pub cost: f64,
    /// Per-center packages (Wald per-center mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_packages: Option<Vec<Vec<f64>>>,
    /// Projected power at the extreme package is below the power goal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub futile: Option<bool>,
}
