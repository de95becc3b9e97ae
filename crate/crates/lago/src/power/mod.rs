//! Test statistics, special functions and projected power constraints.

mod constraint;
pub mod special;
mod stats;

use serde::{Deserialize, Serialize};

pub use constraint::{
    conditional_constraint_slack, conditional_power, one_df_terms, unconditional_lambda, unconditional_power,
    wald_lambda, ArmSummary, OneDfTerms, PlannedCenter, PlannedStage, UnconditionalLambda,
};
pub use special::{chisq_critical, lambda_min, noncentral_chisq_cdf, normal_cdf, normal_quantile};
pub use stats::{final_test, t_statistic, wald_statistic, z_statistic, ArmTotals, FinalTest};

/// Pre-specified final-analysis test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    ZUnpooled,
    ZPooled,
    TUnpooled,
    TPooled,
    WaldBinary,
    WaldContinuous,
}

impl TestKind {
    pub fn is_wald(self) -> bool {
        matches!(self, TestKind::WaldBinary | TestKind::WaldContinuous)
    }

    pub fn is_pooled(self) -> bool {
        matches!(self, TestKind::ZPooled | TestKind::TPooled)
    }

    pub fn is_binary_z(self) -> bool {
        matches!(self, TestKind::ZUnpooled | TestKind::ZPooled)
    }

    /// Degrees of freedom for a model with `p` package components.
    pub fn df(self, p: usize) -> usize {
        if self.is_wald() {
            p
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Unconditional,
    Conditional,
}

/// Scale of the future-stage noise term in the conditional constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceForm {
    /// Standard deviation σ̂, matching the standardization of the derivation.
    #[default]
    StandardDeviation,
    /// σ̂² as it appears in the displayed inequality.
    Variance,
}

impl VarianceForm {
    pub(crate) fn scale(self, sigma: f64) -> f64 {
        match self {
            VarianceForm::StandardDeviation => sigma,
            VarianceForm::Variance => sigma * sigma,
        }
    }
}

/// Whether the goal is to raise or lower the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Increase,
    Decrease,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }

    /// `a` is at least as good as `b` in this direction.
    pub fn at_least(self, a: f64, b: f64) -> bool {
        self.sign() * (a - b) >= 0.0
    }

    /// The better of two values.
    pub fn best(self, a: f64, b: f64) -> f64 {
        if self.at_least(a, b) {
            a
        } else {
            b
        }
    }
}
