use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::special::{chisq_critical, chisq_sf, normal_quantile, normal_sf};
use super::TestKind;
use crate::error::{LagoError, Result};
use crate::model::{fit_binary, fit_continuous, Arm, FittedModel, Link, StageRecord};

/// Pooled all-stage per-arm totals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmTotals {
    pub n1: f64,
    pub s1: f64,
    pub ss1: f64,
    pub n0: f64,
    pub s0: f64,
    pub ss0: f64,
}

impl ArmTotals {
    pub fn from_records(records: &[StageRecord]) -> Self {
        let mut t = Self::default();
        for r in records {
            t.n1 += r.n(Arm::Intervention);
            t.s1 += r.sum(Arm::Intervention);
            t.ss1 += r.sum_sq(Arm::Intervention);
            t.n0 += r.n(Arm::Control);
            t.s0 += r.sum(Arm::Control);
            t.ss0 += r.sum_sq(Arm::Control);
        }
        t
    }

    /// Binary totals from success counts.
    pub fn binary(s1: f64, n1: f64, s0: f64, n0: f64) -> Self {
        Self { n1, s1, ss1: s1, n0, s0, ss0: s0 }
    }

    pub fn mean1(&self) -> f64 {
        self.s1 / self.n1
    }

    pub fn mean0(&self) -> f64 {
        self.s0 / self.n0
    }

    pub fn var1(&self) -> f64 {
        sample_variance(self.n1, self.s1, self.ss1)
    }

    pub fn var0(&self) -> f64 {
        sample_variance(self.n0, self.s0, self.ss0)
    }
}

pub(crate) fn sample_variance(n: f64, s: f64, ss: f64) -> f64 {
    if n < 2.0 {
        return 0.0;
    }
    ((ss - s * s / n) / (n - 1.0)).max(0.0)
}

/// Two-proportion z statistic, unpooled or pooled variance.
pub fn z_statistic(t: &ArmTotals, pooled: bool) -> Result<f64> {
    if !(t.n1 > 0.0 && t.n0 > 0.0) {
        return Err(LagoError::Invalid("both arms need observations".into()));
    }
    let (p1, p0) = (t.mean1(), t.mean0());
    let var = if pooled {
        let pp = (t.s1 + t.s0) / (t.n1 + t.n0);
        pp * (1.0 - pp) * (1.0 / t.n1 + 1.0 / t.n0)
    } else {
        p1 * (1.0 - p1) / t.n1 + p0 * (1.0 - p0) / t.n0
    };
    if !(var > 0.0) {
        return Err(LagoError::DegenerateVariance);
    }
    Ok((p1 - p0) / var.sqrt())
}

/// Two-sample t statistic on arm means, unpooled or pooled variance.
pub fn t_statistic(t: &ArmTotals, pooled: bool) -> Result<f64> {
    if !(t.n1 > 0.0 && t.n0 > 0.0) {
        return Err(LagoError::Invalid("both arms need observations".into()));
    }
    let (v1, v0) = (t.var1(), t.var0());
    let var = if pooled {
        let sp = ((t.n1 - 1.0) * v1 + (t.n0 - 1.0) * v0) / (t.n1 + t.n0 - 2.0);
        sp * (1.0 / t.n1 + 1.0 / t.n0)
    } else {
        v1 / t.n1 + v0 / t.n0
    };
    if !(var > 0.0) {
        return Err(LagoError::DegenerateVariance);
    }
    Ok((t.mean1() - t.mean0()) / var.sqrt())
}

/// Wald statistic n β̂₁ᵀ(Σ̂_{β₁})⁻¹β̂₁ with Σ̂ the asymptotic covariance
/// n_used · Var(β̂).
pub fn wald_statistic(model: &FittedModel, n: f64) -> Result<f64> {
    let p = model.dim();
    let b1 = model.effects();
    if b1.iter().all(|&b| b == 0.0) {
        return Ok(0.0);
    }
    let block = DMatrix::from_fn(p, p, |i, j| model.covariance[i + 1][j + 1] * model.n_used);
    let inv = block.try_inverse().ok_or(LagoError::SingularCovariance)?;
    let mut w = 0.0;
    for i in 0..p {
        for j in 0..p {
            w += b1[i] * inv[(i, j)] * b1[j];
        }
    }
    if !w.is_finite() {
        return Err(LagoError::SingularCovariance);
    }
    Ok(n * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalTest {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub df: usize,
}

/// Final analysis of the pooled all-stage data.
///
/// 1-df tests reject when |Z| > z_{α/2} with a two-sided normal p-value;
/// Wald tests reject when W > χ²_{α,P} with an upper-tail χ²_P p-value.
pub fn final_test(records: &[StageRecord], test: TestKind, alpha: f64, link: &Link) -> Result<FinalTest> {
    let totals = ArmTotals::from_records(records);
    let one_df = |z: f64| {
        let crit = normal_quantile(1.0 - 0.5 * alpha);
        FinalTest { statistic: z, p_value: (2.0 * normal_sf(z.abs())).min(1.0), reject: z.abs() > crit, df: 1 }
    };
    match test {
        TestKind::ZUnpooled => z_statistic(&totals, false).map(one_df),
        TestKind::ZPooled => z_statistic(&totals, true).map(one_df),
        TestKind::TUnpooled => t_statistic(&totals, false).map(one_df),
        TestKind::TPooled => t_statistic(&totals, true).map(one_df),
        TestKind::WaldBinary | TestKind::WaldContinuous => {
            let model = if test == TestKind::WaldBinary {
                fit_binary(records)?
            } else {
                fit_continuous(records, link)?
            };
            let w = wald_statistic(&model, model.n_used)?;
            let df = model.dim();
            Ok(FinalTest {
                statistic: w,
                p_value: chisq_sf(w, df as f64),
                reject: w > chisq_critical(alpha, df as f64),
                df,
            })
        }
    }
}
