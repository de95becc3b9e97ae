use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::special::{chisq_critical, lambda_min, noncentral_chisq_cdf, normal_cdf, normal_quantile};
use super::stats::{sample_variance, ArmTotals};
use super::{Direction, TestKind, VarianceForm};
use crate::error::{invalid, LagoError, Result};
use crate::model::{predict, Arm, FittedModel, StageRecord};

/// A center planned for a future stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedCenter {
    pub arm: Arm,
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlannedStage {
    pub centers: Vec<PlannedCenter>,
}

impl PlannedStage {
    /// `j1` intervention and `j0` control centers of `n` participants each.
    pub fn balanced(j1: usize, j0: usize, n: f64) -> Self {
        let mut centers = vec![PlannedCenter { arm: Arm::Intervention, n }; j1];
        centers.extend(vec![PlannedCenter { arm: Arm::Control, n }; j0]);
        Self { centers }
    }

    pub fn n(&self, arm: Arm) -> f64 {
        self.centers.iter().filter(|c| c.arm == arm).map(|c| c.n).sum()
    }
}

/// Observed stages so far plus planned sizes of the stages still to run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmSummary {
    pub observed: Vec<StageRecord>,
    pub planned: Vec<PlannedStage>,
}

impl ArmSummary {
    pub fn new(observed: Vec<StageRecord>, planned: Vec<PlannedStage>) -> Self {
        Self { observed, planned }
    }

    pub fn observed_totals(&self) -> ArmTotals {
        ArmTotals::from_records(&self.observed)
    }

    pub fn future_n(&self, arm: Arm) -> f64 {
        self.planned.iter().map(|s| s.n(arm)).sum()
    }

    /// N_arm over all stages, observed and planned.
    pub fn total_n(&self, arm: Arm) -> f64 {
        let t = self.observed_totals();
        let obs = if arm == Arm::Intervention { t.n1 } else { t.n0 };
        obs + self.future_n(arm)
    }

    pub fn has_future(&self) -> bool {
        self.future_n(Arm::Intervention) > 0.0 || self.future_n(Arm::Control) > 0.0
    }

    /// Number of planned future intervention centers.
    pub fn future_intervention_centers(&self) -> usize {
        self.planned
            .iter()
            .flat_map(|s| &s.centers)
            .filter(|c| c.arm == Arm::Intervention)
            .count()
    }
}

/// Quantities shared by the unconditional and conditional 1-df constraints,
/// evaluated at projected intervention-arm outcome `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneDfTerms {
    /// Projected noncentrality of the squared statistic.
    pub lambda: f64,
    /// Multiplier on χ²_{α,1} (pooled statistics only; 1 otherwise).
    pub critical_scale: f64,
    /// Projected difference of final arm means.
    pub drift: f64,
    /// Standard deviation standardizing the final statistic.
    pub sd_final: f64,
    /// S₁/N₁ − S₀/N₀ over observed stages.
    pub observed_diff: f64,
    /// Projected future contribution Δ to the difference.
    pub delta: f64,
    /// Standard deviation of the future-stage contribution.
    pub sigma_future: f64,
}

/// 1-df constraint terms at projected intervention outcome `t`.
pub fn one_df_terms(t: f64, model: &FittedModel, summary: &ArmSummary, test: TestKind) -> Result<OneDfTerms> {
    if test.is_wald() {
        return invalid("Wald tests have no 1-df terms");
    }
    let obs = summary.observed_totals();
    let n1f = summary.future_n(Arm::Intervention);
    let n0f = summary.future_n(Arm::Control);
    let big_n1 = obs.n1 + n1f;
    let big_n0 = obs.n0 + n0f;
    if !(big_n1 > 0.0 && big_n0 > 0.0) {
        return invalid("both arms need participants over the trial");
    }
    let c = model.control_value();
    let s1 = obs.s1 + n1f * t;
    let s0 = obs.s0 + n0f * c;
    let m1 = s1 / big_n1;
    let m0 = s0 / big_n0;
    let drift = m1 - m0;
    let observed_diff = obs.s1 / big_n1 - obs.s0 / big_n0;
    let delta = n1f * t / big_n1 - n0f * c / big_n0;

    let (var_unpooled, var_pooled, sigma_future) = if test.is_binary_z() {
        let vu = m1 * (1.0 - m1) / big_n1 + m0 * (1.0 - m0) / big_n0;
        let pp = (s1 + s0) / (big_n1 + big_n0);
        let vp = pp * (1.0 - pp) * (1.0 / big_n1 + 1.0 / big_n0);
        let sf = n0f / (big_n0 * big_n0) * c * (1.0 - c) + n1f / (big_n1 * big_n1) * t * (1.0 - t);
        (vu, vp, sf.max(0.0).sqrt())
    } else {
        let var1 = sample_variance(obs.n1, obs.s1, obs.ss1);
        let var0 = sample_variance(obs.n0, obs.s0, obs.ss0);
        let mu1 = if obs.n1 > 0.0 { obs.s1 / obs.n1 } else { t };
        let var1_tilde = if big_n1 > 1.0 {
            ((big_n1 - 2.0) * var1 + obs.n1 * n1f / big_n1 * (t - mu1).powi(2)) / (big_n1 - 1.0)
        } else {
            var1
        };
        let vu = var1_tilde / big_n1 + var0 / big_n0;
        let s2 = ((big_n1 - 1.0) * var1_tilde + (big_n0 - 1.0) * var0) / (big_n1 + big_n0 - 2.0);
        let vp = s2 * (1.0 / big_n1 + 1.0 / big_n0);
        let sf = n1f * var1 / (big_n1 * big_n1) + n0f * var0 / (big_n0 * big_n0);
        (vu, vp, sf.max(0.0).sqrt())
    };
    if !(var_unpooled > 0.0) || (test.is_pooled() && !(var_pooled > 0.0)) {
        return Err(LagoError::DegenerateVariance);
    }
    let (sd_final, critical_scale) = if test.is_pooled() {
        (var_pooled.sqrt(), var_pooled / var_unpooled)
    } else {
        (var_unpooled.sqrt(), 1.0)
    };
    Ok(OneDfTerms {
        lambda: drift * drift / var_unpooled,
        critical_scale,
        drift,
        sd_final,
        observed_diff,
        delta,
        sigma_future,
    })
}

impl OneDfTerms {
    /// (A, σ̂): critical term minus signed projected drift, and the future-stage
    /// standard deviation.
    pub fn conditional_parts(&self, alpha: f64, direction: Direction) -> (f64, f64) {
        let z = normal_quantile(1.0 - 0.5 * alpha);
        let a = z * self.sd_final - direction.sign() * (self.observed_diff + self.delta);
        (a, self.sigma_future)
    }

    pub fn conditional_slack(&self, alpha: f64, pi: f64, direction: Direction, form: VarianceForm) -> f64 {
        let (a, sigma) = self.conditional_parts(alpha, direction);
        a - normal_quantile(1.0 - pi) * form.scale(sigma)
    }

    pub fn conditional_power(&self, alpha: f64, direction: Direction, form: VarianceForm) -> f64 {
        let (a, sigma) = self.conditional_parts(alpha, direction);
        let scale = form.scale(sigma);
        if scale <= 0.0 {
            return if a <= 0.0 { 1.0 } else { 0.0 };
        }
        1.0 - normal_cdf(a / scale)
    }

    pub fn unconditional(&self) -> UnconditionalLambda {
        UnconditionalLambda { lambda: self.lambda, critical_scale: self.critical_scale, drift: Some(self.drift), df: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnconditionalLambda {
    pub lambda: f64,
    /// Multiplier on the χ² critical value (pooled statistics).
    pub critical_scale: f64,
    /// Projected difference of arm means (1-df tests only).
    pub drift: Option<f64>,
    pub df: usize,
}

impl UnconditionalLambda {
    pub fn power(&self, alpha: f64) -> f64 {
        let df = self.df as f64;
        1.0 - noncentral_chisq_cdf(chisq_critical(alpha, df) * self.critical_scale, df, self.lambda)
    }

    /// Unconditional power constraint in the favorable direction.
    pub fn satisfies(&self, alpha: f64, pi: f64, direction: Direction) -> bool {
        if let Some(d) = self.drift {
            if direction.sign() * d <= 0.0 {
                return false;
            }
        }
        if self.critical_scale == 1.0 {
            self.lambda >= lambda_min(alpha, pi, self.df)
        } else {
            self.power(alpha) >= pi
        }
    }
}

/// Projected noncentrality of the final test when every planned
/// intervention center receives package `x`.
pub fn unconditional_lambda(
    x: &[f64],
    model: &FittedModel,
    summary: &ArmSummary,
    test: TestKind,
) -> Result<UnconditionalLambda> {
    if test.is_wald() {
        let packages = vec![x.to_vec(); summary.future_intervention_centers()];
        let lambda = wald_lambda(model, summary, &packages, test)?;
        return Ok(UnconditionalLambda { lambda, critical_scale: 1.0, drift: None, df: model.dim() });
    }
    Ok(one_df_terms(predict(model, x), model, summary, test)?.unconditional())
}

pub fn unconditional_power(
    x: &[f64],
    model: &FittedModel,
    summary: &ArmSummary,
    test: TestKind,
    alpha: f64,
) -> Result<f64> {
    Ok(unconditional_lambda(x, model, summary, test)?.power(alpha))
}

/// Plug-in noncentrality n β̂₁ᵀ[(Σ̂)_{β₁}]⁻¹β̂₁ of the P-df Wald test, with the
/// information assembled from observed centers at their actual packages,
/// planned intervention centers at `packages` (one per center, in order) and
/// planned control centers at zero.
pub fn wald_lambda(
    model: &FittedModel,
    summary: &ArmSummary,
    packages: &[Vec<f64>],
    test: TestKind,
) -> Result<f64> {
    let p = model.dim();
    let k = p + 1;
    if packages.len() != summary.future_intervention_centers() {
        return invalid("need one package per planned intervention center");
    }
    let z_of = |a: &[f64]| {
        let mut z = DVector::zeros(k);
        z[0] = 1.0;
        for (i, v) in a.iter().enumerate() {
            z[i + 1] = *v;
        }
        z
    };
    let zero = vec![0.0; p];
    let mut rows: Vec<(DVector<f64>, f64, Option<f64>)> = Vec::new();
    for c in summary.observed.iter().flat_map(|r| &r.centers) {
        if c.package.len() != p {
            return invalid("observed package length does not match the model");
        }
        let mu = predict(model, &c.package);
        let rss = c.sum_sq - 2.0 * mu * c.sum + c.n * mu * mu;
        rows.push((z_of(&c.package), c.n, Some(rss)));
    }
    let obs = summary.observed_totals();
    let var1 = sample_variance(obs.n1, obs.s1, obs.ss1);
    let var0 = sample_variance(obs.n0, obs.s0, obs.ss0);
    let mut next = packages.iter();
    for c in summary.planned.iter().flat_map(|s| &s.centers) {
        let (a, v) = match c.arm {
            Arm::Intervention => (next.next().map(|v| v.as_slice()).unwrap_or(&zero), var1),
            Arm::Control => (zero.as_slice(), var0),
        };
        if a.len() != p {
            return invalid("planned package length does not match the model");
        }
        rows.push((z_of(a), c.n, Some(v * c.n)));
    }
    let n: f64 = rows.iter().map(|r| r.1).sum();
    if !(n > 0.0) {
        return invalid("no participants");
    }

    let beta = DVector::from_column_slice(&model.beta);
    let mut bread = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    for (z, nj, rss) in &rows {
        let eta = z.dot(&beta);
        match test {
            TestKind::WaldBinary => {
                let pr = model.link.inverse(eta);
                bread += z * z.transpose() * (nj / n * pr * (1.0 - pr));
            }
            _ => {
                let d = z * model.link.inverse_deriv(eta);
                let dd = &d * d.transpose();
                bread += &dd * (nj / n);
                meat += dd * (rss.unwrap_or(0.0) / n);
            }
        }
    }
    let sigma = match test {
        TestKind::WaldBinary => bread.try_inverse().ok_or(LagoError::SingularCovariance)?,
        TestKind::WaldContinuous => {
            let b_inv = bread.try_inverse().ok_or(LagoError::SingularCovariance)?;
            &b_inv * meat * &b_inv
        }
        _ => return invalid("not a Wald test"),
    };
    let block = sigma.view((1, 1), (p, p)).into_owned();
    let inv = block.try_inverse().ok_or(LagoError::SingularCovariance)?;
    let b1 = DVector::from_column_slice(model.effects());
    let lambda = n * (b1.transpose() * inv * &b1)[(0, 0)];
    if !lambda.is_finite() {
        return Err(LagoError::SingularCovariance);
    }
    Ok(lambda)
}

fn conditional_terms(x: &[f64], model: &FittedModel, summary: &ArmSummary, test: TestKind) -> Result<OneDfTerms> {
    if test.is_wald() {
        return invalid("the conditional approach is defined for 1-df tests only");
    }
    one_df_terms(predict(model, x), model, summary, test)
}

/// Left side of the conditional power inequality; the constraint holds when
/// the result is ≤ 0. `z_Π` is the upper-Π normal quantile Φ⁻¹(1 − Π).
#[allow(clippy::too_many_arguments)]
pub fn conditional_constraint_slack(
    x: &[f64],
    model: &FittedModel,
    summary: &ArmSummary,
    test: TestKind,
    alpha: f64,
    pi: f64,
    direction: Direction,
    form: VarianceForm,
) -> Result<f64> {
    Ok(conditional_terms(x, model, summary, test)?.conditional_slack(alpha, pi, direction, form))
}

/// Projected power conditional on the observed stages.
pub fn conditional_power(
    x: &[f64],
    model: &FittedModel,
    summary: &ArmSummary,
    test: TestKind,
    alpha: f64,
    direction: Direction,
    form: VarianceForm,
) -> Result<f64> {
    Ok(conditional_terms(x, model, summary, test)?.conditional_power(alpha, direction, form))
}
