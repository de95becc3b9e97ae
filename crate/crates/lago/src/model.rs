//! Outcome models: logistic and GLM fits on staged multi-center data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LagoError, Result};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const SEPARATION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Intervention,
    Control,
}

/// Component-wise box [𝓛, 𝓤] for intervention packages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds")]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBounds> for Bounds {
    type Error = LagoError;
    fn try_from(raw: RawBounds) -> Result<Self> {
        Bounds::new(raw.lower, raw.upper)
    }
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return invalid("bounds must have at least one component");
        }
        if lower.len() != upper.len() {
            return invalid("lower and upper bounds differ in length");
        }
        for (p, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l >= u {
                return invalid(format!("component {p}: need finite lower < upper, got [{l}, {u}]"));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| v >= l && v <= u)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .map(|((v, l), u)| v.clamp(*l, *u))
            .collect()
    }
}

/// A package vector together with its admissible box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageVector {
    pub components: Vec<f64>,
    pub bounds: Bounds,
}

impl PackageVector {
    pub fn new(components: Vec<f64>, bounds: Bounds) -> Result<Self> {
        if components.len() != bounds.dim() {
            return invalid("package length does not match bounds");
        }
        if !bounds.contains(&components) {
            return invalid(format!("package {components:?} lies outside its bounds"));
        }
        Ok(Self { components, bounds })
    }
}

/// One center's delivered package and outcome sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub arm: Arm,
    pub package: Vec<f64>,
    pub n: f64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Center {
    /// Binary center from raw 0/1 outcomes.
    pub fn binary(arm: Arm, package: Vec<f64>, outcomes: &[f64]) -> Result<Self> {
        if let Some(y) = outcomes.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return invalid(format!("binary outcome must be 0 or 1, got {y}"));
        }
        Self::continuous(arm, package, outcomes)
    }

    /// Continuous center from raw outcomes.
    pub fn continuous(arm: Arm, package: Vec<f64>, outcomes: &[f64]) -> Result<Self> {
        if outcomes.iter().any(|y| !y.is_finite()) {
            return invalid("outcomes must be finite");
        }
        Ok(Self {
            arm,
            package,
            n: outcomes.len() as f64,
            sum: outcomes.iter().sum(),
            sum_sq: outcomes.iter().map(|y| y * y).sum(),
        })
    }

    /// Binary center from a count of successes out of `n`.
    pub fn from_counts(arm: Arm, package: Vec<f64>, n: f64, successes: f64) -> Self {
        Self { arm, package, n, sum: successes, sum_sq: successes }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n
    }
}

/// All centers observed in one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub centers: Vec<Center>,
}

impl StageRecord {
    pub fn new(stage: usize, centers: Vec<Center>) -> Result<Self> {
        let record = Self { stage, centers };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage == 0 {
            return invalid("stage index starts at 1");
        }
        let dim = self.centers.first().map(|c| c.package.len());
        for c in &self.centers {
            if Some(c.package.len()) != dim {
                return invalid("centers in a stage have packages of different length");
            }
            if !(c.n >= 0.0) || !c.sum.is_finite() || !c.sum_sq.is_finite() {
                return invalid("center sizes and sums must be finite and nonnegative");
            }
            if c.arm == Arm::Control && c.package.iter().any(|&v| v != 0.0) {
                return invalid("control centers must have the zero package");
            }
        }
        Ok(())
    }

    pub fn n(&self, arm: Arm) -> f64 {
        self.centers.iter().filter(|c| c.arm == arm).map(|c| c.n).sum()
    }

    pub fn sum(&self, arm: Arm) -> f64 {
        self.centers.iter().filter(|c| c.arm == arm).map(|c| c.sum).sum()
    }

    pub fn sum_sq(&self, arm: Arm) -> f64 {
        self.centers.iter().filter(|c| c.arm == arm).map(|c| c.sum_sq).sum()
    }
}

/// Monotone interpolant through user-tabulated (η, g⁻¹(η)) pairs.
///
/// Fritsch–Carlson cubic Hermite inside the table, linear extrapolation
/// with the end slopes outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct TabulatedLink {
    eta: Vec<f64>,
    mu: Vec<f64>,
    #[serde(skip_serializing)]
    slopes: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTable {
    eta: Vec<f64>,
    mu: Vec<f64>,
}

impl TryFrom<RawTable> for TabulatedLink {
    type Error = LagoError;
    fn try_from(raw: RawTable) -> Result<Self> {
        TabulatedLink::new(raw.eta, raw.mu)
    }
}

impl TabulatedLink {
    pub fn new(eta: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if eta.len() < 2 || eta.len() != mu.len() {
            return invalid("tabulated link needs at least two (eta, mu) pairs of equal length");
        }
        let increasing = eta.windows(2).all(|w| w[1] > w[0]);
        let mu_increasing = mu.windows(2).all(|w| w[1] > w[0]);
        if !increasing || !mu_increasing || eta.iter().chain(&mu).any(|v| !v.is_finite()) {
            return invalid("tabulated link must be finite and strictly increasing");
        }
        let m = eta.len();
        let secants: Vec<f64> = (0..m - 1).map(|i| (mu[i + 1] - mu[i]) / (eta[i + 1] - eta[i])).collect();
        let mut slopes = vec![0.0; m];
        slopes[0] = secants[0];
        slopes[m - 1] = secants[m - 2];
        for i in 1..m - 1 {
            slopes[i] = 0.5 * (secants[i - 1] + secants[i]);
        }
        for i in 0..m - 1 {
            let a = slopes[i] / secants[i];
            let b = slopes[i + 1] / secants[i];
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                slopes[i] = t * a * secants[i];
                slopes[i + 1] = t * b * secants[i];
            }
        }
        Ok(Self { eta, mu, slopes })
    }

    fn segment(&self, eta: f64) -> usize {
        match self.eta.partition_point(|&e| e <= eta) {
            0 => 0,
            i => (i - 1).min(self.eta.len() - 2),
        }
    }

    fn eval(&self, eta: f64) -> (f64, f64) {
        let last = self.eta.len() - 1;
        if eta <= self.eta[0] {
            return (self.mu[0] + self.slopes[0] * (eta - self.eta[0]), self.slopes[0]);
        }
        if eta >= self.eta[last] {
            return (self.mu[last] + self.slopes[last] * (eta - self.eta[last]), self.slopes[last]);
        }
        let i = self.segment(eta);
        let h = self.eta[i + 1] - self.eta[i];
        let t = (eta - self.eta[i]) / h;
        let (y0, y1, d0, d1) = (self.mu[i], self.mu[i + 1], self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * d1;
        let deriv = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * d0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * d1)
            / h;
        (value, deriv)
    }

    fn invert(&self, mu: f64) -> f64 {
        let (mut lo, mut hi) = (self.eta[0], self.eta[self.eta.len() - 1]);
        if mu <= self.mu[0] {
            return self.eta[0] + (mu - self.mu[0]) / self.slopes[0];
        }
        if mu >= self.mu[self.mu.len() - 1] {
            let last = self.eta.len() - 1;
            return self.eta[last] + (mu - self.mu[last]) / self.slopes[last];
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid).0 < mu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Link {
    Logit,
    Identity,
    Tabulated(TabulatedLink),
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Link {
    /// g⁻¹(η).
    pub fn inverse(&self, eta: f64) -> f64 {
        match self {
            Link::Logit => expit(eta),
            Link::Identity => eta,
            Link::Tabulated(t) => t.eval(eta).0,
        }
    }

    /// d g⁻¹(η) / dη.
    pub fn inverse_deriv(&self, eta: f64) -> f64 {
        match self {
            Link::Logit => {
                let p = expit(eta);
                p * (1.0 - p)
            }
            Link::Identity => 1.0,
            Link::Tabulated(t) => t.eval(eta).1,
        }
    }

    /// g(μ).
    pub fn apply(&self, mu: f64) -> f64 {
        match self {
            Link::Logit => logit(mu),
            Link::Identity => mu,
            Link::Tabulated(t) => t.invert(mu),
        }
    }
}

/// Fitted linear-predictor model g(E Y) = β₀ + β₁ᵀa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub beta: Vec<f64>,
    pub link: Link,
    /// Estimated covariance of β̂ (finite-sample scale).
    pub covariance: Vec<Vec<f64>>,
    pub n_used: f64,
}

impl FittedModel {
    /// Model with known coefficients and no sampling covariance.
    pub fn from_beta(beta: Vec<f64>, link: Link) -> Self {
        let k = beta.len();
        Self { beta, link, covariance: vec![vec![0.0; k]; k], n_used: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn intercept(&self) -> f64 {
        self.beta[0]
    }

    pub fn effects(&self) -> &[f64] {
        &self.beta[1..]
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.beta[0] + self.beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Control-arm value g⁻¹(β₀).
    pub fn control_value(&self) -> f64 {
        self.link.inverse(self.beta[0])
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.beta.len()).map(|i| self.covariance[i][i].max(0.0).sqrt()).collect()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let k = self.beta.len();
        DMatrix::from_fn(k, k, |i, j| self.covariance[i][j])
    }
}

/// Success probability or mean outcome at package `x`.
pub fn predict(model: &FittedModel, x: &[f64]) -> f64 {
    model.link.inverse(model.linear_predictor(x))
}

fn design_rows(data: &[StageRecord]) -> Result<Vec<&Center>> {
    let centers: Vec<&Center> = data.iter().flat_map(|r| &r.centers).filter(|c| c.n > 0.0).collect();
    if centers.is_empty() {
        return invalid("no observations to fit");
    }
    let dim = centers[0].package.len();
    if centers.iter().any(|c| c.package.len() != dim) {
        return invalid("centers have packages of different length");
    }
    Ok(centers)
}

fn row(c: &Center) -> DVector<f64> {
    let mut z = DVector::zeros(c.package.len() + 1);
    z[0] = 1.0;
    for (p, v) in c.package.iter().enumerate() {
        z[p + 1] = *v;
    }
    z
}

fn check_rank(centers: &[&Center]) -> Result<()> {
    let k = centers[0].package.len() + 1;
    let mut gram = DMatrix::zeros(k, k);
    for c in centers {
        let z = row(c);
        gram += &z * z.transpose();
    }
    let sv = gram.singular_values();
    let max = sv.max();
    if max <= 0.0 || sv.min() <= max * 1e-12 {
        return Err(LagoError::RankDeficient);
    }
    Ok(())
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn symmetric_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = m.clone().cholesky().map(|c| c.inverse()).or_else(|| m.clone().try_inverse());
    match inv {
        Some(inv) => Ok(0.5 * (&inv + inv.transpose())),
        None => Err(LagoError::RankDeficient),
    }
}

fn binary_loglik(centers: &[&Center], beta: &DVector<f64>) -> f64 {
    centers
        .iter()
        .map(|c| {
            let eta = row(c).dot(beta);
            // y·η − n·log(1 + e^η), written stably
            let log1pe = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            c.sum * eta - c.n * log1pe
        })
        .sum()
}

fn binary_information(centers: &[&Center], beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let k = beta.len();
    let mut grad = DVector::zeros(k);
    let mut info = DMatrix::zeros(k, k);
    for c in centers {
        let z = row(c);
        let p = expit(z.dot(beta));
        grad += &z * (c.sum - c.n * p);
        info += &z * z.transpose() * (c.n * p * (1.0 - p));
    }
    (grad, info)
}

/// Logistic maximum-likelihood fit by Newton/IRLS with step-halving.
pub fn fit_binary(data: &[StageRecord]) -> Result<FittedModel> {
    let centers = design_rows(data)?;
    let total_n: f64 = centers.iter().map(|c| c.n).sum();
    let total_s: f64 = centers.iter().map(|c| c.sum).sum();
    if centers.iter().any(|c| c.sum < 0.0 || c.sum > c.n) {
        return invalid("binary successes must lie in [0, n]");
    }
    if total_s <= 0.0 || total_s >= total_n {
        return invalid("need at least one success and one failure");
    }
    check_rank(&centers)?;

    let k = centers[0].package.len() + 1;
    let mut beta = DVector::zeros(k);
    let mut ll = binary_loglik(&centers, &beta);
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let (grad, info) = binary_information(&centers, &beta);
        if grad.norm() <= GRAD_TOL {
            converged = true;
            break;
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => return Err(LagoError::Separation { limit: SEPARATION_LIMIT }),
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            let cand_ll = binary_loglik(&centers, &candidate);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if beta.iter().any(|b| b.abs() > SEPARATION_LIMIT) {
            return Err(LagoError::Separation { limit: SEPARATION_LIMIT });
        }
        if !accepted {
            break;
        }
    }
    let (grad, info) = binary_information(&centers, &beta);
    if !converged && grad.norm() > GRAD_TOL {
        return Err(LagoError::NoConvergence(MAX_ITER));
    }
    let cov = symmetric_inverse(&info)?;
    Ok(FittedModel {
        beta: beta.iter().copied().collect(),
        link: Link::Logit,
        covariance: to_rows(&cov),
        n_used: total_n,
    })
}

/// Sandwich covariance for a logistic fit: bread from the Fisher information,
/// meat from squared Pearson-scale residuals summed within centers.
pub fn binary_sandwich_covariance(data: &[StageRecord], model: &FittedModel) -> Result<Vec<Vec<f64>>> {
    let centers = design_rows(data)?;
    let beta = DVector::from_vec(model.beta.clone());
    let k = beta.len();
    let mut bread = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    for c in &centers {
        let z = row(c);
        let p = expit(z.dot(&beta));
        let zz = &z * z.transpose();
        bread += &zz * (c.n * p * (1.0 - p));
        // Σ_i (Y_i − p)² for 0/1 outcomes
        let rss = c.sum * (1.0 - p).powi(2) + (c.n - c.sum) * p * p;
        meat += zz * rss;
    }
    let b_inv = symmetric_inverse(&bread)?;
    Ok(to_rows(&(&b_inv * meat * &b_inv)))
}

fn continuous_rss(centers: &[&Center], beta: &DVector<f64>, link: &Link) -> f64 {
    centers
        .iter()
        .map(|c| {
            let mu = link.inverse(row(c).dot(beta));
            c.sum_sq - 2.0 * mu * c.sum + c.n * mu * mu
        })
        .sum()
}

/// GLM fit with link `link` solving Σ_j (∂μ_j/∂β)(S_j − n_j μ_j) = 0 by
/// Gauss–Newton with step-halving; covariance is the sandwich estimator.
pub fn fit_continuous(data: &[StageRecord], link: &Link) -> Result<FittedModel> {
    let centers = design_rows(data)?;
    check_rank(&centers)?;
    let total_n: f64 = centers.iter().map(|c| c.n).sum();
    let k = centers[0].package.len() + 1;

    let ybar = centers.iter().map(|c| c.sum).sum::<f64>() / total_n;
    let mut beta = DVector::zeros(k);
    beta[0] = match link {
        Link::Logit if ybar > 0.0 && ybar < 1.0 => logit(ybar),
        Link::Logit => 0.0,
        _ => link.apply(ybar),
    };
    if !beta[0].is_finite() {
        beta[0] = 0.0;
    }

    let score = |beta: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut grad = DVector::zeros(k);
        let mut jtj = DMatrix::zeros(k, k);
        for c in &centers {
            let z = row(c);
            let eta = z.dot(beta);
            let mu = link.inverse(eta);
            let d = link.inverse_deriv(eta);
            if !mu.is_finite() || !d.is_finite() {
                return Err(LagoError::NonFinite("link inverse".into()));
            }
            grad += &z * (d * (c.sum - c.n * mu));
            jtj += &z * z.transpose() * (c.n * d * d);
        }
        Ok((grad, jtj))
    };

    let mut rss = continuous_rss(&centers, &beta, link);
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let (grad, jtj) = score(&beta)?;
        if grad.norm() <= GRAD_TOL * total_n.max(1.0).sqrt() {
            converged = true;
            break;
        }
        let step = jtj.clone().cholesky().map(|ch| ch.solve(&grad)).ok_or(LagoError::RankDeficient)?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            let cand = continuous_rss(&centers, &candidate, link);
            if cand.is_finite() && cand <= rss + 1e-12 * rss.abs().max(1.0) {
                beta = candidate;
                rss = cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (grad, _) = score(&beta)?;
    if !converged && grad.norm() > 1e-6 * total_n.max(1.0).sqrt() {
        return Err(LagoError::NoConvergence(MAX_ITER));
    }
    if !(rss > 0.0) {
        return invalid("residual variance is zero");
    }

    let mut bread = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    for c in &centers {
        let z = row(c);
        let eta = z.dot(&beta);
        let mu = link.inverse(eta);
        let dz = &z * link.inverse_deriv(eta);
        let dd = &dz * dz.transpose();
        bread += &dd * (c.n / total_n);
        meat += dd * ((c.sum_sq - 2.0 * mu * c.sum + c.n * mu * mu) / total_n);
    }
    let b_inv = symmetric_inverse(&bread)?;
    let cov = (&b_inv * meat * &b_inv) / total_n;
    Ok(FittedModel {
        beta: beta.iter().copied().collect(),
        link: link.clone(),
        covariance: to_rows(&cov),
        n_used: total_n,
    })
}
