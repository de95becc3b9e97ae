//! Separable polynomial cost functions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LagoError, Result};

/// One monomial `coeff · x_component^degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTerm {
    pub component: usize,
    pub degree: u32,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawCost {
    dim: usize,
    terms: Vec<CostTerm>,
    #[serde(default)]
    offset: f64,
}

/// C(x) = offset + Σ_p Σ_d c_{p,d} x_p^d with degree d ≤ 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCost", into = "RawCost")]
pub struct CostFunction {
    coeffs: Vec<[f64; 4]>,
    offset: f64,
}

impl TryFrom<RawCost> for CostFunction {
    type Error = LagoError;
    fn try_from(raw: RawCost) -> Result<Self> {
        CostFunction::new(raw.dim, &raw.terms, raw.offset)
    }
}

impl From<CostFunction> for RawCost {
    fn from(c: CostFunction) -> Self {
        RawCost { dim: c.dim(), terms: c.terms(), offset: c.offset }
    }
}

impl CostFunction {
    pub fn new(dim: usize, terms: &[CostTerm], offset: f64) -> Result<Self> {
        if dim == 0 {
            return invalid("cost needs at least one component");
        }
        if !offset.is_finite() {
            return invalid("cost offset must be finite");
        }
        let mut coeffs = vec![[0.0; 4]; dim];
        let mut offset = offset;
        for t in terms {
            if t.component >= dim {
                return invalid(format!("cost term component {} out of range", t.component));
            }
            if t.degree > 3 {
                return invalid(format!("cost degree {} exceeds 3", t.degree));
            }
            if !t.coeff.is_finite() {
                return invalid("cost coefficients must be finite");
            }
            if t.degree == 0 {
                offset += t.coeff;
            } else {
                coeffs[t.component][t.degree as usize] += t.coeff;
            }
        }
        Ok(Self { coeffs, offset })
    }

    /// Scenario 1a cubic: 2x₁³ − 1.19x₁² + 10x₁ + 10 + 0.1x₂³ − 0.2x₂² + 2x₂.
    pub fn scenario_cubic() -> Self {
        Self { coeffs: vec![[0.0, 10.0, -1.19, 2.0], [0.0, 2.0, -0.2, 0.1]], offset: 10.0 }
    }

    /// Scenario 1b linear: x₁ + 4x₂.
    pub fn scenario_linear() -> Self {
        Self { coeffs: vec![[0.0, 1.0, 0.0, 0.0], [0.0, 4.0, 0.0, 0.0]], offset: 0.0 }
    }

    /// BetterBirth per-center cost in coaching visits and launch duration.
    pub fn betterbirth() -> Self {
        Self {
            coeffs: vec![[0.0, 380.0, -24.0, 0.6], [0.0, 1700.0, -950.0, 220.0]],
            offset: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Coefficients [c₀ (always 0), c₁, c₂, c₃] of component `p`.
    pub fn coefficients(&self, p: usize) -> [f64; 4] {
        self.coeffs[p]
    }

    pub fn terms(&self) -> Vec<CostTerm> {
        let mut out = Vec::new();
        for (component, c) in self.coeffs.iter().enumerate() {
            for degree in 1..4 {
                if c[degree] != 0.0 {
                    out.push(CostTerm { component, degree: degree as u32, coeff: c[degree] });
                }
            }
        }
        out
    }

    /// True when no component has a quadratic or cubic term.
    pub fn is_linear(&self) -> bool {
        self.coeffs.iter().all(|c| c[2] == 0.0 && c[3] == 0.0)
    }

    /// Cost contributed by component `p` at level `v` (offset excluded).
    pub fn component(&self, p: usize, v: f64) -> f64 {
        let c = &self.coeffs[p];
        ((c[3] * v + c[2]) * v + c[1]) * v
    }

    pub fn component_derivative(&self, p: usize, v: f64) -> f64 {
        let c = &self.coeffs[p];
        (3.0 * c[3] * v + 2.0 * c[2]) * v + c[1]
    }
}

/// C(x).
pub fn evaluate(c: &CostFunction, x: &[f64]) -> f64 {
    c.offset + x.iter().enumerate().map(|(p, &v)| c.component(p, v)).sum::<f64>()
}

/// ∂C/∂x_p at `x`.
pub fn marginal(c: &CostFunction, x: &[f64], p: usize) -> f64 {
    c.component_derivative(p, x[p])
}
