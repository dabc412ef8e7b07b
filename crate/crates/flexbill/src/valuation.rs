//! Private valuation functions: concave, nondecreasing, zero at zero.
//!
//! Two separable families ship. `quadratic_capped` is `alpha*x - beta*x^2/2`
//! saturating at its peak `alpha^2/(2 beta)` (an uncapped quadratic would
//! eventually decrease, breaking monotonicity). `logarithmic` is
//! `alpha*ln(1+x)`. Separability lets the per-user best response decompose
//! slot by slot; the interface does not require it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A user's valuation, $ as a function of the consumption profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ValuationSpec {
    QuadraticCapped { alpha: Vec<f64>, beta: Vec<f64> },
    Logarithmic { alpha: Vec<f64> },
}

impl ValuationSpec {
    pub fn len(&self) -> usize {
        match self {
            Self::QuadraticCapped { alpha, .. } | Self::Logarithmic { alpha } => alpha.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Both built-in families decompose across slots. Non-separable forms
    /// would return false and route the best response to the numeric solver.
    pub fn is_separable(&self) -> bool {
        true
    }

    /// Consumption level at which the marginal value reaches zero
    /// (`alpha/beta` for the capped quadratic, unbounded for the logarithm).
    pub fn satiation(&self, t: usize) -> f64 {
        match self {
            Self::QuadraticCapped { alpha, beta } => {
                if alpha[t] <= 0.0 {
                    0.0
                } else {
                    alpha[t] / beta[t]
                }
            }
            Self::Logarithmic { .. } => f64::INFINITY,
        }
    }

    pub(crate) fn slot_value(&self, t: usize, x: f64) -> f64 {
        match self {
            Self::QuadraticCapped { alpha, beta } => {
                let (a, b) = (alpha[t], beta[t]);
                if b * x >= a {
                    a * a / (2.0 * b)
                } else {
                    a * x - 0.5 * b * x * x
                }
            }
            Self::Logarithmic { alpha } => alpha[t] * x.ln_1p(),
        }
    }

    pub(crate) fn slot_marginal(&self, t: usize, x: f64) -> f64 {
        match self {
            Self::QuadraticCapped { alpha, beta } => (alpha[t] - beta[t] * x).max(0.0),
            Self::Logarithmic { alpha } => alpha[t] / (1.0 + x),
        }
    }

    /// Value of a feasible (nonnegative, right-length) profile. Skips the
    /// input checks of [`value`]; callers guarantee feasibility.
    pub(crate) fn value_feasible(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(t, &v)| self.slot_value(t, v))
            .sum()
    }

    /// Total value in $ of the profile `x`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.value_feasible(x))
    }

    /// Per-slot marginal value, $/kWh. At and beyond the capped quadratic's
    /// kink the derivative is taken as 0.
    pub fn value_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(t, &v)| self.slot_marginal(t, v))
            .collect())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::Dimension {
                what: "valuation input",
                expected: self.len(),
                got: x.len(),
            });
        }
        if x.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain(
                "consumption profile must be nonnegative and finite".into(),
            ));
        }
        Ok(())
    }

    /// Invariant checks used by [`crate::model::validate_scenario`].
    pub fn validate(&self, m: usize) -> Vec<String> {
        let mut msgs = Vec::new();
        let check_alpha = |alpha: &[f64], msgs: &mut Vec<String>| {
            if alpha.len() != m {
                msgs.push(format!("alpha must have length {m}, got {}", alpha.len()));
            }
            if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
                msgs.push("alpha entries must be finite and nonnegative".into());
            }
        };
        match self {
            Self::QuadraticCapped { alpha, beta } => {
                check_alpha(alpha, &mut msgs);
                if beta.len() != m {
                    msgs.push(format!("beta must have length {m}, got {}", beta.len()));
                }
                if beta.iter().any(|b| !b.is_finite() || *b <= 0.0) {
                    msgs.push("beta entries must be finite and positive".into());
                }
            }
            Self::Logarithmic { alpha } => check_alpha(alpha, &mut msgs),
        }
        msgs
    }
}

// ---------------------------------------------------------------------------
// Assumption audit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    ZeroAtZero,
    Monotone,
    Concave,
}

/// A sampled counterexample to one of the assumptions.
#[derive(Debug, Clone)]
pub struct AssumptionFailure {
    pub assumption: Assumption,
    pub x_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub mix: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub samples: usize,
    pub failures: Vec<AssumptionFailure>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Samples random profile pairs and checks zero-at-zero exactly, and
/// monotonicity and midpoint concavity within 1e-9.
pub fn check_assumptions<R: Rng>(
    spec: &ValuationSpec,
    samples: usize,
    rng: &mut R,
) -> AssumptionReport {
    const TOL: f64 = 1e-9;
    let m = spec.len();
    let hi = sample_ceiling(spec);
    let mut failures = Vec::new();

    let zero = vec![0.0; m];
    let v0 = spec.value_feasible(&zero);
    if v0 != 0.0 {
        failures.push(AssumptionFailure {
            assumption: Assumption::ZeroAtZero,
            x_a: zero.clone(),
            x_b: zero.clone(),
            mix: 0.0,
            lhs: v0,
            rhs: 0.0,
        });
    }

    for _ in 0..samples {
        let x_a: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..hi)).collect();
        let x_b: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..hi)).collect();
        let a: f64 = rng.gen_range(0.01..0.99);

        let va = spec.value_feasible(&x_a);
        let vb = spec.value_feasible(&x_b);

        // v(x_a) <= v(x_a + x_b)
        let sum: Vec<f64> = x_a.iter().zip(&x_b).map(|(p, q)| p + q).collect();
        let vsum = spec.value_feasible(&sum);
        if va > vsum + TOL {
            failures.push(AssumptionFailure {
                assumption: Assumption::Monotone,
                x_a: x_a.clone(),
                x_b: x_b.clone(),
                mix: 1.0,
                lhs: va,
                rhs: vsum,
            });
        }

        // a v(x_a) + (1-a) v(x_b) <= v(a x_a + (1-a) x_b)
        let mix: Vec<f64> = x_a
            .iter()
            .zip(&x_b)
            .map(|(p, q)| a * p + (1.0 - a) * q)
            .collect();
        let vmix = spec.value_feasible(&mix);
        if a * va + (1.0 - a) * vb > vmix + TOL {
            failures.push(AssumptionFailure {
                assumption: Assumption::Concave,
                x_a,
                x_b,
                mix: a,
                lhs: a * va + (1.0 - a) * vb,
                rhs: vmix,
            });
        }
    }
    AssumptionReport { samples, failures }
}

fn sample_ceiling(spec: &ValuationSpec) -> f64 {
    match spec {
        ValuationSpec::QuadraticCapped { alpha, beta } => alpha
            .iter()
            .zip(beta)
            .map(|(a, b)| if *a > 0.0 { 1.5 * a / b } else { 1.0 })
            .fold(1.0, f64::max),
        ValuationSpec::Logarithmic { .. } => 5.0,
    }
}
