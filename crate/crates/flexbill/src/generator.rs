//! Seeded random scenario generation for experiments and tests.
//!
//! Appliances get a per-slot bound in [0.5, 3] kWh, a contiguous feasibility
//! window covering 30-100% of the horizon, and capped-quadratic valuations
//! with marginal values in [2, 12] $/kWh on their window. The cost
//! coefficient scales as 1/n so per-user prices stay comparable as the
//! population grows. The budget is set to a fraction of the gamma = 0
//! equilibrium cost, so the constraint binds by construction.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::billing::BillingParams;
use crate::error::{Error, Result};
use crate::game::{find_equilibrium, GameConfig};
use crate::model::{Appliance, CostModel, Horizon, Scenario};
use crate::valuation::ValuationSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorKnobs {
    pub x_bar_range: (f64, f64),
    /// Fraction of the horizon the feasibility window covers.
    pub window_frac: (f64, f64),
    /// Marginal value at zero, $/kWh, on feasible slots.
    pub alpha_range: (f64, f64),
    /// Valuation curvature, $/kWh².
    pub beta_range: (f64, f64),
    /// Cost coefficient is `c_scale / n`.
    pub c_scale: f64,
    /// Budget as a fraction of the gamma = 0 equilibrium cost.
    pub cref_frac: f64,
}

impl Default for GeneratorKnobs {
    fn default() -> Self {
        Self {
            x_bar_range: (0.5, 3.0),
            window_frac: (0.3, 1.0),
            alpha_range: (2.0, 12.0),
            beta_range: (0.5, 2.0),
            c_scale: 1.0,
            cref_frac: 0.8,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidConfig(format!("{name} range ({lo}, {hi}) is invalid")));
    }
    Ok(())
}

/// Deterministic per seed: the same `(n, m, seed, knobs)` always produces
/// the same scenario.
pub fn generate_scenario(
    n: usize,
    m: usize,
    seed: u64,
    knobs: &GeneratorKnobs,
) -> Result<Scenario> {
    if n < 1 || m < 1 {
        return Err(Error::InvalidConfig(format!(
            "need n >= 1 and m >= 1, got n={n} m={m}"
        )));
    }
    check_range("x_bar", knobs.x_bar_range)?;
    check_range("window_frac", knobs.window_frac)?;
    check_range("alpha", knobs.alpha_range)?;
    check_range("beta", knobs.beta_range)?;
    if !(knobs.window_frac.0 > 0.0 && knobs.window_frac.1 <= 1.0) {
        return Err(Error::InvalidConfig("window_frac must lie in (0, 1]".into()));
    }
    if !(knobs.c_scale > 0.0) {
        return Err(Error::InvalidConfig("c_scale must be positive".into()));
    }
    if !(knobs.cref_frac > 0.0) {
        return Err(Error::InvalidConfig("cref_frac must be positive".into()));
    }

    let mut rng = StdRng::seed_from_u64(seed);
    let sample = |rng: &mut StdRng, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };

    let mut appliances = Vec::with_capacity(n);
    for i in 0..n {
        let x_bar = sample(&mut rng, knobs.x_bar_range);
        let min_len = ((knobs.window_frac.0 * m as f64).ceil() as usize).clamp(1, m);
        let max_len = ((knobs.window_frac.1 * m as f64).round() as usize).clamp(min_len, m);
        let len = rng.gen_range(min_len..=max_len);
        let start = rng.gen_range(0..=m - len);
        let feasible_slots: Vec<usize> = (start..start + len).collect();

        let mut alpha = vec![0.0; m];
        let mut beta = vec![1.0; m];
        for &t in &feasible_slots {
            alpha[t] = sample(&mut rng, knobs.alpha_range);
            beta[t] = sample(&mut rng, knobs.beta_range);
        }
        appliances.push(Appliance {
            id: format!("a{i:03}"),
            x_bar,
            feasible_slots,
            valuation: ValuationSpec::QuadraticCapped { alpha, beta },
        });
    }

    let mut scenario = Scenario {
        horizon: Horizon { m, s: 1.0 },
        appliances,
        cost: CostModel {
            c: knobs.c_scale / n as f64,
        },
        c_ref: 1.0, // placeholder until the baseline equilibrium is known
        seed,
    };

    let baseline = find_equilibrium(
        &scenario,
        &BillingParams::new(scenario.cost.c, 0.0),
        &GameConfig {
            potential_check: false,
            ..GameConfig::default()
        },
    )?;
    scenario.c_ref = knobs.cref_frac * baseline.total_cost;
    Ok(scenario)
}
