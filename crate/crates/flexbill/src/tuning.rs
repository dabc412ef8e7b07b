//! Service-side tuning of the flexibility parameter.
//!
//! The provider cannot see valuations, so it searches gamma globally:
//! solve the game at the current gamma, score the equilibrium cost against
//! the budget, and anneal. The objective is `(C - c_ref)^2` (two-sided) or
//! its one-sided variant that only penalizes overshooting the budget.
//! Proposals are Metropolis-accepted and shrink as the temperature cools
//! geometrically.
//!
//! Everything here consumes equilibrium reports only; valuations stay on
//! the user side of the interface.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::billing::BillingParams;
use crate::error::{Error, Result};
use crate::game::{find_equilibrium_from, initial_allocation, EquilibriumReport, GameConfig};
use crate::model::{AllocationMatrix, Scenario};

/// Relative slack on `cost <= c_ref` when classifying a visited gamma as
/// feasible.
pub const FEASIBLE_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveMode {
    /// `(C - c_ref)^2`: steers the cost onto the budget from both sides.
    TwoSided,
    /// `max(C - c_ref, 0)^2`: only overshooting the budget is penalized.
    OneSided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SAParams {
    /// Initial temperature, $² (same units as the objective).
    pub t0: f64,
    /// Geometric cooling factor per step.
    pub cooling: f64,
    pub gamma0: f64,
    /// Proposal width at full temperature.
    pub step_scale: f64,
    /// Trailing window length for the termination test.
    pub window: usize,
    /// Terminate when the trailing-window mean |delta| falls to this.
    pub epsilon: f64,
    pub max_steps: usize,
    pub objective_mode: ObjectiveMode,
    pub seed: u64,
    /// Start each equilibrium solve from the previous one.
    pub warm_start: bool,
    /// Return the last visited gamma instead of the best feasible one.
    pub return_last: bool,
}

impl Default for SAParams {
    fn default() -> Self {
        Self {
            t0: 1.0,
            cooling: 0.95,
            gamma0: 0.0,
            step_scale: 0.5,
            window: 500,
            epsilon: 0.0,
            max_steps: 1000,
            objective_mode: ObjectiveMode::TwoSided,
            seed: 0,
            warm_start: true,
            return_last: false,
        }
    }
}

/// One annealing step as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SAStep {
    pub k: usize,
    pub gamma: f64,
    /// Equilibrium cost at this gamma, $.
    pub cost: f64,
    /// Objective difference against the previous visited step, $².
    pub delta: f64,
    pub temperature: f64,
    pub accepted: bool,
    pub welfare: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incumbent {
    pub gamma: f64,
    pub welfare: f64,
    pub cost: f64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SATrace {
    pub steps: Vec<SAStep>,
    /// Best feasible visit, when one exists.
    pub incumbent: Option<Incumbent>,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub gamma_star: f64,
    /// Whether the returned gamma meets the budget (with slack).
    pub feasible: bool,
    pub report: EquilibriumReport,
    pub trace: SATrace,
}

// ---------------------------------------------------------------------------
// Annealing primitives
// ---------------------------------------------------------------------------

/// Distance of the equilibrium cost from the budget, squared.
pub fn sa_objective(cost: f64, c_ref: f64, mode: ObjectiveMode) -> f64 {
    let miss = match mode {
        ObjectiveMode::TwoSided => cost - c_ref,
        ObjectiveMode::OneSided => (cost - c_ref).max(0.0),
    };
    miss * miss
}

/// Uniform proposal of width `step_scale * sqrt(t_k / t0)`, clamped at 0.
pub fn propose_gamma<R: Rng>(gamma: f64, t_k: f64, t0: f64, step_scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(-1.0..=1.0);
    (gamma + step_scale * (t_k / t0).sqrt() * u).max(0.0)
}

/// Metropolis rule: improvements always pass, worsenings pass with
/// probability `exp(-delta / t_k)`.
pub fn sa_accept<R: Rng>(delta: f64, t_k: f64, rng: &mut R) -> bool {
    delta <= 0.0 || rng.gen::<f64>() < (-delta / t_k).exp()
}

// ---------------------------------------------------------------------------
// The tuning loop
// ---------------------------------------------------------------------------

fn validate(sa: &SAParams) -> Result<()> {
    if !(sa.t0 > 0.0) {
        return Err(Error::InvalidConfig("t0 must be positive".into()));
    }
    if !(sa.cooling > 0.0 && sa.cooling < 1.0) {
        return Err(Error::InvalidConfig("cooling must be in (0, 1)".into()));
    }
    if sa.window < 1 {
        return Err(Error::InvalidConfig("window must be at least 1".into()));
    }
    if !(sa.step_scale >= 0.0) {
        return Err(Error::InvalidConfig("step_scale must be nonnegative".into()));
    }
    if !(sa.gamma0 >= 0.0) {
        return Err(Error::InvalidConfig("gamma0 must be nonnegative".into()));
    }
    Ok(())
}

/// Anneals gamma until the equilibrium cost settles against the budget,
/// then returns the best feasible visit (or, with `return_last`, the final
/// state of the chain).
pub fn tune_gamma(s: &Scenario, sa: &SAParams, game_cfg: &GameConfig) -> Result<TuneOutcome> {
    validate(sa)?;
    let mut rng = StdRng::seed_from_u64(sa.seed);
    let mut steps: Vec<SAStep> = Vec::new();
    let mut incumbent: Option<Incumbent> = None;
    let mut incumbent_report: Option<EquilibriumReport> = None;

    let solve = |gamma: f64, warm: Option<&AllocationMatrix>| -> Result<EquilibriumReport> {
        let p = BillingParams::new(s.cost.c, gamma);
        let x0 = match warm {
            Some(x) => x.clone(),
            None => initial_allocation(s),
        };
        find_equilibrium_from(s, &p, game_cfg, x0)
    };

    let feasible_cost = s.c_ref * (1.0 + FEASIBLE_SLACK);

    // Chain state: the last accepted gamma and its objective, plus the last
    // visited objective for the logged delta recurrence.
    let mut gamma_accepted = sa.gamma0;
    let mut energy_accepted = f64::INFINITY;
    let mut energy_prev_visit = 0.0;
    let mut warm: Option<AllocationMatrix> = None;
    let mut last_report: Option<EquilibriumReport> = None;
    let mut last_gamma = sa.gamma0;
    let mut any_valid = false;
    // Best objective seen, as the fallback result when nothing is feasible.
    let mut best_energy = f64::INFINITY;
    let mut best_energy_gamma = sa.gamma0;
    let mut best_energy_report: Option<EquilibriumReport> = None;

    for k in 0..=sa.max_steps {
        let temperature = sa.t0 * sa.cooling.powi(k as i32);
        let gamma_k = if k == 0 {
            sa.gamma0
        } else {
            propose_gamma(gamma_accepted, temperature, sa.t0, sa.step_scale, &mut rng)
        };

        let report = match solve(gamma_k, warm.as_ref()) {
            Ok(r) if r.converged => r,
            // A non-convergent inner solve invalidates the step: log it as
            // rejected with NaN cost and keep the chain where it was.
            _ => {
                steps.push(SAStep {
                    k,
                    gamma: gamma_k,
                    cost: f64::NAN,
                    delta: f64::NAN,
                    temperature,
                    accepted: false,
                    welfare: f64::NAN,
                });
                continue;
            }
        };
        any_valid = true;
        let cost = report.total_cost;
        let welfare = report.welfare;
        let energy = sa_objective(cost, s.c_ref, sa.objective_mode);

        // Paper-form recurrence on consecutive visited costs; delta_0 = 0.
        let delta = if k == 0 { 0.0 } else { energy - energy_prev_visit };
        energy_prev_visit = energy;

        let accepted = if k == 0 {
            true
        } else {
            sa_accept(energy - energy_accepted, temperature, &mut rng)
        };
        if accepted {
            gamma_accepted = gamma_k;
            energy_accepted = energy;
        }
        if sa.warm_start {
            warm = Some(report.x_star.clone());
        }

        if cost <= feasible_cost
            && incumbent.map_or(true, |b| welfare > b.welfare)
        {
            incumbent = Some(Incumbent {
                gamma: gamma_k,
                welfare,
                cost,
                step: k,
            });
            incumbent_report = Some(report.clone());
        }
        if energy < best_energy {
            best_energy = energy;
            best_energy_gamma = gamma_k;
            best_energy_report = Some(report.clone());
        }
        last_gamma = gamma_k;
        last_report = Some(report);

        steps.push(SAStep {
            k,
            gamma: gamma_k,
            cost,
            delta,
            temperature,
            accepted,
            welfare,
        });

        // Trailing-window stabilization test on |delta| over the last
        // min(k, window) steps; delta_0 alone never triggers it.
        if k >= 1 {
            let w = k.min(sa.window);
            let recent: f64 = steps
                .iter()
                .rev()
                .filter(|st| st.delta.is_finite())
                .take(w)
                .map(|st| st.delta.abs())
                .sum();
            if recent / w as f64 <= sa.epsilon {
                break;
            }
        }
    }

    if !any_valid {
        return Err(Error::AllStepsInvalid);
    }

    let trace = SATrace { steps, incumbent };
    if sa.return_last {
        let report = last_report.expect("at least one valid step");
        return Ok(TuneOutcome {
            gamma_star: last_gamma,
            feasible: report.total_cost <= feasible_cost,
            report,
            trace,
        });
    }
    match (incumbent, incumbent_report) {
        (Some(best), Some(report)) => Ok(TuneOutcome {
            gamma_star: best.gamma,
            feasible: true,
            report,
            trace,
        }),
        _ => Ok(TuneOutcome {
            gamma_star: best_energy_gamma,
            feasible: false,
            report: best_energy_report.expect("at least one valid step"),
            trace,
        }),
    }
}

/// Equilibrium cost and welfare over a gamma grid, warm-starting along the
/// grid. The trade-off curve behind the tuner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub gamma: f64,
    pub cost: f64,
    pub welfare: f64,
}

pub fn gamma_cost_curve(
    s: &Scenario,
    gammas: &[f64],
    game_cfg: &GameConfig,
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::with_capacity(gammas.len());
    let mut warm: Option<AllocationMatrix> = None;
    for &gamma in gammas {
        if gamma < 0.0 {
            return Err(Error::InvalidConfig("gamma grid must be nonnegative".into()));
        }
        let p = BillingParams::new(s.cost.c, gamma);
        let x0 = warm.take().unwrap_or_else(|| initial_allocation(s));
        let report = find_equilibrium_from(s, &p, game_cfg, x0)?;
        warm = Some(report.x_star.clone());
        out.push(CurvePoint {
            gamma,
            cost: report.total_cost,
            welfare: report.welfare,
        });
    }
    Ok(out)
}
