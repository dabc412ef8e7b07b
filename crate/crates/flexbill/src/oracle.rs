//! Centralized welfare benchmark: maximizes `sum_i v_i(x_i) - sum_t c L_t^2`
//! over the box/zero-slot feasible set, optionally under the budget
//! `sum_t c L_t^2 <= c_ref`.
//!
//! The objective is concave and the feasible set is a box, so projected
//! gradient ascent suffices for the inner problem. The single scalar budget
//! constraint is handled by its dual: for a multiplier `lambda` the inner
//! problem just rescales the cost term by `1 + lambda`, and the inner
//! solution's cost is non-increasing in `lambda`, so the smallest feasible
//! multiplier is found by bisection.
//!
//! The oracle reads private valuations directly. It exists purely as a
//! benchmark for what central optimization could achieve; nothing here
//! feeds back into the mechanism.

use crate::billing::total_cost;
use crate::error::{Error, Result};
use crate::game::{initial_allocation, EquilibriumReport};
use crate::model::{AllocationMatrix, Scenario};
use crate::pga::{self, PgaOptions};
use crate::valuation::ValuationSpec;

/// Relative slack on the budget used both as the dual bisection target and
/// for the reported `feasible` flag.
pub const FEASIBLE_COST_SLACK: f64 = 1e-6;

const MAX_INNER_ITERS: usize = 500_000;
const LAMBDA_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub x_opt: AllocationMatrix,
    /// Value of the welfare objective at `x_opt`, $.
    pub welfare: f64,
    pub cost: f64,
    /// Dual multiplier of the budget constraint; 0 when inactive.
    pub lambda: f64,
    /// Whether `cost <= c_ref` (with slack); the unconstrained solve reports
    /// it too, for the caller's information.
    pub feasible: bool,
    /// Total inner-iteration count across all solves.
    pub iterations: usize,
}

/// `sum_i v_i(x_i) - sum_t C^t(L_t)`; by budget balance this equals the sum
/// of user utilities under any gamma.
pub fn social_welfare(x: &AllocationMatrix, s: &Scenario) -> f64 {
    let value_sum: f64 = s
        .appliances
        .iter()
        .enumerate()
        .map(|(i, a)| a.valuation.value_feasible(x.row(i)))
        .sum();
    value_sum - total_cost(x, &s.cost)
}

// ---------------------------------------------------------------------------
// Inner solver
// ---------------------------------------------------------------------------

fn upper_bounds(s: &Scenario) -> Vec<f64> {
    let m = s.m();
    let mut upper = vec![0.0; s.n() * m];
    for (i, a) in s.appliances.iter().enumerate() {
        for &t in &a.feasible_slots {
            upper[i * m + t] = a.x_bar;
        }
    }
    upper
}

fn curvature_bound(s: &Scenario) -> f64 {
    let mut worst: f64 = 0.0;
    for a in &s.appliances {
        let b = match &a.valuation {
            ValuationSpec::QuadraticCapped { beta, .. } => {
                beta.iter().fold(0.0, |acc: f64, &v| acc.max(v))
            }
            ValuationSpec::Logarithmic { alpha } => {
                alpha.iter().fold(0.0, |acc: f64, &v| acc.max(v))
            }
        };
        worst = worst.max(b);
    }
    worst
}

/// Maximizes `sum v_i - scale * sum_t c L_t^2` over the feasible box.
fn solve_scaled(
    s: &Scenario,
    scale: f64,
    tol: f64,
    x0: Vec<f64>,
) -> Result<(Vec<f64>, usize)> {
    let n = s.n();
    let m = s.m();
    let c = s.cost.c;
    let upper = upper_bounds(s);

    let objective = |flat: &[f64]| -> f64 {
        let mut value = 0.0;
        for (i, a) in s.appliances.iter().enumerate() {
            value += a.valuation.value_feasible(&flat[i * m..(i + 1) * m]);
        }
        let mut cost = 0.0;
        for t in 0..m {
            let load: f64 = (0..n).map(|i| flat[i * m + t]).sum();
            cost += c * load * load;
        }
        value - scale * cost
    };
    let gradient = |flat: &[f64], out: &mut [f64]| {
        let mut loads = vec![0.0; m];
        for i in 0..n {
            for t in 0..m {
                loads[t] += flat[i * m + t];
            }
        }
        for (i, a) in s.appliances.iter().enumerate() {
            for t in 0..m {
                out[i * m + t] =
                    a.valuation.slot_marginal(t, flat[i * m + t]) - scale * 2.0 * c * loads[t];
            }
        }
    };

    let lipschitz = curvature_bound(s) + 2.0 * c * scale * n as f64;
    let outcome = pga::maximize_box(
        objective,
        gradient,
        &upper,
        x0,
        &PgaOptions {
            tol,
            max_iters: MAX_INNER_ITERS,
            lipschitz,
        },
    );
    if !outcome.converged {
        return Err(Error::Unconverged {
            context: "oracle projected gradient ascent",
            iterations: outcome.iterations,
            residual: outcome.pg_norm,
            iterate: Some(outcome.x),
        });
    }
    Ok((outcome.x, outcome.iterations))
}

fn matrix_from_flat(flat: &[f64], n: usize, m: usize) -> AllocationMatrix {
    debug_assert_eq!(flat.len(), n * m);
    let rows = flat.chunks(m).map(<[f64]>::to_vec).collect();
    AllocationMatrix::from_rows(rows).expect("flat layout is rectangular")
}

fn solution(s: &Scenario, flat: Vec<f64>, lambda: f64, iterations: usize) -> OracleSolution {
    let x_opt = matrix_from_flat(&flat, s.n(), s.m());
    let cost = total_cost(&x_opt, &s.cost);
    OracleSolution {
        welfare: social_welfare(&x_opt, s),
        feasible: cost <= s.c_ref * (1.0 + FEASIBLE_COST_SLACK),
        cost,
        lambda,
        iterations,
        x_opt,
    }
}

// ---------------------------------------------------------------------------
// Public solves
// ---------------------------------------------------------------------------

/// Welfare maximum ignoring the budget constraint.
pub fn solve_unconstrained(s: &Scenario, tol: f64) -> Result<OracleSolution> {
    let x0: Vec<f64> = {
        let init = initial_allocation(s);
        init.as_slice().to_vec()
    };
    let (flat, iters) = solve_scaled(s, 1.0, tol, x0)?;
    Ok(solution(s, flat, 0.0, iters))
}

/// Welfare maximum subject to `cost <= c_ref`, by dual bisection on the
/// budget multiplier. Returns the unconstrained optimum with `lambda = 0`
/// when the constraint is slack.
pub fn solve_constrained(s: &Scenario, tol: f64) -> Result<OracleSolution> {
    let unconstrained = solve_unconstrained(s, tol)?;
    if unconstrained.cost <= s.c_ref * (1.0 + FEASIBLE_COST_SLACK) {
        return Ok(unconstrained);
    }
    // The bisection comparator uses the exact budget; the slack is only a
    // feasibility guard for reporting.
    let target = s.c_ref;
    let mut iterations = unconstrained.iterations;

    let inner_cost = |flat: &[f64]| -> f64 {
        total_cost(&matrix_from_flat(flat, s.n(), s.m()), &s.cost)
    };

    // Bracket the multiplier: cost(0) > target, expand until feasible.
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut warm = unconstrained.x_opt.as_slice().to_vec();
    let mut hi_solution;
    loop {
        let (flat, iters) = solve_scaled(s, 1.0 + hi, tol, warm.clone())?;
        iterations += iters;
        let cost = inner_cost(&flat);
        warm = flat.clone();
        if cost <= target {
            hi_solution = flat;
            break;
        }
        lo = hi;
        hi *= 10.0;
        if hi > LAMBDA_MAX {
            return Err(Error::ConstraintUnreachable {
                lambda_max: LAMBDA_MAX,
                cost,
                c_ref: s.c_ref,
            });
        }
    }

    // Smallest multiplier whose inner solution meets the budget.
    for _ in 0..200 {
        if hi - lo <= 1e-10 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (flat, iters) = solve_scaled(s, 1.0 + mid, tol, warm.clone())?;
        iterations += iters;
        warm = flat.clone();
        if inner_cost(&flat) <= target {
            hi = mid;
            hi_solution = flat;
        } else {
            lo = mid;
        }
    }

    Ok(solution(s, hi_solution, hi, iterations))
}

// ---------------------------------------------------------------------------
// Audits
// ---------------------------------------------------------------------------

/// First-order optimality residuals at an oracle solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Projected-gradient sup-norm of the Lagrangian.
    pub stationarity: f64,
    /// `max(cost - c_ref, 0)`.
    pub primal_infeasibility: f64,
    /// `|lambda * (cost - c_ref)|`.
    pub complementary_slackness: f64,
}

pub fn kkt_report(s: &Scenario, sol: &OracleSolution) -> KktReport {
    let n = s.n();
    let m = s.m();
    let c = s.cost.c;
    let flat = sol.x_opt.as_slice();
    let loads = sol.x_opt.loads();
    let mut grad = vec![0.0; n * m];
    for (i, a) in s.appliances.iter().enumerate() {
        for t in 0..m {
            grad[i * m + t] = a.valuation.slot_marginal(t, flat[i * m + t])
                - (1.0 + sol.lambda) * 2.0 * c * loads[t];
        }
    }
    let upper = upper_bounds(s);
    KktReport {
        stationarity: pga::projected_gradient_norm(flat, &grad, &upper),
        primal_infeasibility: (sol.cost - s.c_ref).max(0.0),
        complementary_slackness: (sol.lambda * (sol.cost - s.c_ref)).abs(),
    }
}

/// Shortfall of equilibrium welfare relative to the oracle's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelfareGap {
    /// `1 - welfare_eq / welfare_opt`, or the absolute difference when the
    /// oracle welfare is nonpositive.
    pub gap: f64,
    /// `welfare_eq / welfare_opt` when well defined.
    pub ratio: Option<f64>,
    /// Set when the oracle welfare is nonpositive and the fraction is
    /// meaningless.
    pub degenerate: bool,
}

pub fn welfare_gap(eq: &EquilibriumReport, opt: &OracleSolution) -> WelfareGap {
    if opt.welfare > 0.0 {
        WelfareGap {
            gap: 1.0 - eq.welfare / opt.welfare,
            ratio: Some(eq.welfare / opt.welfare),
            degenerate: false,
        }
    } else {
        WelfareGap {
            gap: opt.welfare - eq.welfare,
            ratio: None,
            degenerate: true,
        }
    }
}
