//! The consumption game: per-user best responses, sequential best-response
//! dynamics to a Nash equilibrium, and the exact potential that certifies
//! convergence.
//!
//! With the others' loads `S_t` held fixed, user `i` maximizes the strictly
//! concave `U_i = v_i - b_i`, which for separable valuations decomposes per
//! slot into
//!
//! ```text
//!   max over z in [0, x_bar]:  v_t(z) - c z^2 - (c + gamma (n-2)/n) S_t z
//! ```
//!
//! The dynamics sweep users in a fixed order, each seeing the freshest
//! allocation (Gauss-Seidel). Every sweep weakly increases the potential
//!
//! ```text
//!   P(X) = sum_i v_i(x_i)
//!        - sum_t { c/2 [L_t^2 + sum_i (x_i^t)^2]
//!                  + gamma (n-2)/(2n) sum_i x_i^t S_{-i}^t }
//! ```
//!
//! whose per-user gradient equals the utility gradient, so the sweep change
//! dropping below tolerance certifies an equilibrium.

use crate::billing::{self, bill_all, gamma_coupling, BillBreakdown, BillingParams};
use crate::error::{Error, Result};
use crate::model::{project_feasible, AllocationMatrix, Appliance, Scenario};
use crate::pga;
use crate::valuation::ValuationSpec;

// ---------------------------------------------------------------------------
// Configuration and report types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GameConfig {
    /// Per-entry sup-norm change (kWh) below which a sweep counts as
    /// converged.
    pub br_tolerance: f64,
    pub max_rounds: usize,
    /// Fixed update permutation; `None` means natural order.
    pub update_order: Option<Vec<usize>>,
    /// Record the potential each round (cheap; off only for tight loops).
    pub potential_check: bool,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            br_tolerance: 1e-7,
            max_rounds: 10_000,
            update_order: None,
            potential_check: true,
        }
    }
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub max_change: f64,
    /// NaN when potential recording is off.
    pub potential: f64,
    pub total_cost: f64,
    pub welfare: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub x_star: AllocationMatrix,
    pub bills: Vec<BillBreakdown>,
    /// Per-user `v_i - b_i`, $.
    pub utilities: Vec<f64>,
    /// Sweeps executed.
    pub rounds: usize,
    /// Potential before any sweep and after each one (empty when recording
    /// is off).
    pub potential_trace: Vec<f64>,
    pub round_log: Vec<RoundRecord>,
    pub converged: bool,
    /// Users whose equilibrium utility fell below the audit tolerance.
    pub ir_violations: Vec<usize>,
    pub total_cost: f64,
    /// `sum_i v_i - C`, $.
    pub welfare: f64,
}

// ---------------------------------------------------------------------------
// Per-user best response
// ---------------------------------------------------------------------------

/// Own-variable part of user `i`'s utility at one slot; differs from `U_i`
/// by terms that do not involve the own consumption at that slot.
#[inline]
fn slot_objective(spec: &ValuationSpec, t: usize, z: f64, s_t: f64, c: f64, g: f64) -> f64 {
    spec.slot_value(t, z) - c * z * z - (c + g) * s_t * z
}

/// Maximizer of the slot objective over `[0, x_bar]`.
fn slot_best_response(
    spec: &ValuationSpec,
    t: usize,
    s_t: f64,
    c: f64,
    g: f64,
    x_bar: f64,
) -> f64 {
    match spec {
        ValuationSpec::QuadraticCapped { alpha, beta } => {
            let (a, b) = (alpha[t], beta[t]);
            // Stationary point of the sub-kink branch; it never lands beyond
            // the kink, but evaluate both branch candidates anyway and keep
            // the better one.
            let interior = ((a - (c + g) * s_t) / (b + 2.0 * c)).clamp(0.0, x_bar);
            let kink = if a > 0.0 { (a / b).min(x_bar) } else { 0.0 };
            if slot_objective(spec, t, interior, s_t, c, g)
                >= slot_objective(spec, t, kink, s_t, c, g)
            {
                interior
            } else {
                kink
            }
        }
        ValuationSpec::Logarithmic { alpha } => {
            // Marginal value alpha/(1+z) falls, marginal price 2cz + (c+g)S
            // rises: bisect the unique crossing.
            let phi = |z: f64| alpha[t] / (1.0 + z) - 2.0 * c * z - (c + g) * s_t;
            if phi(0.0) <= 0.0 {
                return 0.0;
            }
            if phi(x_bar) >= 0.0 {
                return x_bar;
            }
            let (mut lo, mut hi) = (0.0, x_bar);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                if phi(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// Unique maximizer of user `i`'s utility over their feasible set, with all
/// other rows of `X` treated as constants.
pub fn best_response(
    i: usize,
    x: &AllocationMatrix,
    p: &BillingParams,
    a: &Appliance,
) -> Result<Vec<f64>> {
    if !a.valuation.is_separable() {
        return best_response_numeric(i, x, p, a);
    }
    let m = x.m();
    let g = gamma_coupling(x.n(), p.gamma);
    let c = p.cost.c;
    let loads = x.loads();
    let mask = a.slot_mask(m);
    let mut row = vec![0.0; m];
    for t in 0..m {
        if !mask[t] {
            continue;
        }
        let s_t = loads[t] - x.get(i, t);
        let z = slot_best_response(&a.valuation, t, s_t, c, g, a.x_bar);
        if !z.is_finite() {
            return Err(Error::NonFinite("best response"));
        }
        row[t] = z;
    }
    Ok(row)
}

/// Best response by projected gradient ascent on the own-variable objective.
/// Route for non-separable valuations; also a cross-check of the analytic
/// path.
pub fn best_response_numeric(
    i: usize,
    x: &AllocationMatrix,
    p: &BillingParams,
    a: &Appliance,
) -> Result<Vec<f64>> {
    let m = x.m();
    let g = gamma_coupling(x.n(), p.gamma);
    let c = p.cost.c;
    let loads = x.loads();
    let s: Vec<f64> = (0..m).map(|t| loads[t] - x.get(i, t)).collect();
    let mask = a.slot_mask(m);
    let upper: Vec<f64> = mask.iter().map(|&ok| if ok { a.x_bar } else { 0.0 }).collect();

    let spec = &a.valuation;
    let f = |row: &[f64]| -> f64 {
        row.iter()
            .enumerate()
            .map(|(t, &z)| slot_objective(spec, t, z, s[t], c, g))
            .sum()
    };
    let grad = |row: &[f64], out: &mut [f64]| {
        for (t, o) in out.iter_mut().enumerate() {
            *o = spec.slot_marginal(t, row[t]) - 2.0 * c * row[t] - (c + g) * s[t];
        }
    };
    let curvature = match spec {
        ValuationSpec::QuadraticCapped { beta, .. } => beta.iter().fold(0.0, |a: f64, &b| a.max(b)),
        ValuationSpec::Logarithmic { alpha } => alpha.iter().fold(0.0, |a: f64, &b| a.max(b)),
    };
    let out = pga::maximize_box(
        f,
        grad,
        &upper,
        x.row(i).to_vec(),
        &pga::PgaOptions {
            tol: 1e-10,
            max_iters: 100_000,
            lipschitz: curvature + 2.0 * c,
        },
    );
    if out.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("best response"));
    }
    Ok(out.x)
}

/// `v_i - b_i` at the current allocation, $.
pub fn utility(i: usize, x: &AllocationMatrix, p: &BillingParams, spec: &ValuationSpec) -> f64 {
    assert!(i < x.n(), "user index out of range");
    spec.value_feasible(x.row(i)) - billing::bill(i, x, p).expect("index checked").total
}

// ---------------------------------------------------------------------------
// Best-response dynamics
// ---------------------------------------------------------------------------

/// One Gauss-Seidel sweep; each user in `order` best-responds against the
/// freshest allocation. The loads vector is kept incremental.
fn sweep_in_place(
    x: &mut AllocationMatrix,
    loads: &mut [f64],
    p: &BillingParams,
    s: &Scenario,
    order: &[usize],
) -> Result<f64> {
    let n = x.n();
    let g = gamma_coupling(n, p.gamma);
    let c = p.cost.c;
    let mut max_change: f64 = 0.0;
    for &i in order {
        let a = &s.appliances[i];
        if a.valuation.is_separable() {
            for &t in &a.feasible_slots {
                let old = x.get(i, t);
                let s_t = loads[t] - old;
                let z = slot_best_response(&a.valuation, t, s_t, c, g, a.x_bar);
                if !z.is_finite() {
                    return Err(Error::NonFinite("best response"));
                }
                x.set(i, t, z);
                loads[t] += z - old;
                max_change = max_change.max((z - old).abs());
            }
        } else {
            let row = best_response_numeric(i, x, p, a)?;
            for t in 0..x.m() {
                let old = x.get(i, t);
                x.set(i, t, row[t]);
                loads[t] += row[t] - old;
                max_change = max_change.max((row[t] - old).abs());
            }
        }
    }
    Ok(max_change)
}

/// One full sweep in `order`, returning the updated allocation and the max
/// per-entry change.
pub fn best_response_round(
    x: &AllocationMatrix,
    p: &BillingParams,
    s: &Scenario,
    order: &[usize],
) -> Result<(AllocationMatrix, f64)> {
    let mut next = x.clone();
    let mut loads = next.loads();
    let change = sweep_in_place(&mut next, &mut loads, p, s, order)?;
    Ok((next, change))
}

/// Full-bound starting point: `x_i^t = x_bar_i` on feasible slots, 0
/// elsewhere.
pub fn initial_allocation(s: &Scenario) -> AllocationMatrix {
    let mut x = AllocationMatrix::zeros(s.n(), s.m());
    for (i, a) in s.appliances.iter().enumerate() {
        for &t in &a.feasible_slots {
            x.set(i, t, a.x_bar);
        }
    }
    x
}

fn resolve_order(cfg: &GameConfig, n: usize) -> Result<Vec<usize>> {
    match &cfg.update_order {
        None => Ok((0..n).collect()),
        Some(order) => {
            let mut seen = vec![false; n];
            if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::InvalidConfig(format!(
                    "update_order must be a permutation of 0..{n}"
                )));
            }
            Ok(order.clone())
        }
    }
}

/// Runs best-response dynamics from the full-bound start.
pub fn find_equilibrium(
    s: &Scenario,
    p: &BillingParams,
    cfg: &GameConfig,
) -> Result<EquilibriumReport> {
    find_equilibrium_from(s, p, cfg, initial_allocation(s))
}

/// Runs best-response dynamics from a caller-supplied start (projected onto
/// the feasible set first), e.g. to warm-start across gamma updates.
pub fn find_equilibrium_from(
    s: &Scenario,
    p: &BillingParams,
    cfg: &GameConfig,
    x0: AllocationMatrix,
) -> Result<EquilibriumReport> {
    if !(cfg.br_tolerance > 0.0) {
        return Err(Error::InvalidConfig("br_tolerance must be positive".into()));
    }
    if cfg.max_rounds < 1 {
        return Err(Error::InvalidConfig("max_rounds must be at least 1".into()));
    }
    let order = resolve_order(cfg, s.n())?;

    let mut x = AllocationMatrix::zeros(s.n(), s.m());
    for (i, a) in s.appliances.iter().enumerate() {
        let row = project_feasible(x0.row(i), a, &s.horizon)?;
        x.set_row(i, &row);
    }
    let mut loads = x.loads();

    let mut potential_trace = Vec::new();
    let mut round_log = Vec::new();
    if cfg.potential_check {
        potential_trace.push(potential(&x, p, s));
    }

    let mut converged = false;
    let mut rounds = 0;
    for round in 1..=cfg.max_rounds {
        let max_change = sweep_in_place(&mut x, &mut loads, p, s, &order)?;
        rounds = round;
        let cost = billing::total_cost(&x, &p.cost);
        let value_sum: f64 = s
            .appliances
            .iter()
            .enumerate()
            .map(|(i, a)| a.valuation.value_feasible(x.row(i)))
            .sum();
        let pot = if cfg.potential_check {
            let v = potential(&x, p, s);
            potential_trace.push(v);
            v
        } else {
            f64::NAN
        };
        round_log.push(RoundRecord {
            round,
            max_change,
            potential: pot,
            total_cost: cost,
            welfare: value_sum - cost,
        });
        if max_change <= cfg.br_tolerance {
            converged = true;
            break;
        }
    }

    let bills = bill_all(&x, p);
    let utilities: Vec<f64> = s
        .appliances
        .iter()
        .enumerate()
        .map(|(i, a)| a.valuation.value_feasible(x.row(i)) - bills[i].total)
        .collect();
    let scale = utilities.iter().fold(1.0_f64, |acc, u| acc.max(u.abs()));
    let ir_violations: Vec<usize> = utilities
        .iter()
        .enumerate()
        .filter_map(|(i, &u)| (u < -1e-7 * scale).then_some(i))
        .collect();
    let total_cost = billing::total_cost(&x, &p.cost);
    let value_sum: f64 = s
        .appliances
        .iter()
        .enumerate()
        .map(|(i, a)| a.valuation.value_feasible(x.row(i)))
        .sum();
    let welfare = value_sum - total_cost;

    Ok(EquilibriumReport {
        x_star: x,
        bills,
        utilities,
        rounds,
        potential_trace,
        round_log,
        converged,
        ir_violations,
        total_cost,
        welfare,
    })
}

// ---------------------------------------------------------------------------
// Potential function
// ---------------------------------------------------------------------------

/// Exact potential of the game: per-user utility changes equal potential
/// changes.
pub fn potential(x: &AllocationMatrix, p: &BillingParams, s: &Scenario) -> f64 {
    let n = x.n();
    let g = gamma_coupling(n, p.gamma);
    let c = p.cost.c;
    let value_sum: f64 = s
        .appliances
        .iter()
        .enumerate()
        .map(|(i, a)| a.valuation.value_feasible(x.row(i)))
        .sum();
    let mut quad = 0.0;
    for t in 0..x.m() {
        let mut load = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let v = x.get(i, t);
            load += v;
            sumsq += v * v;
        }
        // sum_i x_i S_{-i} = L^2 - sum_i x_i^2 per slot.
        quad += 0.5 * c * (load * load + sumsq) + 0.5 * g * (load * load - sumsq);
    }
    value_sum - quad
}

/// Compares central finite differences of the potential against those of
/// each user's utility, entrywise; returns the worst deviation relative to
/// `max(1, |dU|)`. Entries on the boundary are skipped (the identity is a
/// statement about interior gradients).
pub fn potential_gradient_identity_check(
    x: &AllocationMatrix,
    p: &BillingParams,
    s: &Scenario,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.n() {
        let spec = &s.appliances[i].valuation;
        for t in 0..x.m() {
            let v = x.get(i, t);
            if v <= 0.0 {
                continue;
            }
            let h = (1e-5 * v.abs().max(1.0)).min(0.5 * v);
            let mut up = x.clone();
            let mut down = x.clone();
            up.set(i, t, v + h);
            down.set(i, t, v - h);
            let d_pot = (potential(&up, p, s) - potential(&down, p, s)) / (2.0 * h);
            let d_util = (utility(i, &up, p, spec) - utility(i, &down, p, spec)) / (2.0 * h);
            let dev = (d_pot - d_util).abs() / d_util.abs().max(1.0);
            worst = worst.max(dev);
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Audits
// ---------------------------------------------------------------------------

/// Bill a user would face after deviating to the zero profile, others fixed.
/// Nonpositive by construction; the individual-rationality argument rests on
/// it.
pub fn zero_deviation_bill(i: usize, x: &AllocationMatrix, p: &BillingParams) -> f64 {
    let mut probe = x.clone();
    probe.set_row(i, &vec![0.0; x.m()]);
    billing::bill(i, &probe, p).expect("shape preserved").total
}

/// Equilibrium certificate: scans a per-slot grid of unilateral deviations
/// for every user and returns the best utility improvement found, relative
/// to `max(1, |U_i|)`.
pub fn max_grid_improvement(
    x: &AllocationMatrix,
    p: &BillingParams,
    s: &Scenario,
    points: usize,
) -> f64 {
    let n = x.n();
    let g = gamma_coupling(n, p.gamma);
    let c = p.cost.c;
    let loads = x.loads();
    let bills = bill_all(x, p);
    let mut worst: f64 = 0.0;
    for (i, a) in s.appliances.iter().enumerate() {
        let u_i = a.valuation.value_feasible(x.row(i)) - bills[i].total;
        let scale = u_i.abs().max(1.0);
        for &t in &a.feasible_slots {
            let cur = x.get(i, t);
            let s_t = loads[t] - cur;
            let here = slot_objective(&a.valuation, t, cur, s_t, c, g);
            for k in 0..points {
                let z = a.x_bar * k as f64 / (points - 1) as f64;
                let gain = slot_objective(&a.valuation, t, z, s_t, c, g) - here;
                worst = worst.max(gain / scale);
            }
        }
    }
    worst
}

/// Largest gamma for which the potential stays strictly concave on every
/// slot (sufficient for a unique equilibrium): `gamma (n-2)/n` must stay
/// below `c` plus the smallest valuation curvature. Unbounded for n <= 2.
pub fn unique_equilibrium_gamma_bound(s: &Scenario) -> f64 {
    let n = s.n();
    if n <= 2 {
        return f64::INFINITY;
    }
    let mut curv_min = f64::INFINITY;
    for a in &s.appliances {
        for &t in &a.feasible_slots {
            let curv = match &a.valuation {
                ValuationSpec::QuadraticCapped { beta, .. } => beta[t],
                // Logarithmic curvature alpha/(1+z)^2, smallest at z = x_bar.
                ValuationSpec::Logarithmic { alpha } => {
                    alpha[t] / ((1.0 + a.x_bar) * (1.0 + a.x_bar))
                }
            };
            curv_min = curv_min.min(curv);
        }
    }
    (s.cost.c + curv_min) * n as f64 / (n as f64 - 2.0)
}
