//! System cost and the flexibility-aware billing rule.
//!
//! A user's bill has two parts. The share term `c * sum_t x_i^t * L_t`
//! (with `L_t` the slot's aggregate load) is the user's proportional slice
//! of the quadratic system cost; written this way it has no 0/0 at idle
//! slots. The flexibility term is `gamma` times the user's peak-overlap
//! `sum_t x_i^t * S_t` (with `S_t` the others' load) minus the population
//! mean of that quantity. The flexibility terms sum to zero over users, so
//! bills always add up to the system cost regardless of gamma: gamma only
//! redistributes cost from load that crowds peaks onto load that avoids
//! them.

use crate::error::{Error, Result};
use crate::model::{AllocationMatrix, CostModel};

/// Parameters of the billing rule: the cost coefficient and the flexibility
/// weight `gamma >= 0` ($/kWh²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BillingParams {
    pub cost: CostModel,
    pub gamma: f64,
}

impl BillingParams {
    pub fn new(c: f64, gamma: f64) -> Self {
        Self {
            cost: CostModel { c },
            gamma,
        }
    }
}

/// A bill split into its cost-share and flexibility components, $.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BillBreakdown {
    pub share_term: f64,
    pub flexibility_term: f64,
    pub total: f64,
}

impl BillBreakdown {
    fn new(share_term: f64, flexibility_term: f64) -> Self {
        Self {
            share_term,
            flexibility_term,
            total: share_term + flexibility_term,
        }
    }
}

/// Effective coupling `gamma * (n-2)/n` that scales the flexibility
/// incentive in gradients; vanishes for n = 2.
#[inline]
pub(crate) fn gamma_coupling(n: usize, gamma: f64) -> f64 {
    gamma * (n as f64 - 2.0) / n as f64
}

/// Cost of serving `load` kWh in one slot: `c * load^2` dollars.
pub fn timeslot_cost(cost: &CostModel, load: f64) -> Result<f64> {
    if load < 0.0 || !load.is_finite() {
        return Err(Error::Domain(format!(
            "slot load must be nonnegative and finite, got {load}"
        )));
    }
    Ok(cost.c * load * load)
}

/// Total system cost over the horizon, $.
pub fn total_cost(x: &AllocationMatrix, cost: &CostModel) -> f64 {
    x.loads().iter().map(|l| cost.c * l * l).sum()
}

/// Peak-overlap of user `i`: `sum_t x_i^t * (L_t - x_i^t)`.
#[inline]
fn cross_term(row: &[f64], loads: &[f64]) -> f64 {
    row.iter().zip(loads).map(|(&x, &l)| x * (l - x)).sum()
}

fn breakdown(i: usize, x: &AllocationMatrix, loads: &[f64], p: &BillingParams) -> BillBreakdown {
    let n = x.n() as f64;
    let share: f64 = x
        .row(i)
        .iter()
        .zip(loads)
        .map(|(&xi, &l)| p.cost.c * xi * l)
        .sum();
    let mut mean_cross = 0.0;
    for j in 0..x.n() {
        mean_cross += cross_term(x.row(j), loads);
    }
    mean_cross /= n;
    let flex = p.gamma * (cross_term(x.row(i), loads) - mean_cross);
    BillBreakdown::new(share, flex)
}

/// Bill of user `i` at allocation `X`.
pub fn bill(i: usize, x: &AllocationMatrix, p: &BillingParams) -> Result<BillBreakdown> {
    if i >= x.n() {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: i,
            len: x.n(),
        });
    }
    let loads = x.loads();
    Ok(breakdown(i, x, &loads, p))
}

/// Bills of all users in one pass.
pub fn bill_all(x: &AllocationMatrix, p: &BillingParams) -> Vec<BillBreakdown> {
    let n = x.n() as f64;
    let loads = x.loads();
    let crosses: Vec<f64> = (0..x.n()).map(|j| cross_term(x.row(j), &loads)).collect();
    let mean_cross = crosses.iter().sum::<f64>() / n;
    (0..x.n())
        .map(|i| {
            let share: f64 = x
                .row(i)
                .iter()
                .zip(&loads)
                .map(|(&xi, &l)| p.cost.c * xi * l)
                .sum();
            BillBreakdown::new(share, p.gamma * (crosses[i] - mean_cross))
        })
        .collect()
}

/// Gradient of user `i`'s bill with the other rows held fixed, $/kWh per
/// slot: `c*L_t + c*x_i^t + gamma*(n-2)/n * S_t`.
pub fn bill_gradient(i: usize, x: &AllocationMatrix, p: &BillingParams) -> Result<Vec<f64>> {
    if i >= x.n() {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: i,
            len: x.n(),
        });
    }
    let g = gamma_coupling(x.n(), p.gamma);
    let loads = x.loads();
    Ok(x.row(i)
        .iter()
        .zip(&loads)
        .map(|(&xi, &l)| p.cost.c * l + p.cost.c * xi + g * (l - xi))
        .collect())
}

/// Max entrywise deviation of the numerical Hessian of user `i`'s bill from
/// `diag(2c)`. The bill is quadratic in the user's own row, so central
/// differences are exact up to roundoff for any step.
pub fn bill_hessian_check(i: usize, x: &AllocationMatrix, p: &BillingParams) -> f64 {
    assert!(i < x.n(), "user index out of range");
    let m = x.m();
    let h = 1e-2;
    let eval = |row: &[f64]| -> f64 {
        let mut probe = x.clone();
        probe.set_row(i, row);
        bill(i, &probe, p).expect("index checked").total
    };
    let base: Vec<f64> = x.row(i).to_vec();
    let f0 = eval(&base);
    let mut worst: f64 = 0.0;
    for t1 in 0..m {
        for t2 in t1..m {
            let entry = if t1 == t2 {
                let mut up = base.clone();
                let mut down = base.clone();
                up[t1] += h;
                down[t1] -= h;
                (eval(&up) - 2.0 * f0 + eval(&down)) / (h * h)
            } else {
                let mut pp = base.clone();
                let mut pm = base.clone();
                let mut mp = base.clone();
                let mut mm = base.clone();
                pp[t1] += h;
                pp[t2] += h;
                pm[t1] += h;
                pm[t2] -= h;
                mp[t1] -= h;
                mp[t2] += h;
                mm[t1] -= h;
                mm[t2] -= h;
                (eval(&pp) - eval(&pm) - eval(&mp) + eval(&mm)) / (4.0 * h * h)
            };
            let expected = if t1 == t2 { 2.0 * p.cost.c } else { 0.0 };
            worst = worst.max((entry - expected).abs());
        }
    }
    worst
}

/// `sum_i bill_i - C`: zero for every allocation and every gamma, not only
/// at equilibrium.
pub fn budget_balance_residual(x: &AllocationMatrix, p: &BillingParams) -> f64 {
    let total: f64 = bill_all(x, p).iter().map(|b| b.total).sum();
    total - total_cost(x, &p.cost)
}

/// Scans `theta -> bill(i, theta*direction)` with the other rows fixed and
/// returns the nonnegative root found by bisection, or `None` when the bill
/// never crosses zero (no reward pool to climb out of).
pub fn bill_root_scan(
    i: usize,
    x: &AllocationMatrix,
    p: &BillingParams,
    direction: &[f64],
) -> Result<Option<f64>> {
    if i >= x.n() {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: i,
            len: x.n(),
        });
    }
    if direction.len() != x.m() {
        return Err(Error::Dimension {
            what: "scan direction",
            expected: x.m(),
            got: direction.len(),
        });
    }
    if direction.iter().any(|d| *d < 0.0 || !d.is_finite()) {
        return Err(Error::Domain(
            "scan direction must be nonnegative and finite".into(),
        ));
    }

    let eval = |theta: f64| -> f64 {
        let row: Vec<f64> = direction.iter().map(|d| theta * d).collect();
        let mut probe = x.clone();
        probe.set_row(i, &row);
        bill(i, &probe, p).expect("index checked").total
    };

    let at_zero = eval(0.0);
    let scale = at_zero.abs().max(1.0);
    if at_zero >= -1e-14 * scale {
        // No negative reward pool at the origin; the only root is theta = 0
        // when the bill starts at exactly zero.
        return Ok(if at_zero.abs() <= 1e-14 * scale {
            Some(0.0)
        } else {
            None
        });
    }

    // bill(0) < 0; the share term grows quadratically along any nonzero
    // direction, so double until the sign flips.
    let mut hi = 1.0;
    let mut flipped = false;
    for _ in 0..70 {
        if eval(hi) > 0.0 {
            flipped = true;
            break;
        }
        hi *= 2.0;
    }
    if !flipped {
        return Ok(None); // degenerate direction, bill stays nonpositive
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}
