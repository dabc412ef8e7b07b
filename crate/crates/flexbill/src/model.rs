//! Scenario model: horizon, appliances, allocation matrices and the cost
//! model, plus projection onto the per-appliance feasible sets.
//!
//! All slot indices are 0-based in memory. Scenario files use 1-based slots;
//! the conversion lives in [`crate::io`], nowhere else.

use crate::error::{Error, Result};
use crate::valuation::ValuationSpec;

/// Scheduling horizon: `m` equal timeslots of `s` hours each.
///
/// The slot duration is metadata only (energies are already per slot); it
/// never enters the arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub m: usize,
    pub s: f64,
}

/// One controllable load. The valuation is private to the user; service-side
/// code is expected to consume equilibrium reports, not read it.
#[derive(Debug, Clone, PartialEq)]
pub struct Appliance {
    pub id: String,
    /// Max energy per slot, kWh.
    pub x_bar: f64,
    /// Slots (0-based, strictly increasing) where operation is feasible.
    pub feasible_slots: Vec<usize>,
    pub valuation: ValuationSpec,
}

impl Appliance {
    pub fn is_feasible_slot(&self, t: usize) -> bool {
        self.feasible_slots.binary_search(&t).is_ok()
    }

    /// Per-slot feasibility mask of length `m`.
    pub fn slot_mask(&self, m: usize) -> Vec<bool> {
        let mut mask = vec![false; m];
        for &t in &self.feasible_slots {
            if t < m {
                mask[t] = true;
            }
        }
        mask
    }
}

/// Quadratic per-slot cost: `c * load^2` dollars at aggregate `load` kWh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// $/kWh².
    pub c: f64,
}

/// A full problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub horizon: Horizon,
    pub appliances: Vec<Appliance>,
    pub cost: CostModel,
    /// Cost threshold in $ that the tuned equilibrium must respect.
    pub c_ref: f64,
    /// Seed for anything stochastic derived from this scenario.
    pub seed: u64,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.appliances.len()
    }

    pub fn m(&self) -> usize {
        self.horizon.m
    }
}

// ---------------------------------------------------------------------------
// Allocation matrix
// ---------------------------------------------------------------------------

/// The n×m matrix of per-user per-slot energies, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl AllocationMatrix {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            data: vec![0.0; n * m],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * m);
        for row in &rows {
            if row.len() != m {
                return Err(Error::Dimension {
                    what: "allocation row",
                    expected: m,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, m, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.data[i * self.m + t]
    }

    #[inline]
    pub fn set(&mut self, i: usize, t: usize, v: f64) {
        self.data[i * self.m + t] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        self.row_mut(i).copy_from_slice(row);
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.m)
    }

    /// Per-slot aggregate loads, kWh.
    pub fn loads(&self) -> Vec<f64> {
        let mut loads = vec![0.0; self.m];
        for row in self.rows() {
            for (l, x) in loads.iter_mut().zip(row) {
                *l += x;
            }
        }
        loads
    }

    /// Sup-norm distance between two matrices of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Euclidean projection of a profile onto an appliance's feasible set:
/// entries clamped to `[0, x_bar]`, zero outside the feasible slots.
/// Idempotent.
pub fn project_feasible(x: &[f64], a: &Appliance, horizon: &Horizon) -> Result<Vec<f64>> {
    if x.len() != horizon.m {
        return Err(Error::Dimension {
            what: "consumption profile",
            expected: horizon.m,
            got: x.len(),
        });
    }
    let mask = a.slot_mask(horizon.m);
    Ok(x.iter()
        .zip(&mask)
        .map(|(&v, &ok)| if ok { v.clamp(0.0, a.x_bar) } else { 0.0 })
        .collect())
}

/// Aggregate consumption at slot `t` (0-based).
pub fn aggregate_load(x: &AllocationMatrix, t: usize) -> Result<f64> {
    if t >= x.m() {
        return Err(Error::IndexOutOfRange {
            what: "timeslot",
            index: t,
            len: x.m(),
        });
    }
    Ok((0..x.n()).map(|i| x.get(i, t)).sum())
}

/// True when every entry of `x` respects the scenario's bounds and feasible
/// slots, up to `tol` on the box constraints.
pub fn is_feasible_allocation(x: &AllocationMatrix, s: &Scenario, tol: f64) -> bool {
    if x.n() != s.n() || x.m() != s.m() {
        return false;
    }
    for (i, a) in s.appliances.iter().enumerate() {
        let mask = a.slot_mask(s.m());
        for t in 0..s.m() {
            let v = x.get(i, t);
            if !mask[t] {
                if v != 0.0 {
                    return false;
                }
            } else if !(-tol..=a.x_bar + tol).contains(&v) {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    /// Structurally unusable; computations would be meaningless.
    Error,
    /// Degenerate but runnable (e.g. a cost threshold no allocation meets).
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub severity: Severity,
    pub what: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.violations
            .iter()
            .any(|v| v.severity == Severity::Error)
    }

    fn push(&mut self, severity: Severity, what: impl Into<String>) {
        self.violations.push(Violation {
            severity,
            what: what.into(),
        });
    }
}

/// Checks every type invariant of a scenario and reports violations; never
/// fails. An empty report means the scenario is well-formed.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    let m = s.horizon.m;
    if m < 1 {
        report.push(Severity::Error, "horizon must have at least one timeslot");
    }
    if !(s.horizon.s > 0.0) {
        report.push(Severity::Error, "slot duration must be positive");
    }
    if !(s.cost.c > 0.0) {
        report.push(Severity::Error, "cost coefficient c must be positive");
    }
    if !(s.c_ref > 0.0) {
        report.push(Severity::Warning, "c_ref must be positive");
    }
    if s.appliances.is_empty() {
        report.push(Severity::Error, "scenario needs at least one appliance");
    }
    let mut seen = std::collections::BTreeSet::new();
    for a in &s.appliances {
        if !seen.insert(a.id.as_str()) {
            report.push(Severity::Error, format!("duplicate appliance id {:?}", a.id));
        }
        if !(a.x_bar > 0.0) {
            report.push(
                Severity::Error,
                format!("{}: x_bar must be positive", a.id),
            );
        }
        if a.feasible_slots.is_empty() {
            report.push(
                Severity::Error,
                format!("{}: feasible_slots must be nonempty", a.id),
            );
        }
        if a.feasible_slots.windows(2).any(|w| w[0] >= w[1]) {
            report.push(
                Severity::Error,
                format!("{}: feasible_slots must be strictly increasing", a.id),
            );
        }
        if a.feasible_slots.iter().any(|&t| t >= m) {
            report.push(
                Severity::Error,
                format!("{}: feasible slot out of range", a.id),
            );
        }
        for msg in a.valuation.validate(m) {
            report.push(Severity::Error, format!("{}: {}", a.id, msg));
        }
    }
    report
}
