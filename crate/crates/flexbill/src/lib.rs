//! Demand-side management engine for a retail electricity market with
//! strategic, price-anticipating users.
//!
//! A service provider buys energy at quadratic per-slot cost and splits it
//! among users through a budget-balanced billing rule with a tunable
//! flexibility weight `gamma`: load that crowds peaks pays extra, load that
//! avoids them earns the difference back, and the payments cancel exactly.
//! Users schedule their appliances selfishly; best-response dynamics
//! converge to a Nash equilibrium of the resulting game. Annealing `gamma`
//! steers the equilibrium cost onto a budget, and a convex central oracle
//! bounds how much welfare the decentralized mechanism gives up.
//!
//! Module map:
//!
//! - [`model`] — scenarios, appliances, allocations, feasibility.
//! - [`valuation`] — private user valuations (concave, zero at zero).
//! - [`billing`] — system cost, the billing rule, budget-balance audits.
//! - [`game`] — best responses, equilibrium dynamics, the exact potential.
//! - [`oracle`] — constrained/unconstrained central welfare optima.
//! - [`tuning`] — simulated annealing of `gamma` against a cost budget.
//! - [`generator`] — seeded random scenarios.
//! - [`experiment`] — end-to-end runs and file artifacts.
//! - [`io`] — scenario files and CSV/JSON exports.
//!
//! The `examples/` directory has one runnable walkthrough per capability;
//! `flexbill --help` covers the command-line front end.

pub mod billing;
pub mod error;
pub mod experiment;
pub mod game;
pub mod generator;
pub mod io;
pub mod model;
pub mod oracle;
mod pga;
pub mod tuning;
pub mod valuation;

pub use billing::{bill, bill_all, total_cost, BillBreakdown, BillingParams};
pub use error::{Error, Result};
pub use game::{find_equilibrium, EquilibriumReport, GameConfig};
pub use generator::{generate_scenario, GeneratorKnobs};
pub use model::{AllocationMatrix, Appliance, CostModel, Horizon, Scenario};
pub use oracle::{solve_constrained, solve_unconstrained, welfare_gap, OracleSolution};
pub use tuning::{tune_gamma, SAParams, TuneOutcome};
pub use valuation::ValuationSpec;
