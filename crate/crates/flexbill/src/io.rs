//! File formats. Scenario files store slot indices 1-based; they are
//! converted to the crate's 0-based indices here and nowhere else.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::EquilibriumReport;
use crate::model::{Appliance, CostModel, Horizon, Scenario};
use crate::oracle::OracleSolution;
use crate::tuning::{SATrace, TuneOutcome};
use crate::valuation::ValuationSpec;

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HorizonFile {
    m: usize,
    s: f64,
}

#[derive(Serialize, Deserialize)]
struct CostFile {
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct ApplianceFile {
    id: String,
    x_bar: f64,
    /// 1-based slot indices.
    feasible_slots: Vec<usize>,
    valuation: ValuationSpec,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    horizon: HorizonFile,
    cost: CostFile,
    c_ref: f64,
    seed: u64,
    appliances: Vec<ApplianceFile>,
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    let file: ScenarioFile = serde_json::from_str(&text)?;
    let m = file.horizon.m;
    let mut appliances = Vec::with_capacity(file.appliances.len());
    for a in file.appliances {
        let mut slots = Vec::with_capacity(a.feasible_slots.len());
        for t in a.feasible_slots {
            if t < 1 || t > m {
                return Err(Error::Domain(format!(
                    "{}: slot {t} outside 1..={m} in scenario file",
                    a.id
                )));
            }
            slots.push(t - 1);
        }
        slots.sort_unstable();
        slots.dedup();
        appliances.push(Appliance {
            id: a.id,
            x_bar: a.x_bar,
            feasible_slots: slots,
            valuation: a.valuation,
        });
    }
    Ok(Scenario {
        horizon: Horizon {
            m,
            s: file.horizon.s,
        },
        appliances,
        cost: CostModel { c: file.cost.c },
        c_ref: file.c_ref,
        seed: file.seed,
    })
}

pub fn write_scenario(s: &Scenario, path: &Path) -> Result<()> {
    let file = ScenarioFile {
        horizon: HorizonFile {
            m: s.horizon.m,
            s: s.horizon.s,
        },
        cost: CostFile { c: s.cost.c },
        c_ref: s.c_ref,
        seed: s.seed,
        appliances: s
            .appliances
            .iter()
            .map(|a| ApplianceFile {
                id: a.id.clone(),
                x_bar: a.x_bar,
                feasible_slots: a.feasible_slots.iter().map(|t| t + 1).collect(),
                valuation: a.valuation.clone(),
            })
            .collect(),
    };
    write_pretty_json(&file, path)
}

// ---------------------------------------------------------------------------
// Result artifacts
// ---------------------------------------------------------------------------

pub fn write_pretty_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Per-user rows: allocation, bill split, valuation and utility.
pub fn write_equilibrium_csv(
    report: &EquilibriumReport,
    s: &Scenario,
    path: &Path,
) -> Result<()> {
    let m = s.m();
    let mut out = fs::File::create(path)?;
    let slots: Vec<String> = (1..=m).map(|t| format!("x{t}")).collect();
    writeln!(
        out,
        "id,{},bill_share,bill_flexibility,bill_total,valuation,utility",
        slots.join(",")
    )?;
    for (i, a) in s.appliances.iter().enumerate() {
        let row: Vec<String> = report.x_star.row(i).iter().map(f64::to_string).collect();
        let b = &report.bills[i];
        let value = b.total + report.utilities[i];
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            a.id,
            row.join(","),
            b.share_term,
            b.flexibility_term,
            b.total,
            value,
            report.utilities[i]
        )?;
    }
    Ok(())
}

/// One row per best-response sweep.
pub fn write_rounds_csv(report: &EquilibriumReport, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "round,max_change,potential,total_cost,welfare")?;
    for r in &report.round_log {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.round, r.max_change, r.potential, r.total_cost, r.welfare
        )?;
    }
    Ok(())
}

pub fn write_sa_trace_csv(trace: &SATrace, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "k,gamma,cost,delta,temperature,accepted,welfare")?;
    for s in &trace.steps {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.k, s.gamma, s.cost, s.delta, s.temperature, s.accepted, s.welfare
        )?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct OracleFile {
    welfare: f64,
    cost: f64,
    lambda: f64,
    feasible: bool,
    #[serde(rename = "X_opt")]
    x_opt: Vec<Vec<f64>>,
}

pub fn write_oracle_json(sol: &OracleSolution, path: &Path) -> Result<()> {
    let file = OracleFile {
        welfare: sol.welfare,
        cost: sol.cost,
        lambda: sol.lambda,
        feasible: sol.feasible,
        x_opt: (0..sol.x_opt.n())
            .map(|i| sol.x_opt.row(i).to_vec())
            .collect(),
    };
    write_pretty_json(&file, path)
}

#[derive(Serialize, Deserialize)]
pub struct TuningFile {
    pub gamma_star: f64,
    pub feasible: bool,
    pub cost: f64,
    pub welfare: f64,
    pub steps: usize,
}

pub fn write_tuning_json(outcome: &TuneOutcome, path: &Path) -> Result<()> {
    let file = TuningFile {
        gamma_star: outcome.gamma_star,
        feasible: outcome.feasible,
        cost: outcome.report.total_cost,
        welfare: outcome.report.welfare,
        steps: outcome.trace.steps.len(),
    };
    write_pretty_json(&file, path)
}
