//! Experiment orchestration: resolve a scenario, run one of the four modes,
//! audit the results and write every artifact to an output directory.
//!
//! Computation failures do not abort the run; the bundle carries the error
//! and whatever artifacts exist are still written. Only configuration and
//! I/O problems surface as hard errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::billing::{budget_balance_residual, BillingParams};
use crate::error::Result;
use crate::game::{
    find_equilibrium, max_grid_improvement, EquilibriumReport, GameConfig,
};
use crate::generator::{generate_scenario, GeneratorKnobs};
use crate::io;
use crate::model::{validate_scenario, Scenario, ValidationReport};
use crate::oracle::{solve_constrained, solve_unconstrained, welfare_gap, OracleSolution, WelfareGap};
use crate::tuning::{tune_gamma, SAParams, TuneOutcome};

pub const ORACLE_TOL: f64 = 1e-7;
/// Deviation-grid resolution for the equilibrium certificate audit.
pub const CERTIFICATE_POINTS: usize = 200;

#[derive(Debug, Clone)]
pub enum ScenarioSource {
    File(PathBuf),
    Generate {
        n: usize,
        m: usize,
        seed: u64,
        knobs: GeneratorKnobs,
    },
    Inline(Scenario),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunMode {
    /// Equilibrium at a fixed gamma, audited against the unconstrained
    /// optimum.
    Simulate { gamma: f64 },
    /// Full gamma-annealing run.
    Tune,
    /// Central optima only.
    Oracle { constrained: bool },
    /// Tune, then compare against the constrained optimum.
    GapStudy,
}

impl RunMode {
    fn name(self) -> &'static str {
        match self {
            RunMode::Simulate { .. } => "simulate",
            RunMode::Tune => "tune",
            RunMode::Oracle { .. } => "oracle",
            RunMode::GapStudy => "gap-study",
        }
    }
}

/// Budget override applied before running; the fractional form re-anchors
/// on the gamma = 0 equilibrium cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrefOverride {
    Absolute(f64),
    FracOfBaseline(f64),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub source: ScenarioSource,
    pub mode: RunMode,
    pub game: GameConfig,
    /// `t0 <= 0` requests the automatic scale `(0.3 * max(1, c_ref))^2`.
    pub sa: SAParams,
    pub cref_override: Option<CrefOverride>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub scenario: Scenario,
    pub validation: ValidationReport,
    pub mode: RunMode,
    pub equilibrium: Option<EquilibriumReport>,
    pub oracle_unconstrained: Option<OracleSolution>,
    pub oracle_constrained: Option<OracleSolution>,
    pub tuning: Option<TuneOutcome>,
    pub gap: Option<WelfareGap>,
    pub budget_residual: Option<f64>,
    pub ir_min_utility: Option<f64>,
    /// Best unilateral grid-deviation improvement found at the equilibrium,
    /// relative to utility scale.
    pub nash_certificate: Option<f64>,
    /// Gamma in force for the reported equilibrium.
    pub gamma: Option<f64>,
    /// Phase timings in seconds; never part of the summary.
    pub timings: Vec<(String, f64)>,
    pub error: Option<String>,
}

impl ResultBundle {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// `summary.json` schema. Deterministic for a fixed config and seed; wall
/// clock lives in `timings.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub c_ref: f64,
    pub gamma_star: Option<f64>,
    pub welfare_eq: Option<f64>,
    pub welfare_opt: Option<f64>,
    pub gap: Option<f64>,
    pub cost: Option<f64>,
    pub budget_residual: Option<f64>,
    pub ir_min_utility: Option<f64>,
    pub nash_certificate: Option<f64>,
    pub eq_converged: Option<bool>,
    pub tune_feasible: Option<bool>,
    pub oracle_feasible: Option<bool>,
    pub error: Option<String>,
}

fn resolve_scenario(source: &ScenarioSource) -> Result<Scenario> {
    match source {
        ScenarioSource::File(path) => io::read_scenario(path),
        ScenarioSource::Generate { n, m, seed, knobs } => generate_scenario(*n, *m, *seed, knobs),
        ScenarioSource::Inline(s) => Ok(s.clone()),
    }
}

fn resolve_sa(sa: &SAParams, c_ref: f64) -> SAParams {
    let mut sa = sa.clone();
    if !(sa.t0 > 0.0) {
        let scale = 0.3 * c_ref.max(1.0);
        sa.t0 = scale * scale;
    }
    sa
}

struct Phase<'a> {
    timings: &'a mut Vec<(String, f64)>,
}

impl<'a> Phase<'a> {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push((name.into(), start.elapsed().as_secs_f64()));
        out
    }
}

/// Runs one experiment and writes its artifacts under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    let total_start = Instant::now();
    let mut scenario = resolve_scenario(&cfg.source)?;

    let mut timings = Vec::new();
    let mut phase = Phase { timings: &mut timings };

    let mut error: Option<String> = None;

    if let Some(over) = cfg.cref_override {
        match over {
            CrefOverride::Absolute(v) => scenario.c_ref = v,
            CrefOverride::FracOfBaseline(frac) => {
                let baseline = phase.run("baseline_equilibrium", || {
                    find_equilibrium(
                        &scenario,
                        &BillingParams::new(scenario.cost.c, 0.0),
                        &cfg.game,
                    )
                });
                match baseline {
                    Ok(b) => scenario.c_ref = frac * b.total_cost,
                    Err(e) => error = Some(e.to_string()),
                }
            }
        }
    }

    let validation = validate_scenario(&scenario);
    let mut bundle = ResultBundle {
        scenario: scenario.clone(),
        validation: validation.clone(),
        mode: cfg.mode,
        equilibrium: None,
        oracle_unconstrained: None,
        oracle_constrained: None,
        tuning: None,
        gap: None,
        budget_residual: None,
        ir_min_utility: None,
        nash_certificate: None,
        gamma: None,
        timings: Vec::new(),
        error,
    };

    if validation.has_errors() {
        bundle.error.get_or_insert_with(|| {
            let msgs: Vec<&str> = validation
                .violations
                .iter()
                .map(|v| v.what.as_str())
                .collect();
            format!("scenario validation failed: {}", msgs.join("; "))
        });
    }

    if bundle.error.is_none() {
        let sa = resolve_sa(&cfg.sa, scenario.c_ref);
        let outcome: Result<()> = (|| {
            match cfg.mode {
                RunMode::Simulate { gamma } => {
                    let p = BillingParams::new(scenario.cost.c, gamma);
                    let report =
                        phase.run("equilibrium", || find_equilibrium(&scenario, &p, &cfg.game))?;
                    audit(&mut bundle, &scenario, &p, &report);
                    bundle.equilibrium = Some(report);
                    bundle.gamma = Some(gamma);
                    let opt = phase.run("oracle", || solve_unconstrained(&scenario, ORACLE_TOL))?;
                    bundle.gap = Some(welfare_gap(
                        bundle.equilibrium.as_ref().expect("just set"),
                        &opt,
                    ));
                    bundle.oracle_unconstrained = Some(opt);
                }
                RunMode::Tune => {
                    let out =
                        phase.run("tune", || tune_gamma(&scenario, &sa, &cfg.game))?;
                    let p = BillingParams::new(scenario.cost.c, out.gamma_star);
                    audit(&mut bundle, &scenario, &p, &out.report);
                    bundle.gamma = Some(out.gamma_star);
                    bundle.equilibrium = Some(out.report.clone());
                    bundle.tuning = Some(out);
                }
                RunMode::Oracle { constrained } => {
                    let un = phase.run("oracle", || solve_unconstrained(&scenario, ORACLE_TOL))?;
                    bundle.oracle_unconstrained = Some(un);
                    if constrained {
                        let con = phase
                            .run("oracle_constrained", || solve_constrained(&scenario, ORACLE_TOL))?;
                        bundle.oracle_constrained = Some(con);
                    }
                }
                RunMode::GapStudy => {
                    let out =
                        phase.run("tune", || tune_gamma(&scenario, &sa, &cfg.game))?;
                    let p = BillingParams::new(scenario.cost.c, out.gamma_star);
                    audit(&mut bundle, &scenario, &p, &out.report);
                    bundle.gamma = Some(out.gamma_star);
                    bundle.equilibrium = Some(out.report.clone());
                    bundle.tuning = Some(out);
                    let con = phase
                        .run("oracle_constrained", || solve_constrained(&scenario, ORACLE_TOL))?;
                    bundle.gap = Some(welfare_gap(
                        bundle.equilibrium.as_ref().expect("just set"),
                        &con,
                    ));
                    bundle.oracle_constrained = Some(con);
                }
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            bundle.error = Some(e.to_string());
        }
    }

    timings.push(("total".into(), total_start.elapsed().as_secs_f64()));
    bundle.timings = timings;
    export_bundle(&bundle, &cfg.out_dir)?;
    Ok(bundle)
}

fn audit(
    bundle: &mut ResultBundle,
    s: &Scenario,
    p: &BillingParams,
    report: &EquilibriumReport,
) {
    bundle.budget_residual = Some(budget_balance_residual(&report.x_star, p));
    bundle.ir_min_utility = report
        .utilities
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, u| {
            Some(acc.map_or(u, |v| v.min(u)))
        });
    bundle.nash_certificate = Some(max_grid_improvement(
        &report.x_star,
        p,
        s,
        CERTIFICATE_POINTS,
    ));
}

pub fn summarize(bundle: &ResultBundle) -> Summary {
    let eq = bundle.equilibrium.as_ref();
    // The oracle a gap in this bundle was computed against, if any.
    let opt = bundle
        .oracle_constrained
        .as_ref()
        .or(bundle.oracle_unconstrained.as_ref());
    Summary {
        mode: bundle.mode.name().into(),
        n: bundle.scenario.n(),
        m: bundle.scenario.m(),
        seed: bundle.scenario.seed,
        c_ref: bundle.scenario.c_ref,
        gamma_star: bundle.gamma,
        welfare_eq: eq.map(|r| r.welfare),
        welfare_opt: opt.map(|o| o.welfare),
        gap: bundle.gap.map(|g| g.gap),
        cost: eq.map(|r| r.total_cost).or(opt.map(|o| o.cost)),
        budget_residual: bundle.budget_residual,
        ir_min_utility: bundle.ir_min_utility,
        nash_certificate: bundle.nash_certificate,
        eq_converged: eq.map(|r| r.converged),
        tune_feasible: bundle.tuning.as_ref().map(|t| t.feasible),
        oracle_feasible: opt.map(|o| o.feasible),
        error: bundle.error.clone(),
    }
}

/// Writes every artifact the bundle holds; partial bundles produce partial
/// sets. Returns the paths written.
pub fn export_bundle(bundle: &ResultBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut record = |p: PathBuf| written.push(p);

    let scenario_path = dir.join("scenario.json");
    io::write_scenario(&bundle.scenario, &scenario_path)?;
    record(scenario_path);

    if let Some(report) = &bundle.equilibrium {
        let eq_path = dir.join("equilibrium.csv");
        io::write_equilibrium_csv(report, &bundle.scenario, &eq_path)?;
        record(eq_path);
        let rounds_path = dir.join("trace_rounds.csv");
        io::write_rounds_csv(report, &rounds_path)?;
        record(rounds_path);
    }
    if let Some(outcome) = &bundle.tuning {
        let sa_path = dir.join("sa_trace.csv");
        io::write_sa_trace_csv(&outcome.trace, &sa_path)?;
        record(sa_path);
        let tune_path = dir.join("tuning.json");
        io::write_tuning_json(outcome, &tune_path)?;
        record(tune_path);
    }
    match (&bundle.oracle_constrained, &bundle.oracle_unconstrained) {
        (Some(con), un) => {
            let path = dir.join("oracle.json");
            io::write_oracle_json(con, &path)?;
            record(path);
            if let Some(un) = un {
                let path = dir.join("oracle_unconstrained.json");
                io::write_oracle_json(un, &path)?;
                record(path);
            }
        }
        (None, Some(un)) => {
            let path = dir.join("oracle.json");
            io::write_oracle_json(un, &path)?;
            record(path);
        }
        (None, None) => {}
    }

    let summary_path = dir.join("summary.json");
    io::write_pretty_json(&summarize(bundle), &summary_path)?;
    record(summary_path);

    let timings_path = dir.join("timings.json");
    let timings: Vec<serde_json::Value> = bundle
        .timings
        .iter()
        .map(|(name, secs)| serde_json::json!({ "phase": name, "seconds": secs }))
        .collect();
    io::write_pretty_json(&timings, &timings_path)?;
    record(timings_path);

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Appliance, CostModel, Horizon};
    use crate::valuation::ValuationSpec;

    fn config(source: ScenarioSource, mode: RunMode, dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            source,
            mode,
            game: GameConfig::default(),
            sa: SAParams {
                t0: -1.0, // auto
                max_steps: 60,
                window: 25,
                seed: 3,
                ..SAParams::default()
            },
            cref_override: None,
            out_dir: dir.to_path_buf(),
        }
    }

    fn single_user() -> Scenario {
        Scenario {
            horizon: Horizon { m: 1, s: 1.0 },
            appliances: vec![Appliance {
                id: "a0".into(),
                x_bar: 5.0,
                feasible_slots: vec![0],
                valuation: ValuationSpec::QuadraticCapped {
                    alpha: vec![10.0],
                    beta: vec![1.0],
                },
            }],
            cost: CostModel { c: 1.0 },
            c_ref: 50.0,
            seed: 0,
        }
    }

    #[test]
    fn simulate_single_user_has_zero_gap() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            ScenarioSource::Inline(single_user()),
            RunMode::Simulate { gamma: 0.0 },
            dir.path(),
        );
        let bundle = run_experiment(&cfg).unwrap();
        assert!(!bundle.failed());
        // One user internalizes the full marginal cost: NE == optimum.
        assert!(bundle.gap.unwrap().gap.abs() <= 1e-8);
        assert!(dir.path().join("equilibrium.csv").exists());
        assert!(dir.path().join("oracle.json").exists());
        assert!(dir.path().join("summary.json").exists());
    }

    #[test]
    fn tune_with_unreachable_budget_reports_infeasible() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = single_user();
        s.c_ref = 0.0;
        let cfg = config(ScenarioSource::Inline(s), RunMode::Tune, dir.path());
        let bundle = run_experiment(&cfg).unwrap();
        assert!(!bundle.failed(), "error: {:?}", bundle.error);
        assert_eq!(bundle.tuning.as_ref().map(|t| t.feasible), Some(false));
        let summary = summarize(&bundle);
        assert_eq!(summary.tune_feasible, Some(false));
    }

    #[test]
    fn gap_study_on_generated_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            ScenarioSource::Generate {
                n: 6,
                m: 8,
                seed: 11,
                knobs: GeneratorKnobs::default(),
            },
            RunMode::GapStudy,
            dir.path(),
        );
        let bundle = run_experiment(&cfg).unwrap();
        assert!(!bundle.failed(), "error: {:?}", bundle.error);
        let gap = bundle.gap.unwrap();
        assert!(!gap.degenerate);
        assert!(gap.gap >= -1e-8 && gap.gap <= 0.15, "gap {}", gap.gap);
        assert!(bundle.tuning.as_ref().unwrap().feasible);
        assert!(bundle.budget_residual.unwrap().abs() <= 1e-9);
        assert!(bundle.ir_min_utility.unwrap() >= -1e-7);
        assert!(bundle.nash_certificate.unwrap() <= 1e-6);
        for name in [
            "scenario.json",
            "equilibrium.csv",
            "trace_rounds.csv",
            "sa_trace.csv",
            "tuning.json",
            "oracle.json",
            "summary.json",
            "timings.json",
        ] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
    }

    #[test]
    fn summary_round_trips_and_gap_is_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            ScenarioSource::Generate {
                n: 4,
                m: 6,
                seed: 2,
                knobs: GeneratorKnobs::default(),
            },
            RunMode::GapStudy,
            dir.path(),
        );
        run_experiment(&cfg).unwrap();
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let summary: Summary = serde_json::from_str(&text).unwrap();
        let recomputed = 1.0 - summary.welfare_eq.unwrap() / summary.welfare_opt.unwrap();
        assert!((recomputed - summary.gap.unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn equilibrium_csv_bills_sum_to_cost() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            ScenarioSource::Generate {
                n: 5,
                m: 6,
                seed: 7,
                knobs: GeneratorKnobs::default(),
            },
            RunMode::Simulate { gamma: 0.4 },
            dir.path(),
        );
        let bundle = run_experiment(&cfg).unwrap();
        let text = std::fs::read_to_string(dir.path().join("equilibrium.csv")).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let total_col = header.iter().position(|h| *h == "bill_total").unwrap();
        let mut sum = 0.0;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            sum += fields[total_col].parse::<f64>().unwrap();
        }
        let cost = bundle.equilibrium.unwrap().total_cost;
        assert!((sum - cost).abs() <= 1e-9 * cost.max(1.0));
    }

    #[test]
    fn identical_config_gives_identical_summaries() {
        let run = |dir: &Path| {
            let cfg = config(
                ScenarioSource::Generate {
                    n: 5,
                    m: 6,
                    seed: 13,
                    knobs: GeneratorKnobs::default(),
                },
                RunMode::GapStudy,
                dir,
            );
            run_experiment(&cfg).unwrap();
            std::fs::read(dir.join("summary.json")).unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        assert_eq!(run(d1.path()), run(d2.path()));
    }

    #[test]
    fn cref_override_rescales_budget() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(
            ScenarioSource::Inline(single_user()),
            RunMode::Tune,
            dir.path(),
        );
        cfg.cref_override = Some(CrefOverride::FracOfBaseline(0.9));
        let bundle = run_experiment(&cfg).unwrap();
        // Baseline gamma=0 cost for the single user: x = 10/3, c = 1.
        let baseline = (10.0f64 / 3.0) * (10.0 / 3.0);
        assert!((bundle.scenario.c_ref - 0.9 * baseline).abs() <= 1e-6);
    }

    #[test]
    fn structural_violations_fail_the_bundle_but_write_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = single_user();
        s.appliances[0].x_bar = -1.0;
        let cfg = config(ScenarioSource::Inline(s), RunMode::Tune, dir.path());
        let bundle = run_experiment(&cfg).unwrap();
        assert!(bundle.failed());
        assert!(dir.path().join("summary.json").exists());
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let summary: Summary = serde_json::from_str(&text).unwrap();
        assert!(summary.error.unwrap().contains("x_bar"));
    }
}
