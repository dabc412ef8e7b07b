//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers (visible under `--nocapture`).
//!
//! Criteria 4-6 share one batch of solved equilibria and criteria 8-9 share
//! one batch of tuned scenarios; both batches are computed once and reused.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use flexbill::billing::{
    bill_all, bill_hessian_check, budget_balance_residual, total_cost, BillingParams,
};
use flexbill::experiment::ORACLE_TOL;
use flexbill::game::{
    find_equilibrium, find_equilibrium_from, max_grid_improvement,
    potential_gradient_identity_check, unique_equilibrium_gamma_bound, zero_deviation_bill,
    EquilibriumReport, GameConfig,
};
use flexbill::generator::{generate_scenario, GeneratorKnobs};
use flexbill::model::{AllocationMatrix, Appliance, CostModel, Horizon, Scenario};
use flexbill::oracle::{
    kkt_report, solve_constrained, solve_unconstrained, OracleSolution, FEASIBLE_COST_SLACK,
};
use flexbill::tuning::{gamma_cost_curve, tune_gamma, CurvePoint, SAParams, FEASIBLE_SLACK};
use flexbill::valuation::ValuationSpec;

fn random_matrix(rng: &mut StdRng, n: usize, m: usize, hi: f64) -> AllocationMatrix {
    let rows = (0..n)
        .map(|_| (0..m).map(|_| rng.gen_range(0.0..hi)).collect())
        .collect();
    AllocationMatrix::from_rows(rows).unwrap()
}

fn log_scenario(rng: &mut StdRng, n: usize, m: usize) -> Scenario {
    let appliances = (0..n)
        .map(|i| Appliance {
            id: format!("a{i}"),
            x_bar: rng.gen_range(0.5..3.0),
            feasible_slots: (0..m).collect(),
            valuation: ValuationSpec::Logarithmic {
                alpha: (0..m).map(|_| rng.gen_range(2.0..12.0)).collect(),
            },
        })
        .collect();
    Scenario {
        horizon: Horizon { m, s: 1.0 },
        appliances,
        cost: CostModel { c: 1.0 / n as f64 },
        c_ref: 1.0,
        seed: 0,
    }
}

/// Interior allocation: strictly inside the box and strictly below any
/// valuation kink.
fn interior_allocation(rng: &mut StdRng, s: &Scenario) -> AllocationMatrix {
    let mut x = AllocationMatrix::zeros(s.n(), s.m());
    for (i, a) in s.appliances.iter().enumerate() {
        for &t in &a.feasible_slots {
            let cap = a.x_bar.min(0.9 * a.valuation.satiation(t));
            x.set(i, t, rng.gen_range(0.1..0.9) * cap.max(1e-3));
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Criterion 1: budget balance
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_budget_balance() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let triples = 1000;
    for _ in 0..triples {
        let n = rng.gen_range(1..=50);
        let m = rng.gen_range(1..=24);
        let x = random_matrix(&mut rng, n, m, 3.0);
        let p = BillingParams::new(rng.gen_range(0.01..2.0), rng.gen_range(0.0..10.0));
        let cost = total_cost(&x, &p.cost);
        let residual = budget_balance_residual(&x, &p).abs() / cost.max(1.0);
        worst = worst.max(residual);
        assert!(
            residual <= 1e-9,
            "budget residual {residual:.3e} at n={n} m={m}"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed:.1}s, budget is 10s");
    println!(
        "criterion 1 (budget balance): PASS — {triples} triples, worst relative residual {worst:.3e}, {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: bill convexity
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_bill_hessian_is_diag_2c() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=10);
        let m = rng.gen_range(1..=8);
        let x = random_matrix(&mut rng, n, m, 3.0);
        let p = BillingParams::new(rng.gen_range(0.05..2.0), rng.gen_range(0.0..10.0));
        let i = rng.gen_range(0..n);
        let dev = bill_hessian_check(i, &x, &p);
        worst = worst.max(dev);
        assert!(dev <= 1e-4, "hessian deviation {dev:.3e}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed:.1}s, budget is 5s");
    println!(
        "criterion 2 (bill hessian = diag(2c)): PASS — 100 states, worst deviation {worst:.3e}, {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: exact potential
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_exact_potential_identity() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut states = 0;
    for &n in &[2usize, 3, 5, 10] {
        for rep in 0..25 {
            let s = if rep % 2 == 0 {
                generate_scenario(n, 6, 30_000 + rep as u64 + n as u64, &GeneratorKnobs::default())
                    .unwrap()
            } else {
                log_scenario(&mut rng, n, 6)
            };
            let x = interior_allocation(&mut rng, &s);
            let p = BillingParams::new(s.cost.c, rng.gen_range(0.0..2.0));
            let dev = potential_gradient_identity_check(&x, &p, &s);
            worst = worst.max(dev);
            states += 1;
            assert!(dev <= 1e-5, "potential identity deviation {dev:.3e} at n={n}");
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed:.1}s, budget is 10s");
    println!(
        "criterion 3 (exact potential): PASS — {states} interior states, worst relative deviation {worst:.3e}, {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// Criteria 4-6 share one batch of equilibria
// ---------------------------------------------------------------------------

struct EqCase {
    scenario: Scenario,
    params: BillingParams,
    report: EquilibriumReport,
    restart_distance: f64,
    elapsed: f64,
}

fn equilibrium_batch() -> &'static Vec<EqCase> {
    static BATCH: OnceLock<Vec<EqCase>> = OnceLock::new();
    BATCH.get_or_init(|| {
        let mut rng = StdRng::seed_from_u64(404);
        let cfg = GameConfig {
            br_tolerance: 1e-9,
            ..GameConfig::default()
        };
        (0..50)
            .map(|k| {
                let n = rng.gen_range(2..=20);
                let m = rng.gen_range(2..=24);
                let scenario =
                    generate_scenario(n, m, 40_000 + k, &GeneratorKnobs::default()).unwrap();
                // Stay inside the strict-concavity region so the equilibrium
                // is provably unique and restarts must agree.
                let bound = unique_equilibrium_gamma_bound(&scenario).min(5.0);
                let params =
                    BillingParams::new(scenario.cost.c, rng.gen_range(0.0..0.8) * bound);
                let start = Instant::now();
                let report = find_equilibrium(&scenario, &params, &cfg).unwrap();
                let from_zero = find_equilibrium_from(
                    &scenario,
                    &params,
                    &cfg,
                    AllocationMatrix::zeros(n, m),
                )
                .unwrap();
                let elapsed = start.elapsed().as_secs_f64();
                assert!(from_zero.converged);
                EqCase {
                    restart_distance: report.x_star.max_abs_diff(&from_zero.x_star),
                    scenario,
                    params,
                    report,
                    elapsed,
                }
            })
            .collect()
    })
}

#[test]
fn criterion_04_convergence_and_uniqueness() {
    let batch = equilibrium_batch();
    let mut worst_restart: f64 = 0.0;
    let mut worst_elapsed: f64 = 0.0;
    for (k, case) in batch.iter().enumerate() {
        assert!(case.report.converged, "scenario {k} did not converge");
        for w in case.report.potential_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                "potential decreased in scenario {k}: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(
            case.restart_distance <= 1e-6,
            "restarts differ by {:.3e} in scenario {k}",
            case.restart_distance
        );
        assert!(
            case.elapsed < 2.0,
            "scenario {k} took {:.2}s, budget is 2s",
            case.elapsed
        );
        worst_restart = worst_restart.max(case.restart_distance);
        worst_elapsed = worst_elapsed.max(case.elapsed);
    }
    println!(
        "criterion 4 (convergence + uniqueness): PASS — 50 scenarios, worst restart distance {worst_restart:.3e}, slowest {worst_elapsed:.2}s"
    );
}

#[test]
fn criterion_05_individual_rationality() {
    let batch = equilibrium_batch();
    let mut worst_utility = f64::INFINITY;
    for (k, case) in batch.iter().enumerate() {
        assert!(
            case.report.ir_violations.is_empty(),
            "IR violations {:?} in scenario {k}",
            case.report.ir_violations
        );
        let scale = case
            .report
            .utilities
            .iter()
            .fold(1.0f64, |acc, u| acc.max(u.abs()));
        for (i, &u) in case.report.utilities.iter().enumerate() {
            assert!(u >= -1e-7 * scale, "user {i} utility {u} in scenario {k}");
            worst_utility = worst_utility.min(u / scale);
            let zd = zero_deviation_bill(i, &case.report.x_star, &case.params);
            assert!(zd <= 1e-12, "zero-deviation bill {zd} positive for user {i}");
        }
    }
    println!(
        "criterion 5 (individual rationality): PASS — min scaled utility {worst_utility:.3e}, all zero-deviation bills nonpositive"
    );
}

#[test]
fn criterion_06_nash_certificate() {
    let batch = equilibrium_batch();
    let mut worst: f64 = 0.0;
    for (k, case) in batch.iter().enumerate() {
        let improvement =
            max_grid_improvement(&case.report.x_star, &case.params, &case.scenario, 200);
        worst = worst.max(improvement);
        assert!(
            improvement <= 1e-6,
            "grid deviation improves utility by {improvement:.3e} in scenario {k}"
        );
    }
    println!(
        "criterion 6 (Nash certificate): PASS — 50 equilibria x 200-point grids, best improvement found {worst:.3e}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: oracle correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_oracle_correctness() {
    let start = Instant::now();

    // Closed form, one user: x* = alpha/(beta + 2c).
    let single = Scenario {
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
        c_ref: 1e6,
        seed: 0,
    };
    let sol = solve_unconstrained(&single, 1e-9).unwrap();
    let x_expected = 10.0 / 3.0;
    assert!((sol.x_opt.get(0, 0) - x_expected).abs() / x_expected <= 1e-6);
    assert!((sol.welfare - 50.0 / 3.0).abs() / (50.0 / 3.0) <= 1e-6);

    // Closed form, symmetric pair with the budget halved from 16 to 8:
    // x = sqrt(c_ref / 4c), lambda from the rescaled stationarity.
    let pair = Scenario {
        horizon: Horizon { m: 1, s: 1.0 },
        appliances: (0..2)
            .map(|i| Appliance {
                id: format!("a{i}"),
                x_bar: 5.0,
                feasible_slots: vec![0],
                valuation: ValuationSpec::QuadraticCapped {
                    alpha: vec![10.0],
                    beta: vec![1.0],
                },
            })
            .collect(),
        cost: CostModel { c: 1.0 },
        c_ref: 8.0,
        seed: 0,
    };
    let sol = solve_constrained(&pair, 1e-9).unwrap();
    let x_c = (8.0f64 / 4.0).sqrt();
    let lambda_c = (10.0 - x_c) / (4.0 * x_c) - 1.0;
    let welfare_c = 2.0 * (10.0 * x_c - 0.5 * x_c * x_c) - 8.0;
    assert!((sol.x_opt.get(0, 0) - x_c).abs() / x_c <= 1e-6);
    assert!((sol.lambda - lambda_c).abs() / lambda_c <= 1e-6);
    assert!((sol.welfare - welfare_c).abs() / welfare_c <= 1e-6);

    // KKT residuals on binding random instances.
    let mut rng = StdRng::seed_from_u64(707);
    let mut worst_stat: f64 = 0.0;
    let mut worst_slack: f64 = 0.0;
    for k in 0..20 {
        let n = rng.gen_range(2..=12);
        let m = rng.gen_range(2..=12);
        let mut s = generate_scenario(n, m, 70_000 + k, &GeneratorKnobs::default()).unwrap();
        let un = solve_unconstrained(&s, ORACLE_TOL).unwrap();
        s.c_ref = 0.6 * un.cost;
        let sol = solve_constrained(&s, ORACLE_TOL).unwrap();
        let kkt = kkt_report(&s, &sol);
        assert!(kkt.stationarity <= 1e-6, "stationarity {:.3e}", kkt.stationarity);
        assert!(sol.cost <= s.c_ref * (1.0 + FEASIBLE_COST_SLACK));
        assert!(
            kkt.complementary_slackness <= 1e-4 * s.c_ref,
            "slackness {:.3e} vs c_ref {}",
            kkt.complementary_slackness,
            s.c_ref
        );
        worst_stat = worst_stat.max(kkt.stationarity);
        worst_slack = worst_slack.max(kkt.complementary_slackness / s.c_ref);
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed:.1}s, budget is 30s");
    println!(
        "criterion 7 (oracle correctness): PASS — closed forms to 1e-6, worst KKT stationarity {worst_stat:.3e}, worst relative slackness {worst_slack:.3e}, {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// Criteria 8-9 share one batch of tuned scenarios
// ---------------------------------------------------------------------------

struct GapCase {
    seed: u64,
    scenario: Scenario,
    tuned_gamma: f64,
    tuned_cost: f64,
    tuned_welfare: f64,
    tuned_feasible: bool,
    grid: Vec<CurvePoint>,
    oracle: OracleSolution,
}

struct GapStudy {
    cases: Vec<GapCase>,
    elapsed: f64,
}

fn gap_study() -> &'static GapStudy {
    static STUDY: OnceLock<GapStudy> = OnceLock::new();
    STUDY.get_or_init(|| {
        let sizes = [
            (8usize, 12usize),
            (12, 24),
            (16, 18),
            (20, 24),
            (10, 16),
            (14, 20),
            (18, 24),
            (20, 12),
            (12, 18),
            (16, 24),
        ];
        let start = Instant::now();
        let cfg = GameConfig::default();
        let cases = sizes
            .iter()
            .enumerate()
            .map(|(seed, &(n, m))| {
                let scenario =
                    generate_scenario(n, m, seed as u64, &GeneratorKnobs::default()).unwrap();
                let sa = SAParams {
                    t0: (0.3 * scenario.c_ref) * (0.3 * scenario.c_ref),
                    window: 25,
                    max_steps: 400,
                    seed: seed as u64,
                    ..SAParams::default()
                };
                let tuned = tune_gamma(&scenario, &sa, &cfg).unwrap();
                // Brute-force oracle over gamma: a grid up to the
                // strict-concavity bound, each point solved to equilibrium.
                let hi = unique_equilibrium_gamma_bound(&scenario).min(5.0);
                let gammas: Vec<f64> = (0..200).map(|k| hi * k as f64 / 199.0).collect();
                let grid = gamma_cost_curve(&scenario, &gammas, &cfg).unwrap();
                let oracle = solve_constrained(&scenario, ORACLE_TOL).unwrap();
                GapCase {
                    seed: seed as u64,
                    tuned_gamma: tuned.gamma_star,
                    tuned_cost: tuned.report.total_cost,
                    tuned_welfare: tuned.report.welfare,
                    tuned_feasible: tuned.feasible,
                    scenario,
                    grid,
                    oracle,
                }
            })
            .collect();
        GapStudy {
            cases,
            elapsed: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_08_constraint_satisfaction() {
    let study = gap_study();
    let mut worst_ratio = f64::INFINITY;
    for case in &study.cases {
        assert!(case.tuned_feasible, "seed {}: no feasible gamma found", case.seed);
        let cap = case.scenario.c_ref * (1.0 + 1e-3);
        assert!(
            case.tuned_cost <= cap,
            "seed {}: cost {} above cap {cap}",
            case.seed,
            case.tuned_cost
        );
        let feasible_cost = case.scenario.c_ref * (1.0 + FEASIBLE_SLACK);
        let best_grid = case
            .grid
            .iter()
            .filter(|pt| pt.cost <= feasible_cost)
            .map(|pt| pt.welfare)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best_grid.is_finite(), "seed {}: grid has no feasible point", case.seed);
        let ratio = case.tuned_welfare / best_grid;
        worst_ratio = worst_ratio.min(ratio);
        assert!(
            case.tuned_welfare >= best_grid - 0.01 * best_grid.abs(),
            "seed {}: tuned welfare {} vs grid best {best_grid}",
            case.seed,
            case.tuned_welfare
        );
    }
    assert!(
        study.elapsed < 300.0,
        "study took {:.1}s, budget is 300s",
        study.elapsed
    );
    println!(
        "criterion 8 (constraint satisfaction): PASS — 10 scenarios tuned, worst welfare ratio vs 200-point grid sweep {worst_ratio:.5}, study total {:.1}s",
        study.elapsed
    );
}

#[test]
fn criterion_09_welfare_gap_bounds() {
    let study = gap_study();
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("gamma_gap_curves");
    std::fs::create_dir_all(&out_dir).unwrap();

    let mut ratios = Vec::new();
    for case in &study.cases {
        let ratio = case.tuned_welfare / case.oracle.welfare;
        ratios.push(ratio);
        assert!(
            ratio >= 0.85,
            "seed {}: equilibrium reaches only {:.1}% of the constrained optimum",
            case.seed,
            100.0 * ratio
        );

        // Export the full (gamma, cost, welfare, gap) curve for inspection.
        let path = out_dir.join(format!("gamma_gap_curve_seed{}.csv", case.seed));
        let mut text = String::from("gamma,cost,welfare,gap\n");
        for pt in &case.grid {
            let gap = 1.0 - pt.welfare / case.oracle.welfare;
            text.push_str(&format!("{},{},{},{}\n", pt.gamma, pt.cost, pt.welfare, gap));
        }
        std::fs::write(&path, text).unwrap();
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = 0.5 * (sorted[4] + sorted[5]);
    assert!(median >= 0.95, "median ratio {median:.4} below 0.95");

    println!(
        "criterion 9 (welfare gap): PASS — ratios min {:.4} median {median:.4} max {:.4}; curves in {}",
        sorted[0],
        sorted[9],
        out_dir.display()
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: determinism of the CLI gap-study
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_gap_study_determinism() {
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("determinism");
    let run = |label: &str| -> Vec<u8> {
        let dir = tmp.join(label);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_flexbill"))
            .args([
                "gap-study",
                "--generate",
                "--n",
                "6",
                "--m",
                "8",
                "--seed",
                "5",
                "--sa-steps",
                "120",
                "--out",
            ])
            .arg(&dir)
            .output()
            .expect("binary runs");
        assert!(
            status.status.success(),
            "gap-study failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        std::fs::read(dir.join("summary.json")).unwrap()
    };
    let first = run("run1");
    let second = run("run2");
    assert_eq!(first, second, "summaries differ between identical runs");
    println!(
        "criterion 10 (determinism): PASS — byte-identical summary.json over two CLI runs ({} bytes)",
        first.len()
    );
}
