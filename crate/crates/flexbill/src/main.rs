//! Thin command-line front end over [`flexbill::experiment`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flexbill::experiment::{
    run_experiment, CrefOverride, ExperimentConfig, RunMode, ScenarioSource,
};
use flexbill::generator::{generate_scenario, GeneratorKnobs};
use flexbill::tuning::{ObjectiveMode, SAParams};
use flexbill::GameConfig;

#[derive(Parser)]
#[command(
    name = "flexbill",
    about = "Flexibility-aware billing: equilibria, gamma tuning and welfare audits",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario file.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Budget as a fraction of the gamma = 0 equilibrium cost.
        #[arg(long, default_value_t = 0.8)]
        cref_frac: f64,
        /// Output scenario path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the equilibrium at a fixed gamma and audit it.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        /// Best-response convergence tolerance, kWh.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_rounds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Anneal gamma until the equilibrium cost meets the budget.
    Tune {
        #[arg(long)]
        scenario: PathBuf,
        /// Budget override in $.
        #[arg(long, conflicts_with = "cref_frac")]
        cref: Option<f64>,
        /// Budget as a fraction of the gamma = 0 equilibrium cost.
        #[arg(long)]
        cref_frac: Option<f64>,
        /// Annealing RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sa: SaArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the central welfare optimum.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        /// Also enforce the budget constraint.
        #[arg(long)]
        constrained: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune gamma, then measure the welfare gap against the constrained
    /// optimum.
    GapStudy {
        #[arg(long, conflicts_with = "generate", required_unless_present = "generate")]
        scenario: Option<PathBuf>,
        /// Generate the scenario instead of reading one (--n/--m/--seed).
        #[arg(long)]
        generate: bool,
        #[arg(long, requires = "generate")]
        n: Option<usize>,
        #[arg(long, requires = "generate")]
        m: Option<usize>,
        /// Generation and annealing seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Budget override in $.
        #[arg(long, conflicts_with = "cref_frac")]
        cref: Option<f64>,
        /// Budget as a fraction of the gamma = 0 equilibrium cost
        /// (generation default 0.8).
        #[arg(long)]
        cref_frac: Option<f64>,
        #[command(flatten)]
        sa: SaArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SaArgs {
    /// Initial temperature; defaults to (0.3 * max(1, c_ref))^2.
    #[arg(long)]
    sa_t0: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    sa_cooling: f64,
    #[arg(long, default_value_t = 500)]
    sa_window: usize,
    /// Termination threshold on the trailing-window mean |delta|.
    #[arg(long, default_value_t = 0.0)]
    sa_eps: f64,
    #[arg(long, default_value = "two_sided", value_parser = parse_mode)]
    sa_mode: ObjectiveMode,
    #[arg(long, default_value_t = 400)]
    sa_steps: usize,
    #[arg(long, default_value_t = 0.5)]
    sa_step_scale: f64,
}

fn parse_mode(s: &str) -> Result<ObjectiveMode, String> {
    match s {
        "two_sided" => Ok(ObjectiveMode::TwoSided),
        "one_sided" => Ok(ObjectiveMode::OneSided),
        other => Err(format!("unknown mode {other:?}; use two_sided or one_sided")),
    }
}

impl SaArgs {
    fn params(&self, seed: u64) -> SAParams {
        SAParams {
            t0: self.sa_t0.unwrap_or(-1.0), // <= 0 requests auto scaling
            cooling: self.sa_cooling,
            window: self.sa_window,
            epsilon: self.sa_eps,
            objective_mode: self.sa_mode,
            max_steps: self.sa_steps,
            step_scale: self.sa_step_scale,
            seed,
            ..SAParams::default()
        }
    }
}

fn cref_override(cref: Option<f64>, cref_frac: Option<f64>) -> Option<CrefOverride> {
    match (cref, cref_frac) {
        (Some(v), _) => Some(CrefOverride::Absolute(v)),
        (None, Some(f)) => Some(CrefOverride::FracOfBaseline(f)),
        (None, None) => None,
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Generate {
            n,
            m,
            seed,
            cref_frac,
            out,
        } => {
            let knobs = GeneratorKnobs {
                cref_frac,
                ..GeneratorKnobs::default()
            };
            let scenario = generate_scenario(n, m, seed, &knobs).map_err(|e| e.to_string())?;
            flexbill::io::write_scenario(&scenario, &out).map_err(|e| e.to_string())?;
            println!(
                "wrote scenario with n={n} m={m} c_ref={:.4} to {}",
                scenario.c_ref,
                out.display()
            );
            Ok(())
        }
        Command::Simulate {
            scenario,
            gamma,
            tol,
            max_rounds,
            out,
        } => execute(ExperimentConfig {
            source: ScenarioSource::File(scenario),
            mode: RunMode::Simulate { gamma },
            game: GameConfig {
                br_tolerance: tol,
                max_rounds,
                ..GameConfig::default()
            },
            sa: SAParams::default(),
            cref_override: None,
            out_dir: out,
        }),
        Command::Tune {
            scenario,
            cref,
            cref_frac,
            seed,
            sa,
            out,
        } => execute(ExperimentConfig {
            source: ScenarioSource::File(scenario),
            mode: RunMode::Tune,
            game: GameConfig::default(),
            cref_override: cref_override(cref, cref_frac),
            sa: sa.params(seed),
            out_dir: out,
        }),
        Command::Oracle {
            scenario,
            constrained,
            out,
        } => execute(ExperimentConfig {
            source: ScenarioSource::File(scenario),
            mode: RunMode::Oracle { constrained },
            game: GameConfig::default(),
            sa: SAParams::default(),
            cref_override: None,
            out_dir: out,
        }),
        Command::GapStudy {
            scenario,
            generate,
            n,
            m,
            seed,
            cref,
            cref_frac,
            sa,
            out,
        } => {
            let (source, over) = if generate {
                let (n, m) = match (n, m) {
                    (Some(n), Some(m)) => (n, m),
                    _ => return Err("--generate requires --n and --m".into()),
                };
                let source = ScenarioSource::Generate {
                    n,
                    m,
                    seed,
                    knobs: GeneratorKnobs {
                        cref_frac: cref_frac.unwrap_or(0.8),
                        ..GeneratorKnobs::default()
                    },
                };
                // The fraction already flowed into generation; only an
                // absolute budget still overrides.
                (source, cref.map(CrefOverride::Absolute))
            } else {
                (
                    ScenarioSource::File(scenario.expect("clap enforces presence")),
                    cref_override(cref, cref_frac),
                )
            };
            execute(ExperimentConfig {
                source,
                mode: RunMode::GapStudy,
                game: GameConfig::default(),
                cref_override: over,
                sa: sa.params(seed),
                out_dir: out,
            })
        }
    }
}

fn execute(cfg: ExperimentConfig) -> Result<(), String> {
    let out_dir = cfg.out_dir.clone();
    let bundle = run_experiment(&cfg).map_err(|e| e.to_string())?;
    if let Some(err) = &bundle.error {
        return Err(err.clone());
    }
    let summary = flexbill::experiment::summarize(&bundle);
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            let err = serde_json::json!({ "error": message });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
