use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evogame::scenario::{self, Overrides, ScenarioError};
use evogame::{ComparisonRule, Method};

#[derive(Parser)]
#[command(name = "evogame", version, about = "Evolutionary game dynamics with environmental feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and write trajectories, reports and a summary.
    Run {
        /// Builtin name or path to a TOML scenario file.
        scenario: String,
        /// Output directory.
        #[arg(long, env = "EVOGAME_OUT_DIR")]
        out: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Phase-grid resolution per axis.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, value_enum)]
        rule: Option<RuleArg>,
    },
    /// List the builtin scenarios.
    ListBuiltins {
        /// Print each builtin as a TOML scenario file.
        #[arg(long)]
        show: bool,
    },
    /// Fixed-point catalog, numerical search and stability, printed as JSON.
    Analyze {
        scenario: String,
        #[arg(long, value_enum)]
        rule: Option<RuleArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rk4,
    Rk45,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Fitness,
    Entrywise,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::Rk45 => Method::Rk45,
        }
    }
}

impl From<RuleArg> for ComparisonRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Fitness => ComparisonRule::FitnessDifference,
            RuleArg::Entrywise => ComparisonRule::EntrywiseExpectation,
        }
    }
}

fn exit_code(e: &ScenarioError) -> u8 {
    match e.category() {
        "config" => 2,
        "io" => 3,
        "integration" => 4,
        _ => 5,
    }
}

fn execute(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Run { scenario, out, method, t_end, grid, rule } => {
            let mut s = scenario::load_scenario(&scenario)?;
            Overrides { method: method.map(Into::into), t_end, grid, rule: rule.map(Into::into) }.apply(&mut s)?;
            let summary = scenario::run(&s, &out)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}: {} trajectories written to {}", summary.scenario, summary.runs.len(), out.display());
        }
        Command::ListBuiltins { show } => {
            for name in scenario::BUILTINS {
                if show {
                    let s = scenario::builtin(name).expect("listed builtins exist");
                    println!("# {name}\n{}", s.to_toml());
                } else {
                    println!("{name}");
                }
            }
        }
        Command::Analyze { scenario, rule } => {
            let mut s = scenario::load_scenario(&scenario)?;
            Overrides { rule: rule.map(Into::into), ..Overrides::default() }.apply(&mut s)?;
            let sections =
                s.protocols.iter().map(|&p| scenario::analyze(&s, p)).collect::<Result<Vec<_>, _>>()?;
            println!("{}", serde_json::to_string_pretty(&sections).expect("reports serialize"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
