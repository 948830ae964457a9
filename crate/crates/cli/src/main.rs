use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phjb_cli::{emit_report, run_scenario, CheckKind, Decimal, Format, Overrides};

#[derive(Parser)]
#[command(name = "phjb", version, about = "Path-dependent HJB verification runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check the scenario declares.
    Run(Common),
    /// Value and optimal controls at the initial path.
    Value(Common),
    /// Functional Itô residual and its convergence order.
    CheckIto(Common),
    /// Viscosity sub- and supersolution inequalities at touching points.
    CheckViscosity(Common),
    /// Pointwise classical residual of the computed value.
    CheckClassical(Common),
    /// Value gaps under perturbed data.
    Stability(Common),
    /// Perturbed maximization over an exhaustive net.
    BpSearch(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    config: PathBuf,
    /// Override the grid step, as a decimal string.
    #[arg(long)]
    grid: Option<String>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Report destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, only) = match cli.command {
        Command::Run(c) => (c, None),
        Command::Value(c) => (c, Some(CheckKind::Value)),
        Command::CheckIto(c) => (c, Some(CheckKind::Ito)),
        Command::CheckViscosity(c) => (c, Some(CheckKind::Viscosity)),
        Command::CheckClassical(c) => (c, Some(CheckKind::Classical)),
        Command::Stability(c) => (c, Some(CheckKind::Stability)),
        Command::BpSearch(c) => (c, Some(CheckKind::BpSearch)),
    };
    let step = match common.grid.as_deref().map(str::parse::<Decimal>).transpose() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: --grid: {e}");
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides { step, seed: common.seed, only };
    let format = match common.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
    };
    let report = match run_scenario(&common.config, &overrides) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    if let Err(e) = emit_report(&report, format, common.out.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code());
    }
    for r in report.records.iter().filter(|r| !r.passed) {
        eprintln!("check {} ({}) failed{}", r.index, r.check, r.message.as_deref().map(|m| format!(": {m}")).unwrap_or_default());
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
