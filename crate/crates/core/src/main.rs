use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use mss_core::commands::{execute, exit_code, Command, CommonArgs};
use mss_core::pipeline::Scheme;

/// Multi-stage sampling for hierarchical models with funnel geometry.
#[derive(Parser)]
#[command(name = "mss", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a PTA dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Sample the original model directly with one scheme.
    Sample {
        #[command(flatten)]
        common: Common,
        /// ns, prs or cprs; defaults to the model's preferred scheme.
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Run the full multi-stage pipeline.
    Mss {
        #[command(flatten)]
        common: Common,
    },
    /// Train a flow on a marginal-sample CSV.
    FlowTrain {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/marginal.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Diagnostics and oracle comparison of existing draws.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Sample CSV or run directory; defaults to `--out`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Overlay histograms of several sample files with the oracle.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Sample CSV or run directory; repeatable.
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Regenerate the figure tables stored in this report.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cmd, common) = match cli.command {
        Cmd::Simulate { common } => (Command::Simulate, common),
        Cmd::Sample { common, scheme } => (Command::Sample { scheme }, common),
        Cmd::Mss { common } => (Command::Mss, common),
        Cmd::FlowTrain { common, input } => (Command::FlowTrain { input }, common),
        Cmd::Diagnose { common, input } => (Command::Diagnose { input }, common),
        Cmd::Compare { common, input, report } => (Command::Compare { inputs: input, report }, common),
    };
    let args = CommonArgs {
        config: common.config,
        seed: common.seed,
        out: common.out,
    };
    let outcome = execute(&cmd, &args);
    match &outcome {
        Ok(r) => {
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            for g in r.failed_gates() {
                eprintln!("gate failed: {g}");
            }
            println!("{}: {:?}, report at {}", cmd.name(), r.status, args.out.join("report.json").display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&outcome) as u8)
}
