//! `mest`: fits, diagnostics, condition checks, bound evaluation and
//! Monte Carlo sweeps for convex-loss linear-model M-estimation.
//!
//! Exit status: 0 ok, 1 input error, 2 not converged, 3 condition failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

#[derive(Parser)]
#[command(name = "mest", version, about = "Convex-loss M-estimation and consistency diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Replaces the `seed` field of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true, env = "MEST_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an M-estimate to a CSV whose last column is the response.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Loss as inline JSON, a JSON file, or one of `lad`, `ls`.
        #[arg(long)]
        loss: String,
        /// Prepend a column of ones.
        #[arg(long)]
        intercept: bool,
    },
    /// Leverage decay and eigenvalue growth of a design family or CSV design.
    CheckDesign {
        /// Design matrix CSV (all columns); prefixes give the size grid.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        intercept: bool,
    },
    /// Increment and identification constants for a loss and error law.
    CheckConditions,
    /// Evaluate or verify a Bennett bound, or the weighted strong law.
    Bound,
    /// `D_n` along sampled unit directions with its curvature/score split.
    DnTrace,
    /// Monte Carlo consistency sweep.
    Simulate {
        /// Summary JSON path; defaults to `<out>.summary.json`.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// The same sweep under decaying and adversarial leverage designs.
    Contrast,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Fit { data, loss, intercept } => commands::fit(&cli.common, &data, &loss, intercept),
        Command::CheckDesign { data, intercept } => commands::check_design(&cli.common, data.as_deref(), intercept),
        Command::CheckConditions => commands::check_conditions(&cli.common),
        Command::Bound => commands::bound(&cli.common),
        Command::DnTrace => commands::dn_trace(&cli.common),
        Command::Simulate { summary } => commands::simulate(&cli.common, summary.as_deref()),
        Command::Contrast => commands::contrast(&cli.common),
    };
    match result {
        Ok(status) => {
            if let Some(msg) = status.message() {
                eprintln!("{msg}");
            }
            ExitCode::from(status.code())
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
