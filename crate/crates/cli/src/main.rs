//! `privkd`: config-driven private knowledge transfer.
//!
//! Exit codes: 0 on success, 2 for configuration and usage problems,
//! 1 for runtime failures (I/O, numerics).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use privkd_core::Error;

mod artifacts;
mod commands;
mod config;

#[derive(Parser)]
#[command(name = "privkd", version, about = "Private knowledge transfer runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Override one config key, e.g. --set transfer.alpha=0.5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct AccountArgs {
    /// Subsampling rate per step
    #[arg(long)]
    q: f64,
    /// Noise multiplier sigma / clip
    #[arg(long)]
    m: f64,
    /// Number of composed steps
    #[arg(long)]
    steps: u64,
    /// Failure probability for the conversion
    #[arg(long)]
    delta: f64,
    /// Comma-separated integer orders (default: 2 through 128)
    #[arg(long)]
    orders: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: ConfigArgs,
    /// Run sweep cells on one thread per cell
    #[arg(long)]
    parallel: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the teacher on the private split and write its checkpoint
    Pretrain(ConfigArgs),
    /// Transfer into a student against a pretrained teacher, with accounting
    Distill(ConfigArgs),
    /// Pure accounting calculator: per-order table and converted spend
    Account(AccountArgs),
    /// Grid over one axis, several seeds per cell, aggregated to CSV
    Sweep(SweepArgs),
    /// Print the config key reference
    Keys,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Pretrain(a) => commands::cmd_pretrain(&a.config, &a.set),
        Command::Distill(a) => commands::cmd_distill(&a.config, &a.set),
        Command::Account(a) => commands::cmd_account(a.q, a.m, a.steps, a.delta, a.orders.as_deref()),
        Command::Sweep(a) => commands::cmd_sweep(&a.run.config, &a.run.set, a.parallel),
        Command::Keys => {
            print!("{}", config::key_reference());
            Ok(())
        }
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) | Error::Format(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
