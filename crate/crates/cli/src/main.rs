use clap::{Parser, Subcommand};
use doa_kit::{exit_code, Ctx};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "doa-kit",
    about = "Certified domain-of-attraction estimation and controller synthesis for discrete-time nonlinear plants"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the paving resolution
    #[arg(long)]
    eps: Option<f64>,
    /// Override the swarm and simulation seeds
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the configuration and report the linearization
    Check(Common),
    /// Compute the negative-definite set
    Nset(Common),
    /// Compute the negative-definite and invariant set
    Niset(Common),
    /// Full pipeline: estimate the closed-loop domain of attraction
    Doa(Common),
    /// Build the certified lookup-table controller
    Controller(Common),
    /// Simulate seeded closed-loop trajectories and verify them
    Simulate(Common),
    /// Maximize the estimate's volume over the Lyapunov family
    Optimize(Common),
    /// Largest certified sublevel set inside the estimate
    Baseline(Common),
}

fn run() -> doa_core::Result<bool> {
    let cli = Cli::parse();
    let (common, cmd): (&Common, &str) = match &cli.command {
        Command::Check(c) => (c, "check"),
        Command::Nset(c) => (c, "nset"),
        Command::Niset(c) => (c, "niset"),
        Command::Doa(c) => (c, "doa"),
        Command::Controller(c) => (c, "controller"),
        Command::Simulate(c) => (c, "simulate"),
        Command::Optimize(c) => (c, "optimize"),
        Command::Baseline(c) => (c, "baseline"),
    };
    let ctx = Ctx::new(&common.config, common.out.clone(), common.eps, common.seed)?;
    match cmd {
        "check" => doa_kit::cmd_check(&ctx).map(|_| true),
        "nset" => doa_kit::cmd_nset(&ctx).map(|_| true),
        "niset" => doa_kit::cmd_niset(&ctx).map(|_| true),
        "doa" => doa_kit::cmd_doa(&ctx).map(|_| true),
        "controller" => doa_kit::cmd_controller(&ctx).map(|_| true),
        "simulate" => doa_kit::cmd_simulate(&ctx),
        "optimize" => doa_kit::cmd_optimize(&ctx).map(|_| true),
        "baseline" => doa_kit::cmd_baseline(&ctx).map(|_| true),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
