use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use corrugate::driver::{self, export, verify, RunConfig};
use corrugate::Result;

#[derive(Parser)]
#[command(
    name = "corrugate",
    version,
    about = "Corrugation-based convex integration runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all configured stages and write CSV/JSON reports (and a mesh if enabled).
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the fast identity checks.
    Verify,
    /// Re-run the first `stage` stages and write the resulting iterate as OBJ.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stage: usize,
        #[arg(long)]
        mesh: PathBuf,
    },
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("CORRUGATE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.parse().map_err(|_| {
        corrugate::Error::Config(format!("CORRUGATE_THREADS = '{value}' is not a count"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| corrugate::Error::Config(e.to_string()))
}

fn cmd_run(path: &Path) -> Result<bool> {
    let config = RunConfig::load(path)?;
    let outcome = driver::run(&config)?;
    let dir = &config.output.dir;
    export::export_report(&outcome.report, dir)?;
    if config.output.mesh && config.dimension == 2 {
        let last = outcome.iterates.last().expect("u_0 is always present");
        export::export_mesh(last, &dir.join("mesh.obj"))?;
    }
    print!("{}", export::report_csv(&outcome.report));
    if let Some(a) = outcome.report.holder.alpha_hat {
        println!("alpha_hat = {a}");
    }
    match outcome.error {
        Some(e) => {
            eprintln!("run stopped early: {e}");
            Ok(false)
        }
        None => Ok(true),
    }
}

fn cmd_verify() -> Result<bool> {
    let checks = verify::run_checks()?;
    for c in &checks {
        println!(
            "{} {}: {:e} (tolerance {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn cmd_export(path: &Path, stage: usize, mesh: &Path) -> Result<bool> {
    let mut config = RunConfig::load(path)?;
    config.schedule.stages = stage;
    let outcome = driver::run(&config)?;
    if let Some(e) = outcome.error {
        return Err(e);
    }
    export::export_mesh(&outcome.iterates[stage], mesh)?;
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::Verify => cmd_verify(),
        Command::Export {
            config,
            stage,
            mesh,
        } => cmd_export(config, *stage, mesh),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
