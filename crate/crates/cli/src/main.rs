use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use barrier_stab::commands::{self, output_dir};
use barrier_stab::config::{self, ExperimentConfig, Source};
use barrier_stab::{schema, split_overrides, thread_pool, CliError};
use clap::{Args, Parser, Subcommand};

/// Stabilization experiments with weak control Lyapunov functions and
/// nonsmooth barrier functions. Any `--key.path=value` flag overrides the
/// matching config field.
#[derive(Parser)]
#[command(name = "barrier-stab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every initial state and write trajectories plus a summary.
    Run(Common),
    /// Run the configured grid checks.
    Verify(Common),
    /// Derive plotting tables from the artifacts of a previous `run`.
    PlotData(Common),
    /// Print the JSON schema of the config file.
    Schema,
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random initial states (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn load(
    c: &Common,
    overrides: &[(String, String)],
) -> Result<(ExperimentConfig, Source), CliError> {
    let mut ov = overrides.to_vec();
    if let Some(out) = &c.out {
        ov.push((
            "output_dir".into(),
            serde_json::to_string(&out.display().to_string()).expect("string"),
        ));
    }
    if let Some(seed) = c.seed {
        ov.push(("seed".into(), seed.to_string()));
    }
    config::load(&c.config, &ov)
}

fn execute(cmd: Command, overrides: &[(String, String)]) -> Result<(), CliError> {
    match cmd {
        Command::Schema => {
            println!(
                "{}",
                serde_json::to_string_pretty(&schema::schema()).expect("schema serializes")
            );
            Ok(())
        }
        Command::Run(c) => {
            let (cfg, src) = load(&c, overrides)?;
            let summary = commands::run(&cfg, &src)?;
            for r in &summary.runs {
                println!(
                    "run {:03}: {} converged_to_origin={} converged_to_level_set={} final_norm={:.3e}",
                    r.index, r.status, r.converged_to_origin, r.converged_to_level_set, r.final_norm
                );
            }
            for (name, report) in &summary.reports {
                print!("{}", report.summary(name));
            }
            println!("artifacts in {}", output_dir(&cfg).display());
            if summary.errors > 0 {
                return Err(CliError::Runtime(format!(
                    "{} of {} runs failed",
                    summary.errors,
                    summary.runs.len()
                )));
            }
            Ok(())
        }
        Command::Verify(c) => {
            let (cfg, src) = load(&c, overrides)?;
            for (name, report) in commands::verify(&cfg, &src)? {
                print!("{}", report.summary(&name));
            }
            Ok(())
        }
        Command::PlotData(c) => {
            let (cfg, src) = load(&c, overrides)?;
            for path in commands::plot_data(&cfg, &src)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if matches!(cli.command, Command::Schema) && !overrides.is_empty() {
        eprintln!("error: `schema` takes no overrides");
        return ExitCode::from(1);
    }
    let result = thread_pool()
        .and_then(|pool| pool.install(|| execute(cli.command, &overrides)))
        .context("barrier-stab failed");
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<CliError>()
                .map_or(2, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
