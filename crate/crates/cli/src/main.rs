use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use proxens::evaluation::SweepParameter;
use proxens::experiment::{Experiment, ExperimentError};

/// Proximity-ensemble forecasting experiments.
#[derive(Debug, Parser)]
#[command(name = "proxens", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "proxens.toml")]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where outputs and the manifest go.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, transform, scale and frame every dataset into the cache.
    Prepare,
    /// Tune, fit and evaluate machines and ensembles; write reports.
    Run,
    /// Tune machines and ensembles on validation data only.
    Tune,
    /// Compare grid and TPE tuning across the three variants.
    Ablate,
    /// Validation sensitivity curve for one parameter.
    Sweep {
        #[arg(long, value_enum)]
        parameter: Param,
    },
    /// Iterated multi-step forecast.
    Dynamic {
        /// Overrides `[dynamic].horizon`.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Rebuild reports from an earlier run.
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Param {
    Alpha,
    Epsilon,
}

fn execute(cli: &Cli) -> Result<bool, ExperimentError> {
    let exp = Experiment::from_file(&cli.config, &cli.out_dir, cli.seed)?;
    let out = cli.out_dir.display();
    match &cli.command {
        Command::Prepare => {
            for s in exp.cmd_prepare()? {
                println!(
                    "{}: {} rows, split {}/{}/{}, key {}",
                    s.dataset,
                    s.rows,
                    s.split.n_train,
                    s.split.n_val,
                    s.split.n_test,
                    &s.cache_key[..12]
                );
            }
        }
        Command::Run => {
            let summary = exp.cmd_run()?;
            let r = &summary.rmse;
            for (i, d) in r.datasets.iter().enumerate() {
                let cells: Vec<String> = r
                    .models
                    .iter()
                    .zip(&r.matrix[i])
                    .map(|(m, v)| v.map_or_else(|| format!("{m}=failed"), |x| format!("{m}={x:.4e}")))
                    .collect();
                println!("{d}: rmse {}", cells.join(" "));
            }
            let failed = summary.failures();
            if !failed.is_empty() {
                for (d, m) in &failed {
                    eprintln!("failed: {d}/{m}");
                }
                eprintln!("partial reports written to {out}");
                return Ok(false);
            }
            println!("reports written to {out}");
        }
        Command::Tune => {
            for t in exp.cmd_tune()? {
                for e in &t.ensembles {
                    match (&e.config, &e.error) {
                        (Some(c), _) => println!(
                            "{} {}: epsilon={:.4} alpha={} fraction={:.3}",
                            t.dataset, e.variant, c.epsilon, c.alpha, c.partition_fraction
                        ),
                        (None, Some(err)) => println!("{} {}: failed: {err}", t.dataset, e.variant),
                        (None, None) => {}
                    }
                }
            }
        }
        Command::Ablate => {
            for r in exp.cmd_ablate()? {
                println!("{:<10} rmse {:.4} mape {:.4}", r.variant, r.rmse_normalized, r.mape_normalized);
            }
        }
        Command::Sweep { parameter } => {
            let p = match parameter {
                Param::Alpha => SweepParameter::Alpha,
                Param::Epsilon => SweepParameter::Epsilon,
            };
            for (d, points) in exp.cmd_sweep(p)? {
                println!("{d}: {} points", points.len());
            }
        }
        Command::Dynamic { horizon } => {
            let (pred, _) = exp.cmd_dynamic(*horizon)?;
            println!("{} steps written to {out}/dynamic", pred.nrows());
        }
        Command::Report => {
            exp.cmd_report()?;
            println!("reports written to {out}");
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
