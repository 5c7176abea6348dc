use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use cace_cli::{cmd_fit, cmd_simulate, cmd_study, cmd_sweep, exit_code, load_config, AnalysisConfig};

/// Complier average causal effects with outcome-dependent missing outcomes.
#[derive(Debug, Parser)]
#[command(name = "cace", version)]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// key = value configuration file; flags override its settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a simulated dataset and its metadata.
    Simulate {
        /// Scenario name(s), comma-separated.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(short, long)]
        n: Option<usize>,
        /// Observe every outcome.
        #[arg(long)]
        complete: bool,
    },
    /// Estimate the CACE from a z,d,y,r CSV file.
    Fit {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Outcome families for the two-step fit, comma-separated.
        #[arg(long)]
        family: Option<String>,
        /// odn, li or both.
        #[arg(long)]
        method: Option<String>,
        /// Bootstrap replicates.
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Interval levels, comma-separated.
        #[arg(long)]
        levels: Option<String>,
    },
    /// Monte-Carlo study of bias and coverage.
    Study {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(short, long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Both methods over a grid of response-law strengths.
    Sweep {
        /// Comma-separated values in (0, 0.45].
        #[arg(long)]
        delta: Option<String>,
        #[arg(short, long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        bootstrap: Option<usize>,
    },
}

fn overrides(cli: &Cli) -> Vec<(&'static str, String)> {
    let mut v: Vec<(&'static str, Option<String>)> = vec![
        ("seed", cli.seed.map(|x| x.to_string())),
        ("threads", cli.threads.map(|x| x.to_string())),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
    ];
    let num = |x: &Option<usize>| x.map(|x| x.to_string());
    match &cli.command {
        Command::Simulate { scenario, n, complete } => {
            v.push(("scenario", scenario.clone()));
            v.push(("n", num(n)));
            v.push(("complete", complete.then(|| "true".to_string())));
        }
        Command::Fit {
            input,
            family,
            method,
            bootstrap,
            levels,
        } => {
            v.push(("input", input.as_ref().map(|p| p.display().to_string())));
            v.push(("family", family.clone()));
            v.push(("method", method.clone()));
            v.push(("bootstrap", num(bootstrap)));
            v.push(("levels", levels.clone()));
        }
        Command::Study {
            scenario,
            n,
            reps,
            method,
            bootstrap,
        } => {
            v.push(("scenario", scenario.clone()));
            v.push(("n", num(n)));
            v.push(("reps", num(reps)));
            v.push(("method", method.clone()));
            v.push(("bootstrap", num(bootstrap)));
        }
        Command::Sweep { delta, n, reps, bootstrap } => {
            v.push(("delta", delta.clone()));
            v.push(("n", num(n)));
            v.push(("reps", num(reps)));
            v.push(("bootstrap", num(bootstrap)));
        }
    }
    v.into_iter().filter_map(|(k, x)| x.map(|x| (k, x))).collect()
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = AnalysisConfig::default();
    if let Some(path) = &cli.config {
        load_config(path, &mut cfg)?;
    }
    for (key, value) in overrides(cli) {
        cfg.set(key, &value).with_context(|| format!("--{key}"))?;
    }
    cfg.validate()?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("starting worker pool")?;
    }
    match cli.command {
        Command::Simulate { .. } => {
            for p in cmd_simulate(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Fit { .. } => {
            let (paths, text) = cmd_fit(&cfg)?;
            print!("{text}");
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Command::Study { .. } => println!("wrote {}", cmd_study(&cfg)?.display()),
        Command::Sweep { .. } => println!("wrote {}", cmd_sweep(&cfg)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
