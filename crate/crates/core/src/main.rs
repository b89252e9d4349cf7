use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xpdesign::commands::{
    cmd_analyze, cmd_design, cmd_powercurve, cmd_run, cmd_sample, cmd_validate, Overrides,
};
use xpdesign::Result;

/// Design and run comparative experiments on algorithms.
///
/// Command-line flags override configuration values, which override defaults.
#[derive(Parser, Debug)]
#[command(name = "xpdesign", version)]
struct Cli {
    /// Worker threads for sampling and simulation.
    #[arg(long, global = true, env = "XPDESIGN_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct StateArg {
    /// Experiment state file.
    #[arg(long, default_value = "experiment.json")]
    state: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the number of instances and write a new state file.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n0: Option<u64>,
        #[arg(long)]
        n_max: Option<u64>,
        #[arg(long)]
        se_star: Option<f64>,
    },
    /// Sample every pending instance; resumes an interrupted run.
    Run {
        #[command(flatten)]
        state: StateArg,
    },
    /// Sample a single instance and print its report without saving it.
    Sample {
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        instance: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test all hypotheses and write the result tables.
    Analyze {
        #[command(flatten)]
        state: StateArg,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Mean power over a grid of effect sizes at a fixed number of instances.
    Powercurve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: Option<u64>,
        /// Comma-separated effect sizes.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value = "powercurve.csv")]
        out: PathBuf,
    },
    /// Simulate experiments with known effects to check error rates and power.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Truth configuration file; defaults to the config's validation section.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        n_sim: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "validation.json")]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Design {
            config,
            state,
            seed,
            n0,
            n_max,
            se_star,
        } => {
            let overrides = Overrides {
                seed,
                n0,
                n_max,
                se_star,
            };
            cmd_design(&config, &state.state, overrides, &mut out)?;
        }
        Command::Run { state } => {
            cmd_run(&state.state, &mut out)?;
        }
        Command::Sample {
            state,
            instance,
            out: path,
        } => {
            cmd_sample(&state.state, &instance, path.as_deref(), &mut out)?;
        }
        Command::Analyze { state, out: dir } => {
            cmd_analyze(&state.state, &dir, &mut out)?;
        }
        Command::Powercurve {
            config,
            n,
            grid,
            out: path,
        } => {
            cmd_powercurve(&config, n, grid, &path, &mut out)?;
        }
        Command::Validate {
            config,
            truth,
            n_sim,
            seed,
            out: path,
        } => {
            cmd_validate(&config, truth.as_deref(), n_sim, seed, &path, &mut out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
