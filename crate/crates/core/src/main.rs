use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use optipur::cli::{self, Overrides};
use optipur::config::Config;
use optipur::Error;

/// Monte Carlo simulator of entanglement purification over one quantum link.
#[derive(Parser)]
#[command(name = "optipur", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate fidelity, rate and key rate for each configured protocol.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Write the event log of each protocol's first trial here.
        #[arg(long)]
        events_log: Option<PathBuf>,
    },
    /// Run the `[[sweep.axis]]` grid and write one CSV row per point and protocol.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Find the best protocol for key generation on the `[heatmap]` grid.
    Heatmap {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials_min: Option<usize>,
    #[arg(long)]
    ci_target: Option<f64>,
    #[arg(long)]
    max_trials: Option<usize>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self, path: &PathBuf) -> optipur::Result<Config> {
        let mut cfg = Config::from_file(path)?;
        Overrides {
            seed: self.seed,
            trials_min: self.trials_min,
            ci_target: self.ci_target,
            max_trials: self.max_trials,
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    job: impl FnOnce() -> optipur::Result<T> + Send,
) -> optipur::Result<T> {
    match threads {
        None => job(),
        Some(0) => Err(Error::Validation("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Validation(format!("cannot start thread pool: {e}")))?
            .install(job),
    }
}

fn run(command: Command) -> optipur::Result<()> {
    match command {
        Command::Simulate {
            config,
            common,
            events_log,
        } => {
            let cfg = common.load(&config)?;
            let report = with_threads(common.threads, || cli::simulate(&cfg, events_log.as_deref()))?;
            print!("{report}");
            Ok(())
        }
        Command::Sweep { config, out, common } => {
            let cfg = common.load(&config)?;
            with_threads(common.threads, || cli::sweep(&cfg, &out))
        }
        Command::Heatmap { config, out, common } => {
            let cfg = common.load(&config)?;
            with_threads(common.threads, || cli::heatmap(&cfg, &out))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
