use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tfp_core::config::read_config;
use tfp_core::experiment::{execute, exit_code, RunOptions, Verb};

/// Batch driver for tilted fictitious play experiments.
#[derive(Parser)]
#[command(name = "tfp", version)]
struct Cli {
    /// Output directory (default: $TFP_OUT, then the config's `output`, then ./tfp-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel sections. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Neither read nor write the noise bank and reference caches.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment the config describes (play, costcompare or anneal).
    Run { config: PathBuf },
    /// Solve and summarize the reference equilibrium only.
    Reference { config: PathBuf },
    /// Deterministic equilibria and the potential curve of the coupling.
    Equilibria { config: PathBuf },
    /// Train on the config's seed, then score the learned policies on a second bank.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed2: u64,
    },
    /// Vanishing-viscosity schedule.
    Anneal { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::error!("cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let (verb, path) = match cli.command {
        Command::Run { config } => (Verb::Run, config),
        Command::Reference { config } => (Verb::Reference, config),
        Command::Equilibria { config } => (Verb::Equilibria, config),
        Command::Validate { config, seed2 } => (Verb::Validate { seed2 }, config),
        Command::Anneal { config } => (Verb::Anneal, config),
    };
    let result = read_config(&path).and_then(|config| {
        let opts = RunOptions::resolve(cli.out, &config, !cli.no_cache);
        execute(verb, &config, &opts)
    });
    match &result {
        Ok(report) => {
            for f in &report.files {
                println!("{}", report.dir.join(f).display());
            }
        }
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(e);
            while let Some(s) = src {
                msg.push_str(&format!(": {s}"));
                src = s.source();
            }
            eprintln!("error: {msg}");
        }
    }
    ExitCode::from(exit_code(&result) as u8)
}
