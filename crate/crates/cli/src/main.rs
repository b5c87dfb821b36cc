use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fockforge::config::{parse_with_seed, ConfigError, ExperimentConfig, Kind};
use fockforge::error::RunError;
use fockforge::report::write_run;

#[derive(Parser)]
#[command(name = "fockforge", version, about = "Simulate multi-photon polarization experiments from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its outputs.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's `output`, else `fockforge-out/<kind>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// List the experiment kinds.
    ListKinds,
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { problems: vec![format!("{}: {e}", path.display())] })?;
    Ok(parse_with_seed(&text, seed)?)
}

fn configure_threads() -> Result<(), RunError> {
    let Ok(raw) = std::env::var("FOCKFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => {
            return Err(ConfigError { problems: vec![format!("FOCKFORGE_THREADS: expected a positive integer, got {raw:?}")] }.into())
        }
    };
    // a second initialization in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::ListKinds => {
            for kind in Kind::ALL {
                println!("{:<12} {}", kind.name(), kind.summary());
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config, None)?;
            println!("{}: ok ({})", config.display(), cfg.kind);
        }
        Command::Run { config, seed, out } => {
            configure_threads()?;
            let cfg = load(&config, seed)?;
            let dir = out
                .or_else(|| cfg.output.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("fockforge-out").join(cfg.kind.name()));
            let output = fockforge::run(&cfg)?;
            let report = write_run(&dir, &cfg, &output)?;
            for (name, q) in &report.quantities {
                match q.uncertainty {
                    Some(u) => println!("{name} = {} ± {} {}", q.value, u, q.unit),
                    None => println!("{name} = {} {}", q.value, q.unit),
                }
            }
            for note in &report.notes {
                println!("note: {note}");
            }
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
