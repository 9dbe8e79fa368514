use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use otmatch::cli::{self, ConfigSource, Overrides, PRESET_NAMES};

#[derive(Parser)]
#[command(
    name = "otmatch",
    version,
    about = "Multi-agent distribution matching by optimal transport"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        /// Scenario file (TOML).
        #[arg(required_unless_present = "preset", conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in scenario name.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// List built-in scenarios, or print one.
    Presets { name: Option<String> },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OTMATCH_LOG", "warn")).init();
    let args = Args::parse();
    let code = match args.command {
        Command::Run {
            config,
            preset,
            seed,
            out,
            cycles,
        } => {
            let source = match (config, preset) {
                (Some(p), _) => ConfigSource::File(p),
                (None, Some(name)) => ConfigSource::Preset(name),
                (None, None) => unreachable!("clap enforces a source"),
            };
            cli::run(&source, &Overrides { seed, out, cycles })
        }
        Command::Presets { name: None } => {
            for n in PRESET_NAMES {
                println!("{n}");
            }
            0
        }
        Command::Presets { name: Some(n) } => match cli::preset(&n) {
            Some(text) => {
                print!("{text}");
                0
            }
            None => {
                eprintln!("error: unknown preset `{n}`");
                2
            }
        },
    };
    ExitCode::from(code as u8)
}
