//! `grsd`: runs named experiment recipes from TOML configs.

mod config;
mod recipes;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{load_recipe, ConfigError, RECIPES};
use runner::RunFailure;

const EXIT_RUNTIME: u8 = 1;
const EXIT_SCHEMA: u8 = 2;

#[derive(Parser)]
#[command(name = "grsd", version, about = "Gradient-flow spectral diagnostics recipe runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the recipe described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides GRSD_OUT_DIR and `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; overrides GRSD_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config and print it with every default filled in.
    Validate { config: PathBuf },
    /// List the available recipes.
    ListRecipes,
}

fn schema_failure(e: &ConfigError) -> ExitCode {
    eprintln!("config error:\n{e}");
    ExitCode::from(EXIT_SCHEMA)
}

fn env_threads() -> Result<Option<usize>, String> {
    match std::env::var("GRSD_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| format!("GRSD_THREADS = {v:?} is not a positive integer")),
        Err(_) => Ok(None),
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, threads: Option<usize>) -> ExitCode {
    let mut recipe = match load_recipe(&config) {
        Ok(r) => r,
        Err(e) => return schema_failure(&e),
    };
    if let Some(s) = seed {
        recipe.seed = s;
    }
    let threads = match threads.filter(|n| *n > 0).map(Some).map_or_else(env_threads, Ok) {
        Ok(t) => t,
        Err(m) => {
            eprintln!("{m}");
            return ExitCode::from(EXIT_SCHEMA);
        }
    };
    let out = out
        .or_else(|| std::env::var_os("GRSD_OUT_DIR").map(PathBuf::from))
        .or_else(|| recipe.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", recipe.recipe, recipe.seed)));
    match runner::execute(&recipe, &out, threads) {
        Ok(_) => {
            if let Ok(text) = std::fs::read_to_string(out.join("summary.txt")) {
                print!("{text}");
            }
            println!("artifacts written to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(RunFailure::Setup(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(RunFailure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            eprintln!("details in {}", out.join("error.json").display());
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => run(config, out, seed, threads),
        Command::Validate { config } => match load_recipe(&config) {
            Ok(r) => {
                print!("{}", r.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => schema_failure(&e),
        },
        Command::ListRecipes => {
            for (name, about) in RECIPES {
                println!("{name:<22} {about}");
            }
            ExitCode::SUCCESS
        }
    }
}
