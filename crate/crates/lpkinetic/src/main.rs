use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lpkinetic::harness::config::{parse_overrides, read_config_file, Profile};
use lpkinetic::harness::{default_out, execute, find, registry, run_suite, summarize, thread_count, write_outputs, RunError};

#[derive(Parser)]
#[command(name = "lpkinetic", version, about = "Rate and identity experiments for kinetic stable operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List experiments with their keys and defaults.
    List,
    /// Run one experiment.
    Run {
        #[arg(long)]
        experiment: Option<String>,
        /// `key = value` lines; `experiment` and `profile` may be set here too.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// fast or full.
        #[arg(long)]
        profile: Option<String>,
        /// Parameter overrides as `--key value` or `--key=value`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        overrides: Vec<String>,
    },
    /// Run every experiment into one directory.
    Suite {
        /// fast or full.
        profile: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn parse_profile(s: &str) -> Result<Profile, ExitCode> {
    Profile::parse(s).ok_or_else(|| config_error(format!("invalid config key `profile`: `{s}` is not fast or full")))
}

fn list() -> ExitCode {
    for e in registry() {
        println!("{}\n  {}\n  claim: {}", e.id, e.description, e.claim);
        for k in e.keys {
            println!("    --{:<20} fast={:<14} full={:<14} {}", k.name, k.fast, k.full, k.doc);
        }
    }
    ExitCode::SUCCESS
}

fn run(
    experiment: Option<String>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    profile: Option<String>,
    overrides: Vec<String>,
) -> Result<ExitCode, ExitCode> {
    // once the first unknown flag starts the overrides, clap stops matching
    // its own options, so they are picked out of the override list as well
    let mut cli_overrides = parse_overrides(&overrides).map_err(config_error)?;
    let config = config.or_else(|| cli_overrides.remove("config").map(PathBuf::from));
    let out = out.or_else(|| cli_overrides.remove("out").map(PathBuf::from));
    let experiment = experiment.or_else(|| cli_overrides.remove("experiment"));
    let profile = profile.or_else(|| cli_overrides.remove("profile"));
    let mut settings = match &config {
        Some(path) => read_config_file(path).map_err(config_error)?,
        None => Default::default(),
    };
    let from_file_experiment = settings.remove("experiment");
    let from_file_profile = settings.remove("profile");
    settings.extend(cli_overrides);
    let id = experiment
        .or(from_file_experiment)
        .ok_or_else(|| config_error("invalid config key `experiment`: required, via --experiment or the config file"))?;
    let exp = find(&id).ok_or_else(|| config_error(format!("invalid config key `experiment`: unknown id `{id}`")))?;
    let profile = parse_profile(profile.or(from_file_profile).as_deref().unwrap_or("full"))?;
    let (report, tables) = execute(&exp, profile, &settings).map_err(config_error)?;
    let dir = out.unwrap_or_else(|| default_out(exp.id));
    write_outputs(&dir, &report, &tables).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })?;
    println!("{}", summarize(&report));
    println!("outputs in {}", dir.display());
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn suite(profile: &str, out: Option<PathBuf>, force: bool) -> Result<ExitCode, ExitCode> {
    let profile = parse_profile(profile)?;
    let dir = out.unwrap_or_else(|| PathBuf::from(format!("lpkinetic-suite-{}", profile.name())));
    match run_suite(profile, &dir, force) {
        Ok(s) => {
            println!("suite {}: {} ({:.1} s), summary in {}", profile.name(), if s.passed { "PASS" } else { "FAIL" }, s.wall_time_s, dir.join("summary.json").display());
            Ok(if s.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Err(RunError::Config(e)) => Err(config_error(e)),
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::FAILURE)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = thread_count() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::List => Ok(list()),
        Command::Run { experiment, config, out, profile, overrides } => run(experiment, config, out, profile, overrides),
        Command::Suite { profile, out, force } => suite(&profile, out, force),
    };
    result.unwrap_or_else(|code| code)
}
