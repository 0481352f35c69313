mod cli;
mod commands;
mod config;
mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{ArgMatches, CommandFactory, FromArgMatches};

use crate::cli::Cli;
use crate::config::{merged_args, RunConfig};
use crate::error::{CliError, CliResult};

fn main() {
    let argv: Vec<OsString> = std::env::args_os().collect();
    std::process::exit(run(argv));
}

fn run(argv: Vec<OsString>) -> i32 {
    let result = parse(&argv).and_then(|(cli, cfg)| {
        init_threads()?;
        Ok(commands::dispatch(cli.command, &cfg)?)
    });
    match result {
        Ok(()) => 0,
        Err(Exit::Clap(e)) => {
            let _ = e.print();
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            }
        }
        Err(Exit::Cli(e)) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

enum Exit {
    Clap(clap::Error),
    Cli(CliError),
}

impl From<CliError> for Exit {
    fn from(e: CliError) -> Self {
        Exit::Cli(e)
    }
}

impl From<clap::Error> for Exit {
    fn from(e: clap::Error) -> Self {
        Exit::Clap(e)
    }
}

/// Parses `argv`, folding in the `--config` file when one is given.
fn parse(argv: &[OsString]) -> Result<(Cli, RunConfig), Exit> {
    let root = Cli::command();
    // with a config file, required flags may come from the file: parse leniently first
    let has_config = argv
        .iter()
        .any(|a| a.to_str().is_some_and(|s| s == "--config" || s.starts_with("--config=")));
    let matches = if has_config {
        root.clone().ignore_errors(true).try_get_matches_from(argv)?
    } else {
        root.clone().try_get_matches_from(argv)?
    };
    let Some((name, sub_m)) = matches.subcommand() else {
        return Err(root.clone().try_get_matches_from(argv).err().map_or_else(
            || CliError::Validation("a subcommand is required".into()).into(),
            Exit::Clap,
        ));
    };
    let name = name.to_string();
    let sub = root.find_subcommand(&name).expect("parsed subcommand exists").clone();
    let matches = match sub_m.get_one::<PathBuf>("config") {
        Some(path) => {
            let file = RunConfig::load(path)?;
            if file.command != name {
                return Err(CliError::Validation(format!(
                    "config {} is for {:?}, not {name:?}",
                    path.display(),
                    file.command
                ))
                .into());
            }
            let merged = merged_args(argv, &sub, sub_m, &file)?;
            drop(matches);
            root.clone().try_get_matches_from(merged)?
        }
        None => matches,
    };
    let sub_m: &ArgMatches = matches.subcommand_matches(&name).expect("same subcommand");
    let cfg = RunConfig::from_matches(&name, &sub, sub_m);
    let cli = Cli::from_arg_matches(&matches)?;
    Ok((cli, cfg))
}

/// Sizes the worker pool from `ACNN_THREADS` when set.
fn init_threads() -> CliResult {
    let Ok(raw) = std::env::var("ACNN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("ACNN_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}
