//! Run configuration files and their merge with command-line flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run was invoked with: the subcommand, its seed and precision and every
/// other flag as text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub precision: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

/// Flags that are never echoed or read from a config file.
const SKIP: [&str; 2] = ["config", "help"];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("bad config file: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The effective configuration of a parsed subcommand, defaults included.
    pub fn from_matches(command: &str, sub: &Command, m: &ArgMatches) -> Self {
        let mut params = BTreeMap::new();
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            if SKIP.contains(&id) {
                continue;
            }
            let value = if arg.get_action().takes_values() {
                match m.get_raw(id) {
                    Some(vals) => vals
                        .map(|v| v.to_string_lossy().into_owned())
                        .collect::<Vec<_>>()
                        .join(","),
                    None => continue,
                }
            } else {
                m.get_flag(id).to_string()
            };
            params.insert(id.to_string(), value);
        }
        let seed = params
            .remove("seed")
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        let precision = params.remove("precision").unwrap_or_else(|| "f32".into());
        RunConfig {
            command: command.to_string(),
            seed,
            precision,
            params,
        }
    }

    /// `# key=value` lines describing the run.
    pub fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("# command={}", self.command),
            format!("# seed={}", self.seed),
            format!("# precision={}", self.precision),
        ];
        lines.extend(self.params.iter().map(|(k, v)| format!("# {k}={v}")));
        lines
    }
}

/// Appends config-file values for every flag of `sub` not given on the command line.
pub fn merged_args(
    argv: &[OsString],
    sub: &Command,
    m: &ArgMatches,
    cfg: &RunConfig,
) -> Result<Vec<OsString>, CliError> {
    let mut values: BTreeMap<&str, String> =
        cfg.params.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    values.insert("seed", cfg.seed.to_string());
    values.insert("precision", cfg.precision.clone());
    let mut out = argv.to_vec();
    for (key, value) in values {
        let Some(arg) = sub.get_arguments().find(|a| a.get_id().as_str() == key) else {
            return Err(CliError::Validation(format!(
                "config key {key:?} is not a flag of {}",
                sub.get_name()
            )));
        };
        if SKIP.contains(&key) || m.value_source(key) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{}", arg.get_long().unwrap_or(key));
        if arg.get_action().takes_values() {
            out.push(flag.into());
            out.push(value.into());
        } else {
            match value.as_str() {
                "true" => out.push(flag.into()),
                "false" => {}
                other => {
                    return Err(CliError::Validation(format!(
                        "config key {key:?} expects true or false, got {other:?}"
                    )))
                }
            }
        }
    }
    Ok(out)
}
