//! `key=value` config files. Keys are the long flag names of the chosen
//! subcommand; values read from the file are placed before the command-line
//! flags so that flags given on the command line win.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;

pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_config(text: &str) -> Result<Vec<ConfigEntry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value", idx + 1);
        };
        let key = k.trim();
        if key.is_empty() {
            bail!("line {}: empty key", idx + 1);
        }
        out.push(ConfigEntry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line: idx + 1,
        });
    }
    Ok(out)
}

/// Finds the value of `--config` anywhere in `argv`.
pub fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(v.into());
        }
    }
    None
}

/// Index of the subcommand name in `argv`.
fn subcommand_position(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            i += 2;
            continue;
        }
        if !a.starts_with('-') {
            return Some(i);
        }
        i += 1;
    }
    None
}

pub enum ConfigError {
    /// The file names a key the subcommand does not accept.
    Usage(anyhow::Error),
    Io(anyhow::Error),
}

/// Inserts flags from the config file right after the subcommand name.
pub fn apply_config(cmd: &Command, argv: Vec<OsString>, path: &Path) -> Result<Vec<OsString>, ConfigError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(ConfigError::Io)?;
    let entries = parse_config(&text)
        .with_context(|| format!("config {}", path.display()))
        .map_err(ConfigError::Usage)?;
    let Some(pos) = subcommand_position(&argv) else {
        return Ok(argv);
    };
    let name = argv[pos].to_string_lossy().into_owned();
    let mut cmd = cmd.clone();
    cmd.build();
    let Some(sub) = cmd.find_subcommand(&name) else {
        return Ok(argv);
    };

    let mut injected: Vec<OsString> = Vec::new();
    for e in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(e.key.as_str()) && e.key != "config" && e.key != "help");
        let Some(arg) = arg else {
            return Err(ConfigError::Usage(anyhow::anyhow!(
                "{}:{}: unknown key '{}' for {name}",
                path.display(),
                e.line,
                e.key
            )));
        };
        if arg.get_action().takes_values() {
            injected.push(format!("--{}={}", e.key, e.value).into());
        } else {
            match e.value.as_str() {
                "true" | "1" | "yes" => injected.push(format!("--{}", e.key).into()),
                "false" | "0" | "no" => {}
                other => {
                    return Err(ConfigError::Usage(anyhow::anyhow!(
                        "{}:{}: '{}' is a switch, got '{other}'",
                        path.display(),
                        e.line,
                        e.key
                    )))
                }
            }
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries() {
        let e = parse_config("# comment\n\nnms-thresh = 0.4\ninput=boxes.csv\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].key.as_str(), e[0].value.as_str(), e[0].line), ("nms-thresh", "0.4", 3));
        assert!(parse_config("novalue").is_err());
    }

    #[test]
    fn finds_config_and_subcommand() {
        let argv: Vec<OsString> = ["obbkit", "--config", "a.cfg", "nms", "--input", "x"].iter().map(Into::into).collect();
        assert_eq!(config_path(&argv), Some("a.cfg".into()));
        assert_eq!(subcommand_position(&argv), Some(3));
        let argv: Vec<OsString> = ["obbkit", "nms", "--config=b.cfg"].iter().map(Into::into).collect();
        assert_eq!(config_path(&argv), Some("b.cfg".into()));
    }
}
