//! `key = value` files merged into the command line before parsing.
//!
//! Keys are long flag names without the leading dashes (`theta-p`,
//! `theta_p` and `--theta-p` are the same key). A flag given on the command
//! line wins over the file. Keys that belong to another subcommand are
//! skipped so one file can serve every command.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::Path;

use anyhow::Context;
use clap::Command;

use crate::UsageError;

pub fn read(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    Ok(parse(&text, path)?)
}

pub fn parse(text: &str, path: &Path) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            UsageError(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                n + 1
            ))
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(UsageError(format!(
                "{}:{}: empty key",
                path.display(),
                n + 1
            )));
        }
        let value = value.trim().trim_matches('"').to_string();
        out.push((key, value));
    }
    Ok(out)
}

/// Appends the config entries that apply to the selected subcommand and are
/// not already on the command line.
pub fn merge(
    mut cmd: Command,
    argv: Vec<OsString>,
    entries: Vec<(String, String)>,
) -> Result<Vec<OsString>, UsageError> {
    cmd.build();
    let Some((pos, sub)) = argv.iter().enumerate().skip(1).find_map(|(i, a)| {
        a.to_str()
            .and_then(|s| cmd.find_subcommand(s))
            .map(|s| (i, s))
    }) else {
        return Ok(argv);
    };

    let takes_value = |c: &Command| -> BTreeMap<String, bool> {
        c.get_arguments()
            .filter_map(|a| {
                a.get_long()
                    .map(|l| (l.to_string(), a.get_action().takes_values()))
            })
            .collect()
    };
    let own = takes_value(sub);
    let known: BTreeSet<String> = cmd
        .get_subcommands()
        .flat_map(|s| takes_value(s).into_keys())
        .collect();
    let given: BTreeSet<String> = argv[pos + 1..]
        .iter()
        .filter_map(|a| {
            a.to_str()?
                .strip_prefix("--")
                .map(|s| s.split('=').next().unwrap_or(s).to_string())
        })
        .collect();

    let mut last: BTreeMap<String, String> = BTreeMap::new();
    for (k, v) in entries {
        if k == "config" {
            return Err(UsageError(
                "a config file cannot name another config file".into(),
            ));
        }
        if !known.contains(&k) {
            return Err(UsageError(format!("unknown config key `{k}`")));
        }
        last.insert(k, v);
    }

    let mut argv = argv;
    for (k, v) in last {
        let Some(&with_value) = own.get(&k) else {
            log::debug!("config key `{k}` does not apply to `{}`", sub.get_name());
            continue;
        };
        if given.contains(&k) {
            continue;
        }
        if with_value {
            argv.push(format!("--{k}").into());
            argv.push(v.into());
        } else {
            let on: bool = v.parse().map_err(|_| {
                UsageError(format!("config key `{k}` expects true or false, got `{v}`"))
            })?;
            if on {
                argv.push(format!("--{k}").into());
            }
        }
    }
    Ok(argv)
}

/// Value of `--config` on the raw command line, if any.
pub fn path_from_args(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}
