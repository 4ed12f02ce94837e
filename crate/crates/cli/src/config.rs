//! `--config` files and run snapshots. Both are `key=value` lines whose keys are long flag
//! names, so a snapshot can be fed straight back through `--config`.

use std::ffi::OsString;
use std::fs;

use anyhow::{Context, Result};
use clap::{ArgMatches, Command};

use crate::UsageError;

fn find_arg<'a>(root: &'a Command, sub: Option<&'a Command>, key: &str) -> Option<&'a clap::Arg> {
    sub.into_iter()
        .chain(std::iter::once(root))
        .flat_map(Command::get_arguments)
        .find(|a| a.get_long() == Some(key))
}

fn present(argv: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    let prefix = format!("--{key}=");
    argv.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == flag || a.starts_with(&prefix))
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Appends settings from the `--config` file that the command line does not already set.
pub fn merge_config_file(cmd: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config file {}", path.to_string_lossy()))?;
    let sub = argv
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find_map(|a| cmd.find_subcommand(a));
    let mut out = argv.clone();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "config" || key == "command" {
            continue;
        }
        let arg = find_arg(cmd, sub, key)
            .ok_or_else(|| UsageError(format!("config line {}: unknown key '{key}'", lineno + 1)))?;
        if present(&argv, key) {
            continue;
        }
        if arg.get_action().takes_values() {
            out.push(format!("--{key}").into());
            out.push(value.into());
        } else {
            match value {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                v => return Err(UsageError(format!("config line {}: '{key}' expects true or false, got '{v}'", lineno + 1)).into()),
            }
        }
    }
    Ok(out)
}

/// Effective settings of the invoked subcommand, sorted by key.
pub fn snapshot(root: &Command, name: &str, matches: &ArgMatches) -> String {
    let sub = root.find_subcommand(name);
    let is_arg = |id: &str| {
        sub.into_iter()
            .chain(std::iter::once(root))
            .flat_map(Command::get_arguments)
            .any(|a| a.get_id() == id)
    };
    let mut lines: Vec<String> = matches
        .ids()
        .filter(|id| id.as_str() != "config" && is_arg(id.as_str()))
        .filter_map(|id| {
            let raw = matches.get_raw(id.as_str())?;
            let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            Some(format!("{}={}", id.as_str().replace('_', "-"), values.join(",")))
        })
        .collect();
    lines.sort();
    let mut out = format!("command={name}\n");
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}
