//! Flat `key=value` config files and the effective-config echo.
//!
//! A config file supplies flag values for one subcommand; keys are the long
//! flag names (`max-epochs` or `max_epochs`). Flags given on the command line
//! win over file values.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use clap::{ArgAction, Command};
use serde::Serialize;
use serde_json::Value;

use crate::Failure;

/// The `--config` path among the subcommand's arguments, if any.
fn config_path(args: &[String]) -> Option<&str> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p);
        }
    }
    None
}

fn given_on_command_line(args: &[String], long: &str, short: Option<char>) -> bool {
    let flag = format!("--{long}");
    let with_value = format!("--{long}=");
    let short = short.map(|c| format!("-{c}"));
    args.iter().any(|a| {
        *a == flag || a.starts_with(&with_value) || short.as_ref().is_some_and(|s| a.starts_with(s.as_str()))
    })
}

/// `argv` with the config file's entries spliced in after the subcommand
/// name, minus those the command line already sets.
pub fn expand(root: &Command, argv: Vec<String>) -> Result<Vec<String>, Failure> {
    let Some(sub_name) = argv.get(1) else {
        return Ok(argv);
    };
    let Some(sub) = root.find_subcommand(sub_name) else {
        return Ok(argv);
    };
    let user = &argv[2..];
    let Some(path) = config_path(user) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {path}"))
        .map_err(Failure::Usage)?;

    let mut injected = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let usage = |msg: String| Failure::Usage(anyhow!("{path} line {}: {msg}", i + 1));
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage("expected key=value".into()))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "command" {
            if value != sub_name {
                return Err(usage(format!("config is for `{value}`, not `{sub_name}`")));
            }
            continue;
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| usage(format!("unknown key `{key}` for `{sub_name}`")))?;
        if given_on_command_line(user, &key, arg.get_short()) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" => injected.push(format!("--{key}")),
                "false" => {}
                other => return Err(usage(format!("`{key}` takes true or false, got `{other}`"))),
            }
        } else {
            injected.push(format!("--{key}={value}"));
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(user);
    Ok(out)
}

fn render(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Array(items) if items.is_empty() => None,
        Value::Array(items) => Some(items.iter().filter_map(render).collect::<Vec<_>>().join(",")),
        other => Some(other.to_string()),
    }
}

/// Writes `config.txt`: the subcommand and every effective setting, one
/// `key=value` per line in key order. The file can be passed back through
/// `--config`.
pub fn echo<T: Serialize>(dir: &Path, command: &str, args: &T) -> Result<(), Failure> {
    let value = serde_json::to_value(args).map_err(|e| Failure::Usage(e.into()))?;
    let Value::Object(map) = value else {
        return Err(Failure::Usage(anyhow!("settings are not a key/value map")));
    };
    let mut text = format!("command={command}\n");
    for (k, v) in &map {
        if let Some(s) = render(v) {
            text.push_str(&format!("{k}={s}\n"));
        }
    }
    let path = dir.join("config.txt");
    fs::write(&path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Usage)
}
