//! `--config FILE` support: the file's values become ordinary flags placed
//! ahead of the user's own, so anything given on the command line wins.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use serde_json::Value;

use crate::CliError;

const SUBCOMMANDS: &[&str] = &[
    "fit", "encode", "eval", "synth", "verify", "nearzero", "info", "th1", "th2", "th3",
];

/// Removes `--config PATH` from `args` and splices the file's flags in
/// right after the subcommand name(s).
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut it = args.into_iter();
    let program = it.next();
    let mut rest = Vec::new();
    let mut config: Option<PathBuf> = None;
    while let Some(arg) = it.next() {
        match arg.to_str() {
            Some("--config") => {
                let path = it
                    .next()
                    .ok_or_else(|| CliError::Usage("--config needs a path".into()))?;
                config = Some(path.into());
            }
            Some(s) if s.starts_with("--config=") => config = Some(s["--config=".len()..].into()),
            _ => rest.push(arg),
        }
    }
    if let Some(path) = config {
        let text = fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: not a JSON config: {e}", path.display())))?;
        let flags = flags_from_json(&value)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let at = insertion_point(&rest);
        rest.splice(at..at, flags);
    }
    Ok(program.into_iter().chain(rest).collect())
}

fn insertion_point(args: &[OsString]) -> usize {
    let mut at = 0;
    while at < args.len() {
        match args[at].to_str() {
            Some("--threads") => at += 2,
            Some(s) if s.starts_with("--threads=") => at += 1,
            Some(s) if SUBCOMMANDS.contains(&s) => at += 1,
            _ => break,
        }
    }
    at.min(args.len())
}

/// Accepts either a flat object of flag values or an echoed run config
/// (`{"command": ..., "args": {...}}`).
pub fn flags_from_json(value: &Value) -> Result<Vec<OsString>, String> {
    let obj = match value.get("args") {
        Some(Value::Object(args)) => args,
        _ => value.as_object().ok_or("config must be a JSON object")?,
    };
    let mut flags = Vec::new();
    for (key, v) in obj {
        if key == "threads" {
            continue;
        }
        let flag = format!("--{key}");
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => flags.push(flag.into()),
            Value::Array(items) if items.is_empty() => {}
            Value::Array(items) => {
                let parts: Result<Vec<String>, String> = items.iter().map(|i| scalar(key, i)).collect();
                flags.push(flag.into());
                flags.push(parts?.join(",").into());
            }
            other => {
                flags.push(flag.into());
                flags.push(scalar(key, other)?.into());
            }
        }
    }
    Ok(flags)
}

fn scalar(key: &str, v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(format!("unsupported value for `{key}`: {v}")),
    }
}
