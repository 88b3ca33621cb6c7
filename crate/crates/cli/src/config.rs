//! `--config FILE` support. The file is a JSON object keyed by subcommand
//! name; each section maps flag names to values, e.g.
//!
//! ```json
//! { "simulate": { "n": 187, "seed": 42, "out": "data.csv" },
//!   "sync": { "endpoint": "http://127.0.0.1:8787", "max_attempts": 5 } }
//! ```
//!
//! Section entries are inserted as flags directly after the subcommand, so
//! anything given on the command line overrides them. `true` becomes a bare
//! switch, `false` and `null` are skipped and arrays repeat the flag.
//! When `IGLU_ENDPOINT` or `IGLU_QUEUE_DIR` is set, the matching `endpoint`
//! or `queue` entry is ignored so the environment wins over the file.

use std::ffi::OsString;
use std::path::PathBuf;

use serde_json::Value;

use crate::args::{ENDPOINT_ENV, QUEUE_ENV};
use crate::error::{io_err, CliError, CliResult};

/// Locates `--config` and the subcommand in raw arguments.
fn scan(argv: &[OsString]) -> (Option<PathBuf>, Option<usize>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if a == "--" {
            break;
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    (config, sub)
}

fn scalar(key: &str, v: &Value) -> CliResult<Option<String>> {
    Ok(match v {
        Value::Null | Value::Bool(false) => None,
        Value::Bool(true) => Some(String::new()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => {
            return Err(CliError::Usage(format!(
                "config entry `{key}` must be a string, number, boolean or array of those"
            )))
        }
    })
}

/// Returns `argv` with the config section of the chosen subcommand spliced in.
pub fn expand(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let (Some(path), Some(sub)) = scan(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(sections) = doc else {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    };
    let name = argv[sub].to_string_lossy().into_owned();
    let section = sections
        .get(&name)
        .or_else(|| sections.get(&name.replace('-', "_")));
    let Some(section) = section else {
        return Ok(argv);
    };
    let Value::Object(entries) = section else {
        return Err(CliError::Usage(format!("config section `{name}` must be an object")));
    };

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        let flag = key.replace('_', "-");
        if (flag == "endpoint" && std::env::var_os(ENDPOINT_ENV).is_some())
            || (flag == "queue" && std::env::var_os(QUEUE_ENV).is_some())
        {
            continue;
        }
        let values = match value {
            Value::Array(items) => items.clone(),
            v => vec![v.clone()],
        };
        for v in &values {
            match scalar(key, v)? {
                None => {}
                Some(s) if s.is_empty() && v.is_boolean() => injected.push(format!("--{flag}").into()),
                Some(s) => {
                    injected.push(format!("--{flag}").into());
                    injected.push(s.into());
                }
            }
        }
    }
    let mut out = argv;
    out.splice(sub + 1..sub + 1, injected);
    Ok(out)
}
