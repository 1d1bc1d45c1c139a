//! Config files are turned into extra command-line arguments placed before
//! the user's own, so explicit flags override them.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context};
use serde_json::{Map, Value};

const GLOBAL_WITH_VALUE: [&str; 3] = ["--seed", "--threads", "--config"];
const SUBCOMMANDS: [&str; 6] = ["smooth", "tune", "simulate", "theory", "baseline", "generate"];

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut found = None;
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            found = it.next().cloned();
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(v.into());
        }
    }
    found
}

fn subcommand_position(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy();
        if GLOBAL_WITH_VALUE.contains(&s.as_ref()) {
            i += 2;
            continue;
        }
        if SUBCOMMANDS.contains(&s.as_ref()) {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn to_flags(obj: &Map<String, Value>, section: &str) -> anyhow::Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (k, v) in obj {
        let flag = format!("--{}", k.replace('_', "-"));
        let text = match v {
            Value::Bool(true) => {
                out.push(flag.into());
                continue;
            }
            Value::Bool(false) | Value::Null => continue,
            Value::Number(n) => n.to_string(),
            Value::String(s) => s.clone(),
            Value::Array(items) => items
                .iter()
                .map(|x| match x {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => bail!("config {section}.{k}: list entries must be numbers or strings"),
                })
                .collect::<anyhow::Result<Vec<_>>>()?
                .join(","),
            Value::Object(_) => v.to_string(),
        };
        out.push(flag.into());
        out.push(text.into());
    }
    Ok(out)
}

fn load(path: &Path) -> anyhow::Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    match serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))? {
        Value::Object(m) => Ok(m),
        _ => bail!("config {}: top level must be a JSON object", path.display()),
    }
}

/// Inserts config-derived flags: globals right after the program name,
/// subcommand keys right after the subcommand.
pub fn expand_args(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let cfg = load(Path::new(&path))?;
    let sub = subcommand_position(&argv);
    let sub_name = sub.map(|i| argv[i].to_string_lossy().into_owned());

    let mut globals = Map::new();
    let mut section = None;
    for (k, v) in &cfg {
        if SUBCOMMANDS.contains(&k.as_str()) {
            if Some(k) == sub_name.as_ref() {
                match v {
                    Value::Object(m) => section = Some(m.clone()),
                    _ => bail!("config key `{k}` must be an object"),
                }
            }
        } else if ["seed", "threads"].contains(&k.as_str()) {
            globals.insert(k.clone(), v.clone());
        } else {
            bail!("config: unknown top-level key `{k}`");
        }
    }

    let mut out = vec![argv[0].clone()];
    out.extend(to_flags(&globals, "global")?);
    match sub {
        Some(i) => {
            out.extend(argv[1..=i].iter().cloned());
            if let Some(m) = &section {
                out.extend(to_flags(m, sub_name.as_deref().unwrap_or(""))?);
            }
            out.extend(argv[i + 1..].iter().cloned());
        }
        None => out.extend(argv[1..].iter().cloned()),
    }
    Ok(out)
}
