//! Flat `key = value` run configuration files.
//!
//! Every key is the long name of a flag of the chosen command. Values from
//! the file are placed before the command-line arguments so that flags given
//! on the command line win.

use std::fs;
use std::path::Path;

/// Reads a config file into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are ignored.
pub fn read(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", idx + 1))?;
        let key = key.trim();
        if key.is_empty() || key.starts_with('-') {
            return Err(format!("line {}: bad key {key:?}", idx + 1));
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Turns config pairs into flags. `true`/`false` values are switches.
pub fn to_args(pairs: &[(String, String)]) -> Vec<String> {
    let mut args = Vec::new();
    for (key, value) in pairs {
        match value.as_str() {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => args.push(format!("--{key}={value}")),
        }
    }
    args
}

/// Splices the config file named by `--config` (if any) into `argv` right
/// after the subcommand.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut config_path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut iter = argv.into_iter();
    while let Some(arg) = iter.next() {
        if arg == "--config" {
            config_path = Some(iter.next().ok_or("--config needs a path")?);
        } else if let Some(path) = arg.strip_prefix("--config=") {
            config_path = Some(path.to_string());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config_path else {
        return Ok(rest);
    };
    let from_file = to_args(&read(Path::new(&path))?);
    // program name and subcommand come first
    let split = rest.len().min(2);
    let mut out: Vec<String> = rest[..split].to_vec();
    out.extend(from_file);
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}
