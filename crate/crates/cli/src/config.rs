//! Plain-text `key = value` config files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

/// Parsed config: keys normalized to kebab-case.
pub type ConfigMap = BTreeMap<String, (String, usize)>;

pub const KNOWN_KEYS: [&str; 13] = [
    "n",
    "replications",
    "seed",
    "q-grid",
    "s-grid",
    "weighting",
    "schedule",
    "triangle",
    "out",
    "threads",
    "tau2",
    "prior-cov",
    "no-wallclock",
];

/// One `key = value` per line; `#` starts a comment. Values keep their line
/// number so later validation can point at it.
pub fn parse_config(text: &str) -> Result<ConfigMap, CliError> {
    let mut out = ConfigMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim().replace('_', "-").to_ascii_lowercase();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config {
                line: line_no,
                message: format!("unknown key `{key}`"),
            });
        }
        out.insert(key, (value.trim().to_string(), line_no));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<ConfigMap, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Comma-separated floats; `inf` is accepted.
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if items.is_empty() {
        return Err("empty list".into());
    }
    items
        .iter()
        .map(|t| t.parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if items.is_empty() {
        return Err("empty list".into());
    }
    items
        .iter()
        .map(|t| t.parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}
