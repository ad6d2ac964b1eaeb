//! Flat `key = value` config files, spliced into the argument list right
//! after the subcommand so that later command-line flags override them.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context};

use crate::args::SUBCOMMANDS;

/// Parses config text into `--key=value` arguments.
pub fn parse(text: &str) -> anyhow::Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, got `{line}`", lineno + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            bail!("line {}: empty key", lineno + 1);
        }
        if key == "config" {
            bail!(
                "line {}: config files cannot include other config files",
                lineno + 1
            );
        }
        out.push(format!("--{key}={}", value.trim()).into());
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut iter = argv.iter().skip(1);
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return iter.next().cloned();
        }
        if let Some(path) = s.strip_prefix("--config=") {
            return Some(path.into());
        }
    }
    None
}

/// Returns `argv` with the config file's flags inserted after the subcommand.
pub fn expand(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let injected = parse(&text).with_context(|| format!("in config {}", path.display()))?;
    let Some(pos) = argv
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(argv);
    };
    let mut out = argv[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

/// Renders flags as config text accepted by [`parse`].
pub fn render(flags: &[(&str, String)]) -> String {
    flags.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
