//! `key = value` config files.
//!
//! Keys are long flag names (`learning-rate`, or `learning_rate`). Keys above
//! any section apply to every subcommand that has that flag and are skipped
//! otherwise; keys under `[align]` etc. apply to that subcommand only and
//! must exist there. File values are spliced in front of the command line,
//! so an explicit flag always wins.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub section: Option<String>,
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str, origin: &Path) -> Result<Vec<Entry>> {
    let mut section = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value, got {line:?}", origin.display(), i + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            bail!("{}:{}: bad key {:?}", origin.display(), i + 1, k.trim());
        }
        if key == "config" {
            bail!(
                "{}:{}: config files cannot include other config files",
                origin.display(),
                i + 1
            );
        }
        out.push(Entry {
            section: section.clone(),
            key,
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// Value of `--config` in `args`, if present.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// `args` with config-file values inserted right after the subcommand name.
/// `known` gives the long flags each subcommand accepts.
pub fn expand_args(args: Vec<OsString>, known: impl Fn(&str) -> Option<BTreeSet<String>>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(command) = args.get(1).map(|a| a.to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let Some(flags) = known(&command) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let mut injected = Vec::new();
    for e in parse(&text, &path)? {
        match &e.section {
            Some(s) if *s != command => continue,
            Some(_) if !flags.contains(&e.key) => {
                bail!("{}:{}: {command} has no option --{}", path.display(), e.line, e.key)
            }
            None if !flags.contains(&e.key) => continue,
            _ => {}
        }
        injected.push(OsString::from(format!("--{}", e.key)));
        injected.push(OsString::from(e.value));
    }
    let mut out = args;
    out.splice(2..2, injected);
    Ok(out)
}
