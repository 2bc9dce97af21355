use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use finegrain_core::Error as CoreError;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Bad flags, paths or settings supplied by the caller.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 1 for invalid input or configuration, 2 for failures while running.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Config(_) | CoreError::Contract(_) | CoreError::Parse { .. } => 1,
                _ => 2,
            };
        }
    }
    2
}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{}: no such file", path.display())));
    }
    Ok(())
}

pub fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{}: no such directory", path.display())));
    }
    Ok(())
}

/// A corpus path: a file as given, or a directory's file named `default`.
pub fn corpus_file(path: &Path, default: &str) -> Result<PathBuf> {
    let file = if path.is_dir() { path.join(default) } else { path.to_path_buf() };
    require_file(&file)?;
    Ok(file)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    write_text(path, &(text + "\n"))
}

#[derive(Serialize)]
struct Snapshot<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    settings: &'a T,
}

/// Writes the fully resolved settings of a run next to its outputs.
pub fn write_run_config(dir: &Path, command: &str, settings: &impl Serialize) -> Result<()> {
    let snap = Snapshot { command, version: env!("CARGO_PKG_VERSION"), settings };
    write_json(&dir.join(RUN_CONFIG_FILE), &snap)
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    require_file(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}
