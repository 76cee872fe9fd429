//! Subcommand implementations.

pub mod build_bank;
pub mod eval;
pub mod gen_data;
pub mod plan;
pub mod train;

use crate::{CliError, TOOL_VERSION};
use serde::Serialize;
use skillflow_core::synth::{Manifest, SyntheticDemo};
use std::path::{Path, PathBuf};

/// Standard artifact header: tool version, full command configuration, seed.
pub fn config_echo<A: Serialize>(
    command: &str,
    args: &A,
    seed: u64,
) -> serde_json::Map<String, serde_json::Value> {
    let mut map = serde_json::Map::new();
    map.insert("tool_version".into(), TOOL_VERSION.into());
    map.insert("seed".into(), seed.into());
    let mut cfg = serde_json::Map::new();
    cfg.insert("command".into(), command.into());
    if let serde_json::Value::Object(flags) = serde_json::to_value(args).expect("args serialize") {
        cfg.extend(flags);
    }
    map.insert("config".into(), serde_json::Value::Object(cfg));
    map
}

/// The inner configuration object alone (command name plus flags), for
/// artifacts that carry explicit version/seed fields.
pub fn config_value<A: Serialize>(command: &str, args: &A, seed: u64) -> serde_json::Value {
    config_echo(command, args, seed)
        .remove("config")
        .expect("echo always carries a config")
}

/// Loads a manifest and resolves demo paths relative to its directory.
pub fn load_manifest(path: &Path) -> Result<(Manifest, PathBuf), CliError> {
    let manifest = Manifest::load(path)?;
    let dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((manifest, dir))
}

pub fn load_split_demos(
    manifest: &Manifest,
    dir: &Path,
    split: skillflow_core::synth::Split,
) -> Result<Vec<SyntheticDemo>, CliError> {
    manifest
        .split(split)
        .map(|e| skillflow_core::synth::load_demo(&dir.join(&e.path)).map_err(CliError::from))
        .collect()
}

/// Skill names by index, validated contiguous from zero.
pub fn skill_names(manifest: &Manifest) -> Result<Vec<String>, CliError> {
    let count = manifest
        .demos
        .iter()
        .map(|e| e.skill.index + 1)
        .max()
        .ok_or_else(|| CliError::Usage("manifest lists no demos".into()))?;
    let mut names = vec![None; count];
    for e in &manifest.demos {
        names[e.skill.index] = Some(e.skill.name.clone());
    }
    names
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or_else(|| CliError::Usage(format!("no demos for skill index {i}"))))
        .collect()
}

pub fn write_pretty_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serialization");
    std::fs::write(path, text).map_err(CliError::from)
}
