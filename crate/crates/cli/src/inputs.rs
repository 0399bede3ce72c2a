//! Resolving `--model`, `--config` and `--world` arguments. Each accepts a
//! file path; `--model` and `--config` also accept a registered robot name.

use std::path::{Path, PathBuf};

use locokit_core::backends::{BackendError, WorldConfig};
use locokit_core::model::{
    model_from_json, parse_gains, parse_urdf, GainsConfig, GainsError, ModelError, Registry, RegistryError, RobotModel,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {err}", err.kind())]
    Model { err: ModelError },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("gains: {0}")]
    Gains(#[from] GainsError),
    #[error("world: {0}")]
    World(#[from] BackendError),
    #[error("{0}")]
    Invalid(String),
}

impl From<ModelError> for InputError {
    fn from(err: ModelError) -> Self {
        InputError::Model { err }
    }
}

/// A model plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub name: String,
    /// `builtin:<name>` or the file path as given.
    pub source: String,
    pub model: RobotModel,
}

fn read(path: &Path) -> Result<String, InputError> {
    std::fs::read_to_string(path).map_err(|source| InputError::Io { path: path.to_path_buf(), source })
}

fn looks_like_path(arg: &str) -> bool {
    arg.contains('/') || arg.ends_with(".urdf") || arg.ends_with(".json")
}

pub fn load_model(arg: &str, registry: &Registry) -> Result<LoadedModel, InputError> {
    let path = Path::new(arg);
    if path.exists() || looks_like_path(arg) {
        let text = read(path)?;
        let model = if path.extension().and_then(|e| e.to_str()) == Some("json") { model_from_json(&text)? } else { parse_urdf(&text)? };
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(model.name()).to_string();
        return Ok(LoadedModel { name, source: arg.to_string(), model });
    }
    let model = registry.model(arg)?;
    Ok(LoadedModel { name: arg.to_string(), source: format!("builtin:{arg}"), model })
}

/// Gains from `arg`, or the registry entry of the same robot when absent.
/// A bare file name that does not exist falls back to the registry entry
/// with that stem, so `--config pend1.json` works from any directory.
pub fn load_gains(arg: Option<&str>, robot: &LoadedModel, registry: &Registry) -> Result<GainsConfig, InputError> {
    let Some(arg) = arg else {
        return Ok(registry.gains(&robot.name, &robot.model)?);
    };
    let path = Path::new(arg);
    if path.exists() {
        return Ok(parse_gains(&read(path)?, &robot.model)?);
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    if path.parent().is_some_and(|p| p.as_os_str().is_empty()) && registry.entry(stem).is_ok() {
        return Ok(registry.gains(stem, &robot.model)?);
    }
    Err(InputError::Io { path: path.to_path_buf(), source: std::io::Error::from(std::io::ErrorKind::NotFound) })
}

pub fn load_world(arg: Option<&Path>) -> Result<WorldConfig, InputError> {
    match arg {
        Some(p) => Ok(WorldConfig::from_json(&read(p)?)?),
        None => Ok(WorldConfig::default()),
    }
}

/// Parses `key=value`.
pub fn parse_extra(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected key=value, got `{s}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_paths() {
        let reg = Registry::builtin();
        let m = load_model("arm2", &reg).unwrap();
        assert_eq!(m.source, "builtin:arm2");
        let file = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/pend1.urdf");
        let m = load_model(file, &reg).unwrap();
        assert_eq!(m.name, "pend1");
        assert!(load_gains(Some("pend1.json"), &m, &reg).is_ok());
        assert!(matches!(load_model("nope/missing.urdf", &reg), Err(InputError::Io { .. })));
        assert!(matches!(load_model("nope", &reg), Err(InputError::Registry(_))));
    }

    #[test]
    fn model_error_names_its_kind() {
        let e = InputError::from(
            parse_urdf("<robot name='r'><link name='a'/><joint name='j' type='fixed'><parent link='a'/><child link='b'/></joint></robot>")
                .unwrap_err(),
        );
        assert!(e.to_string().starts_with("DanglingReference"), "{e}");
    }

    #[test]
    fn extra_pairs() {
        assert_eq!(parse_extra("a=b=c").unwrap(), ("a".into(), "b=c".into()));
        assert!(parse_extra("=x").is_err());
        assert!(parse_extra("novalue").is_err());
    }
}
