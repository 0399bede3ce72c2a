//! Robot registry: `robot_name` is the single key that joins a description
//! with its gains file.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::{parse_gains, parse_urdf, GainsConfig, GainsError, ModelError, RobotModel};

/// Environment variable overriding the fixture directory.
pub const FIXTURES_ENV: &str = "LOCOKIT_FIXTURES";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown robot `{0}`")]
    UnknownRobot(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gains(#[from] GainsError),
    #[error("reading fixtures: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotEntry {
    pub urdf: String,
    pub gains: String,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, RobotEntry>,
}

const BUILTIN: [(&str, &str, &str); 4] = [
    ("pend1", include_str!("../../../../fixtures/pend1.urdf"), include_str!("../../../../fixtures/pend1.json")),
    ("arm2", include_str!("../../../../fixtures/arm2.urdf"), include_str!("../../../../fixtures/arm2.json")),
    ("arm6", include_str!("../../../../fixtures/arm6.urdf"), include_str!("../../../../fixtures/arm6.json")),
    ("quad12", include_str!("../../../../fixtures/quad12.urdf"), include_str!("../../../../fixtures/quad12.json")),
];

impl Registry {
    /// The four robots shipped with the crate.
    pub fn builtin() -> Self {
        let mut r = Self::default();
        for (name, urdf, gains) in BUILTIN {
            r.register(name, urdf, gains);
        }
        r
    }

    /// Every `<name>.urdf` in `dir` that has a sibling `<name>.json`.
    pub fn from_dir(dir: &Path) -> Result<Self, RegistryError> {
        let mut r = Self::default();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<Vec<_>, _>>()?.into_iter().map(|e| e.path()).collect();
        paths.sort();
        for p in paths {
            if p.extension().and_then(|e| e.to_str()) != Some("urdf") {
                continue;
            }
            let gains_path = p.with_extension("json");
            if !gains_path.exists() {
                continue;
            }
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            r.register(&name, &std::fs::read_to_string(&p)?, &std::fs::read_to_string(&gains_path)?);
        }
        Ok(r)
    }

    /// The directory named by `LOCOKIT_FIXTURES`, or the built-in set.
    pub fn from_env() -> Result<Self, RegistryError> {
        match std::env::var_os(FIXTURES_ENV) {
            Some(dir) => Self::from_dir(Path::new(&dir)),
            None => Ok(Self::builtin()),
        }
    }

    pub fn register(&mut self, name: &str, urdf: &str, gains: &str) {
        self.entries.insert(name.to_string(), RobotEntry { urdf: urdf.to_string(), gains: gains.to_string() });
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn entry(&self, name: &str) -> Result<&RobotEntry, RegistryError> {
        self.entries.get(name).ok_or_else(|| RegistryError::UnknownRobot(name.to_string()))
    }

    pub fn model(&self, name: &str) -> Result<RobotModel, RegistryError> {
        Ok(parse_urdf(&self.entry(name)?.urdf)?)
    }

    pub fn gains(&self, name: &str, model: &RobotModel) -> Result<GainsConfig, RegistryError> {
        Ok(parse_gains(&self.entry(name)?.gains, model)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    #[test]
    fn builtin_fixtures_load_clean() {
        let reg = Registry::builtin();
        assert_eq!(reg.names(), ["arm2", "arm6", "pend1", "quad12"]);
        for name in reg.names() {
            let m = reg.model(name).unwrap();
            assert!(validate_model(&m).is_empty(), "{name}: {:?}", validate_model(&m));
            reg.gains(name, &m).unwrap();
        }
    }

    #[test]
    fn unknown_robot() {
        assert!(matches!(Registry::builtin().model("nosuchbot"), Err(RegistryError::UnknownRobot(_))));
    }

    #[test]
    fn from_dir_pairs_urdf_with_gains() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.urdf"), BUILTIN[0].1).unwrap();
        std::fs::write(dir.path().join("a.json"), BUILTIN[0].2).unwrap();
        std::fs::write(dir.path().join("lonely.urdf"), BUILTIN[1].1).unwrap();
        let reg = Registry::from_dir(dir.path()).unwrap();
        assert_eq!(reg.names(), ["a"]);
        assert_eq!(reg.model("a").unwrap().nq(), 1);
    }
}
