//! Per-robot gains: PID gains and home configuration per joint.
//!
//! ```json
//! { "joints": { "<name>": { "kp": 50, "kd": 5, "ki": 0, "home": 0.5 } }, "homing_duration": 1.0 }
//! ```

use nalgebra::DVector;
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::RobotModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GainsError {
    #[error("joint `{joint}`: {detail}")]
    MissingJoint { joint: String, detail: String },
    #[error("gains given for unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("joint `{joint}`: negative gain {gain} = {value}")]
    NegativeGain { joint: String, gain: &'static str, value: f64 },
    #[error("joint `{joint}`: home {home} outside limits [{lower}, {upper}]")]
    HomeOutOfLimits { joint: String, home: f64, lower: f64, upper: f64 },
    #[error("homing_duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("invalid gains JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    pub home: f64,
}

/// Gains in the model's joint order.
#[derive(Debug, Clone, PartialEq)]
pub struct GainsConfig {
    pub joint_names: Vec<String>,
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
    pub ki: DVector<f64>,
    pub q_home: DVector<f64>,
    pub homing_duration: f64,
}

impl GainsConfig {
    pub fn len(&self) -> usize {
        self.joint_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_names.is_empty()
    }

    pub fn joint(&self, i: usize) -> JointGains {
        JointGains { kp: self.kp[i], kd: self.kd[i], ki: self.ki[i], home: self.q_home[i] }
    }

    /// Builds a config from per-joint gains listed in model order, checking
    /// signs and home limits.
    pub fn from_joint_gains(model: &RobotModel, gains: &[JointGains], homing_duration: f64) -> Result<Self, GainsError> {
        let names = model.joint_names();
        if gains.len() != names.len() {
            let missing = names.get(gains.len()).copied().unwrap_or("<extra>");
            return Err(GainsError::MissingJoint { joint: missing.to_string(), detail: "no entry".into() });
        }
        if !(homing_duration.is_finite() && homing_duration > 0.0) {
            return Err(GainsError::InvalidDuration(homing_duration));
        }
        for ((name, g), lim) in names.iter().zip(gains).zip(model.dof_limits()) {
            for (gain, value) in [("kp", g.kp), ("kd", g.kd), ("ki", g.ki)] {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(GainsError::NegativeGain { joint: name.to_string(), gain, value });
                }
            }
            if !(g.home >= lim.lower && g.home <= lim.upper) {
                return Err(GainsError::HomeOutOfLimits { joint: name.to_string(), home: g.home, lower: lim.lower, upper: lim.upper });
            }
        }
        let col = |f: fn(&JointGains) -> f64| DVector::from_iterator(gains.len(), gains.iter().map(f));
        Ok(Self {
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            kp: col(|g| g.kp),
            kd: col(|g| g.kd),
            ki: col(|g| g.ki),
            q_home: col(|g| g.home),
            homing_duration,
        })
    }
}

/// Parses a gains file and re-sorts it into the model's joint order.
pub fn parse_gains(source: &str, model: &RobotModel) -> Result<GainsConfig, GainsError> {
    let doc: Value = serde_json::from_str(source).map_err(|e| GainsError::Json(e.to_string()))?;
    let joints = doc.get("joints").and_then(Value::as_object).ok_or_else(|| GainsError::Json("missing object `joints`".into()))?;
    let homing_duration =
        doc.get("homing_duration").and_then(Value::as_f64).ok_or_else(|| GainsError::Json("missing number `homing_duration`".into()))?;

    let names = model.joint_names();
    if let Some(unknown) = joints.keys().find(|k| !names.contains(&k.as_str())) {
        return Err(GainsError::UnknownJoint(unknown.clone()));
    }
    let mut ordered = Vec::with_capacity(names.len());
    for name in &names {
        let entry = joints
            .get(*name)
            .and_then(Value::as_object)
            .ok_or_else(|| GainsError::MissingJoint { joint: name.to_string(), detail: "no entry".into() })?;
        let field = |key: &str| -> Result<f64, GainsError> {
            entry
                .get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| GainsError::MissingJoint { joint: name.to_string(), detail: format!("missing `{key}`") })
        };
        ordered.push(JointGains { kp: field("kp")?, kd: field("kd")?, ki: field("ki")?, home: field("home")? });
    }
    GainsConfig::from_joint_gains(model, &ordered, homing_duration)
}

/// Writes a gains config back to JSON, joints in model order.
pub fn emit_gains(gains: &GainsConfig) -> String {
    let mut joints = Map::new();
    for (i, name) in gains.joint_names.iter().enumerate() {
        let g = gains.joint(i);
        joints.insert(name.clone(), json!({ "kp": g.kp, "kd": g.kd, "ki": g.ki, "home": g.home }));
    }
    let doc = json!({ "joints": joints, "homing_duration": gains.homing_duration });
    serde_json::to_string_pretty(&doc).expect("gains serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Registry;

    fn arm2() -> RobotModel {
        Registry::builtin().model("arm2").unwrap()
    }

    #[test]
    fn reverse_file_order_is_resorted() {
        let src = r#"{ "joints": {
            "j2": { "kp": 2, "kd": 0.2, "ki": 0, "home": 0.2 },
            "j1": { "kp": 1, "kd": 0.1, "ki": 0, "home": 0.1 } }, "homing_duration": 2 }"#;
        let g = parse_gains(src, &arm2()).unwrap();
        assert_eq!(g.joint_names, ["j1", "j2"]);
        assert_eq!(g.kp.as_slice(), &[1.0, 2.0]);
        assert_eq!(g.q_home.as_slice(), &[0.1, 0.2]);
    }

    #[test]
    fn omitted_kp_is_missing_joint() {
        let src = r#"{ "joints": {
            "j1": { "kd": 0.1, "ki": 0, "home": 0 },
            "j2": { "kp": 2, "kd": 0.2, "ki": 0, "home": 0 } }, "homing_duration": 2 }"#;
        assert!(matches!(parse_gains(src, &arm2()), Err(GainsError::MissingJoint { joint, .. }) if joint == "j1"));
    }

    #[test]
    fn home_beyond_limit() {
        let src = r#"{ "joints": {
            "j1": { "kp": 1, "kd": 0.1, "ki": 0, "home": 10 },
            "j2": { "kp": 2, "kd": 0.2, "ki": 0, "home": 0 } }, "homing_duration": 2 }"#;
        assert!(matches!(parse_gains(src, &arm2()), Err(GainsError::HomeOutOfLimits { .. })));
    }

    #[test]
    fn unknown_and_negative() {
        let unknown = r#"{ "joints": {
            "j1": { "kp": 1, "kd": 0.1, "ki": 0, "home": 0 },
            "j2": { "kp": 2, "kd": 0.2, "ki": 0, "home": 0 },
            "j9": { "kp": 2, "kd": 0.2, "ki": 0, "home": 0 } }, "homing_duration": 2 }"#;
        assert_eq!(parse_gains(unknown, &arm2()), Err(GainsError::UnknownJoint("j9".into())));
        let negative = r#"{ "joints": {
            "j1": { "kp": 1, "kd": -0.1, "ki": 0, "home": 0 },
            "j2": { "kp": 2, "kd": 0.2, "ki": 0, "home": 0 } }, "homing_duration": 2 }"#;
        assert!(matches!(parse_gains(negative, &arm2()), Err(GainsError::NegativeGain { gain: "kd", .. })));
    }

    #[test]
    fn emit_then_parse_is_identity() {
        let reg = Registry::builtin();
        for name in reg.names() {
            let model = reg.model(name).unwrap();
            let g = reg.gains(name, &model).unwrap();
            assert_eq!(parse_gains(&emit_gains(&g), &model).unwrap(), g, "{name}");
            assert_eq!(g.joint_names, model.joint_names());
        }
    }
}
