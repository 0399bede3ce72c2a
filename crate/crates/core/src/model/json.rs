//! JSON form of a [`RobotModel`], served to the visualizer at `GET /model`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{FrameSpec, Geometry, JointKind, JointLimits, JointSpec, Link, ModelError, Pose, RobotModel, SpatialInertia, Visual};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    name: String,
    root_link: String,
    floating_base: bool,
    links: Vec<LinkJson>,
    joints: Vec<JointJson>,
    frames: Vec<FrameJson>,
    contact_frames: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseJson {
    xyz: [f64; 3],
    rpy: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkJson {
    name: String,
    mass: f64,
    com: [f64; 3],
    inertia: [[f64; 3]; 3],
    visuals: Vec<VisualJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ShapeJson {
    Box { size: [f64; 3], origin: PoseJson },
    Cylinder { radius: f64, length: f64, origin: PoseJson },
    Sphere { radius: f64, origin: PoseJson },
}

type VisualJson = ShapeJson;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsJson {
    lower: f64,
    upper: f64,
    effort: f64,
    velocity: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointJson {
    name: String,
    #[serde(rename = "type")]
    kind: String,
    parent: String,
    child: String,
    axis: [f64; 3],
    origin: PoseJson,
    limits: Option<LimitsJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameJson {
    name: String,
    link: String,
    origin: PoseJson,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn pose_json(p: &Pose) -> PoseJson {
    PoseJson { xyz: arr(&p.xyz), rpy: arr(&p.rpy) }
}

fn pose(p: &PoseJson) -> Pose {
    Pose::new(Vector3::from(p.xyz), Vector3::from(p.rpy))
}

/// Serializes the model for the visualizer.
pub fn serialize_model(model: &RobotModel) -> String {
    let doc = ModelJson {
        name: model.name().to_string(),
        root_link: model.root_link().to_string(),
        floating_base: model.floating_base(),
        links: model
            .links()
            .iter()
            .map(|l| {
                let m = &l.inertia.inertia_rot;
                LinkJson {
                    name: l.name.clone(),
                    mass: l.inertia.mass,
                    com: arr(&l.inertia.com),
                    inertia: [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]],
                    visuals: l
                        .visuals
                        .iter()
                        .map(|v| {
                            let origin = pose_json(&v.origin);
                            match v.geometry {
                                Geometry::Box { size } => ShapeJson::Box { size: arr(&size), origin },
                                Geometry::Cylinder { radius, length } => ShapeJson::Cylinder { radius, length, origin },
                                Geometry::Sphere { radius } => ShapeJson::Sphere { radius, origin },
                            }
                        })
                        .collect(),
                }
            })
            .collect(),
        joints: model
            .joints()
            .iter()
            .map(|j| JointJson {
                name: j.name.clone(),
                kind: j.kind.as_str().to_string(),
                parent: j.parent.clone(),
                child: j.child.clone(),
                axis: arr(&j.axis),
                origin: pose_json(&j.origin),
                limits: j.limits.map(|l| LimitsJson { lower: l.lower, upper: l.upper, effort: l.effort, velocity: l.velocity }),
            })
            .collect(),
        frames: model
            .frames()
            .iter()
            .map(|f| FrameJson { name: f.name.clone(), link: f.link.clone(), origin: pose_json(&f.origin) })
            .collect(),
        contact_frames: model.contact_frames().to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("model serialize")
}

/// Rebuilds a model from [`serialize_model`] output.
pub fn model_from_json(source: &str) -> Result<RobotModel, ModelError> {
    let doc: ModelJson = serde_json::from_str(source).map_err(|e| ModelError::Json(e.to_string()))?;
    let links = doc
        .links
        .iter()
        .map(|l| Link {
            name: l.name.clone(),
            inertia: SpatialInertia { mass: l.mass, com: Vector3::from(l.com), inertia_rot: Matrix3::from_fn(|r, c| l.inertia[r][c]) },
            visuals: l
                .visuals
                .iter()
                .map(|v| match v {
                    ShapeJson::Box { size, origin } => {
                        Visual { geometry: Geometry::Box { size: Vector3::from(*size) }, origin: pose(origin) }
                    }
                    ShapeJson::Cylinder { radius, length, origin } => {
                        Visual { geometry: Geometry::Cylinder { radius: *radius, length: *length }, origin: pose(origin) }
                    }
                    ShapeJson::Sphere { radius, origin } => Visual { geometry: Geometry::Sphere { radius: *radius }, origin: pose(origin) },
                })
                .collect(),
        })
        .collect();
    let joints = doc
        .joints
        .iter()
        .map(|j| {
            let kind = match j.kind.as_str() {
                "revolute" => JointKind::Revolute,
                "prismatic" => JointKind::Prismatic,
                "fixed" => JointKind::Fixed,
                other => return Err(ModelError::UnsupportedJointType { joint: j.name.clone(), kind: other.to_string() }),
            };
            Ok(JointSpec {
                name: j.name.clone(),
                kind,
                axis: Vector3::from(j.axis),
                origin: pose(&j.origin),
                parent: j.parent.clone(),
                child: j.child.clone(),
                limits: j.limits.as_ref().map(|l| JointLimits { lower: l.lower, upper: l.upper, effort: l.effort, velocity: l.velocity }),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let frames = doc.frames.iter().map(|f| FrameSpec { name: f.name.clone(), link: f.link.clone(), origin: pose(&f.origin) }).collect();
    let model = RobotModel::from_parts(doc.name, links, joints, frames, doc.floating_base, doc.contact_frames)?;
    if model.root_link() != doc.root_link {
        return Err(ModelError::Json(format!("root_link `{}` disagrees with tree root `{}`", doc.root_link, model.root_link())));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Registry;
    use serde_json::Value;

    #[test]
    fn pend1_record_counts() {
        let m = Registry::builtin().model("pend1").unwrap();
        let v: Value = serde_json::from_str(&serialize_model(&m)).unwrap();
        assert_eq!(v["links"].as_array().unwrap().len(), 2);
        assert_eq!(v["joints"].as_array().unwrap().len(), 1);
        assert_eq!(v["floating_base"], Value::Bool(false));
    }

    #[test]
    fn quad12_record_counts() {
        let m = Registry::builtin().model("quad12").unwrap();
        let v: Value = serde_json::from_str(&serialize_model(&m)).unwrap();
        assert_eq!(v["links"].as_array().unwrap().len(), 13);
        assert_eq!(v["joints"].as_array().unwrap().len(), 12);
        assert_eq!(v["floating_base"], Value::Bool(true));
        assert_eq!(v["contact_frames"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn empty_visual_link_serializes_empty_list() {
        let m = Registry::builtin().model("arm2").unwrap();
        let v: Value = serde_json::from_str(&serialize_model(&m)).unwrap();
        assert_eq!(v["links"][0]["name"], "base");
        assert_eq!(v["links"][0]["visuals"], Value::Array(vec![]));
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let reg = Registry::builtin();
        for name in reg.names() {
            let m = reg.model(name).unwrap();
            let back = model_from_json(&serialize_model(&m)).unwrap();
            assert_eq!(back.links().len(), m.links().len());
            for (a, b) in m.links().iter().zip(back.links()) {
                assert_eq!(a.name, b.name);
                assert!((a.inertia.mass - b.inertia.mass).abs() <= 1e-12);
                assert!((a.inertia.com - b.inertia.com).amax() <= 1e-12);
                assert!((a.inertia.inertia_rot - b.inertia.inertia_rot).amax() <= 1e-12);
                assert_eq!(a.visuals, b.visuals);
            }
            assert_eq!(m.joints(), back.joints());
            assert_eq!(m.frames(), back.frames());
            assert_eq!(m.contact_frames(), back.contact_frames());
            assert_eq!(m.floating_base(), back.floating_base());
        }
    }
}
