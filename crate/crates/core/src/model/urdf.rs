//! URDF subset reader.
//!
//! Supported: `robot`, `link` (`inertial`, `visual` with box/cylinder/sphere
//! geometry), `joint` (revolute, prismatic, fixed). Two small extensions are
//! understood: `<frame name link xyz rpy/>` attaches a named frame to a link,
//! `<contact frame="..."/>` marks a frame or link as a ground contact, and
//! `<floating_base/>` gives the root link six unactuated degrees of freedom.
//! Everything else is skipped with a warning.

use nalgebra::{Matrix3, Vector3};
use roxmltree::{Document, Node};

use super::{
    has_errors, validate_model, FrameSpec, Geometry, JointKind, JointLimits, JointSpec, Link, ModelError, Pose, RobotModel, SpatialInertia,
    Visual,
};

/// Parses and validates a URDF document.
pub fn parse_urdf(source: &str) -> Result<RobotModel, ModelError> {
    let doc = Document::parse(source).map_err(|e| {
        let (line, col) = match e {
            // roxmltree reports these at 1:1; point at the end of input instead.
            roxmltree::Error::UnexpectedEndOfStream => end_position(source),
            _ => (e.pos().row, e.pos().col),
        };
        ModelError::MalformedXml { line, col, message: e.to_string() }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "robot" {
        let pos = doc.text_pos_at(root.range().start);
        return Err(ModelError::MalformedXml {
            line: pos.row,
            col: pos.col,
            message: format!("expected <robot> root element, found <{}>", root.tag_name().name()),
        });
    }
    let name = root.attribute("name").unwrap_or("robot").to_string();

    let mut warnings = Vec::new();
    let mut links = Vec::new();
    let mut joints = Vec::new();
    let mut frames = Vec::new();
    let mut contacts = Vec::new();
    let mut floating = false;

    for node in root.children().filter(Node::is_element) {
        match node.tag_name().name() {
            "link" => links.push(parse_link(node, &mut warnings)?),
            "joint" => joints.push(parse_joint(node, &mut warnings)?),
            "frame" => frames.push(FrameSpec {
                name: required(node, "name")?.to_string(),
                link: required(node, "link")?.to_string(),
                origin: Pose::new(vec3_attr(node, "xyz", Vector3::zeros())?, vec3_attr(node, "rpy", Vector3::zeros())?),
            }),
            "contact" => contacts.push(required(node, "frame")?.to_string()),
            "floating_base" => floating = true,
            other => warnings.push(format!("ignored element <{other}>")),
        }
    }

    let model = RobotModel::from_parts(name, links, joints, frames, floating, contacts)?.with_warnings(warnings);
    let diags = validate_model(&model);
    if has_errors(&diags) {
        return Err(ModelError::Invalid(diags));
    }
    let mut warnings = model.warnings().to_vec();
    warnings.extend(diags.iter().map(ToString::to_string));
    Ok(model.with_warnings(warnings))
}

fn required<'a>(node: Node<'a, '_>, attr: &str) -> Result<&'a str, ModelError> {
    node.attribute(attr)
        .ok_or_else(|| ModelError::MissingAttribute { element: node.tag_name().name().to_string(), attribute: attr.to_string() })
}

fn numbers(node: Node, attr: &str, raw: &str) -> Result<Vec<f64>, ModelError> {
    raw.split_whitespace().map(str::parse::<f64>).collect::<Result<Vec<_>, _>>().map_err(|_| ModelError::InvalidNumber {
        element: node.tag_name().name().to_string(),
        attribute: attr.to_string(),
        value: raw.to_string(),
    })
}

fn scalar(node: Node, attr: &str) -> Result<f64, ModelError> {
    let raw = required(node, attr)?;
    match numbers(node, attr, raw)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(ModelError::InvalidNumber {
            element: node.tag_name().name().to_string(),
            attribute: attr.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn scalar_or(node: Node, attr: &str, default: f64) -> Result<f64, ModelError> {
    if node.attribute(attr).is_some() {
        scalar(node, attr)
    } else {
        Ok(default)
    }
}

fn vec3_attr(node: Node, attr: &str, default: Vector3<f64>) -> Result<Vector3<f64>, ModelError> {
    let Some(raw) = node.attribute(attr) else {
        return Ok(default);
    };
    match numbers(node, attr, raw)?.as_slice() {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(ModelError::InvalidNumber {
            element: node.tag_name().name().to_string(),
            attribute: attr.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn child<'a, 'i>(node: Node<'a, 'i>, tag: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.tag_name().name() == tag)
}

fn parse_origin(node: Node) -> Result<Pose, ModelError> {
    match child(node, "origin") {
        None => Ok(Pose::default()),
        Some(o) => Ok(Pose::new(vec3_attr(o, "xyz", Vector3::zeros())?, vec3_attr(o, "rpy", Vector3::zeros())?)),
    }
}

fn parse_link(node: Node, warnings: &mut Vec<String>) -> Result<Link, ModelError> {
    let name = required(node, "name")?.to_string();
    let mut inertia = SpatialInertia::zero();
    let mut visuals = Vec::new();
    for c in node.children().filter(Node::is_element) {
        match c.tag_name().name() {
            "inertial" => inertia = parse_inertial(c, &name, warnings)?,
            "visual" => {
                if let Some(v) = parse_visual(c, &name, warnings)? {
                    visuals.push(v);
                }
            }
            other => warnings.push(format!("link `{name}`: ignored element <{other}>")),
        }
    }
    Ok(Link { name, inertia, visuals })
}

fn parse_inertial(node: Node, link: &str, warnings: &mut Vec<String>) -> Result<SpatialInertia, ModelError> {
    let origin = parse_origin(node)?;
    let mass = match child(node, "mass") {
        Some(m) => scalar(m, "value")?,
        None => return Err(ModelError::MissingAttribute { element: format!("inertial of `{link}`"), attribute: "mass".into() }),
    };
    let tensor = match child(node, "inertia") {
        Some(i) => {
            let g = |a: &str| scalar_or(i, a, 0.0);
            let (ixx, ixy, ixz, iyy, iyz, izz) = (g("ixx")?, g("ixy")?, g("ixz")?, g("iyy")?, g("iyz")?, g("izz")?);
            Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz)
        }
        None => {
            warnings.push(format!("link `{link}`: inertial without <inertia>, assuming zero rotational inertia"));
            Matrix3::zeros()
        }
    };
    // Re-express the tensor in link-frame axes.
    let r = origin.rotation().to_rotation_matrix();
    let rotated = r.matrix() * tensor * r.matrix().transpose();
    Ok(SpatialInertia { mass, com: origin.xyz, inertia_rot: rotated })
}

fn parse_visual(node: Node, link: &str, warnings: &mut Vec<String>) -> Result<Option<Visual>, ModelError> {
    let origin = parse_origin(node)?;
    let Some(geom) = child(node, "geometry") else {
        warnings.push(format!("link `{link}`: visual without geometry skipped"));
        return Ok(None);
    };
    let Some(shape) = geom.children().find(Node::is_element) else {
        warnings.push(format!("link `{link}`: empty geometry skipped"));
        return Ok(None);
    };
    let geometry = match shape.tag_name().name() {
        "box" => {
            let raw = required(shape, "size")?;
            Geometry::Box { size: vec3_attr(shape, "size", Vector3::zeros()).map_err(|_| bad(shape, "size", raw))? }
        }
        "cylinder" => Geometry::Cylinder { radius: scalar(shape, "radius")?, length: scalar(shape, "length")? },
        "sphere" => Geometry::Sphere { radius: scalar(shape, "radius")? },
        other => {
            warnings.push(format!("link `{link}`: unsupported geometry <{other}> skipped"));
            return Ok(None);
        }
    };
    for c in node.children().filter(Node::is_element) {
        let tag = c.tag_name().name();
        if tag != "origin" && tag != "geometry" {
            warnings.push(format!("link `{link}`: ignored visual element <{tag}>"));
        }
    }
    Ok(Some(Visual { geometry, origin }))
}

fn bad(node: Node, attr: &str, raw: &str) -> ModelError {
    ModelError::InvalidNumber { element: node.tag_name().name().to_string(), attribute: attr.to_string(), value: raw.to_string() }
}

fn end_position(source: &str) -> (u32, u32) {
    let line = source.matches('\n').count() + 1;
    let col = source.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line as u32, col as u32)
}

fn parse_joint(node: Node, warnings: &mut Vec<String>) -> Result<JointSpec, ModelError> {
    let name = required(node, "name")?.to_string();
    let kind_raw = required(node, "type")?;
    let kind = match kind_raw {
        "revolute" => JointKind::Revolute,
        "prismatic" => JointKind::Prismatic,
        "fixed" => JointKind::Fixed,
        other => return Err(ModelError::UnsupportedJointType { joint: name, kind: other.to_string() }),
    };
    let link_ref = |tag: &str| -> Result<String, ModelError> {
        let c = child(node, tag)
            .ok_or_else(|| ModelError::MissingAttribute { element: format!("joint `{name}`"), attribute: tag.to_string() })?;
        Ok(required(c, "link")?.to_string())
    };
    let parent = link_ref("parent")?;
    let child_link = link_ref("child")?;
    let origin = parse_origin(node)?;
    let axis = match child(node, "axis") {
        Some(a) => vec3_attr(a, "xyz", Vector3::x())?,
        None => Vector3::x(),
    };
    let limits = match child(node, "limit") {
        Some(l) => Some(JointLimits {
            lower: scalar_or(l, "lower", 0.0)?,
            upper: scalar_or(l, "upper", 0.0)?,
            effort: scalar(l, "effort")?,
            velocity: scalar(l, "velocity")?,
        }),
        None => None,
    };
    for c in node.children().filter(Node::is_element) {
        let tag = c.tag_name().name();
        if !matches!(tag, "parent" | "child" | "origin" | "axis" | "limit") {
            warnings.push(format!("joint `{name}`: ignored element <{tag}>"));
        }
    }
    Ok(JointSpec { name, kind, axis, origin, parent, child: child_link, limits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Severity;

    #[test]
    fn smallest_legal_model() {
        let m = parse_urdf(r#"<robot name="r"><link name="base"/></robot>"#).unwrap();
        assert_eq!(m.links().len(), 1);
        assert_eq!(m.joints().len(), 0);
        assert_eq!(m.root_link(), "base");
        assert!(!m.floating_base());
    }

    #[test]
    fn malformed_xml_carries_position() {
        let err = parse_urdf("<robot name=\"r\">\n  <link name=\"a\">\n</robot>").unwrap_err();
        match err {
            ModelError::MalformedXml { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn planar_joint_is_unsupported() {
        let src = r#"<robot name="r"><link name="a"/><link name="b"/>
            <joint name="p" type="planar"><parent link="a"/><child link="b"/></joint></robot>"#;
        assert_eq!(parse_urdf(src).unwrap_err(), ModelError::UnsupportedJointType { joint: "p".into(), kind: "planar".into() });
    }

    #[test]
    fn undeclared_child_dangles() {
        let src = r#"<robot name="r"><link name="a"/>
            <joint name="j" type="fixed"><parent link="a"/><child link="ghost"/></joint></robot>"#;
        assert_eq!(parse_urdf(src).unwrap_err(), ModelError::DanglingReference { element: "j".into(), missing: "ghost".into() });
    }

    #[test]
    fn unknown_elements_warn() {
        let src = r#"<robot name="r"><link name="a"><collision/></link><gazebo/></robot>"#;
        let m = parse_urdf(src).unwrap();
        assert_eq!(m.warnings().len(), 2);
        assert!(m.warnings().iter().any(|w| w.contains("<gazebo>")));
    }

    #[test]
    fn inertia_rotated_into_link_frame() {
        let src = r#"<robot name="r"><link name="a"><inertial>
            <origin xyz="0 0 1" rpy="0 0 1.5707963267948966"/><mass value="2"/>
            <inertia ixx="1" iyy="2" izz="3" ixy="0" ixz="0" iyz="0"/></inertial></link></robot>"#;
        let m = parse_urdf(src).unwrap();
        let i = m.links()[0].inertia;
        assert_eq!(i.mass, 2.0);
        assert!((i.inertia_rot[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((i.inertia_rot[(1, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(i.com, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn negative_mass_rejected_with_diagnostic() {
        let src = r#"<robot name="r"><link name="a"><inertial><mass value="-1"/></inertial></link></robot>"#;
        match parse_urdf(src).unwrap_err() {
            ModelError::Invalid(d) => {
                assert_eq!(d.len(), 1);
                assert_eq!(d[0].severity, Severity::Error);
                assert!(d[0].message.contains("negative mass"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
