//! Robot descriptions: the URDF subset parser, per-robot gains, the JSON model
//! schema served to the visualizer and the registry of shipped robots.
//!
//! A [`RobotModel`] is immutable once built. Links are stored depth-first from
//! the root; the parent joint of `links[k]` is `joints[k - 1]`, and joint-space
//! vectors (`q`, `qd`, gains, ...) are indexed over the non-fixed joints in
//! that same order.

mod gains;
mod json;
mod registry;
mod urdf;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{DVector, Isometry3, Matrix3, SymmetricEigen, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

pub use gains::{emit_gains, parse_gains, GainsConfig, GainsError, JointGains};
pub use json::{model_from_json, serialize_model};
pub use registry::{Registry, RegistryError, RobotEntry, FIXTURES_ENV};
pub use urdf::parse_urdf;

/// Errors raised while building a [`RobotModel`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("malformed XML at {line}:{col}: {message}")]
    MalformedXml { line: u32, col: u32, message: String },
    #[error("joint `{joint}` has unsupported type `{kind}`")]
    UnsupportedJointType { joint: String, kind: String },
    #[error("`{element}` references missing `{missing}`")]
    DanglingReference { element: String, missing: String },
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("<{element}> is missing `{attribute}`")]
    MissingAttribute { element: String, attribute: String },
    #[error("<{element}> attribute `{attribute}` is not a valid number list: `{value}`")]
    InvalidNumber { element: String, attribute: String, value: String },
    #[error("not a kinematic tree: {0}")]
    NotATree(String),
    #[error("model failed validation: {}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("invalid model JSON: {0}")]
    Json(String),
}

impl ModelError {
    /// Variant name, for diagnostics that must be matched by tools.
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::MalformedXml { .. } => "MalformedXml",
            ModelError::UnsupportedJointType { .. } => "UnsupportedJointType",
            ModelError::DanglingReference { .. } => "DanglingReference",
            ModelError::DuplicateName(_) => "DuplicateName",
            ModelError::MissingAttribute { .. } => "MissingAttribute",
            ModelError::InvalidNumber { .. } => "InvalidNumber",
            ModelError::NotATree(_) => "NotATree",
            ModelError::Invalid(_) => "Invalid",
            ModelError::Json(_) => "Json",
        }
    }
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Name of the offending link, joint or frame.
    pub element: String,
    pub message: String,
}

impl Diagnostic {
    fn error(element: &str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, element: element.to_string(), message: message.into() }
    }

    fn warning(element: &str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, element: element.to_string(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} [{}]: {}", self.element, self.message)
    }
}

/// Translation plus fixed-axis roll-pitch-yaw, as written in URDF `origin` tags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub xyz: Vector3<f64>,
    pub rpy: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self { xyz: Vector3::zeros(), rpy: Vector3::zeros() }
    }
}

impl Pose {
    pub fn new(xyz: Vector3<f64>, rpy: Vector3<f64>) -> Self {
        Self { xyz, rpy }
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(self.rpy.x, self.rpy.y, self.rpy.z)
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.xyz), self.rotation())
    }
}

/// Mass, center of mass (link frame) and rotational inertia about the CoM
/// (link-frame axes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia_rot: Matrix3<f64>,
}

impl SpatialInertia {
    pub fn zero() -> Self {
        Self { mass: 0.0, com: Vector3::zeros(), inertia_rot: Matrix3::zeros() }
    }

    pub fn point_mass(mass: f64, com: Vector3<f64>) -> Self {
        Self { mass, com, inertia_rot: Matrix3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    Box { size: Vector3<f64> },
    Cylinder { radius: f64, length: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visual {
    pub geometry: Geometry,
    pub origin: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub inertia: SpatialInertia,
    pub visuals: Vec<Visual>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

impl JointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JointKind::Revolute => "revolute",
            JointKind::Prismatic => "prismatic",
            JointKind::Fixed => "fixed",
        }
    }

    pub fn is_fixed(self) -> bool {
        self == JointKind::Fixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
    pub effort: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// Unit axis in the child (joint) frame.
    pub axis: Vector3<f64>,
    /// Parent link frame to joint frame.
    pub origin: Pose,
    pub parent: String,
    pub child: String,
    /// Required for non-fixed joints.
    pub limits: Option<JointLimits>,
}

/// A named frame rigidly attached to a link, e.g. a tool flange or a foot.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpec {
    pub name: String,
    pub link: String,
    pub origin: Pose,
}

/// Where a named frame lives: its link and its offset from the link frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRef {
    pub link: usize,
    pub offset: Isometry3<f64>,
}

/// Immutable kinematic tree with inertial data.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    name: String,
    links: Vec<Link>,
    joints: Vec<JointSpec>,
    frames: Vec<FrameSpec>,
    floating_base: bool,
    contact_frames: Vec<String>,
    warnings: Vec<String>,

    link_parent: Vec<Option<usize>>,
    joint_parent_link: Vec<usize>,
    joint_dof: Vec<Option<usize>>,
    dof_joint: Vec<usize>,
    frame_index: BTreeMap<String, FrameRef>,
    frame_order: Vec<String>,
}

impl RobotModel {
    /// Assembles a model from its parts, ordering links and joints depth-first
    /// from the root. Checks the tree structure and name uniqueness only; call
    /// [`validate_model`] for the physical invariants.
    pub fn from_parts(
        name: impl Into<String>,
        links: Vec<Link>,
        joints: Vec<JointSpec>,
        frames: Vec<FrameSpec>,
        floating_base: bool,
        contact_frames: Vec<String>,
    ) -> Result<Self, ModelError> {
        let mut link_pos: HashMap<&str, usize> = HashMap::new();
        for (i, l) in links.iter().enumerate() {
            if link_pos.insert(l.name.as_str(), i).is_some() {
                return Err(ModelError::DuplicateName(l.name.clone()));
            }
        }
        if links.is_empty() {
            return Err(ModelError::NotATree("model has no links".into()));
        }
        let mut seen_joint = HashMap::new();
        for j in &joints {
            if seen_joint.insert(j.name.as_str(), ()).is_some() {
                return Err(ModelError::DuplicateName(j.name.clone()));
            }
            for link in [&j.parent, &j.child] {
                if !link_pos.contains_key(link.as_str()) {
                    return Err(ModelError::DanglingReference { element: j.name.clone(), missing: link.clone() });
                }
            }
        }

        // Children lists in joint document order.
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); links.len()];
        let mut parent_of: Vec<Option<usize>> = vec![None; links.len()];
        for (ji, j) in joints.iter().enumerate() {
            let c = link_pos[j.child.as_str()];
            if parent_of[c].is_some() {
                return Err(ModelError::NotATree(format!("link `{}` has more than one parent joint", j.child)));
            }
            parent_of[c] = Some(ji);
            children[link_pos[j.parent.as_str()]].push(ji);
        }
        let roots: Vec<usize> = (0..links.len()).filter(|&i| parent_of[i].is_none()).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(ModelError::NotATree("no root link (cycle)".into())),
            many => {
                let names: Vec<&str> = many.iter().map(|&i| links[i].name.as_str()).collect();
                return Err(ModelError::NotATree(format!("multiple root links: {}", names.join(", "))));
            }
        };

        // Depth-first preorder; first child in document order is visited first.
        let mut link_order = Vec::with_capacity(links.len());
        let mut joint_order = Vec::with_capacity(joints.len());
        let mut stack = vec![(root, None::<usize>)];
        while let Some((l, via)) = stack.pop() {
            link_order.push(l);
            if let Some(j) = via {
                joint_order.push(j);
            }
            for &ji in children[l].iter().rev() {
                stack.push((link_pos[joints[ji].child.as_str()], Some(ji)));
            }
        }
        if link_order.len() != links.len() {
            let reached: std::collections::HashSet<usize> = link_order.iter().copied().collect();
            let orphan = (0..links.len()).find(|i| !reached.contains(i)).unwrap();
            return Err(ModelError::NotATree(format!("link `{}` is not connected to root `{}`", links[orphan].name, links[root].name)));
        }

        let mut slots: Vec<Option<Link>> = links.into_iter().map(Some).collect();
        let links: Vec<Link> = link_order.iter().map(|&i| slots[i].take().unwrap()).collect();
        let mut jslots: Vec<Option<JointSpec>> = joints.into_iter().map(Some).collect();
        let joints: Vec<JointSpec> = joint_order.iter().map(|&i| jslots[i].take().unwrap()).collect();

        let index: HashMap<&str, usize> = links.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
        let mut link_parent = vec![None; links.len()];
        let mut joint_parent_link = Vec::with_capacity(joints.len());
        let mut joint_dof = Vec::with_capacity(joints.len());
        let mut dof_joint = Vec::new();
        for (ji, j) in joints.iter().enumerate() {
            debug_assert_eq!(index[j.child.as_str()], ji + 1);
            let p = index[j.parent.as_str()];
            link_parent[ji + 1] = Some(p);
            joint_parent_link.push(p);
            if j.kind.is_fixed() {
                joint_dof.push(None);
            } else {
                joint_dof.push(Some(dof_joint.len()));
                dof_joint.push(ji);
            }
        }

        let mut frame_index = BTreeMap::new();
        let mut frame_order = Vec::new();
        for (i, l) in links.iter().enumerate() {
            frame_index.insert(l.name.clone(), FrameRef { link: i, offset: Isometry3::identity() });
            frame_order.push(l.name.clone());
        }
        for f in &frames {
            let Some(&link) = index.get(f.link.as_str()) else {
                return Err(ModelError::DanglingReference { element: f.name.clone(), missing: f.link.clone() });
            };
            if frame_index.insert(f.name.clone(), FrameRef { link, offset: f.origin.isometry() }).is_some() {
                return Err(ModelError::DuplicateName(f.name.clone()));
            }
            frame_order.push(f.name.clone());
        }
        for c in &contact_frames {
            if !frame_index.contains_key(c) {
                return Err(ModelError::DanglingReference { element: "contact".into(), missing: c.clone() });
            }
        }

        Ok(Self {
            name: name.into(),
            links,
            joints,
            frames,
            floating_base,
            contact_frames,
            warnings: Vec::new(),
            link_parent,
            joint_parent_link,
            joint_dof,
            dof_joint,
            frame_index,
            frame_order,
        })
    }

    pub(crate) fn with_warnings(mut self, warnings: Vec<String>) -> Self {
        self.warnings = warnings;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn frames(&self) -> &[FrameSpec] {
        &self.frames
    }

    pub fn root_link(&self) -> &str {
        &self.links[0].name
    }

    pub fn floating_base(&self) -> bool {
        self.floating_base
    }

    pub fn contact_frames(&self) -> &[String] {
        &self.contact_frames
    }

    /// Warnings recorded while parsing (ignored elements and the like).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Number of non-fixed joints.
    pub fn nq(&self) -> usize {
        self.dof_joint.len()
    }

    /// Velocity-space dimension: joints, plus 6 for a floating base.
    pub fn nv(&self) -> usize {
        self.nq() + self.base_dofs()
    }

    /// 6 for a floating base, else 0. Joint velocities start at this offset.
    pub fn base_dofs(&self) -> usize {
        if self.floating_base {
            6
        } else {
            0
        }
    }

    /// Parent link index of each link (`None` for the root).
    pub fn link_parent(&self, link: usize) -> Option<usize> {
        self.link_parent[link]
    }

    /// Joint index whose child is `link` (`None` for the root).
    pub fn parent_joint(&self, link: usize) -> Option<usize> {
        link.checked_sub(1)
    }

    pub fn joint_parent_link(&self, joint: usize) -> usize {
        self.joint_parent_link[joint]
    }

    /// Position of a joint in the joint-space vectors, `None` for fixed joints.
    pub fn joint_dof(&self, joint: usize) -> Option<usize> {
        self.joint_dof[joint]
    }

    /// Joint index of the `i`-th degree of freedom.
    pub fn dof_joint(&self, dof: usize) -> &JointSpec {
        &self.joints[self.dof_joint[dof]]
    }

    /// Non-fixed joint names in joint-vector order.
    pub fn joint_names(&self) -> Vec<&str> {
        self.dof_joint.iter().map(|&j| self.joints[j].name.as_str()).collect()
    }

    /// Limits of every non-fixed joint, in joint-vector order.
    pub fn dof_limits(&self) -> Vec<JointLimits> {
        self.dof_joint
            .iter()
            .map(|&j| {
                self.joints[j].limits.unwrap_or(JointLimits {
                    lower: f64::NEG_INFINITY,
                    upper: f64::INFINITY,
                    effort: f64::INFINITY,
                    velocity: f64::INFINITY,
                })
            })
            .collect()
    }

    pub fn effort_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.nq(), self.dof_limits().into_iter().map(|l| l.effort))
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.frame_index.get(name).filter(|f| self.links[f.link].name == name).map(|f| f.link)
    }

    pub fn frame(&self, name: &str) -> Option<FrameRef> {
        self.frame_index.get(name).copied()
    }

    /// Every frame name: links in tree order, then extra frames.
    pub fn frame_names(&self) -> &[String] {
        &self.frame_order
    }

    /// Ancestor chain of a link, from the link itself up to the root.
    pub fn chain(&self, link: usize) -> Vec<usize> {
        let mut out = vec![link];
        let mut cur = link;
        while let Some(p) = self.link_parent[cur] {
            out.push(p);
            cur = p;
        }
        out
    }

    /// The tool frame: the first declared extra frame that is not a contact,
    /// otherwise the last link.
    pub fn tool_frame(&self) -> &str {
        self.frames
            .iter()
            .find(|f| !self.contact_frames.contains(&f.name))
            .map(|f| f.name.as_str())
            .unwrap_or_else(|| &self.links.last().unwrap().name)
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.inertia.mass).sum()
    }
}

/// Checks the physical invariants of links and joints. Empty iff the model is
/// clean.
pub fn validate_model(model: &RobotModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for link in model.links() {
        let i = &link.inertia;
        if !i.mass.is_finite() {
            out.push(Diagnostic::error(&link.name, "non-finite mass"));
        } else if i.mass < 0.0 {
            out.push(Diagnostic::error(&link.name, "negative mass"));
        }
        if !i.com.iter().chain(i.inertia_rot.iter()).all(|v| v.is_finite()) {
            out.push(Diagnostic::error(&link.name, "non-finite inertial parameters"));
            continue;
        }
        let asym = (i.inertia_rot - i.inertia_rot.transpose()).abs().max();
        if asym > 1e-12 {
            out.push(Diagnostic::error(&link.name, "asymmetric inertia tensor"));
            continue;
        }
        let eig = SymmetricEigen::new(i.inertia_rot).eigenvalues;
        let scale = eig.abs().max().max(1.0);
        if eig.min() < -1e-12 * scale {
            out.push(Diagnostic::error(&link.name, "negative principal moment of inertia"));
            continue;
        }
        let (a, b, c) = (eig[0], eig[1], eig[2]);
        let tol = 1e-12 * scale;
        if a + b < c - tol || a + c < b - tol || b + c < a - tol {
            out.push(Diagnostic::warning(&link.name, "principal moments violate the triangle inequality"));
        }
    }
    for j in model.joints() {
        if j.kind.is_fixed() {
            continue;
        }
        if !j.axis.iter().all(|v| v.is_finite()) || (j.axis.norm() - 1.0).abs() > 1e-9 {
            out.push(Diagnostic::error(&j.name, "joint axis is not a unit vector"));
        }
        match j.limits {
            None => out.push(Diagnostic::error(&j.name, "missing limits")),
            Some(l) => {
                if ![l.lower, l.upper, l.effort, l.velocity].iter().all(|v| v.is_finite()) {
                    out.push(Diagnostic::error(&j.name, "non-finite limits"));
                } else {
                    if l.lower > l.upper {
                        out.push(Diagnostic::error(&j.name, "inverted position limits"));
                    }
                    if l.effort < 0.0 || l.velocity < 0.0 {
                        out.push(Diagnostic::error(&j.name, "negative effort or velocity limit"));
                    }
                }
            }
        }
    }
    for c in model.contact_frames() {
        if model.frame(c).is_none() {
            out.push(Diagnostic::error(c, "contact frame does not exist"));
        }
    }
    out
}

pub(crate) fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// The zero configuration clamped into the joint limits.
pub fn neutral_configuration(model: &RobotModel) -> DVector<f64> {
    DVector::from_iterator(model.nq(), model.dof_limits().into_iter().map(|l| 0.0f64.clamp(l.lower, l.upper)))
}
