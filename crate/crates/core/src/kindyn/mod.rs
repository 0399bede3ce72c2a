//! Rigid-body kinematics and dynamics over a [`RobotModel`].
//!
//! Conventions used throughout:
//!
//! * Base orientation is fixed-axis roll-pitch-yaw, `R = Rz(yaw)·Ry(pitch)·Rx(roll)`,
//!   the same convention as URDF `rpy` attributes.
//! * Floating-base velocity vectors are ordered `[base linear (world); base angular (world); joints]`,
//!   so `n_v = n_q + 6`. The base linear velocity is that of the base frame origin.
//! * Jacobians are `6 × n_v`, world-aligned, linear rows first, for the frame origin.
//! * Default gravity is `(0, 0, -9.81)` m/s².
//!
//! All functions are pure; the recursive algorithms work in world coordinates.

mod spatial;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Matrix6, Point3, Translation3, Unit, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

use crate::model::{JointKind, RobotModel};
pub use spatial::{Force, Motion, WorldInertia};

pub const DEFAULT_GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// Condition estimate above which the mass matrix counts as singular.
pub const MAX_MASS_MATRIX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinDynError {
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("mass matrix is singular (condition estimate {0:e})")]
    SingularMassMatrix(f64),
    #[error("model has zero total mass")]
    ZeroMass,
    #[error("roll-pitch-yaw rate map is singular at pitch {0}")]
    EulerSingularity(f64),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), KinDynError> {
    if expected == got {
        Ok(())
    } else {
        Err(KinDynError::DimensionMismatch { what, expected, got })
    }
}

/// Generalized position. Base fields are ignored for fixed-base models.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub base_pos: Vector3<f64>,
    pub base_rpy: Vector3<f64>,
    pub q: DVector<f64>,
}

impl Configuration {
    pub fn fixed(q: DVector<f64>) -> Self {
        Self { base_pos: Vector3::zeros(), base_rpy: Vector3::zeros(), q }
    }

    pub fn floating(base_pos: Vector3<f64>, base_rpy: Vector3<f64>, q: DVector<f64>) -> Self {
        Self { base_pos, base_rpy, q }
    }

    pub fn base_pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.base_pos), rpy_to_quaternion(&self.base_rpy))
    }

    fn check(&self, model: &RobotModel) -> Result<(), KinDynError> {
        check_len("joint positions", model.nq(), self.q.len())
    }
}

/// Generalized velocity, see the module docs for the ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub base_lin: Vector3<f64>,
    pub base_ang: Vector3<f64>,
    pub qd: DVector<f64>,
}

impl Velocity {
    pub fn zeros(model: &RobotModel) -> Self {
        Self { base_lin: Vector3::zeros(), base_ang: Vector3::zeros(), qd: DVector::zeros(model.nq()) }
    }

    pub fn fixed(qd: DVector<f64>) -> Self {
        Self { base_lin: Vector3::zeros(), base_ang: Vector3::zeros(), qd }
    }

    pub fn to_vector(&self, model: &RobotModel) -> DVector<f64> {
        let nb = model.base_dofs();
        let mut v = DVector::zeros(nb + self.qd.len());
        if nb == 6 {
            v.fixed_rows_mut::<3>(0).copy_from(&self.base_lin);
            v.fixed_rows_mut::<3>(3).copy_from(&self.base_ang);
        }
        v.rows_mut(nb, self.qd.len()).copy_from(&self.qd);
        v
    }

    pub fn from_vector(model: &RobotModel, v: &DVector<f64>) -> Result<Self, KinDynError> {
        check_len("generalized velocity", model.nv(), v.len())?;
        let nb = model.base_dofs();
        let qd = v.rows(nb, model.nq()).into_owned();
        if nb == 6 {
            Ok(Self { base_lin: v.fixed_rows::<3>(0).into_owned(), base_ang: v.fixed_rows::<3>(3).into_owned(), qd })
        } else {
            Ok(Self::fixed(qd))
        }
    }

    fn check(&self, model: &RobotModel) -> Result<(), KinDynError> {
        check_len("joint velocities", model.nq(), self.qd.len())
    }
}

pub fn rpy_to_quaternion(rpy: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z)
}

pub fn rpy_to_matrix(rpy: &Vector3<f64>) -> Matrix3<f64> {
    *rpy_to_quaternion(rpy).to_rotation_matrix().matrix()
}

/// Inverse of [`rpy_to_matrix`], with each angle in `(-π, π]`.
pub fn matrix_to_rpy(r: &Matrix3<f64>) -> Vector3<f64> {
    let (roll, pitch, yaw) = nalgebra::Rotation3::from_matrix_unchecked(*r).euler_angles();
    Vector3::new(wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw))
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Matrix `E` with `ω_world = E · (roll_rate, pitch_rate, yaw_rate)`.
pub fn euler_rate_map(rpy: &Vector3<f64>) -> Result<Matrix3<f64>, KinDynError> {
    let (sp, cp) = rpy.y.sin_cos();
    let (sy, cy) = rpy.z.sin_cos();
    if cp.abs() <= 1e-6 {
        return Err(KinDynError::EulerSingularity(rpy.y));
    }
    Ok(Matrix3::new(cy * cp, -sy, 0.0, sy * cp, cy, 0.0, -sp, 0.0, 1.0))
}

/// Per-link results of the outward kinematic recursion.
struct Pass {
    poses: Vec<Isometry3<f64>>,
    /// Motion-subspace columns per link: (velocity index, world-frame column).
    cols: Vec<Vec<(usize, Motion)>>,
    vel: Vec<Motion>,
    /// Velocity-product acceleration `Ṡ·v` contributed at each link.
    bias: Vec<Motion>,
}

fn joint_motion(kind: JointKind, axis: &Vector3<f64>, q: f64) -> Isometry3<f64> {
    match kind {
        JointKind::Revolute => {
            Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), q))
        }
        JointKind::Prismatic => Isometry3::from_parts(Translation3::from(axis * q), UnitQuaternion::identity()),
        JointKind::Fixed => Isometry3::identity(),
    }
}

fn link_poses(model: &RobotModel, conf: &Configuration) -> Vec<Isometry3<f64>> {
    let n = model.links().len();
    let mut poses = Vec::with_capacity(n);
    poses.push(if model.floating_base() { conf.base_pose() } else { Isometry3::identity() });
    for (ji, joint) in model.joints().iter().enumerate() {
        let parent = poses[model.joint_parent_link(ji)];
        let q = model.joint_dof(ji).map_or(0.0, |d| conf.q[d]);
        poses.push(parent * joint.origin.isometry() * joint_motion(joint.kind, &joint.axis, q));
    }
    poses
}

fn kinematic_pass(model: &RobotModel, conf: &Configuration, v: Option<&DVector<f64>>) -> Pass {
    let poses = link_poses(model, conf);
    let n = poses.len();
    let nb = model.base_dofs();
    let mut cols: Vec<Vec<(usize, Motion)>> = Vec::with_capacity(n);
    let mut vel = Vec::with_capacity(n);
    let mut bias = Vec::with_capacity(n);

    // Root link.
    if model.floating_base() {
        let p = conf.base_pos;
        let mut c = Vec::with_capacity(6);
        for k in 0..3 {
            c.push((k, Motion::new(Vector3::zeros(), Vector3::ith(k, 1.0))));
        }
        for k in 0..3 {
            let e = Vector3::ith(k, 1.0);
            c.push((3 + k, Motion::new(e, p.cross(&e))));
        }
        match v {
            Some(v) => {
                let lin = v.fixed_rows::<3>(0).into_owned();
                let ang = v.fixed_rows::<3>(3).into_owned();
                vel.push(Motion::new(ang, lin + p.cross(&ang)));
                bias.push(Motion::new(Vector3::zeros(), lin.cross(&ang)));
            }
            None => {
                vel.push(Motion::zero());
                bias.push(Motion::zero());
            }
        }
        cols.push(c);
    } else {
        cols.push(Vec::new());
        vel.push(Motion::zero());
        bias.push(Motion::zero());
    }

    for (ji, joint) in model.joints().iter().enumerate() {
        let link = ji + 1;
        let parent = model.joint_parent_link(ji);
        let Some(dof) = model.joint_dof(ji) else {
            cols.push(Vec::new());
            vel.push(vel[parent]);
            bias.push(Motion::zero());
            continue;
        };
        let pose = &poses[link];
        let axis = pose.rotation * Unit::new_normalize(joint.axis).into_inner();
        let origin = pose.translation.vector;
        let s = match joint.kind {
            JointKind::Revolute => Motion::new(axis, origin.cross(&axis)),
            _ => Motion::new(Vector3::zeros(), axis),
        };
        let vi = nb + dof;
        match v {
            Some(v) => {
                let sv = s * v[vi];
                let vl = vel[parent] + sv;
                bias.push(vl.cross_motion(&sv));
                vel.push(vl);
            }
            None => {
                vel.push(Motion::zero());
                bias.push(Motion::zero());
            }
        }
        cols.push(vec![(vi, s)]);
    }
    Pass { poses, cols, vel, bias }
}

fn world_inertias(model: &RobotModel, poses: &[Isometry3<f64>]) -> Vec<WorldInertia> {
    model.links().iter().zip(poses).map(|(l, p)| WorldInertia::from_link(&l.inertia, p)).collect()
}

/// World pose of every link and named frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePoses(BTreeMap<String, Isometry3<f64>>);

impl FramePoses {
    pub fn get(&self, frame: &str) -> Result<&Isometry3<f64>, KinDynError> {
        self.0.get(frame).ok_or_else(|| KinDynError::UnknownFrame(frame.to_string()))
    }

    pub fn position(&self, frame: &str) -> Result<Vector3<f64>, KinDynError> {
        Ok(self.get(frame)?.translation.vector)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Isometry3<f64>)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn forward_kinematics(model: &RobotModel, conf: &Configuration) -> Result<FramePoses, KinDynError> {
    conf.check(model)?;
    let poses = link_poses(model, conf);
    let mut out = BTreeMap::new();
    for name in model.frame_names() {
        let f = model.frame(name).expect("frame index");
        out.insert(name.clone(), poses[f.link] * f.offset);
    }
    Ok(FramePoses(out))
}

/// World pose of a single frame.
pub fn frame_pose(model: &RobotModel, conf: &Configuration, frame: &str) -> Result<Isometry3<f64>, KinDynError> {
    conf.check(model)?;
    let f = model.frame(frame).ok_or_else(|| KinDynError::UnknownFrame(frame.to_string()))?;
    Ok(link_poses(model, conf)[f.link] * f.offset)
}

fn jacobian_from_pass(model: &RobotModel, pass: &Pass, link: usize, point: &Vector3<f64>) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(6, model.nv());
    for l in model.chain(link) {
        for (vi, s) in &pass.cols[l] {
            let lin = s.point_velocity(point);
            j.fixed_view_mut::<3, 1>(0, *vi).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, *vi).copy_from(&s.ang);
        }
    }
    j
}

/// `6 × n_v` world-aligned Jacobian of a frame origin, linear rows first.
pub fn frame_jacobian(model: &RobotModel, conf: &Configuration, frame: &str) -> Result<DMatrix<f64>, KinDynError> {
    conf.check(model)?;
    let f = model.frame(frame).ok_or_else(|| KinDynError::UnknownFrame(frame.to_string()))?;
    let pass = kinematic_pass(model, conf, None);
    let point = (pass.poses[f.link] * f.offset).translation.vector;
    Ok(jacobian_from_pass(model, &pass, f.link, &point))
}

/// Inverse dynamics: generalized forces producing `acc` from the given state
/// under a uniform gravity field.
pub fn rnea(
    model: &RobotModel,
    conf: &Configuration,
    vel: &Velocity,
    acc: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, KinDynError> {
    conf.check(model)?;
    vel.check(model)?;
    check_len("generalized acceleration", model.nv(), acc.len())?;
    let v = vel.to_vector(model);
    let pass = kinematic_pass(model, conf, Some(&v));
    let inertias = world_inertias(model, &pass.poses);
    let n = pass.poses.len();

    let mut accs = Vec::with_capacity(n);
    let mut forces = Vec::with_capacity(n);
    for l in 0..n {
        let base = match model.link_parent(l) {
            Some(p) => accs[p],
            None => Motion::new(Vector3::zeros(), -gravity),
        };
        let mut a = base + pass.bias[l];
        for (vi, s) in &pass.cols[l] {
            a += *s * acc[*vi];
        }
        accs.push(a);
        let i = &inertias[l];
        forces.push(i.apply(&a) + pass.vel[l].cross_force(&i.apply(&pass.vel[l])));
    }

    let mut tau = DVector::zeros(model.nv());
    for l in (0..n).rev() {
        for (vi, s) in &pass.cols[l] {
            tau[*vi] = s.dot(&forces[l]);
        }
        if let Some(p) = model.link_parent(l) {
            let f = forces[l];
            forces[p] += f;
        }
    }
    Ok(tau)
}

/// Coriolis, centrifugal and gravity forces under default gravity.
pub fn nonlinear_effects(model: &RobotModel, conf: &Configuration, vel: &Velocity) -> Result<DVector<f64>, KinDynError> {
    rnea(model, conf, vel, &DVector::zeros(model.nv()), &DEFAULT_GRAVITY)
}

/// Generalized gravity forces under default gravity.
pub fn gravity_terms(model: &RobotModel, conf: &Configuration) -> Result<DVector<f64>, KinDynError> {
    rnea(model, conf, &Velocity::zeros(model), &DVector::zeros(model.nv()), &DEFAULT_GRAVITY)
}

/// Joint-space mass matrix by the composite-rigid-body algorithm.
pub fn mass_matrix(model: &RobotModel, conf: &Configuration) -> Result<DMatrix<f64>, KinDynError> {
    conf.check(model)?;
    let pass = kinematic_pass(model, conf, None);
    let mut composite = world_inertias(model, &pass.poses);
    for l in (1..composite.len()).rev() {
        let p = model.link_parent(l).expect("non-root");
        let c = composite[l];
        composite[p] += c;
    }
    let mut m = DMatrix::zeros(model.nv(), model.nv());
    for l in 0..composite.len() {
        for (vi, s) in &pass.cols[l] {
            let f = composite[l].apply(s);
            for anc in model.chain(l) {
                for (vj, sj) in &pass.cols[anc] {
                    let val = sj.dot(&f);
                    m[(*vi, *vj)] = val;
                    m[(*vj, *vi)] = val;
                }
            }
        }
    }
    Ok(m)
}

/// Solves `M·a = τ + Σ Jᵀ F − h` for the generalized acceleration, with point
/// forces (world frame) applied at the named frames.
pub fn forward_dynamics(
    model: &RobotModel,
    conf: &Configuration,
    vel: &Velocity,
    tau: &DVector<f64>,
    external: &BTreeMap<String, Vector3<f64>>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>, KinDynError> {
    check_len("generalized force", model.nv(), tau.len())?;
    let m = mass_matrix(model, conf)?;
    let h = rnea(model, conf, vel, &DVector::zeros(model.nv()), gravity)?;
    let mut rhs = tau - h;
    rhs += external_generalized_force(model, conf, external)?;
    solve_spd(m, &rhs)
}

/// `Σ J_linᵀ F` for point forces at named frames.
pub fn external_generalized_force(
    model: &RobotModel,
    conf: &Configuration,
    external: &BTreeMap<String, Vector3<f64>>,
) -> Result<DVector<f64>, KinDynError> {
    let mut out = DVector::zeros(model.nv());
    if external.is_empty() {
        return Ok(out);
    }
    let pass = kinematic_pass(model, conf, None);
    for (frame, force) in external {
        let f = model.frame(frame).ok_or_else(|| KinDynError::UnknownFrame(frame.clone()))?;
        let point = (pass.poses[f.link] * f.offset).translation.vector;
        let j = jacobian_from_pass(model, &pass, f.link, &point);
        out += j.fixed_rows::<3>(0).transpose() * force;
    }
    Ok(out)
}

fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, KinDynError> {
    let chol = m.cholesky().ok_or(KinDynError::SingularMassMatrix(f64::INFINITY))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = (diag.min(), diag.max());
    let cond = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if !(cond <= MAX_MASS_MATRIX_CONDITION) {
        return Err(KinDynError::SingularMassMatrix(cond));
    }
    Ok(chol.solve(rhs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComState {
    pub com: Vector3<f64>,
    pub vcom: Vector3<f64>,
    pub total_mass: f64,
}

pub fn com_state(model: &RobotModel, conf: &Configuration, vel: &Velocity) -> Result<ComState, KinDynError> {
    conf.check(model)?;
    vel.check(model)?;
    let pass = kinematic_pass(model, conf, Some(&vel.to_vector(model)));
    let mut mass = 0.0;
    let mut mc = Vector3::zeros();
    let mut mv = Vector3::zeros();
    for (l, link) in model.links().iter().enumerate() {
        let m = link.inertia.mass;
        let c = (pass.poses[l] * Point3::from(link.inertia.com)).coords;
        mass += m;
        mc += c * m;
        mv += pass.vel[l].point_velocity(&c) * m;
    }
    if mass <= 0.0 {
        return Err(KinDynError::ZeroMass);
    }
    Ok(ComState { com: mc / mass, vcom: mv / mass, total_mass: mass })
}

/// Composite inertia and spatial momentum about the CoM, world axes, linear
/// block first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroidal {
    pub inertia: Matrix6<f64>,
    pub momentum: Vector6<f64>,
}

pub fn centroidal(model: &RobotModel, conf: &Configuration, vel: &Velocity) -> Result<Centroidal, KinDynError> {
    conf.check(model)?;
    vel.check(model)?;
    let pass = kinematic_pass(model, conf, Some(&vel.to_vector(model)));
    let inertias = world_inertias(model, &pass.poses);
    let mut total = WorldInertia::zero();
    let mut h = Force::zero();
    for (i, v) in inertias.iter().zip(&pass.vel) {
        total += *i;
        h += i.apply(v);
    }
    let com = total.com().ok_or(KinDynError::ZeroMass)?;
    let mut inertia = Matrix6::zeros();
    inertia.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * total.mass));
    inertia.fixed_view_mut::<3, 3>(3, 3).copy_from(&total.rot_about(&com));
    let mut momentum = Vector6::zeros();
    momentum.fixed_rows_mut::<3>(0).copy_from(&h.lin);
    momentum.fixed_rows_mut::<3>(3).copy_from(&(h.ang - com.cross(&h.lin)));
    Ok(Centroidal { inertia, momentum })
}

/// Everything the high-level controller refreshes once per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct KinDynSnapshot {
    pub frame_poses: FramePoses,
    pub com: Vector3<f64>,
    pub vcom: Vector3<f64>,
    pub total_mass: f64,
    pub mass_matrix: DMatrix<f64>,
    pub nle: DVector<f64>,
    pub gravity_vec: DVector<f64>,
    pub contact_positions: BTreeMap<String, Vector3<f64>>,
    pub contact_jacobians: BTreeMap<String, DMatrix<f64>>,
    pub centroidal_inertia: Matrix6<f64>,
    pub centroidal_momentum: Vector6<f64>,
    /// Ground reaction forces; filled by the controller layer.
    pub gr_forces: BTreeMap<String, Vector3<f64>>,
}

pub fn update_kinematics(model: &RobotModel, conf: &Configuration, vel: &Velocity) -> Result<KinDynSnapshot, KinDynError> {
    let frame_poses = forward_kinematics(model, conf)?;
    let com = com_state(model, conf, vel)?;
    let cen = centroidal(model, conf, vel)?;
    let mut contact_positions = BTreeMap::new();
    let mut contact_jacobians = BTreeMap::new();
    for c in model.contact_frames() {
        contact_positions.insert(c.clone(), frame_poses.position(c)?);
        contact_jacobians.insert(c.clone(), frame_jacobian(model, conf, c)?.rows(0, 3).into_owned());
    }
    Ok(KinDynSnapshot {
        frame_poses,
        com: com.com,
        vcom: com.vcom,
        total_mass: com.total_mass,
        mass_matrix: mass_matrix(model, conf)?,
        nle: nonlinear_effects(model, conf, vel)?,
        gravity_vec: gravity_terms(model, conf)?,
        contact_positions,
        contact_jacobians,
        centroidal_inertia: cen.inertia,
        centroidal_momentum: cen.momentum,
        gr_forces: BTreeMap::new(),
    })
}
