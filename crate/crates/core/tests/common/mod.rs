#![allow(dead_code)]

use locokit_core::backends::SimState;
use locokit_core::kindyn::{forward_kinematics, mass_matrix, matrix_to_rpy, rpy_to_matrix, Configuration, Velocity, DEFAULT_GRAVITY};
use locokit_core::model::{GainsConfig, Registry, RobotModel};
use nalgebra::{DVector, Point3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIXTURES: [&str; 4] = ["pend1", "arm2", "arm6", "quad12"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn robot(name: &str) -> (RobotModel, GainsConfig) {
    let reg = Registry::builtin();
    let m = reg.model(name).unwrap();
    let g = reg.gains(name, &m).unwrap();
    (m, g)
}

pub fn model(name: &str) -> RobotModel {
    Registry::builtin().model(name).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Joint positions inside the limits; base pose away from the pitch singularity.
pub fn random_conf(model: &RobotModel, rng: &mut ChaCha8Rng) -> Configuration {
    let q = DVector::from_iterator(model.nq(), model.dof_limits().iter().map(|l| rng.gen_range(l.lower.max(-3.0)..=l.upper.min(3.0))));
    if model.floating_base() {
        let pos = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
        let rpy = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-1.2..1.2), rng.gen_range(-3.0..3.0));
        Configuration::floating(pos, rpy, q)
    } else {
        Configuration::fixed(q)
    }
}

pub fn random_vel(model: &RobotModel, rng: &mut ChaCha8Rng) -> Velocity {
    Velocity::from_vector(model, &uniform(rng, model.nv(), 2.0)).unwrap()
}

/// Moves `conf` for time `h` along generalized velocity `vel` (base rotation
/// about world axes, base origin translating with `base_lin`).
pub fn advance(model: &RobotModel, conf: &Configuration, vel: &Velocity, h: f64) -> Configuration {
    let mut c = conf.clone();
    c.q += &vel.qd * h;
    if model.floating_base() {
        c.base_pos += vel.base_lin * h;
        let r = Rotation3::from_scaled_axis(vel.base_ang * h) * Rotation3::from_matrix_unchecked(rpy_to_matrix(&conf.base_rpy));
        c.base_rpy = matrix_to_rpy(r.matrix());
    }
    c
}

pub fn unit_velocity(model: &RobotModel, k: usize) -> Velocity {
    let mut v = DVector::zeros(model.nv());
    v[k] = 1.0;
    Velocity::from_vector(model, &v).unwrap()
}

pub fn angular_rate(r_plus: &UnitQuaternion<f64>, r_minus: &UnitQuaternion<f64>, h: f64) -> Vector3<f64> {
    (r_plus * r_minus.inverse()).scaled_axis() / (2.0 * h)
}

/// Textbook planar 2R dynamics with point masses at the link midpoints,
/// gravity along −y.
pub fn arm2_lagrangian(q: [f64; 2], qd: [f64; 2], qdd: [f64; 2]) -> [f64; 2] {
    let (m1, m2, l1, r1, r2, g) = (1.0, 1.0, 1.0, 0.5, 0.5, 9.81);
    let (s2, c2) = q[1].sin_cos();
    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();
    let m11 = m1 * r1 * r1 + m2 * (l1 * l1 + r2 * r2 + 2.0 * l1 * r2 * c2);
    let m12 = m2 * (r2 * r2 + l1 * r2 * c2);
    let m22 = m2 * r2 * r2;
    let hc = m2 * l1 * r2 * s2;
    let g1 = g * (m1 * r1 * c1 + m2 * (l1 * c1 + r2 * c12));
    let g2 = g * m2 * r2 * c12;
    [m11 * qdd[0] + m12 * qdd[1] - hc * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]) + g1, m12 * qdd[0] + m22 * qdd[1] + hc * qd[0] * qd[0] + g2]
}

/// Kinetic plus potential energy of a plant state.
pub fn energy(m: &RobotModel, s: &SimState) -> f64 {
    let mm = mass_matrix(m, &s.conf).unwrap();
    let v = s.vel.to_vector(m);
    let kinetic = 0.5 * v.dot(&(mm * &v));
    let poses = forward_kinematics(m, &s.conf).unwrap();
    let potential: f64 = m
        .links()
        .iter()
        .map(|l| -l.inertia.mass * DEFAULT_GRAVITY.dot(&(poses.get(&l.name).unwrap() * Point3::from(l.inertia.com)).coords))
        .sum();
    kinetic + potential
}

/// Upper bound on the tool distance from the base: sum of the joint offsets
/// along the chain plus the tool offset.
pub fn reach_bound(m: &RobotModel) -> f64 {
    let tool = m.frame(m.tool_frame()).unwrap();
    let joints: f64 = m.chain(tool.link).iter().filter_map(|&l| m.parent_joint(l)).map(|j| m.joints()[j].origin.xyz.norm()).sum();
    joints + tool.offset.translation.vector.norm()
}

pub fn random_q(m: &RobotModel, r: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(m.nq(), m.dof_limits().iter().map(|l| r.gen_range(l.lower.max(-3.0)..=l.upper.min(3.0))))
}
