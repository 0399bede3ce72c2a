//! Rigid-body algorithms checked against independent oracles: closed-form
//! Lagrangian dynamics, finite differences of kinematics and potential
//! energy, and brute-force sums over links.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::{advance, angular_rate, arm2_lagrangian, model, random_conf, random_vel, rng, uniform, unit_velocity, FIXTURES};
use locokit_core::kindyn::{
    centroidal, com_state, euler_rate_map, forward_dynamics, forward_kinematics, frame_jacobian, gravity_terms, mass_matrix, rnea,
    rpy_to_matrix, Configuration, KinDynError, Velocity, DEFAULT_GRAVITY,
};
use locokit_core::model::RobotModel;
use nalgebra::{dvector, DVector, Matrix3, Point3, UnitQuaternion, Vector3};
use rand::Rng;

#[test]
fn rnea_matches_double_pendulum_lagrangian() {
    let m = model("arm2");
    let mut r = rng(1);
    let gravity = Vector3::new(0.0, -9.81, 0.0);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = [r.gen_range(-3.1..3.1), r.gen_range(-3.1..3.1)];
        let qd = [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)];
        let qdd = [r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0)];
        let tau = rnea(
            &m,
            &Configuration::fixed(dvector![q[0], q[1]]),
            &Velocity::fixed(dvector![qd[0], qd[1]]),
            &dvector![qdd[0], qdd[1]],
            &gravity,
        )
        .unwrap();
        let want = arm2_lagrangian(q, qd, qdd);
        worst = worst.max((tau[0] - want[0]).abs()).max((tau[1] - want[1]).abs());
    }
    assert!(worst < 1e-9, "max |dtau| = {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn crba_equals_rnea_columns() {
    let mut r = rng(2);
    for name in FIXTURES {
        let m = model(name);
        for _ in 0..100 {
            let conf = random_conf(&m, &mut r);
            let mm = mass_matrix(&m, &conf).unwrap();
            for k in 0..m.nv() {
                let mut a = DVector::zeros(m.nv());
                a[k] = 1.0;
                let col = rnea(&m, &conf, &Velocity::zeros(&m), &a, &Vector3::zeros()).unwrap();
                assert!((mm.column(k) - col).amax() < 1e-10, "{name} column {k}");
            }
            assert!((&mm - mm.transpose()).amax() < 1e-12, "{name} symmetry");
            let min_eig = mm.symmetric_eigenvalues().min();
            assert!(min_eig > 0.0, "{name}: min eigenvalue {min_eig}");
        }
    }
}

#[test]
fn jacobians_match_finite_differences() {
    let h = 1e-6;
    let mut r = rng(3);
    for name in FIXTURES {
        let m = model(name);
        for _ in 0..10 {
            let conf = random_conf(&m, &mut r);
            for frame in m.frame_names() {
                let j = frame_jacobian(&m, &conf, frame).unwrap();
                for k in 0..m.nv() {
                    let v = unit_velocity(&m, k);
                    let plus = forward_kinematics(&m, &advance(&m, &conf, &v, h)).unwrap();
                    let minus = forward_kinematics(&m, &advance(&m, &conf, &v, -h)).unwrap();
                    let (p, n) = (plus.get(frame).unwrap(), minus.get(frame).unwrap());
                    let lin = (p.translation.vector - n.translation.vector) / (2.0 * h);
                    let ang = angular_rate(&p.rotation, &n.rotation, h);
                    let col = j.column(k);
                    assert!((col.fixed_rows::<3>(0) - lin).amax() < 1e-6, "{name}/{frame} linear column {k}");
                    assert!((col.fixed_rows::<3>(3) - ang).amax() < 1e-6, "{name}/{frame} angular column {k}");
                }
            }
        }
    }
}

#[test]
fn forward_dynamics_inverts_rnea() {
    let mut r = rng(4);
    for i in 0..500 {
        let m = model(FIXTURES[i % 4]);
        let conf = random_conf(&m, &mut r);
        let vel = random_vel(&m, &mut r);
        let a = uniform(&mut r, m.nv(), 5.0);
        let tau = rnea(&m, &conf, &vel, &a, &DEFAULT_GRAVITY).unwrap();
        let back = forward_dynamics(&m, &conf, &vel, &tau, &BTreeMap::new(), &DEFAULT_GRAVITY).unwrap();
        assert!((back - &a).amax() < 1e-8, "{} state {i}", m.name());
    }
}

fn potential(m: &RobotModel, conf: &Configuration) -> f64 {
    let poses = forward_kinematics(m, conf).unwrap();
    m.links()
        .iter()
        .map(|l| {
            let c = poses.get(&l.name).unwrap() * Point3::from(l.inertia.com);
            -l.inertia.mass * DEFAULT_GRAVITY.dot(&c.coords)
        })
        .sum()
}

#[test]
fn gravity_is_gradient_of_potential() {
    let h = 1e-6;
    let mut r = rng(5);
    for name in FIXTURES {
        let m = model(name);
        for _ in 0..20 {
            let conf = random_conf(&m, &mut r);
            let g = gravity_terms(&m, &conf).unwrap();
            for k in 0..m.nv() {
                let v = unit_velocity(&m, k);
                let fd = (potential(&m, &advance(&m, &conf, &v, h)) - potential(&m, &advance(&m, &conf, &v, -h))) / (2.0 * h);
                assert!((g[k] - fd).abs() < 1e-5, "{name} dof {k}: {} vs {fd}", g[k]);
            }
        }
    }
}

#[test]
fn com_velocity_matches_finite_difference() {
    let h = 1e-6;
    let mut r = rng(6);
    for name in FIXTURES {
        let m = model(name);
        for _ in 0..20 {
            let conf = random_conf(&m, &mut r);
            let vel = random_vel(&m, &mut r);
            let s = com_state(&m, &conf, &vel).unwrap();
            let plus = com_state(&m, &advance(&m, &conf, &vel, h), &vel).unwrap().com;
            let minus = com_state(&m, &advance(&m, &conf, &vel, -h), &vel).unwrap().com;
            assert!((s.vcom - (plus - minus) / (2.0 * h)).amax() < 1e-6, "{name}");
            assert!((s.total_mass - m.total_mass()).abs() < 1e-12);
        }
    }
}

#[test]
fn euler_rate_map_matches_rotation_derivative() {
    let h = 1e-6;
    let mut r = rng(7);
    for _ in 0..200 {
        let rpy = Vector3::new(r.gen_range(-3.0..3.0), r.gen_range(-1.5..1.5), r.gen_range(-3.0..3.0));
        let rate = Vector3::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        let rp = UnitQuaternion::from_matrix(&rpy_to_matrix(&(rpy + rate * h)));
        let rm = UnitQuaternion::from_matrix(&rpy_to_matrix(&(rpy - rate * h)));
        let omega = euler_rate_map(&rpy).unwrap() * rate;
        assert!((omega - angular_rate(&rp, &rm, h)).amax() < 1e-6);
    }
    let singular = Vector3::new(0.2, std::f64::consts::FRAC_PI_2, -0.4);
    assert!(matches!(euler_rate_map(&singular), Err(KinDynError::EulerSingularity(_))));
}

#[test]
fn centroidal_quantities_match_link_sums() {
    let h = 1e-6;
    let mut r = rng(8);
    for name in FIXTURES {
        let m = model(name);
        for _ in 0..20 {
            let conf = random_conf(&m, &mut r);
            let vel = random_vel(&m, &mut r);
            let now = forward_kinematics(&m, &conf).unwrap();
            let plus = forward_kinematics(&m, &advance(&m, &conf, &vel, h)).unwrap();
            let minus = forward_kinematics(&m, &advance(&m, &conf, &vel, -h)).unwrap();

            let mut mass = 0.0;
            let mut mc = Vector3::zeros();
            for l in m.links() {
                mass += l.inertia.mass;
                mc += (now.get(&l.name).unwrap() * Point3::from(l.inertia.com)).coords * l.inertia.mass;
            }
            let com = mc / mass;
            let mut p = Vector3::zeros();
            let mut k = Vector3::zeros();
            let mut ig = Matrix3::zeros();
            for l in m.links() {
                let (pose, pp, pm) = (now.get(&l.name).unwrap(), plus.get(&l.name).unwrap(), minus.get(&l.name).unwrap());
                let c = (pose * Point3::from(l.inertia.com)).coords;
                let vc = ((pp * Point3::from(l.inertia.com)).coords - (pm * Point3::from(l.inertia.com)).coords) / (2.0 * h);
                let w = angular_rate(&pp.rotation, &pm.rotation, h);
                let rot = pose.rotation.to_rotation_matrix();
                let i_world = rot.matrix() * l.inertia.inertia_rot * rot.matrix().transpose();
                let d = c - com;
                p += vc * l.inertia.mass;
                k += d.cross(&(vc * l.inertia.mass)) + i_world * w;
                ig += i_world + (Matrix3::identity() * d.norm_squared() - d * d.transpose()) * l.inertia.mass;
            }
            let cen = centroidal(&m, &conf, &vel).unwrap();
            assert!((cen.inertia.fixed_view::<3, 3>(0, 0) - Matrix3::identity() * mass).amax() < 1e-12, "{name}");
            assert!((cen.inertia.fixed_view::<3, 3>(3, 3) - ig).amax() < 1e-10, "{name}");
            assert!((cen.momentum.fixed_rows::<3>(0) - p).amax() < 1e-5, "{name}");
            assert!((cen.momentum.fixed_rows::<3>(3) - k).amax() < 1e-5, "{name}");
        }
    }
}
