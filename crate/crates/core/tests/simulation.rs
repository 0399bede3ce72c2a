//! Plant behavior: energy conservation, closed-loop holding and settling,
//! standing on penalty contacts, determinism.

mod common;

use common::{energy, rng, robot};
use locokit_core::backends::{make_sim_backend, sim_step, Backend, ContactParams, SimBackend, SimState, WorldConfig};
use locokit_core::bus::{Bus, Message, DEFAULT_QUEUE_CAPACITY, JOINT_STATES};
use locokit_core::control::{quintic_trajectory, ControllerCore};
use locokit_core::kindyn::{com_state, Configuration, Velocity, DEFAULT_GRAVITY};
use locokit_core::lowlevel::{homing_trajectory, startup_procedure, ControlLoop, LoopClock, TimeSource};
use nalgebra::{dvector, DVector};
use rand::Rng;

#[test]
fn undamped_pendulum_conserves_energy() {
    let (m, _) = robot("pend1");
    // Potential measured from the lowest point of the bob so E(0) is the swing energy.
    let u_min = -9.81 * 0.5;
    let mut s = SimState::at_rest(Configuration::fixed(dvector![0.0]), &m);
    let e0 = energy(&m, &s) - u_min;
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        s = sim_step(&m, &s, &dvector![0.0], 1e-4, &ContactParams::default(), &DEFAULT_GRAVITY).unwrap();
        worst = worst.max(((energy(&m, &s) - u_min) - e0).abs() / e0.abs());
    }
    assert!(worst < 0.01, "relative energy error {worst}");
}

/// Desired `(q, qd)` at time `t` given the measured start.
type Reference<'a> = dyn Fn(f64, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + 'a;

/// Runs a core + loop pair where the planner tracks `reference(t)` with
/// gravity feed-forward.
fn closed_loop(
    name: &str,
    mut backend: SimBackend,
    duration: f64,
    reference: &Reference<'_>,
    mut observe: impl FnMut(f64, &ControllerCore, &SimBackend),
) -> (ControllerCore, SimBackend) {
    let (m, g) = robot(name);
    let bus = Bus::standard(DEFAULT_QUEUE_CAPACITY);
    let mut core = ControllerCore::new(name, m.clone(), g.clone(), &bus).unwrap();
    backend.attach_bus(bus.clone());
    let (pid, mode) = startup_procedure(&m, &g).unwrap();
    let mut lp = ControlLoop::new(LoopClock::new(1000.0, TimeSource::Sim).unwrap(), pid, mode, &bus).unwrap();
    let mut q_start: Option<DVector<f64>> = None;
    let ticks = (duration * 1000.0).round() as usize;
    for _ in 0..ticks {
        let mut planner = |t: f64| -> Result<(), String> {
            core.poll().map_err(|e| e.to_string())?;
            core.set_time(t);
            let q0 = q_start.get_or_insert_with(|| core.q().clone()).clone();
            let (q, qd) = reference(t, &q0);
            core.q_des = q;
            core.qd_des = qd;
            core.tau_ffwd = core.gravity_ffwd().map_err(|e| e.to_string())?;
            core.send_des_jstate().map_err(|e| e.to_string())
        };
        lp.tick(&mut backend, &mut planner).unwrap();
        core.poll().unwrap();
        observe(lp.clock().time(), &core, &backend);
    }
    (core, backend)
}

#[test]
fn pendulum_homes_and_holds() {
    let (m, g) = robot("pend1");
    let backend = make_sim_backend(&m, &g, [0.0; 6], &WorldConfig::default()).unwrap();
    let home = g.q_home.clone();
    let reference = |t: f64, q0: &DVector<f64>| homing_trajectory(q0, &home, g.homing_duration, t).unwrap();
    let (_, b) = closed_loop("pend1", backend, 2.0, &reference, |_, _, _| {});
    assert!((b.read_state().q[0] - home[0]).abs() < 1e-3, "{}", b.read_state().q[0]);
}

#[test]
fn arm6_holds_random_poses_with_gravity_feedforward() {
    let (m, g) = robot("arm6");
    let mut r = rng(11);
    for _ in 0..3 {
        let target = DVector::from_fn(6, |i, _| g.q_home[i] + r.gen_range(-0.5..0.5));
        let backend = make_sim_backend(&m, &g, [0.0; 6], &WorldConfig::default()).unwrap().with_initial_joints(g.q_home.clone()).unwrap();
        let goal = target.clone();
        let reference = |t: f64, q0: &DVector<f64>| {
            let (q, qd, _) = quintic_trajectory(q0, &goal, 1.0, t).unwrap();
            (q, qd)
        };
        let (_, b) = closed_loop("arm6", backend, 2.0, &reference, |_, _, _| {});
        let err = (b.read_state().q - &target).amax();
        assert!(err < 1e-3, "hold error {err}");
    }
}

#[test]
fn quadruped_stands_on_penalty_contacts() {
    let (m, g) = robot("quad12");
    let world = WorldConfig::default();
    let backend = make_sim_backend(&m, &g, [0.0, 0.0, 0.482, 0.0, 0.0, 0.0], &world)
        .unwrap()
        .with_initial_joints(g.q_home.clone())
        .unwrap()
        .with_substeps(10);
    let home = g.q_home.clone();
    let reference = |_: f64, _: &DVector<f64>| (home.clone(), DVector::zeros(12));
    let weight = m.total_mass() * 9.81;
    let mut fz_sum = Vec::new();
    let mut com_z = Vec::new();
    let mut grf_err: f64 = 0.0;
    let observe = |t: f64, _: &ControllerCore, b: &SimBackend| {
        if t > 2.0 {
            let truth = b.contact_forces();
            fz_sum.push(truth.values().map(|f| f.z).sum::<f64>());
            let s = b.state();
            com_z.push(com_state(&m, &s.conf, &s.vel).unwrap().com.z);
            if ((t * 1000.0).round() as u64).is_multiple_of(100) {
                let mut c = ControllerCore::new("quad12", m.clone(), g.clone(), &Bus::new()).unwrap();
                c.receive_jstate(&b.read_state()).unwrap();
                c.receive_pose(&b.read_base().unwrap()).unwrap();
                let est = c.estimate_gr_forces().unwrap();
                for (foot, f) in &truth {
                    grf_err = grf_err.max((est[foot] - f).norm() / f.norm());
                }
            }
        }
    };
    closed_loop("quad12", backend, 3.0, &reference, observe);
    let mean_fz = fz_sum.iter().sum::<f64>() / fz_sum.len() as f64;
    let last_fz = *fz_sum.last().unwrap();
    let n = com_z.len() as f64;
    let mean_z = com_z.iter().sum::<f64>() / n;
    let std_z = (com_z.iter().map(|z| (z - mean_z).powi(2)).sum::<f64>() / n).sqrt();
    eprintln!("weight {weight:.3} mean fz {mean_fz:.3} last fz {last_fz:.3} com z {mean_z:.4} std {std_z:.2e} grf err {grf_err:.3}");
    assert!((last_fz - weight).abs() < 0.02 * weight);
    assert!(std_z < 2e-3);
    assert!(grf_err < 0.05);
}

#[test]
fn joint_state_stream_is_deterministic() {
    let run = || {
        let (m, g) = robot("quad12");
        let bus = Bus::standard(DEFAULT_QUEUE_CAPACITY);
        let tap = bus.subscribe(JOINT_STATES).unwrap();
        let mut backend = make_sim_backend(&m, &g, [0.0, 0.0, 0.5, 0.0, 0.0, 0.0], &WorldConfig::default()).unwrap().with_substeps(10);
        let (pid, mode) = startup_procedure(&m, &g).unwrap();
        let mut lp = ControlLoop::new(LoopClock::new(1000.0, TimeSource::Sim).unwrap(), pid, mode, &bus).unwrap();
        let mut out = Vec::new();
        for _ in 0..300 {
            lp.tick(&mut backend, &mut |_| Ok(())).unwrap();
            out.extend(tap.drain().unwrap().into_iter().map(|m| match &*m {
                Message::JointState(s) => s.q.iter().chain(s.qd.iter()).chain(s.tau.iter()).map(|x| x.to_bits()).collect::<Vec<_>>(),
                _ => unreachable!(),
            }));
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_input_equilibrium_is_exact() {
    let (m, g) = robot("arm6");
    let world = WorldConfig { gravity: [0.0; 3], ..WorldConfig::default() };
    let mut b = make_sim_backend(&m, &g, [0.0; 6], &world).unwrap().with_initial_joints(g.q_home.clone()).unwrap();
    let before = b.state().clone();
    for _ in 0..100 {
        b.step(1e-3).unwrap();
    }
    assert_eq!(b.state().conf, before.conf);
    assert_eq!(b.state().vel, Velocity::zeros(&m));
}
