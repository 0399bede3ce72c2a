//! Scripted scenarios: `pickreach` (ARM6 reaches targets with IK, quintic
//! moves and gravity feed-forward) and `stand` (QUAD12 dropped onto its feet).

use std::collections::BTreeMap;

use locokit_core::backends::Backend;
use locokit_core::bus::Bus;
use locokit_core::control::{ik_position, quintic_trajectory, ControllerCore, IkOptions};
use locokit_core::kindyn::{com_state, frame_pose, Configuration, Velocity};
use locokit_core::lowlevel::homing_trajectory;
use locokit_core::model::{GainsConfig, RobotModel};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::inputs::LoadedModel;
use crate::plan::{CodePath, HomeAndHold, Plan};
use crate::run::{RunError, RunSpec, Session};

pub const PICKREACH_TARGETS: usize = 3;
pub const PICKREACH_TOLERANCE: f64 = 5e-3;
const MOVE_TIME: f64 = 1.5;
const HOLD_TIME: f64 = 1.0;
/// Spread of the random target poses around home, radians per joint.
const TARGET_SPREAD: f64 = 0.6;

pub const STAND_DURATION: f64 = 3.0;
pub const STAND_FORCE_TOLERANCE: f64 = 0.02;
pub const STAND_COM_STD: f64 = 2e-3;
pub const STAND_GRF_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub lines: Vec<String>,
    /// The first violated criterion, if any.
    pub failure: Option<String>,
}

impl DemoOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Homing, then a quintic move to each goal followed by a hold.
#[derive(Debug, Clone)]
pub struct ReachPlan {
    home: DVector<f64>,
    homing: f64,
    goals: Vec<DVector<f64>>,
    start: Option<DVector<f64>>,
}

impl ReachPlan {
    pub fn new(home: DVector<f64>, homing: f64, goals: Vec<DVector<f64>>) -> Self {
        Self { home, homing, goals, start: None }
    }

    /// Time at which the hold on goal `k` ends.
    pub fn hold_end(&self, k: usize) -> f64 {
        self.homing + (k + 1) as f64 * (MOVE_TIME + HOLD_TIME)
    }
}

impl Plan for ReachPlan {
    fn plan(&mut self, core: &mut ControllerCore, t: f64, path: &mut CodePath) -> Result<(), String> {
        let start = self.start.get_or_insert_with(|| core.q().clone());
        let (q, qd) = if t < self.homing {
            path.mark("homing");
            homing_trajectory(start, &self.home, self.homing, t).map_err(|e| e.to_string())?
        } else {
            let seg = ((t - self.homing) / (MOVE_TIME + HOLD_TIME)).floor() as usize;
            let k = seg.min(self.goals.len() - 1);
            let from = if k == 0 { &self.home } else { &self.goals[k - 1] };
            let local = if seg >= self.goals.len() { MOVE_TIME } else { t - self.homing - k as f64 * (MOVE_TIME + HOLD_TIME) };
            path.mark(if local < MOVE_TIME { "reach" } else { "hold" });
            let (q, qd, _) = quintic_trajectory(from, &self.goals[k], MOVE_TIME, local.min(MOVE_TIME)).map_err(|e| e.to_string())?;
            (q, qd)
        };
        core.q_des = q;
        core.qd_des = qd;
        core.tau_ffwd = core.gravity_ffwd().map_err(|e| e.to_string())?;
        Ok(())
    }

    fn reset(&mut self) {
        self.start = None;
    }
}

/// A tool position and the joint solution that reaches it.
pub type Target = (Vector3<f64>, DVector<f64>);

/// Reachable targets from seeded random poses near home, with IK solutions
/// chained from home.
pub fn pickreach_targets(model: &RobotModel, gains: &GainsConfig, seed: u64) -> Result<Vec<Target>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = model.tool_frame().to_string();
    let limits = model.dof_limits();
    let mut prev = gains.q_home.clone();
    let mut out = Vec::new();
    for _ in 0..PICKREACH_TARGETS {
        let q = DVector::from_iterator(
            model.nq(),
            gains.q_home.iter().zip(&limits).map(|(h, l)| (h + rng.gen_range(-TARGET_SPREAD..TARGET_SPREAD)).clamp(l.lower, l.upper)),
        );
        let target = frame_pose(model, &Configuration::fixed(q), &frame).map_err(|e| e.to_string())?.translation.vector;
        let sol =
            ik_position(model, &target, &frame, &prev, &IkOptions::default()).map_err(|e| format!("IK for target {target:?}: {e}"))?;
        prev = sol.q.clone();
        out.push((target, sol.q));
    }
    Ok(out)
}

pub fn pickreach(robot: LoadedModel, gains: GainsConfig, seed: u64) -> Result<DemoOutcome, RunError> {
    let model = robot.model.clone();
    let frame = model.tool_frame().to_string();
    let targets = pickreach_targets(&model, &gains, seed).map_err(RunError::Fault)?;
    let plan = ReachPlan::new(gains.q_home.clone(), gains.homing_duration, targets.iter().map(|(_, q)| q.clone()).collect());
    let ends: Vec<f64> = (0..targets.len()).map(|k| plan.hold_end(k)).collect();
    let mut spec = RunSpec::new(robot, gains);
    spec.seed = seed;
    spec.duration = *ends.last().unwrap_or(&0.0);
    let mut session = Session::with_plan(spec, Box::new(plan))?;

    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;
    let mut reached = 0;
    for (k, ((target, _), end)) in targets.iter().zip(&ends).enumerate() {
        let ticks = (end * session.spec().hz).round() as u64;
        while session.ticks() < ticks {
            session.tick()?;
        }
        let q = session.backend().read_state().q;
        let x = frame_pose(&model, &Configuration::fixed(q), &frame).map_err(|e| RunError::Fault(e.to_string()))?.translation.vector;
        let err = (x - target).norm();
        worst = worst.max(err);
        if err < PICKREACH_TOLERANCE {
            reached += 1;
        }
        lines.push(format!("target {}: ({:.4}, {:.4}, {:.4}) hold error {:.3} mm", k + 1, target.x, target.y, target.z, err * 1e3));
    }
    lines.push(format!("{reached}/{} targets, max hold error {:.3} mm", targets.len(), worst * 1e3));
    let failure = (reached < targets.len()).then(|| format!("hold error {:.3} mm exceeds {} mm", worst * 1e3, PICKREACH_TOLERANCE * 1e3));
    Ok(DemoOutcome { lines, failure })
}

/// Ground reaction forces estimated from the backend's current measurements.
pub fn estimate_grf(
    model: &RobotModel,
    gains: &GainsConfig,
    backend: &dyn Backend,
    spec: &RunSpec,
) -> Result<BTreeMap<String, Vector3<f64>>, RunError> {
    let mut core = ControllerCore::new(model.name(), model.clone(), gains.clone(), &Bus::new())?.with_world(&spec.world);
    core.receive_jstate(&backend.read_state())?;
    let base = backend.read_base().ok_or_else(|| RunError::Fault("no base state".into()))?;
    core.receive_pose(&base)?;
    Ok(core.estimate_gr_forces()?)
}

/// Summary of a standing run.
#[derive(Debug, Clone, PartialEq)]
pub struct StandStats {
    pub weight: f64,
    /// Σ F_z over the last 100 ms, mean.
    pub fz: f64,
    pub com_mean: f64,
    /// CoM height standard deviation over the last second.
    pub com_std: f64,
    /// Worst per-foot relative error of the estimate against contact truth.
    pub grf_error: f64,
}

pub fn stand_run(spec: RunSpec) -> Result<StandStats, RunError> {
    let model = spec.robot.model.clone();
    let gains = spec.gains.clone();
    let plan = HomeAndHold::new(gains.q_home.clone(), gains.homing_duration);
    let hz = spec.hz;
    let duration = spec.duration;
    let mut session = Session::with_plan(spec, Box::new(plan))?;
    let total = (duration * hz).round() as u64;
    let last_second = total.saturating_sub(hz.round() as u64);
    let last_100ms = total.saturating_sub((0.1 * hz).round() as u64);
    let mut com = Vec::new();
    let mut fz = Vec::new();
    while session.ticks() < total {
        session.tick()?;
        if session.ticks() > last_second {
            let b = session.backend();
            let (js, base) = (b.read_state(), b.read_base().ok_or_else(|| RunError::Fault("no base state".into()))?);
            let conf = Configuration::floating(base.position, base.rpy, js.q);
            let vel = Velocity { base_lin: base.lin, base_ang: base.ang, qd: js.qd };
            com.push(com_state(&model, &conf, &vel).map_err(|e| RunError::Fault(e.to_string()))?.com.z);
        }
        if session.ticks() > last_100ms {
            fz.push(session.backend().contact_forces().values().map(|f| f.z).sum::<f64>());
        }
    }
    let truth = session.backend().contact_forces();
    let est = estimate_grf(&model, &gains, session.backend(), session.spec())?;
    let grf_error = truth.iter().map(|(foot, f)| (est[foot] - f).norm() / f.norm().max(1e-9)).fold(0.0, f64::max);
    let n = com.len().max(1) as f64;
    let com_mean = com.iter().sum::<f64>() / n;
    let com_std = (com.iter().map(|z| (z - com_mean).powi(2)).sum::<f64>() / n).sqrt();
    let g = session.spec().world.gravity().norm();
    Ok(StandStats { weight: model.total_mass() * g, fz: fz.iter().sum::<f64>() / fz.len().max(1) as f64, com_mean, com_std, grf_error })
}

pub fn stand(robot: LoadedModel, gains: GainsConfig, seed: u64) -> Result<DemoOutcome, RunError> {
    let mut spec = RunSpec::new(robot, gains);
    spec.seed = seed;
    spec.duration = STAND_DURATION;
    let spawn = spec.spawn_pose()?;
    let s = stand_run(spec)?;
    let rel = (s.fz - s.weight).abs() / s.weight;
    let lines = vec![
        format!("spawn height {:.3} m", spawn[2]),
        format!("sum Fz {:.3} N vs weight {:.3} N ({:.3}%)", s.fz, s.weight, rel * 100.0),
        format!("CoM height {:.4} m, std {:.3} mm over last second", s.com_mean, s.com_std * 1e3),
        format!("GRF estimate error {:.3}%", s.grf_error * 100.0),
    ];
    let failure = if rel > STAND_FORCE_TOLERANCE {
        Some(format!("sum Fz off by {:.2}% (limit {}%)", rel * 100.0, STAND_FORCE_TOLERANCE * 100.0))
    } else if s.com_std > STAND_COM_STD {
        Some(format!("CoM height std {:.3} mm (limit {} mm)", s.com_std * 1e3, STAND_COM_STD * 1e3))
    } else if s.grf_error > STAND_GRF_TOLERANCE {
        Some(format!("GRF estimate error {:.2}% (limit {}%)", s.grf_error * 100.0, STAND_GRF_TOLERANCE * 100.0))
    } else {
        None
    };
    Ok(DemoOutcome { lines, failure })
}
