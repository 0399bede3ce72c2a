//! The high-level controller: state ingestion from the bus, kinematics
//! refresh, command emission and logging, plus IK, trajectories and ground
//! reaction force estimation. Floating-base robots use the same core; the
//! base-specific parts refuse to run on fixed-base models.

mod grf;
mod ik;
mod log;
mod traj;

use std::collections::BTreeMap;

use nalgebra::{DVector, Isometry3, Matrix3, Vector3};
use thiserror::Error;

use crate::backends::{contact_force, ContactParams, WorldConfig};
use crate::bus::{
    BaseState, Bus, BusError, Command, JointState, Message, PayloadKind, Subscription, COMMAND, DEFAULT_QUEUE_CAPACITY, DIAGNOSTICS,
    GROUND_TRUTH, JOINT_STATES,
};
use crate::kindyn::{
    frame_jacobian, rnea, rpy_to_matrix, update_kinematics, Configuration, KinDynError, KinDynSnapshot, Velocity, DEFAULT_GRAVITY,
};
use crate::model::{GainsConfig, Registry, RegistryError, RobotModel};

pub use grf::{estimate_gr_forces, grf_from_leg, leg_joints, MAX_LEG_CONDITION};
pub use ik::{ik_position, IkError, IkOptions, IkSolution, UNREACHABLE_RESIDUAL};
pub use log::{indexed_columns, LogBuffer, LogError};
pub use traj::{quintic_trajectory, TrajectoryPoint};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("robot has no floating base")]
    NotFloatingBase,
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("no joint state received yet")]
    NoStateYet,
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("leg Jacobian of `{foot}` is singular (condition {condition:e})")]
    SingularLegJacobian { foot: String, condition: f64 },
    #[error("ground reaction forces not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    KinDyn(#[from] KinDynError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Log(#[from] LogError),
}

/// Makes sure the reserved topics exist on `bus`.
pub fn ensure_standard_topics(bus: &Bus) -> Result<(), BusError> {
    for (name, kind) in [
        (COMMAND, PayloadKind::Command),
        (JOINT_STATES, PayloadKind::JointState),
        (GROUND_TRUTH, PayloadKind::BaseState),
        (DIAGNOSTICS, PayloadKind::Diagnostics),
    ] {
        match bus.topic_kind(name) {
            Some(k) if k == kind => {}
            Some(k) => return Err(BusError::KindMismatch { topic: name.to_string(), expected: kind, got: k }),
            None => bus.create_topic(name, kind, DEFAULT_QUEUE_CAPACITY)?,
        }
    }
    Ok(())
}

/// State and services shared by fixed- and floating-base controllers.
#[derive(Debug)]
pub struct ControllerCore {
    robot_name: String,
    model: RobotModel,
    gains: GainsConfig,
    bus: Bus,
    jstate_sub: Subscription,
    pose_sub: Option<Subscription>,
    gravity: Vector3<f64>,
    contact_params: ContactParams,
    time: f64,

    q: DVector<f64>,
    qd: DVector<f64>,
    tau: DVector<f64>,
    pub q_des: DVector<f64>,
    pub qd_des: DVector<f64>,
    pub tau_ffwd: DVector<f64>,

    state_t: Option<f64>,
    base: Option<BaseState>,
    b_r_w: Matrix3<f64>,
    x_ee: Isometry3<f64>,
    contact_force_w: Vector3<f64>,
    contact_moment_w: Vector3<f64>,
    snapshot: Option<KinDynSnapshot>,
    snapshot_t: f64,
    grf_error: Option<String>,
    stale: u64,
    log: LogBuffer,
}

impl ControllerCore {
    /// Looks `robot_name` up in `registry`, loads description and gains, and
    /// wires the core to the bus.
    pub fn load_model_and_publishers(robot_name: &str, registry: &Registry, bus: &Bus) -> Result<Self, ControlError> {
        let model = registry.model(robot_name)?;
        let gains = registry.gains(robot_name, &model)?;
        Self::new(robot_name, model, gains, bus)
    }

    pub fn new(robot_name: &str, model: RobotModel, gains: GainsConfig, bus: &Bus) -> Result<Self, ControlError> {
        let n = model.nq();
        if gains.len() != n {
            return Err(ControlError::DimensionMismatch { what: "gains", expected: n, got: gains.len() });
        }
        ensure_standard_topics(bus)?;
        let jstate_sub = bus.subscribe(JOINT_STATES)?;
        let pose_sub = if model.floating_base() { Some(bus.subscribe(GROUND_TRUTH)?) } else { None };
        let mut log = LogBuffer::new();
        for name in ["q", "q_des", "qd", "tau", "tau_ffwd"] {
            log.add_channel(name, indexed_columns(name, n))?;
        }
        if model.floating_base() {
            let cols = ["base_x", "base_y", "base_z", "base_roll", "base_pitch", "base_yaw"];
            log.add_channel("base", cols.iter().map(|s| s.to_string()).collect())?;
        }
        Ok(Self {
            robot_name: robot_name.to_string(),
            gains,
            bus: bus.clone(),
            jstate_sub,
            pose_sub,
            gravity: DEFAULT_GRAVITY,
            contact_params: ContactParams::default(),
            time: 0.0,
            q: DVector::zeros(n),
            qd: DVector::zeros(n),
            tau: DVector::zeros(n),
            q_des: DVector::zeros(n),
            qd_des: DVector::zeros(n),
            tau_ffwd: DVector::zeros(n),
            state_t: None,
            base: None,
            b_r_w: Matrix3::identity(),
            x_ee: Isometry3::identity(),
            contact_force_w: Vector3::zeros(),
            contact_moment_w: Vector3::zeros(),
            snapshot: None,
            snapshot_t: 0.0,
            grf_error: None,
            stale: 0,
            log,
            model,
        })
    }

    /// Gravity and contact parameters used for feed-forward and contact sensing.
    pub fn with_world(mut self, world: &WorldConfig) -> Self {
        self.gravity = world.gravity();
        self.contact_params = world.contact;
        self
    }

    pub fn robot_name(&self) -> &str {
        &self.robot_name
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn gains(&self) -> &GainsConfig {
        &self.gains
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Sets the controller clock used to stamp commands and log rows.
    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn qd(&self) -> &DVector<f64> {
        &self.qd
    }

    pub fn tau(&self) -> &DVector<f64> {
        &self.tau
    }

    pub fn has_state(&self) -> bool {
        self.state_t.is_some()
    }

    pub fn state_time(&self) -> Option<f64> {
        self.state_t
    }

    pub fn stale_messages(&self) -> u64 {
        self.stale
    }

    /// `basePoseW` / `baseTwistW`, floating base only.
    pub fn base_state(&self) -> Option<&BaseState> {
        self.base.as_ref()
    }

    /// Rotation from world to base coordinates.
    pub fn b_r_w(&self) -> &Matrix3<f64> {
        &self.b_r_w
    }

    /// Pose of the world frame in base coordinates.
    pub fn world_to_base(&self) -> Option<Isometry3<f64>> {
        self.base.as_ref().map(|b| Configuration::floating(b.position, b.rpy, DVector::zeros(0)).base_pose().inverse())
    }

    /// Tool frame pose expressed in the base frame.
    pub fn x_ee(&self) -> &Isometry3<f64> {
        &self.x_ee
    }

    pub fn contact_force_w(&self) -> &Vector3<f64> {
        &self.contact_force_w
    }

    pub fn contact_moment_w(&self) -> &Vector3<f64> {
        &self.contact_moment_w
    }

    pub fn snapshot(&self) -> Option<&KinDynSnapshot> {
        self.snapshot.as_ref()
    }

    /// Why the last refresh left `gr_forces` empty, if it did.
    pub fn grf_error(&self) -> Option<&str> {
        self.grf_error.as_deref()
    }

    pub fn log(&self) -> &LogBuffer {
        &self.log
    }

    /// Drains the state subscriptions. Returns the number of accepted messages.
    pub fn poll(&mut self) -> Result<usize, ControlError> {
        let mut accepted = 0;
        for m in self.jstate_sub.drain()? {
            if let Some(s) = m.as_joint_state() {
                accepted += usize::from(self.receive_jstate(s)?);
            }
        }
        let poses = match &self.pose_sub {
            Some(sub) => sub.drain()?,
            None => Vec::new(),
        };
        for m in poses {
            if let Some(b) = m.as_base_state() {
                accepted += usize::from(self.receive_pose(b)?);
            }
        }
        Ok(accepted)
    }

    /// Takes a joint state unless it is older than the last one (then it is
    /// dropped and counted). Returns whether it was taken.
    pub fn receive_jstate(&mut self, msg: &JointState) -> Result<bool, ControlError> {
        let n = self.model.nq();
        for (what, v) in [("q", &msg.q), ("qd", &msg.qd), ("tau", &msg.tau)] {
            if v.len() != n {
                return Err(ControlError::DimensionMismatch { what, expected: n, got: v.len() });
            }
        }
        if self.state_t.is_some_and(|t| msg.t < t) {
            self.stale += 1;
            return Ok(false);
        }
        self.q.copy_from(&msg.q);
        self.qd.copy_from(&msg.qd);
        self.tau.copy_from(&msg.tau);
        self.state_t = Some(msg.t);
        Ok(true)
    }

    pub fn receive_pose(&mut self, msg: &BaseState) -> Result<bool, ControlError> {
        if !self.model.floating_base() {
            return Err(ControlError::NotFloatingBase);
        }
        if self.base.as_ref().is_some_and(|b| msg.t < b.t) {
            self.stale += 1;
            return Ok(false);
        }
        self.b_r_w = rpy_to_matrix(&msg.rpy).transpose();
        self.base = Some(msg.clone());
        Ok(true)
    }

    /// Publishes the desired fields on `/command`, stamped with the core clock.
    pub fn send_des_jstate(&mut self) -> Result<(), ControlError> {
        let n = self.model.nq();
        for (what, v) in [("q_des", &self.q_des), ("qd_des", &self.qd_des), ("tau_ffwd", &self.tau_ffwd)] {
            if v.len() != n {
                return Err(ControlError::DimensionMismatch { what, expected: n, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ControlError::NonFiniteInput(what));
            }
        }
        let cmd = Command { t: self.time, q_des: self.q_des.clone(), qd_des: self.qd_des.clone(), tau_ffwd: self.tau_ffwd.clone() };
        self.bus.publish(COMMAND, Message::Command(cmd))?;
        Ok(())
    }

    fn configuration(&self) -> Result<(Configuration, Velocity), ControlError> {
        if self.state_t.is_none() {
            return Err(ControlError::NoStateYet);
        }
        if self.model.floating_base() {
            let b = self.base.as_ref().ok_or(ControlError::NoStateYet)?;
            Ok((
                Configuration::floating(b.position, b.rpy, self.q.clone()),
                Velocity { base_lin: b.lin, base_ang: b.ang, qd: self.qd.clone() },
            ))
        } else {
            Ok((Configuration::fixed(self.q.clone()), Velocity::fixed(self.qd.clone())))
        }
    }

    /// Recomputes the kinematic and dynamic snapshot on the latest state,
    /// then the derived quantities: ground reaction forces for floating-base
    /// robots, tool pose and contact wrench for fixed-base ones.
    pub fn refresh_kinematics(&mut self) -> Result<&KinDynSnapshot, ControlError> {
        let (conf, vel) = self.configuration()?;
        let mut snap = update_kinematics(&self.model, &conf, &vel)?;
        if self.model.floating_base() {
            let h = rnea(&self.model, &conf, &vel, &DVector::zeros(self.model.nv()), &self.gravity)?;
            match estimate_gr_forces(&self.model, &snap, &self.tau, &h) {
                Ok(f) => {
                    snap.gr_forces = f;
                    self.grf_error = None;
                }
                Err(e) => self.grf_error = Some(e.to_string()),
            }
        } else {
            let tool = self.model.tool_frame().to_string();
            let root = snap.frame_poses.get(self.model.root_link())?;
            let ee = snap.frame_poses.get(&tool)?;
            self.x_ee = root.inverse() * ee;
            let p = ee.translation.vector;
            self.contact_force_w = if p.z < 0.0 {
                let j = frame_jacobian(&self.model, &conf, &tool)?;
                let v = j.rows(0, 3) * &self.qd;
                contact_force(&p, &Vector3::new(v[0], v[1], v[2]), &self.contact_params)
            } else {
                Vector3::zeros()
            };
            self.contact_moment_w = Vector3::zeros();
        }
        self.snapshot_t = self.state_t.unwrap_or_default();
        Ok(self.snapshot.insert(snap))
    }

    /// Timestamp of the state the snapshot was computed from.
    pub fn snapshot_time(&self) -> f64 {
        self.snapshot_t
    }

    /// Ground reaction forces on the latest state.
    pub fn estimate_gr_forces(&mut self) -> Result<BTreeMap<String, Vector3<f64>>, ControlError> {
        if !self.model.floating_base() {
            return Err(ControlError::NotFloatingBase);
        }
        let (conf, vel) = self.configuration()?;
        let snap = update_kinematics(&self.model, &conf, &vel)?;
        let h = rnea(&self.model, &conf, &vel, &DVector::zeros(self.model.nv()), &self.gravity)?;
        estimate_gr_forces(&self.model, &snap, &self.tau, &h)
    }

    /// Gravity torques at the measured configuration, joint rows only.
    pub fn gravity_ffwd(&self) -> Result<DVector<f64>, ControlError> {
        let (conf, _) = self.configuration()?;
        let g = rnea(&self.model, &conf, &Velocity::zeros(&self.model), &DVector::zeros(self.model.nv()), &self.gravity)?;
        Ok(g.rows(self.model.base_dofs(), self.model.nq()).into_owned())
    }

    /// Appends the current fields to the log at the core clock time.
    pub fn log_data(&mut self) -> Result<(), ControlError> {
        let base: Vec<f64> = match &self.base {
            Some(b) => b.position.iter().chain(b.rpy.iter()).copied().collect(),
            None => vec![0.0; 6],
        };
        let mut row: Vec<&[f64]> =
            vec![self.q.as_slice(), self.q_des.as_slice(), self.qd.as_slice(), self.tau.as_slice(), self.tau_ffwd.as_slice()];
        if self.model.floating_base() {
            row.push(&base);
        }
        self.log.append(self.time, &row)?;
        Ok(())
    }

    pub fn export_csv(&self, path: &std::path::Path) -> Result<(), ControlError> {
        Ok(self.log.export_csv(path)?)
    }
}
