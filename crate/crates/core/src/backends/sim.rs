use std::collections::BTreeMap;

use nalgebra::{DVector, Vector3};

use super::{contact_force, Backend, BackendError, BackendKind, Capabilities, ContactParams, JointCommand, WorldConfig};
use crate::bus::{BaseState, Bus, JointState, Message, GROUND_TRUTH};
use crate::kindyn::{euler_rate_map, forward_dynamics, forward_kinematics, frame_jacobian, wrap_angle, Configuration, Velocity};
use crate::model::{neutral_configuration, GainsConfig, RobotModel};

/// Contact bookkeeping for one contact frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactInfo {
    pub penetration: f64,
    pub normal_force: f64,
    pub force: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub conf: Configuration,
    pub vel: Velocity,
    pub t: f64,
    pub contacts: BTreeMap<String, ContactInfo>,
}

impl SimState {
    pub fn at_rest(conf: Configuration, model: &RobotModel) -> Self {
        Self { conf, vel: Velocity::zeros(model), t: 0.0, contacts: BTreeMap::new() }
    }

    fn is_finite(&self) -> bool {
        let c = &self.conf;
        let v = &self.vel;
        c.base_pos.iter().chain(c.base_rpy.iter()).chain(c.q.iter()).all(|x| x.is_finite())
            && v.base_lin.iter().chain(v.base_ang.iter()).chain(v.qd.iter()).all(|x| x.is_finite())
    }
}

/// One semi-implicit Euler step under joint efforts `tau`.
pub fn sim_step(
    model: &RobotModel,
    state: &SimState,
    tau: &DVector<f64>,
    dt: f64,
    params: &ContactParams,
    gravity: &Vector3<f64>,
) -> Result<SimState, BackendError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(BackendError::InvalidTimestep(dt));
    }
    if tau.len() != model.nq() {
        return Err(BackendError::DimensionMismatch { what: "joint efforts", expected: model.nq(), got: tau.len() });
    }
    let v = state.vel.to_vector(model);
    let mut external = BTreeMap::new();
    let mut contacts = BTreeMap::new();
    if !model.contact_frames().is_empty() {
        let poses = forward_kinematics(model, &state.conf)?;
        for c in model.contact_frames() {
            let p = poses.position(c)?;
            let j = frame_jacobian(model, &state.conf, c)?;
            let pv = j.rows(0, 3) * &v;
            let f = contact_force(&p, &Vector3::new(pv[0], pv[1], pv[2]), params);
            contacts.insert(c.clone(), ContactInfo { penetration: (-p.z).max(0.0), normal_force: f.z, force: f });
            if f != Vector3::zeros() {
                external.insert(c.clone(), f);
            }
        }
    }
    let nb = model.base_dofs();
    let mut generalized = DVector::zeros(model.nv());
    generalized.rows_mut(nb, model.nq()).copy_from(tau);
    let a = forward_dynamics(model, &state.conf, &state.vel, &generalized, &external, gravity)?;
    let vel = Velocity::from_vector(model, &(v + a * dt))?;

    let mut conf = state.conf.clone();
    conf.q += &vel.qd * dt;
    if model.floating_base() {
        conf.base_pos += vel.base_lin * dt;
        let e = euler_rate_map(&conf.base_rpy)?;
        let inv = e.try_inverse().ok_or(BackendError::EulerSingularity(conf.base_rpy.y))?;
        let rpy = conf.base_rpy + inv * vel.base_ang * dt;
        conf.base_rpy = rpy.map(wrap_angle);
    }
    let next = SimState { conf, vel, t: state.t + dt, contacts };
    if !next.is_finite() {
        return Err(BackendError::NonFiniteState(Box::new(state.clone())));
    }
    Ok(next)
}

/// The simulated plant. Position and velocity commands are realized by an
/// internal PD on the configured gains, standing in for actuator servos.
#[derive(Debug, Clone)]
pub struct SimBackend {
    model: RobotModel,
    kp: DVector<f64>,
    kd: DVector<f64>,
    effort_limits: DVector<f64>,
    params: ContactParams,
    gravity: Vector3<f64>,
    substeps: usize,
    state: SimState,
    initial: SimState,
    command: JointCommand,
    applied: DVector<f64>,
    bus: Option<Bus>,
}

pub fn make_sim_backend(model: &RobotModel, gains: &GainsConfig, spawn: [f64; 6], world: &WorldConfig) -> Result<SimBackend, BackendError> {
    if gains.len() != model.nq() {
        return Err(BackendError::DimensionMismatch { what: "gains", expected: model.nq(), got: gains.len() });
    }
    if !world.contact.is_valid() {
        return Err(BackendError::Config("contact parameters must be finite and non-negative".into()));
    }
    let q = neutral_configuration(model);
    let conf = if model.floating_base() {
        Configuration::floating(Vector3::new(spawn[0], spawn[1], spawn[2]), Vector3::new(spawn[3], spawn[4], spawn[5]).map(wrap_angle), q)
    } else {
        Configuration::fixed(q)
    };
    let state = SimState::at_rest(conf, model);
    Ok(SimBackend {
        model: model.clone(),
        kp: gains.kp.clone(),
        kd: gains.kd.clone(),
        effort_limits: model.effort_limits(),
        params: world.contact,
        gravity: world.gravity(),
        substeps: 1,
        initial: state.clone(),
        state,
        command: JointCommand::Effort(DVector::zeros(model.nq())),
        applied: DVector::zeros(model.nq()),
        bus: None,
    })
}

impl SimBackend {
    /// Starts (and resets) from joint positions `q` instead of the neutral pose.
    pub fn with_initial_joints(mut self, q: DVector<f64>) -> Result<Self, BackendError> {
        if q.len() != self.model.nq() {
            return Err(BackendError::DimensionMismatch { what: "initial joints", expected: self.model.nq(), got: q.len() });
        }
        self.initial.conf.q = q;
        self.state = self.initial.clone();
        Ok(self)
    }

    /// Physics steps per `step` call.
    pub fn with_substeps(mut self, n: usize) -> Self {
        self.substeps = n.max(1);
        self
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn set_state(&mut self, state: SimState) {
        self.state = state;
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    /// Moves the joints kinematically, holding the base; used by the mock
    /// driver's perfect-actuator echo.
    pub(crate) fn drive_joints(&mut self, q: DVector<f64>, qd: DVector<f64>, dt: f64) {
        self.state.conf.q = q;
        self.state.vel = Velocity { base_lin: Vector3::zeros(), base_ang: Vector3::zeros(), qd };
        self.state.t += dt;
        self.state.contacts.clear();
        self.applied.fill(0.0);
        self.publish_ground_truth();
    }

    fn effort(&self) -> DVector<f64> {
        let s = &self.state;
        let raw = match &self.command {
            JointCommand::Effort(tau) => tau.clone(),
            JointCommand::Position(q) => self.kp.component_mul(&(q - &s.conf.q)) - self.kd.component_mul(&s.vel.qd),
            JointCommand::Velocity(qd) => self.kd.component_mul(&(qd - &s.vel.qd)),
        };
        raw.zip_map(&self.effort_limits, |t, lim| t.clamp(-lim, lim))
    }

    fn publish_ground_truth(&self) {
        if let (Some(bus), Some(base)) = (&self.bus, self.read_base()) {
            if let Err(e) = bus.publish(GROUND_TRUTH, Message::BaseState(base)) {
                log::warn!("ground truth not published: {e}");
            }
        }
    }
}

impl Backend for SimBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Sim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    fn read_state(&self) -> JointState {
        JointState { t: self.state.t, q: self.state.conf.q.clone(), qd: self.state.vel.qd.clone(), tau: self.applied.clone() }
    }

    fn read_base(&self) -> Option<BaseState> {
        let s = &self.state;
        self.model.floating_base().then_some(BaseState {
            t: s.t,
            position: s.conf.base_pos,
            rpy: s.conf.base_rpy,
            lin: s.vel.base_lin,
            ang: s.vel.base_ang,
        })
    }

    fn write_command(&mut self, cmd: &JointCommand) -> Result<(), BackendError> {
        if cmd.values().len() != self.model.nq() {
            return Err(BackendError::DimensionMismatch { what: "joint command", expected: self.model.nq(), got: cmd.values().len() });
        }
        self.command = cmd.clone();
        Ok(())
    }

    fn step(&mut self, dt: f64) -> Result<(), BackendError> {
        let h = dt / self.substeps as f64;
        if !(h > 0.0 && h <= 0.01) {
            return Err(BackendError::InvalidTimestep(h));
        }
        let t_end = self.state.t + dt;
        for _ in 0..self.substeps {
            let tau = self.effort();
            self.state = sim_step(&self.model, &self.state, &tau, h, &self.params, &self.gravity)?;
            self.applied = tau;
        }
        self.state.t = t_end;
        self.publish_ground_truth();
        Ok(())
    }

    fn reset(&mut self) {
        self.state = self.initial.clone();
        self.command = JointCommand::Effort(DVector::zeros(self.model.nq()));
        self.applied.fill(0.0);
        self.publish_ground_truth();
    }

    fn contact_forces(&self) -> BTreeMap<String, Vector3<f64>> {
        self.state.contacts.iter().map(|(k, c)| (k.clone(), c.force)).collect()
    }

    fn attach_bus(&mut self, bus: Bus) {
        self.bus = Some(bus);
        self.publish_ground_truth();
    }
}
