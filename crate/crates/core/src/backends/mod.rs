//! Plants behind one contract: the physics simulator and the mock hardware
//! driver. The control loop never knows which one it is driving.

mod contact;
mod mock;
mod sim;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{BaseState, Bus, JointState};
use crate::kindyn::{KinDynError, DEFAULT_GRAVITY};

pub use contact::{contact_force, ContactParams};
pub use mock::{make_mock_hw_backend, MockHwBackend, MockProfile};
pub use sim::{make_sim_backend, sim_step, ContactInfo, SimBackend, SimState};

/// Largest physics step that keeps the default penalty contact stable, s.
pub const CONTACT_PHYSICS_STEP: f64 = 1e-4;

/// Physics steps per control period: one for contact-free robots, enough to
/// keep the step at or below [`CONTACT_PHYSICS_STEP`] otherwise.
pub fn auto_substeps(model: &crate::model::RobotModel, period: f64) -> usize {
    if model.contact_frames().is_empty() {
        1
    } else {
        ((period / CONTACT_PHYSICS_STEP) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Interface {
    Effort,
    Position,
    Velocity,
}

impl fmt::Display for Interface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interface::Effort => "effort",
            Interface::Position => "position",
            Interface::Velocity => "velocity",
        })
    }
}

/// Command interfaces a backend accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub effort: bool,
    pub position: bool,
    pub velocity: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities { effort: true, position: true, velocity: true };
    pub const EFFORT_ONLY: Capabilities = Capabilities { effort: true, position: false, velocity: false };

    /// Interface set of a UR5-class arm driver.
    pub fn ur5() -> Self {
        Self::ALL
    }

    /// Interface set of a Go1-class quadruped: a single torque controller.
    pub fn go1() -> Self {
        Self::EFFORT_ONLY
    }

    pub fn supports(&self, i: Interface) -> bool {
        match i {
            Interface::Effort => self.effort,
            Interface::Position => self.position,
            Interface::Velocity => self.velocity,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.effort || self.position || self.velocity)
    }
}

impl fmt::Display for Capabilities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = [Interface::Effort, Interface::Position, Interface::Velocity]
            .into_iter()
            .filter(|i| self.supports(*i))
            .map(|i| i.to_string())
            .collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointCommand {
    Effort(DVector<f64>),
    Position(DVector<f64>),
    Velocity(DVector<f64>),
}

impl JointCommand {
    pub fn interface(&self) -> Interface {
        match self {
            JointCommand::Effort(_) => Interface::Effort,
            JointCommand::Position(_) => Interface::Position,
            JointCommand::Velocity(_) => Interface::Velocity,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        match self {
            JointCommand::Effort(v) | JointCommand::Position(v) | JointCommand::Velocity(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("{requested} commands not supported; backend offers {available}")]
    UnsupportedMode { requested: Interface, available: Capabilities },
    #[error("mock hardware needs at least one command interface")]
    EmptyInterfaceSet,
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("time step {0} outside (0, 0.01]")]
    InvalidTimestep(f64),
    #[error("roll-pitch-yaw rate map is singular at pitch {0}")]
    EulerSingularity(f64),
    #[error("simulation state became non-finite at t = {}", .0.t)]
    NonFiniteState(Box<SimState>),
    #[error(transparent)]
    KinDyn(KinDynError),
    #[error("invalid world config: {0}")]
    Config(String),
}

impl From<KinDynError> for BackendError {
    fn from(e: KinDynError) -> Self {
        match e {
            KinDynError::EulerSingularity(p) => BackendError::EulerSingularity(p),
            KinDynError::DimensionMismatch { what, expected, got } => BackendError::DimensionMismatch { what, expected, got },
            other => BackendError::KinDyn(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Sim,
    MockHw,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Sim => "sim",
            BackendKind::MockHw => "mock_hw",
        })
    }
}

/// The plant seam. One loop owns and drives a backend.
pub trait Backend: Send {
    fn kind(&self) -> BackendKind;
    fn capabilities(&self) -> Capabilities;
    fn read_state(&self) -> JointState;
    /// `None` for fixed-base robots.
    fn read_base(&self) -> Option<BaseState>;
    fn write_command(&mut self, cmd: &JointCommand) -> Result<(), BackendError>;
    /// Advances a simulated plant; live drivers just account for time.
    fn step(&mut self, dt: f64) -> Result<(), BackendError>;
    /// Back to the state the backend was created in.
    fn reset(&mut self);
    /// Ground-truth contact forces, keyed by contact frame.
    fn contact_forces(&self) -> BTreeMap<String, Vector3<f64>> {
        BTreeMap::new()
    }
    /// Publishes `/ground_truth` from now on, if the robot has a floating base.
    fn attach_bus(&mut self, _bus: Bus) {}
}

/// World description: gravity, contact parameters, spawn pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub gravity: [f64; 3],
    pub contact: ContactParams,
    /// `[x, y, z, roll, pitch, yaw]` of the base.
    pub spawn: Option<[f64; 6]>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { gravity: DEFAULT_GRAVITY.into(), contact: ContactParams::default(), spawn: None }
    }
}

impl WorldConfig {
    pub fn from_json(source: &str) -> Result<Self, BackendError> {
        let w: WorldConfig = serde_json::from_str(source).map_err(|e| BackendError::Config(e.to_string()))?;
        if !w.contact.is_valid() {
            return Err(BackendError::Config("contact parameters must be finite and non-negative".into()));
        }
        if !w.gravity.iter().chain(w.spawn.iter().flatten()).all(|v| v.is_finite()) {
            return Err(BackendError::Config("non-finite value".into()));
        }
        Ok(w)
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    pub fn spawn(&self) -> [f64; 6] {
        self.spawn.unwrap_or_default()
    }
}
