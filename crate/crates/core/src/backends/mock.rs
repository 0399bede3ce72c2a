use std::collections::BTreeMap;

use nalgebra::{DVector, Vector3};

use super::{Backend, BackendError, BackendKind, Capabilities, Interface, JointCommand, SimBackend, WorldConfig};
use crate::bus::{BaseState, Bus, JointState};
use crate::model::{GainsConfig, RobotModel};

/// Command filter time constant of the lagged profile, seconds.
const LAG_TIME_CONSTANT: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockProfile {
    /// Perfect actuators, no reporting delay.
    Ideal,
    /// First-order command filter plus one tick of reporting latency.
    Lagged,
}

/// In-process stand-in for a hardware driver. Effort commands drive the same
/// dynamics as the simulator; position and velocity commands are tracked
/// perfectly (after the optional lag filter).
#[derive(Debug, Clone)]
pub struct MockHwBackend {
    plant: SimBackend,
    profile: MockProfile,
    interfaces: Capabilities,
    command: Option<JointCommand>,
    filtered: Option<JointCommand>,
    reported: JointState,
}

pub fn make_mock_hw_backend(
    model: &RobotModel,
    gains: &GainsConfig,
    profile: MockProfile,
    interfaces: Capabilities,
    spawn: [f64; 6],
    world: &WorldConfig,
) -> Result<MockHwBackend, BackendError> {
    if interfaces.is_empty() {
        return Err(BackendError::EmptyInterfaceSet);
    }
    let plant = super::make_sim_backend(model, gains, spawn, world)?;
    let reported = plant.read_state();
    Ok(MockHwBackend { plant, profile, interfaces, command: None, filtered: None, reported })
}

impl MockHwBackend {
    pub fn with_initial_joints(mut self, q: DVector<f64>) -> Result<Self, BackendError> {
        self.plant = self.plant.with_initial_joints(q)?;
        self.reported = self.plant.read_state();
        Ok(self)
    }

    pub fn with_substeps(mut self, n: usize) -> Self {
        self.plant = self.plant.with_substeps(n);
        self
    }

    pub fn profile(&self) -> MockProfile {
        self.profile
    }

    /// What the actuators actually see this tick.
    fn filter(&mut self, dt: f64) -> Option<JointCommand> {
        let cmd = self.command.clone()?;
        if self.profile == MockProfile::Ideal {
            return Some(cmd);
        }
        let state = self.plant.read_state();
        let prev = match &self.filtered {
            Some(f) if f.interface() == cmd.interface() => f.values().clone(),
            _ => match cmd.interface() {
                Interface::Effort => DVector::zeros(state.q.len()),
                Interface::Position => state.q.clone(),
                Interface::Velocity => state.qd.clone(),
            },
        };
        let alpha = 1.0 - (-dt / LAG_TIME_CONSTANT).exp();
        let v = &prev + (cmd.values() - &prev) * alpha;
        let out = match cmd {
            JointCommand::Effort(_) => JointCommand::Effort(v),
            JointCommand::Position(_) => JointCommand::Position(v),
            JointCommand::Velocity(_) => JointCommand::Velocity(v),
        };
        self.filtered = Some(out.clone());
        Some(out)
    }
}

impl Backend for MockHwBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::MockHw
    }

    fn capabilities(&self) -> Capabilities {
        self.interfaces
    }

    fn read_state(&self) -> JointState {
        match self.profile {
            MockProfile::Ideal => self.plant.read_state(),
            MockProfile::Lagged => self.reported.clone(),
        }
    }

    fn read_base(&self) -> Option<BaseState> {
        self.plant.read_base()
    }

    fn write_command(&mut self, cmd: &JointCommand) -> Result<(), BackendError> {
        if !self.interfaces.supports(cmd.interface()) {
            return Err(BackendError::UnsupportedMode { requested: cmd.interface(), available: self.interfaces });
        }
        let n = self.plant.model().nq();
        if cmd.values().len() != n {
            return Err(BackendError::DimensionMismatch { what: "joint command", expected: n, got: cmd.values().len() });
        }
        self.command = Some(cmd.clone());
        Ok(())
    }

    fn step(&mut self, dt: f64) -> Result<(), BackendError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(BackendError::InvalidTimestep(dt));
        }
        self.reported = self.plant.read_state();
        let before = self.plant.read_state();
        match self.filter(dt) {
            Some(JointCommand::Position(q)) => {
                let qd = (&q - &before.q) / dt;
                self.plant.drive_joints(q, qd, dt);
            }
            Some(JointCommand::Velocity(qd)) => {
                let q = &before.q + &qd * dt;
                self.plant.drive_joints(q, qd, dt);
            }
            Some(effort) => {
                self.plant.write_command(&effort)?;
                self.plant.step(dt)?;
            }
            None => {
                self.plant.write_command(&JointCommand::Effort(DVector::zeros(before.q.len())))?;
                self.plant.step(dt)?;
            }
        }
        if self.profile == MockProfile::Ideal {
            self.reported = self.plant.read_state();
        }
        Ok(())
    }

    fn reset(&mut self) {
        self.plant.reset();
        self.command = None;
        self.filtered = None;
        self.reported = self.plant.read_state();
    }

    fn contact_forces(&self) -> BTreeMap<String, Vector3<f64>> {
        self.plant.contact_forces()
    }

    fn attach_bus(&mut self, bus: Bus) {
        self.plant.attach_bus(bus);
    }
}
