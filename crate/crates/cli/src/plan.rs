//! Planners: the code that runs once per tick on the controller core and
//! decides the desired joint state. The same planner object drives the
//! simulator and the mock hardware.

use locokit_core::control::ControllerCore;
use locokit_core::kindyn::{rnea, Configuration, Velocity};
use locokit_core::lowlevel::homing_trajectory;
use nalgebra::{DVector, Vector3};

/// Ordered, de-duplicated markers of the planner branches taken in a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodePath(Vec<&'static str>);

impl CodePath {
    pub fn mark(&mut self, marker: &'static str) {
        if !self.0.contains(&marker) {
            self.0.push(marker);
        }
    }

    pub fn markers(&self) -> &[&'static str] {
        &self.0
    }
}

pub trait Plan: Send {
    /// Sets `q_des`, `qd_des` and `tau_ffwd` on `core` for tick time `t`.
    /// `core` already holds the measurements published this tick.
    fn plan(&mut self, core: &mut ControllerCore, t: f64, path: &mut CodePath) -> Result<(), String>;

    /// Forget progress; the next call starts over.
    fn reset(&mut self) {}
}

/// Cubic homing from the first measured configuration, then holding home.
/// Gravity feed-forward on the measured configuration throughout.
#[derive(Debug, Clone)]
pub struct HomeAndHold {
    home: DVector<f64>,
    duration: f64,
    start: Option<DVector<f64>>,
}

impl HomeAndHold {
    pub fn new(home: DVector<f64>, duration: f64) -> Self {
        Self { home, duration, start: None }
    }
}

impl Plan for HomeAndHold {
    fn plan(&mut self, core: &mut ControllerCore, t: f64, path: &mut CodePath) -> Result<(), String> {
        let start = self.start.get_or_insert_with(|| core.q().clone());
        path.mark(if t < self.duration { "homing" } else { "hold" });
        let (q, qd) = homing_trajectory(start, &self.home, self.duration, t).map_err(|e| e.to_string())?;
        core.q_des = q;
        core.qd_des = qd;
        core.tau_ffwd = core.gravity_ffwd().map_err(|e| e.to_string())?;
        Ok(())
    }

    fn reset(&mut self) {
        self.start = None;
    }
}

/// Open-loop homing: the trajectory starts from the configuration the
/// robot is known to start in, and the feed-forward is the gravity torque
/// of the desired pose. Nothing measured enters the commands.
#[derive(Debug, Clone)]
pub struct OpenLoopHoming {
    start: DVector<f64>,
    home: DVector<f64>,
    duration: f64,
    gravity: Vector3<f64>,
    /// Base position and roll-pitch-yaw assumed for the feed-forward.
    base: Option<(Vector3<f64>, Vector3<f64>)>,
}

impl OpenLoopHoming {
    pub fn new(
        start: DVector<f64>,
        home: DVector<f64>,
        duration: f64,
        gravity: Vector3<f64>,
        base: Option<(Vector3<f64>, Vector3<f64>)>,
    ) -> Self {
        Self { start, home, duration, gravity, base }
    }
}

impl Plan for OpenLoopHoming {
    fn plan(&mut self, core: &mut ControllerCore, t: f64, path: &mut CodePath) -> Result<(), String> {
        path.mark("open_loop_trajectory");
        let (q, qd) = homing_trajectory(&self.start, &self.home, self.duration, t).map_err(|e| e.to_string())?;
        let model = core.model();
        let conf = match self.base {
            Some((pos, rpy)) => Configuration::floating(pos, rpy, q.clone()),
            None => Configuration::fixed(q.clone()),
        };
        let g = rnea(model, &conf, &Velocity::zeros(model), &DVector::zeros(model.nv()), &self.gravity).map_err(|e| e.to_string())?;
        core.tau_ffwd = g.rows(model.base_dofs(), model.nq()).into_owned();
        core.q_des = q;
        core.qd_des = qd;
        Ok(())
    }
}
