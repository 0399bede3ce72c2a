//! One run: backend chosen by the real-robot flag, controller core, low-level
//! loop and a planner, wired over a fresh bus. Produces the CSV logs and the
//! run manifest.

use std::path::{Path, PathBuf};

use locokit_core::backends::{
    auto_substeps, make_mock_hw_backend, make_sim_backend, Backend, BackendError, BackendKind, Capabilities, MockProfile, WorldConfig,
};
use locokit_core::bus::{Bus, Subscription, COMMAND, DEFAULT_QUEUE_CAPACITY, GROUND_TRUTH};
use locokit_core::control::{indexed_columns, ControlError, ControllerCore, LogBuffer, LogError};
use locokit_core::kindyn::{forward_kinematics, Configuration};
use locokit_core::lowlevel::{set_mode, startup_procedure, ControlLoop, ControlMode, LoopClock, LoopReport, LowLevelError, TimeSource};
use locokit_core::model::{GainsConfig, RobotModel};
use nalgebra::{DVector, Vector3};
use serde_json::{json, Value};
use thiserror::Error;

use crate::inputs::LoadedModel;
use crate::plan::{CodePath, HomeAndHold, OpenLoopHoming, Plan};

/// Height the floating base is dropped from, above the pose where the
/// lowest contact frame touches the ground.
pub const DEFAULT_DROP: f64 = 0.1;

#[derive(Debug, Error)]
pub enum RunError {
    /// Bad parameters; nothing ran.
    #[error("{0}")]
    Input(String),
    /// The loop stopped early. Logs up to the last good tick were written.
    #[error("{0}")]
    Fault(String),
    #[error("writing logs: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ControlError> for RunError {
    fn from(e: ControlError) -> Self {
        RunError::Fault(e.to_string())
    }
}

impl From<LogError> for RunError {
    fn from(e: LogError) -> Self {
        RunError::Fault(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    /// Closed-loop homing, then hold home.
    HomeAndHold,
    /// Open-loop homing streamed in trajectory mode.
    OpenLoop,
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub robot: LoadedModel,
    pub gains: GainsConfig,
    pub config_source: String,
    pub world: WorldConfig,
    pub world_source: Option<String>,
    pub real_robot: bool,
    pub hz: f64,
    pub duration: f64,
    /// Base position; overrides the world file.
    pub spawn: Option<[f64; 3]>,
    pub seed: u64,
    pub substeps: Option<usize>,
    pub clock: TimeSource,
    pub planner: PlannerKind,
    pub extra: Vec<(String, String)>,
}

impl RunSpec {
    pub fn new(robot: LoadedModel, gains: GainsConfig) -> Self {
        Self {
            config_source: format!("builtin:{}", robot.name),
            robot,
            gains,
            world: WorldConfig::default(),
            world_source: None,
            real_robot: false,
            hz: 1000.0,
            duration: 2.0,
            spawn: None,
            seed: 0,
            substeps: None,
            clock: TimeSource::Sim,
            planner: PlannerKind::HomeAndHold,
            extra: Vec::new(),
        }
    }

    fn model(&self) -> &RobotModel {
        &self.robot.model
    }

    /// Joint positions the backend starts from: home for floating-base
    /// robots (spawned in their standing pose), the neutral pose otherwise.
    pub fn initial_joints(&self) -> DVector<f64> {
        if self.model().floating_base() {
            self.gains.q_home.clone()
        } else {
            locokit_core::model::neutral_configuration(self.model())
        }
    }

    /// `--spawn`, else the world file, else a drop of [`DEFAULT_DROP`] for
    /// floating-base robots.
    pub fn spawn_pose(&self) -> Result<[f64; 6], RunError> {
        if let Some([x, y, z]) = self.spawn {
            return Ok([x, y, z, 0.0, 0.0, 0.0]);
        }
        if let Some(s) = self.world.spawn {
            return Ok(s);
        }
        if !self.model().floating_base() {
            return Ok([0.0; 6]);
        }
        let conf = Configuration::floating(Vector3::zeros(), Vector3::zeros(), self.initial_joints());
        let poses = forward_kinematics(self.model(), &conf).map_err(|e| RunError::Input(e.to_string()))?;
        let lowest = self.model().contact_frames().iter().filter_map(|f| poses.position(f).ok()).map(|p| p.z).fold(0.0_f64, f64::min);
        Ok([0.0, 0.0, -lowest + DEFAULT_DROP, 0.0, 0.0, 0.0])
    }

    pub fn substeps(&self) -> usize {
        self.substeps.unwrap_or_else(|| auto_substeps(self.model(), 1.0 / self.hz))
    }

    pub fn capabilities(&self) -> Capabilities {
        if self.model().floating_base() {
            Capabilities::go1()
        } else {
            Capabilities::ur5()
        }
    }

    fn control_mode(&self) -> ControlMode {
        match self.planner {
            PlannerKind::HomeAndHold => ControlMode::Point,
            PlannerKind::OpenLoop => ControlMode::Trajectory,
        }
    }

    pub fn make_backend(&self) -> Result<Box<dyn Backend>, RunError> {
        let m = self.model();
        let spawn = self.spawn_pose()?;
        let bad = |e: BackendError| RunError::Input(e.to_string());
        let q0 = self.initial_joints();
        Ok(if self.real_robot {
            Box::new(
                make_mock_hw_backend(m, &self.gains, MockProfile::Ideal, self.capabilities(), spawn, &self.world)
                    .map_err(bad)?
                    .with_initial_joints(q0)
                    .map_err(bad)?
                    .with_substeps(self.substeps()),
            )
        } else {
            Box::new(
                make_sim_backend(m, &self.gains, spawn, &self.world)
                    .map_err(bad)?
                    .with_initial_joints(q0)
                    .map_err(bad)?
                    .with_substeps(self.substeps()),
            )
        })
    }

    pub fn make_plan(&self) -> Result<Box<dyn Plan>, RunError> {
        Ok(match self.planner {
            PlannerKind::HomeAndHold => Box::new(HomeAndHold::new(self.gains.q_home.clone(), self.gains.homing_duration)),
            PlannerKind::OpenLoop => {
                let base = if self.model().floating_base() {
                    let s = self.spawn_pose()?;
                    Some((Vector3::new(s[0], s[1], s[2]), Vector3::new(s[3], s[4], s[5])))
                } else {
                    None
                };
                Box::new(OpenLoopHoming::new(
                    self.initial_joints(),
                    self.gains.q_home.clone(),
                    self.gains.homing_duration,
                    self.world.gravity(),
                    base,
                ))
            }
        })
    }

    fn validate(&self) -> Result<(), RunError> {
        if !(self.hz > 0.0 && self.hz.is_finite()) {
            return Err(RunError::Input(format!("--hz must be positive, got {}", self.hz)));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(RunError::Input(format!("--duration must be non-negative, got {}", self.duration)));
        }
        if self.substeps == Some(0) {
            return Err(RunError::Input("--substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Provenance record. Holds no wall-clock data, so identical inputs give
    /// identical manifests.
    pub fn manifest(&self, command: &str, path: &CodePath, ticks: u64, outputs: &[&str]) -> Result<Value, RunError> {
        let backend = if self.real_robot { BackendKind::MockHw } else { BackendKind::Sim };
        let extra: serde_json::Map<String, Value> = self.extra.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        Ok(json!({
            "tool": "locokit",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "robot": self.robot.name,
            "model": self.robot.source,
            "config": self.config_source,
            "world": self.world_source,
            "parameters": {
                "real_robot": self.real_robot,
                "backend": backend.to_string(),
                "hz": self.hz,
                "duration": self.duration,
                "spawn": self.spawn_pose()?,
                "gravity": self.world.gravity,
                "contact": self.world.contact,
                "substeps": self.substeps(),
                "clock": match self.clock { TimeSource::Sim => "sim", TimeSource::Wall => "wall" },
                "control_mode": match self.control_mode() { ControlMode::Point => "point", ControlMode::Trajectory => "trajectory" },
                "seed": self.seed,
            },
            "extra": extra,
            "code_path": path.markers(),
            "ticks": ticks,
            "outputs": outputs,
        }))
    }
}

/// What the planner side does every tick, after `/joint_states` went out.
struct Planning {
    core: ControllerCore,
    plan: Box<dyn Plan>,
    path: CodePath,
    cmd_tap: Subscription,
    commands: LogBuffer,
    gt_tap: Option<Subscription>,
    ground_truth: LogBuffer,
}

impl Planning {
    fn on_tick(&mut self, t: f64) -> Result<(), String> {
        self.core.poll().map_err(|e| e.to_string())?;
        self.core.set_time(t);
        self.plan.plan(&mut self.core, t, &mut self.path)?;
        self.core.send_des_jstate().map_err(|e| e.to_string())?;
        self.core.log_data().map_err(|e| e.to_string())?;
        self.record().map_err(|e| e.to_string())
    }

    fn record(&mut self) -> Result<(), RunError> {
        for m in self.cmd_tap.drain().map_err(|e| RunError::Fault(e.to_string()))? {
            if let Some(c) = m.as_command() {
                self.commands.append(c.t, &[c.q_des.as_slice(), c.qd_des.as_slice(), c.tau_ffwd.as_slice()])?;
            }
        }
        if let Some(tap) = &self.gt_tap {
            for m in tap.drain().map_err(|e| RunError::Fault(e.to_string()))? {
                if let Some(b) = m.as_base_state() {
                    let pose: Vec<f64> = b.position.iter().chain(b.rpy.iter()).copied().collect();
                    self.ground_truth.append(b.t, &[&pose])?;
                }
            }
        }
        Ok(())
    }
}

/// A wired-up run that can be ticked, run for a duration, or reset.
pub struct Session {
    spec: RunSpec,
    lp: ControlLoop,
    backend: Box<dyn Backend>,
    planning: Planning,
    ticks: u64,
}

impl Session {
    pub fn new(spec: RunSpec) -> Result<Self, RunError> {
        let plan = spec.make_plan()?;
        Self::with_plan(spec, plan)
    }

    pub fn with_plan(spec: RunSpec, mut plan: Box<dyn Plan>) -> Result<Self, RunError> {
        spec.validate()?;
        let model = spec.model().clone();
        let n = model.nq();
        let mut backend = spec.make_backend()?;
        let bus = Bus::standard(DEFAULT_QUEUE_CAPACITY);
        // Subscribers first: attaching the bus publishes the spawn pose.
        let core = ControllerCore::new(&spec.robot.name, model.clone(), spec.gains.clone(), &bus)
            .map_err(|e| RunError::Input(e.to_string()))?
            .with_world(&spec.world);
        let cmd_tap = bus.subscribe(COMMAND).map_err(|e| RunError::Input(e.to_string()))?;
        let gt_tap =
            if model.floating_base() { Some(bus.subscribe(GROUND_TRUTH).map_err(|e| RunError::Input(e.to_string()))?) } else { None };
        backend.attach_bus(bus.clone());

        let mut path = CodePath::default();
        let (pid, mut mode) = startup_procedure(&model, &spec.gains).map_err(|e| RunError::Input(e.to_string()))?;
        path.mark("startup_procedure");
        mode.control_mode = spec.control_mode();
        let mode = set_mode(mode, backend.capabilities()).map_err(|e| RunError::Input(e.to_string()))?;
        let clock = LoopClock::new(spec.hz, spec.clock).map_err(|e| RunError::Input(e.to_string()))?;
        let lp = ControlLoop::new(clock, pid, mode, &bus).map_err(|e| RunError::Input(e.to_string()))?;

        let mut commands = LogBuffer::new();
        for ch in ["q_des", "qd_des", "tau_ffwd"] {
            commands.add_channel(ch, indexed_columns(ch, n))?;
        }
        let mut ground_truth = LogBuffer::new();
        ground_truth.add_channel("base", ["x", "y", "z", "roll", "pitch", "yaw"].iter().map(|s| s.to_string()).collect())?;
        plan.reset();
        Ok(Self { spec, lp, backend, planning: Planning { core, plan, path, cmd_tap, commands, gt_tap, ground_truth }, ticks: 0 })
    }

    pub fn spec(&self) -> &RunSpec {
        &self.spec
    }

    pub fn core(&self) -> &ControllerCore {
        &self.planning.core
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn control_loop(&self) -> &ControlLoop {
        &self.lp
    }

    pub fn code_path(&self) -> &CodePath {
        &self.planning.path
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn commands(&self) -> &LogBuffer {
        &self.planning.commands
    }

    pub fn ground_truth(&self) -> &LogBuffer {
        &self.planning.ground_truth
    }

    /// One control period.
    pub fn tick(&mut self) -> Result<(), RunError> {
        let planning = &mut self.planning;
        let r = self.lp.tick(self.backend.as_mut(), &mut |t| planning.on_tick(t));
        self.planning.record()?;
        r.map_err(|e| RunError::Fault(format!("tick {}: {e}", self.ticks)))?;
        self.ticks += 1;
        Ok(())
    }

    /// Runs `duration` seconds in the clock's time source.
    pub fn run(&mut self, duration: f64) -> Result<LoopReport, RunError> {
        let planning = &mut self.planning;
        let r = self.lp.run(self.backend.as_mut(), duration, &mut |t| planning.on_tick(t));
        self.planning.record()?;
        match r {
            Ok(report) => {
                self.ticks += report.ticks;
                Ok(report)
            }
            Err(fault) => {
                self.ticks += fault.report.ticks;
                Err(RunError::Fault(fault.to_string()))
            }
        }
    }

    /// Back to the spawn state with the planner restarted.
    pub fn reset(&mut self) -> Result<(), RunError> {
        let plan = std::mem::replace(&mut self.planning.plan, Box::new(HomeAndHold::new(DVector::zeros(0), 1.0)));
        *self = Self::with_plan(self.spec.clone(), plan)?;
        Ok(())
    }

    /// Writes `log.csv`, `commands.csv`, `ground_truth.csv` (floating base
    /// only) and `manifest.json` into `dir`. Returns the manifest.
    pub fn write_artifacts(&self, dir: &Path, command: &str) -> Result<Value, RunError> {
        std::fs::create_dir_all(dir)?;
        let mut outputs = vec!["log.csv", "commands.csv"];
        self.planning.core.export_csv(&dir.join("log.csv"))?;
        self.planning.commands.export_csv(&dir.join("commands.csv"))?;
        if self.planning.gt_tap.is_some() {
            self.planning.ground_truth.export_csv(&dir.join("ground_truth.csv"))?;
            outputs.push("ground_truth.csv");
        }
        outputs.push("manifest.json");
        let manifest = self.spec.manifest(command, &self.planning.path, self.ticks, &outputs)?;
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

/// Result of [`simulate`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: LoopReport,
    pub ticks: u64,
    pub final_q: DVector<f64>,
    /// max |q − q_home| at the end.
    pub home_error: f64,
    pub log_dir: Option<PathBuf>,
}

/// Runs `spec` to completion and writes artifacts to `log_dir` if given.
/// On a loop fault the logs are still written before the error returns.
pub fn simulate(spec: RunSpec, log_dir: Option<&Path>) -> Result<RunOutcome, RunError> {
    let mut session = Session::new(spec)?;
    let duration = session.spec.duration;
    let result = session.run(duration);
    if let Some(dir) = log_dir {
        session.write_artifacts(dir, "simulate")?;
    }
    let report = result?;
    let final_q = session.backend.read_state().q;
    let home_error = (&final_q - &session.spec.gains.q_home).amax();
    Ok(RunOutcome { report, ticks: session.ticks, final_q, home_error, log_dir: log_dir.map(Path::to_path_buf) })
}

impl From<LowLevelError> for RunError {
    fn from(e: LowLevelError) -> Self {
        RunError::Fault(e.to_string())
    }
}
