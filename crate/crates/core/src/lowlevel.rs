//! Joint-level impedance control: PID plus feed-forward effort, mode
//! management, homing, and the fixed-rate loop that ties the bus to a backend.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use thiserror::Error;

use crate::backends::{Backend, BackendError, Capabilities, Interface, JointCommand};
use crate::bus::{Bus, BusError, Command, JointState, Message, Subscription, COMMAND, JOINT_STATES};
use crate::model::{GainsConfig, RobotModel};

pub const DEFAULT_RATE: f64 = 1000.0;

/// Fraction of the effort limit the integral term may contribute by default.
pub const DEFAULT_INTEGRAL_FRACTION: f64 = 0.5;

/// A tick that takes this much longer than the period is an overrun.
const OVERRUN_FACTOR: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LowLevelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("time step must be positive, got {0}")]
    InvalidTimestep(f64),
    #[error("loop rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("mode {requested} needs the {missing} interface, backend offers {available}")]
    UnsupportedMode { requested: ControllerMode, missing: Interface, available: Capabilities },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("backend fault: {0}")]
    BackendFault(#[from] BackendError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("planner failed: {0}")]
    Planner(String),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), LowLevelError> {
    if expected == got {
        Ok(())
    } else {
        Err(LowLevelError::DimensionMismatch { what, expected, got })
    }
}

fn check_finite(what: &'static str, v: &DVector<f64>) -> Result<(), LowLevelError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LowLevelError::NonFiniteInput(what))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Point,
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerType {
    Position,
    Torque,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerMode {
    pub control_mode: ControlMode,
    pub controller_type: ControllerType,
}

impl ControllerMode {
    pub const fn new(control_mode: ControlMode, controller_type: ControllerType) -> Self {
        Self { control_mode, controller_type }
    }
}

impl Default for ControllerMode {
    fn default() -> Self {
        Self::new(ControlMode::Point, ControllerType::Torque)
    }
}

impl fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.control_mode {
            ControlMode::Point => "point",
            ControlMode::Trajectory => "trajectory",
        };
        let t = match self.controller_type {
            ControllerType::Position => "position",
            ControllerType::Torque => "torque",
        };
        write!(f, "({c}, {t})")
    }
}

/// Per-joint PID state with integral anti-windup.
#[derive(Debug, Clone, PartialEq)]
pub struct PidState {
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
    pub ki: DVector<f64>,
    pub integral: DVector<f64>,
    pub last_error: DVector<f64>,
    /// Bound on `|ki·integral|`, N·m.
    pub integral_limit: DVector<f64>,
    pub effort_limit: DVector<f64>,
}

impl PidState {
    pub fn new(gains: &GainsConfig, model: &RobotModel) -> Result<Self, LowLevelError> {
        let n = model.nq();
        check_len("gains", n, gains.len())?;
        for (name, v) in [("kp", &gains.kp), ("kd", &gains.kd), ("ki", &gains.ki)] {
            if v.iter().any(|g| !g.is_finite() || *g < 0.0) {
                return Err(LowLevelError::InvalidGains(format!("{name} must be finite and non-negative")));
            }
        }
        let effort_limit = model.effort_limits();
        Ok(Self {
            kp: gains.kp.clone(),
            kd: gains.kd.clone(),
            ki: gains.ki.clone(),
            integral: DVector::zeros(n),
            last_error: DVector::zeros(n),
            integral_limit: &effort_limit * DEFAULT_INTEGRAL_FRACTION,
            effort_limit,
        })
    }

    pub fn with_integral_limit(mut self, limit: DVector<f64>) -> Result<Self, LowLevelError> {
        check_len("integral limit", self.len(), limit.len())?;
        self.integral_limit = limit;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.kp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kp.is_empty()
    }

    pub fn reset(&mut self) {
        self.integral.fill(0.0);
        self.last_error.fill(0.0);
    }

    pub fn integral_contribution(&self) -> DVector<f64> {
        self.ki.component_mul(&self.integral)
    }
}

/// `τ = kp·e + kd·ė + ki·∫e + τ_ffwd`, integral clamped, output saturated.
pub fn control_step(pid: &mut PidState, cmd: &Command, state: &JointState, dt: f64) -> Result<DVector<f64>, LowLevelError> {
    let n = pid.len();
    check_len("q_des", n, cmd.q_des.len())?;
    check_len("qd_des", n, cmd.qd_des.len())?;
    check_len("tau_ffwd", n, cmd.tau_ffwd.len())?;
    check_len("q", n, state.q.len())?;
    check_len("qd", n, state.qd.len())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LowLevelError::InvalidTimestep(dt));
    }
    check_finite("q_des", &cmd.q_des)?;
    check_finite("qd_des", &cmd.qd_des)?;
    check_finite("tau_ffwd", &cmd.tau_ffwd)?;
    check_finite("q", &state.q)?;
    check_finite("qd", &state.qd)?;

    let e = &cmd.q_des - &state.q;
    let ed = &cmd.qd_des - &state.qd;
    let mut tau = DVector::zeros(n);
    for j in 0..n {
        pid.integral[j] += e[j] * dt;
        let ki = pid.ki[j];
        let mut integral_term = 0.0;
        if ki > 0.0 {
            let lim = pid.integral_limit[j];
            integral_term = (ki * pid.integral[j]).clamp(-lim, lim);
            pid.integral[j] = integral_term / ki;
        }
        let raw = pid.kp[j] * e[j] + pid.kd[j] * ed[j] + integral_term + cmd.tau_ffwd[j];
        let lim = pid.effort_limit[j];
        tau[j] = raw.clamp(-lim, lim);
    }
    pid.last_error = e;
    Ok(tau)
}

/// Fresh PID state and the default mode, (point, torque).
pub fn startup_procedure(model: &RobotModel, gains: &GainsConfig) -> Result<(PidState, ControllerMode), LowLevelError> {
    check_finite("home", &gains.q_home)?;
    Ok((PidState::new(gains, model)?, ControllerMode::default()))
}

/// Cubic from `q_start` to `q_home` over `duration` with zero end velocities.
pub fn homing_trajectory(
    q_start: &DVector<f64>,
    q_home: &DVector<f64>,
    duration: f64,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>), LowLevelError> {
    check_len("q_home", q_start.len(), q_home.len())?;
    if !(duration > 0.0) {
        return Err(LowLevelError::NonPositiveDuration(duration));
    }
    let delta = q_home - q_start;
    if t >= duration {
        return Ok((q_home.clone(), DVector::zeros(q_start.len())));
    }
    let s = (t / duration).max(0.0);
    let pos = 3.0 * s * s - 2.0 * s * s * s;
    let vel = (6.0 * s - 6.0 * s * s) / duration;
    Ok((q_start + &delta * pos, delta * vel))
}

/// Accepts `requested` when the backend has the interface it needs.
pub fn set_mode(requested: ControllerMode, capabilities: Capabilities) -> Result<ControllerMode, LowLevelError> {
    let needed = match requested.controller_type {
        ControllerType::Torque => Interface::Effort,
        ControllerType::Position => Interface::Position,
    };
    if capabilities.supports(needed) {
        Ok(requested)
    } else {
        Err(LowLevelError::UnsupportedMode { requested, missing: needed, available: capabilities })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSource {
    /// Tick time is `index / rate`; no sleeping.
    Sim,
    /// Ticks are paced against absolute wall-clock deadlines.
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopClock {
    rate: f64,
    tick: u64,
    source: TimeSource,
}

impl LoopClock {
    pub fn new(rate: f64, source: TimeSource) -> Result<Self, LowLevelError> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(LowLevelError::InvalidRate(rate));
        }
        Ok(Self { rate, tick: 0, source })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn source(&self) -> TimeSource {
        self.source
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.rate
    }

    pub fn advance(&mut self) {
        self.tick += 1;
    }

    pub fn reset(&mut self) {
        self.tick = 0;
    }

    /// Ticks in `duration` seconds.
    pub fn ticks_for(&self, duration: f64) -> u64 {
        (duration * self.rate).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoopReport {
    pub ticks: u64,
    /// Seconds.
    pub mean_period: f64,
    /// Worst lateness of a tick start against its deadline, seconds.
    pub max_jitter: f64,
    /// Commands lost to queue overflow.
    pub drops: u64,
    pub overruns: u64,
}

/// A loop that stopped early, with what it managed before the fault.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("control loop stopped after {} ticks: {error}", report.ticks)]
pub struct LoopFault {
    pub error: LowLevelError,
    pub report: LoopReport,
}

/// Called once per tick after `/joint_states` is published, with the tick time.
pub type Planner<'a> = dyn FnMut(f64) -> Result<(), String> + 'a;

/// The low-level loop: sole writer to the backend and sole publisher of
/// `/joint_states`.
#[derive(Debug)]
pub struct ControlLoop {
    clock: LoopClock,
    pid: PidState,
    mode: ControllerMode,
    bus: Bus,
    commands: Subscription,
    active: Option<Command>,
    pending: Vec<Command>,
    last_effort: Option<DVector<f64>>,
}

impl ControlLoop {
    pub fn new(clock: LoopClock, pid: PidState, mode: ControllerMode, bus: &Bus) -> Result<Self, LowLevelError> {
        let commands = bus.subscribe(COMMAND)?;
        Ok(Self { clock, pid, mode, bus: bus.clone(), commands, active: None, pending: Vec::new(), last_effort: None })
    }

    pub fn clock(&self) -> &LoopClock {
        &self.clock
    }

    pub fn mode(&self) -> ControllerMode {
        self.mode
    }

    pub fn pid(&self) -> &PidState {
        &self.pid
    }

    /// The set-point currently tracked.
    pub fn active_command(&self) -> Option<&Command> {
        self.active.as_ref()
    }

    /// Effort written on the last torque-mode tick.
    pub fn last_effort(&self) -> Option<&DVector<f64>> {
        self.last_effort.as_ref()
    }

    pub fn dropped_commands(&self) -> u64 {
        self.commands.dropped()
    }

    /// Back to tick 0 with no latched command and a zeroed integral.
    pub fn reset(&mut self) -> Result<(), LowLevelError> {
        self.clock.reset();
        self.pid.reset();
        self.active = None;
        self.pending.clear();
        self.commands.drain()?;
        Ok(())
    }

    fn ingest(&mut self, now: f64) -> Result<(), LowLevelError> {
        let fresh = self.commands.drain()?;
        match self.mode.control_mode {
            ControlMode::Point => {
                if let Some(c) = fresh.last().and_then(|m| m.as_command()) {
                    self.active = Some(c.clone());
                }
            }
            ControlMode::Trajectory => {
                self.pending.extend(fresh.iter().filter_map(|m| m.as_command().cloned()));
                self.pending.sort_by(|a, b| a.t.total_cmp(&b.t));
                let due = self.pending.partition_point(|c| c.t <= now + 1e-9);
                if due > 0 {
                    self.active = self.pending.drain(..due).next_back();
                }
            }
        }
        Ok(())
    }

    /// One control period.
    pub fn tick(&mut self, backend: &mut dyn Backend, planner: &mut Planner<'_>) -> Result<(), LowLevelError> {
        let t = self.clock.time();
        let dt = self.clock.period();
        let state = backend.read_state();
        self.bus.publish(JOINT_STATES, Message::JointState(state.clone()))?;
        planner(t).map_err(LowLevelError::Planner)?;
        self.ingest(t)?;
        let cmd = self.active.get_or_insert_with(|| Command {
            t,
            q_des: state.q.clone(),
            qd_des: DVector::zeros(state.q.len()),
            tau_ffwd: DVector::zeros(state.q.len()),
        });
        match self.mode.controller_type {
            ControllerType::Torque => {
                let tau = control_step(&mut self.pid, cmd, &state, dt)?;
                backend.write_command(&JointCommand::Effort(tau.clone()))?;
                self.last_effort = Some(tau);
            }
            ControllerType::Position => backend.write_command(&JointCommand::Position(cmd.q_des.clone()))?,
        }
        backend.step(dt)?;
        self.clock.advance();
        Ok(())
    }

    /// Runs `duration` seconds worth of ticks.
    pub fn run(&mut self, backend: &mut dyn Backend, duration: f64, planner: &mut Planner<'_>) -> Result<LoopReport, LoopFault> {
        let mut report = LoopReport::default();
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(LoopFault { error: LowLevelError::NonPositiveDuration(duration), report });
        }
        let n = self.clock.ticks_for(duration);
        let period = self.clock.period();
        let drops_before = self.commands.dropped();
        let result = match self.clock.source() {
            TimeSource::Sim => {
                report.mean_period = period;
                let mut r = Ok(());
                for _ in 0..n {
                    r = self.tick(backend, planner);
                    if r.is_err() {
                        break;
                    }
                    report.ticks += 1;
                }
                r
            }
            TimeSource::Wall => self.run_wall(backend, n, planner, &mut report),
        };
        report.drops = self.commands.dropped() - drops_before;
        match result {
            Ok(()) => Ok(report),
            Err(error) => Err(LoopFault { error, report }),
        }
    }

    fn run_wall(
        &mut self,
        backend: &mut dyn Backend,
        n: u64,
        planner: &mut Planner<'_>,
        report: &mut LoopReport,
    ) -> Result<(), LowLevelError> {
        let period = Duration::from_secs_f64(self.clock.period());
        let start = Instant::now();
        let mut first = None;
        let mut last = start;
        for k in 0..n {
            let deadline = start + period.mul_f64(k as f64);
            sleep_until(deadline);
            let began = Instant::now();
            first.get_or_insert(began);
            last = began;
            report.max_jitter = report.max_jitter.max(began.duration_since(deadline).as_secs_f64());
            self.tick(backend, planner)?;
            report.ticks += 1;
            if began.elapsed().as_secs_f64() > OVERRUN_FACTOR * period.as_secs_f64() {
                report.overruns += 1;
                if report.overruns <= 10 {
                    log::warn!("tick {k} overran its {:?} period", period);
                }
            }
        }
        report.mean_period = match first {
            Some(f) if report.ticks > 1 => last.duration_since(f).as_secs_f64() / (report.ticks - 1) as f64,
            _ => self.clock.period(),
        };
        Ok(())
    }
}

fn sleep_until(deadline: Instant) {
    const SPIN: Duration = Duration::from_micros(200);
    let now = Instant::now();
    if deadline <= now {
        return;
    }
    let wait = deadline - now;
    if wait > SPIN {
        std::thread::sleep(wait - SPIN);
    }
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
}

/// Builds a [`ControlLoop`] and runs it once.
#[allow(clippy::too_many_arguments)]
pub fn run_loop(
    clock: LoopClock,
    backend: &mut dyn Backend,
    pid: PidState,
    mode: ControllerMode,
    bus: &Bus,
    duration: f64,
    planner: &mut Planner<'_>,
) -> Result<LoopReport, LoopFault> {
    let mut lp = ControlLoop::new(clock, pid, mode, bus).map_err(|error| LoopFault { error, report: LoopReport::default() })?;
    lp.run(backend, duration, planner)
}
