//! Argument parsing and command dispatch. Exit codes: 0 ok, 1 demo
//! criterion violated, 2 input error, 3 runtime fault.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use locokit_core::lowlevel::TimeSource;
use locokit_core::model::{neutral_configuration, Registry};

use crate::check;
use crate::demo::{self, DemoOutcome};
use crate::inputs::{load_gains, load_model, load_world, parse_extra, InputError};
use crate::run::{simulate, PlannerKind, RunError, RunSpec, Session};
use crate::viz::{Hub, VizMode, VizServer, DEFAULT_RATE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SCENARIO: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FAULT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "locokit", version, about = "Robot control framework: simulate, visualize, check models, run demos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the model to the browser viewer; sliders drive the joints.
    Visualize(VisualizeArgs),
    /// Home and hold a robot on the simulator or the mock hardware.
    Simulate(SimulateArgs),
    /// Run a scripted scenario and report pass/fail.
    Demo(DemoArgs),
    /// Print the kinematic tree, masses and diagnostics of a model.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// URDF or model JSON file, or a registered robot name.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 8080)]
    pub serve: u16,
    /// State frames per second on the socket.
    #[arg(long, default_value_t = DEFAULT_RATE)]
    pub rate: f64,
    /// Stop after this many seconds instead of waiting for Ctrl-C.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Sim,
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Closed-loop homing and hold, newest command wins.
    Point,
    /// Open-loop homing streamed as a timestamped trajectory.
    Trajectory,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: String,
    /// Gains JSON; defaults to the registered gains of the robot.
    #[arg(long)]
    pub config: Option<String>,
    /// `true` drives the mock hardware driver, `false` the simulator.
    #[arg(long, action = ArgAction::Set, default_value_t = false)]
    pub real_robot: bool,
    #[arg(long, default_value_t = 1000.0)]
    pub hz: f64,
    /// Seconds.
    #[arg(long, default_value_t = 5.0)]
    pub duration: f64,
    /// Base position of a floating-base robot.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true)]
    pub spawn: Option<Vec<f64>>,
    /// Directory for log.csv, commands.csv, ground_truth.csv and manifest.json.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Serve the run to the viewer on this port; the loop then runs in real time.
    #[arg(long)]
    pub serve: Option<u16>,
    #[arg(long, default_value_t = DEFAULT_RATE)]
    pub rate: f64,
    /// World JSON: gravity, contact parameters, spawn pose.
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Physics steps per control period; defaults to what the contacts need.
    #[arg(long)]
    pub substeps: Option<usize>,
    #[arg(long, value_enum, default_value_t = ClockArg::Sim)]
    pub clock: ClockArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Point)]
    pub control_mode: ModeArg,
    /// `key=value`, recorded in the manifest only.
    #[arg(long = "extra", value_parser = parse_extra)]
    pub extra: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    Pickreach,
    Stand,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, value_enum)]
    pub name: DemoName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: String,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
        Err(e) => {
            let text = e.render().to_string();
            let _ = write!(err, "{text}");
            // Invalid values come without a usage line; add the subcommand's.
            if !text.contains("Usage:") {
                let mut root = Cli::command();
                root.build();
                let sub = args
                    .get(1)
                    .and_then(|a| a.to_str())
                    .and_then(|name| root.find_subcommand_mut(name).map(|c| c.render_usage().to_string()));
                let _ = writeln!(err, "\n{}", sub.unwrap_or_else(|| Cli::command().render_usage().to_string()));
            }
            return EXIT_INPUT;
        }
    };
    let registry = match Registry::from_env() {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };
    match cli.command {
        Command::Check(a) => cmd_check(&a, &registry, out, err),
        Command::Visualize(a) => cmd_visualize(&a, &registry, out, err),
        Command::Simulate(a) => cmd_simulate(a, &registry, out, err),
        Command::Demo(a) => cmd_demo(&a, &registry, out, err),
    }
}

fn input_error(err: &mut dyn Write, e: &InputError) -> i32 {
    let _ = writeln!(err, "error: {e}");
    if let InputError::Model { err: locokit_core::model::ModelError::Invalid(diags) } = e {
        for d in diags {
            let _ = writeln!(err, "  {d}");
        }
    }
    EXIT_INPUT
}

fn run_error(err: &mut dyn Write, e: &RunError) -> i32 {
    let _ = writeln!(err, "error: {e}");
    match e {
        RunError::Input(_) => EXIT_INPUT,
        RunError::Fault(_) | RunError::Io(_) => EXIT_FAULT,
    }
}

fn cmd_check(a: &CheckArgs, registry: &Registry, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let robot = match load_model(&a.model, registry) {
        Ok(r) => r,
        Err(e) => return input_error(err, &e),
    };
    let (text, ok) = check::report(&robot.model);
    let _ = write!(out, "{text}");
    if ok {
        EXIT_OK
    } else {
        EXIT_INPUT
    }
}

fn cmd_visualize(a: &VisualizeArgs, registry: &Registry, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let robot = match load_model(&a.model, registry) {
        Ok(r) => r,
        Err(e) => return input_error(err, &e),
    };
    if !(a.rate > 0.0 && a.rate.is_finite()) {
        let _ = writeln!(err, "error: --rate must be positive");
        return EXIT_INPUT;
    }
    let q0 = neutral_configuration(&robot.model);
    let hub = Hub::new(robot.model, VizMode::Kin, a.rate, q0);
    let server = match VizServer::start(a.serve, hub) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: cannot serve on port {}: {e}", a.serve);
            return EXIT_FAULT;
        }
    };
    let _ = writeln!(out, "serving {} on http://{} (kinematics mode)", robot.name, server.addr());
    let _ = out.flush();
    match a.duration {
        Some(d) => std::thread::sleep(Duration::from_secs_f64(d.max(0.0))),
        None => wait_for_ctrl_c(),
    }
    server.stop();
    EXIT_OK
}

fn wait_for_ctrl_c() {
    match tokio::runtime::Builder::new_current_thread().enable_all().build() {
        Ok(rt) => {
            let _ = rt.block_on(tokio::signal::ctrl_c());
        }
        Err(e) => log::error!("signal handling unavailable: {e}"),
    }
}

/// Builds the run description from the simulate flags.
pub fn simulate_spec(a: &SimulateArgs, registry: &Registry) -> Result<RunSpec, InputError> {
    let robot = load_model(&a.model, registry)?;
    let gains = load_gains(a.config.as_deref(), &robot, registry)?;
    let world = load_world(a.world.as_deref())?;
    let mut spec = RunSpec::new(robot, gains);
    if let Some(c) = &a.config {
        spec.config_source = c.clone();
    }
    spec.world = world;
    spec.world_source = a.world.as_ref().map(|p| p.display().to_string());
    spec.real_robot = a.real_robot;
    spec.hz = a.hz;
    spec.duration = a.duration;
    spec.spawn = match a.spawn.as_deref() {
        Some(&[x, y, z]) => Some([x, y, z]),
        Some(_) => return Err(InputError::Invalid("--spawn takes X Y Z".into())),
        None => None,
    };
    if spec.spawn.is_some() && !spec.robot.model.floating_base() {
        log::warn!("--spawn ignored for fixed-base robot {}", spec.robot.name);
    }
    spec.seed = a.seed;
    spec.substeps = a.substeps;
    spec.clock = match a.clock {
        ClockArg::Sim => TimeSource::Sim,
        ClockArg::Wall => TimeSource::Wall,
    };
    spec.planner = match a.control_mode {
        ModeArg::Point => PlannerKind::HomeAndHold,
        ModeArg::Trajectory => PlannerKind::OpenLoop,
    };
    spec.extra = a.extra.clone();
    Ok(spec)
}

fn cmd_simulate(a: SimulateArgs, registry: &Registry, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let spec = match simulate_spec(&a, registry) {
        Ok(s) => s,
        Err(e) => return input_error(err, &e),
    };
    let backend = if spec.real_robot { "mock_hw" } else { "sim" };
    if let Some(port) = a.serve {
        return match live_simulate(spec, port, a.rate, a.log.as_deref(), out) {
            Ok(()) => EXIT_OK,
            Err(e) => run_error(err, &e),
        };
    }
    match simulate(spec, a.log.as_deref()) {
        Ok(o) => {
            let _ = writeln!(out, "backend {backend}: {} ticks, final max |q - q_home| = {:.3e} rad", o.ticks, o.home_error);
            if a.clock == ClockArg::Wall {
                let r = o.report;
                let _ = writeln!(
                    out,
                    "mean period {:.4} ms, max jitter {:.4} ms, overruns {}, dropped commands {}",
                    r.mean_period * 1e3,
                    r.max_jitter * 1e3,
                    r.overruns,
                    r.drops
                );
            }
            if let Some(dir) = &o.log_dir {
                let _ = writeln!(out, "logs in {}", dir.display());
            }
            EXIT_OK
        }
        Err(e) => run_error(err, &e),
    }
}

fn publish(hub: &Hub, session: &Session) {
    let b = session.backend();
    let js = b.read_state();
    hub.publish(js.t, &js.q, b.read_base().map(|s| (s.position, s.rpy)));
}

/// Runs in real time while serving the viewer, honouring pause, step and
/// reset from the socket.
pub fn live_simulate(spec: RunSpec, port: u16, rate: f64, log_dir: Option<&std::path::Path>, out: &mut dyn Write) -> Result<(), RunError> {
    let total = (spec.duration * spec.hz).round() as u64;
    let period = Duration::from_secs_f64(1.0 / spec.hz);
    let mut session = Session::new(spec)?;
    let q0 = session.backend().read_state().q;
    let hub = Hub::new(session.spec().robot.model.clone(), VizMode::Sim, rate, q0);
    publish(&hub, &session);
    let server = VizServer::start(port, Arc::clone(&hub)).map_err(|e| RunError::Input(format!("cannot serve on port {port}: {e}")))?;
    let _ = writeln!(out, "serving {} on http://{} (simulation mode)", session.spec().robot.name, server.addr());
    let _ = out.flush();

    let mut anchor = (Instant::now(), session.ticks());
    let mut result = Ok(());
    while session.ticks() < total {
        let c = hub.take_controls();
        if c.reset {
            session.reset()?;
            publish(&hub, &session);
            anchor = (Instant::now(), session.ticks());
        }
        if c.paused {
            for _ in 0..c.steps {
                if let Err(e) = session.tick() {
                    result = Err(e);
                    break;
                }
            }
            publish(&hub, &session);
            if result.is_err() {
                break;
            }
            std::thread::sleep(Duration::from_millis(2));
            anchor = (Instant::now(), session.ticks());
            continue;
        }
        if let Err(e) = session.tick() {
            result = Err(e);
            break;
        }
        publish(&hub, &session);
        let due = anchor.0 + period.mul_f64((session.ticks() - anchor.1) as f64);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
    if let Some(dir) = log_dir {
        session.write_artifacts(dir, "simulate")?;
    }
    server.stop();
    result
}

fn cmd_demo(a: &DemoArgs, registry: &Registry, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let robot_name = match a.name {
        DemoName::Pickreach => "arm6",
        DemoName::Stand => "quad12",
    };
    let loaded = load_model(robot_name, registry).and_then(|r| load_gains(None, &r, registry).map(|g| (r, g)));
    let (robot, gains) = match loaded {
        Ok(x) => x,
        Err(e) => return input_error(err, &e),
    };
    let outcome: Result<DemoOutcome, RunError> = match a.name {
        DemoName::Pickreach => demo::pickreach(robot, gains, a.seed),
        DemoName::Stand => demo::stand(robot, gains, a.seed),
    };
    match outcome {
        Ok(o) => {
            for l in &o.lines {
                let _ = writeln!(out, "{l}");
            }
            match &o.failure {
                None => {
                    let _ = writeln!(out, "PASS");
                    EXIT_OK
                }
                Some(f) => {
                    let _ = writeln!(out, "FAIL: {f}");
                    let _ = writeln!(err, "demo failed: {f}");
                    EXIT_SCENARIO
                }
            }
        }
        Err(e) => run_error(err, &e),
    }
}
