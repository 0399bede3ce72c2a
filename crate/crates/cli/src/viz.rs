//! Visualizer server: `GET /model` returns the model JSON, `/ws` streams
//! state frames and takes slider and simulation-control messages.
//!
//! In kinematics mode the hub owns the joint values and sliders write them
//! directly. In simulation mode a driver loop owns the plant; it publishes
//! frames into the hub and drains the pause/step/reset requests.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use locokit_core::model::{serialize_model, RobotModel};
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

pub const DEFAULT_RATE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VizMode {
    Kin,
    Sim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub pos: [f64; 3],
    pub rpy: [f64; 3],
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Hello {
        mode: VizMode,
        rate: f64,
    },
    /// `q` has one entry per model joint, fixed joints included (as 0).
    State {
        t: f64,
        q: Vec<f64>,
        base: BasePose,
    },
    /// `pause` toggles; the reply carries the resulting state.
    Ack {
        cmd: String,
        paused: bool,
    },
    Error {
        message: String,
    },
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    SetJoint { name: String, value: f64 },
    Pause,
    Step,
    Reset,
}

/// Pending simulation controls, drained by the driver loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Controls {
    pub paused: bool,
    pub steps: u64,
    pub reset: bool,
}

#[derive(Debug)]
struct Inner {
    t: f64,
    q: DVector<f64>,
    base: BasePose,
    controls: Controls,
}

/// State shared between the server tasks and the driver.
#[derive(Debug)]
pub struct Hub {
    model: RobotModel,
    model_json: String,
    mode: VizMode,
    rate: f64,
    started: Instant,
    inner: Mutex<Inner>,
}

/// Per-joint values for a state frame from per-DoF positions.
pub fn joint_values(model: &RobotModel, q: &DVector<f64>) -> Vec<f64> {
    (0..model.joints().len()).map(|j| model.joint_dof(j).map_or(0.0, |d| q[d])).collect()
}

impl Hub {
    pub fn new(model: RobotModel, mode: VizMode, rate: f64, q0: DVector<f64>) -> Arc<Self> {
        let model_json = serialize_model(&model);
        let base = BasePose { pos: [0.0; 3], rpy: [0.0; 3] };
        Arc::new(Self {
            model,
            model_json,
            mode,
            rate,
            started: Instant::now(),
            inner: Mutex::new(Inner { t: 0.0, q: q0, base, controls: Controls::default() }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn mode(&self) -> VizMode {
        self.mode
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn model_json(&self) -> &str {
        &self.model_json
    }

    /// Called by the simulation driver after each tick.
    pub fn publish(&self, t: f64, q: &DVector<f64>, base: Option<(Vector3<f64>, Vector3<f64>)>) {
        let mut g = self.lock();
        g.t = t;
        g.q = q.clone();
        if let Some((p, r)) = base {
            g.base = BasePose { pos: [p.x, p.y, p.z], rpy: [r.x, r.y, r.z] };
        }
    }

    pub fn frame(&self) -> ServerMsg {
        let g = self.lock();
        ServerMsg::State { t: g.t, q: joint_values(&self.model, &g.q), base: g.base.clone() }
    }

    /// Hands the pending step and reset requests to the driver.
    pub fn take_controls(&self) -> Controls {
        let mut g = self.lock();
        let c = g.controls;
        g.controls.steps = 0;
        g.controls.reset = false;
        c
    }

    /// Applies one client message. Returns the replies for that client.
    pub fn handle(&self, msg: ClientMsg) -> Vec<ServerMsg> {
        match (self.mode, msg) {
            (VizMode::Kin, ClientMsg::SetJoint { name, value }) => match self.set_joint(&name, value) {
                Ok(()) => vec![self.frame()],
                Err(message) => vec![ServerMsg::Error { message }],
            },
            (VizMode::Sim, ClientMsg::SetJoint { .. }) => {
                vec![ServerMsg::Error { message: "set_joint is only accepted in kinematics mode".into() }]
            }
            (VizMode::Kin, other) => vec![ServerMsg::Error { message: format!("{other:?} needs a running simulation") }],
            (VizMode::Sim, ClientMsg::Pause) => {
                let mut g = self.lock();
                g.controls.paused = !g.controls.paused;
                vec![ServerMsg::Ack { cmd: "pause".into(), paused: g.controls.paused }]
            }
            (VizMode::Sim, ClientMsg::Step) => {
                // Stepping implies paused.
                let mut g = self.lock();
                g.controls.paused = true;
                g.controls.steps += 1;
                vec![ServerMsg::Ack { cmd: "step".into(), paused: true }]
            }
            (VizMode::Sim, ClientMsg::Reset) => {
                let mut g = self.lock();
                g.controls.reset = true;
                vec![ServerMsg::Ack { cmd: "reset".into(), paused: g.controls.paused }]
            }
        }
    }

    fn set_joint(&self, name: &str, value: f64) -> Result<(), String> {
        let j = self.model.joints().iter().position(|j| j.name == name).ok_or_else(|| format!("unknown joint `{name}`"))?;
        let d = self.model.joint_dof(j).ok_or_else(|| format!("joint `{name}` is fixed"))?;
        if !value.is_finite() {
            return Err(format!("non-finite value for `{name}`"));
        }
        let lim = self.model.dof_limits()[d];
        let clamped = value.clamp(lim.lower, lim.upper);
        if clamped != value {
            log::warn!("set_joint {name}={value} clamped to {clamped}");
        }
        let mut g = self.lock();
        g.q[d] = clamped;
        g.t = self.started.elapsed().as_secs_f64();
        Ok(())
    }
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new().route("/model", get(get_model)).route("/ws", get(ws_upgrade)).with_state(hub)
}

async fn get_model(State(hub): State<Arc<Hub>>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], hub.model_json().to_string())
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(hub): State<Arc<Hub>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session(socket, hub))
}

fn text(msg: &ServerMsg) -> WsMessage {
    WsMessage::Text(serde_json::to_string(msg).expect("server message serializes").into())
}

async fn session(mut socket: WebSocket, hub: Arc<Hub>) {
    if socket.send(text(&ServerMsg::Hello { mode: hub.mode(), rate: hub.rate() })).await.is_err() {
        return;
    }
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / hub.rate()));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = interval.tick() => {
                if socket.send(text(&hub.frame())).await.is_err() {
                    return;
                }
            }
            incoming = socket.recv() => {
                let replies = match incoming {
                    Some(Ok(WsMessage::Text(t))) => match serde_json::from_str::<ClientMsg>(&t) {
                        Ok(msg) => hub.handle(msg),
                        Err(e) => vec![ServerMsg::Error { message: format!("bad message: {e}") }],
                    },
                    Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => Vec::new(),
                };
                for r in &replies {
                    if socket.send(text(r)).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
}

/// A server running on its own thread and runtime.
pub struct VizServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl VizServer {
    /// Binds `127.0.0.1:port` (0 picks a free port) and starts serving.
    pub fn start(port: u16, hub: Arc<Hub>) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(("127.0.0.1", port))?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(std_listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("viz server: {e}");
                        return;
                    }
                };
                let server = axum::serve(listener, router(hub)).with_graceful_shutdown(async move {
                    let _ = rx.await;
                });
                if let Err(e) = server.await {
                    log::error!("viz server: {e}");
                }
            });
            // Open websockets keep the graceful shutdown waiting; give them a
            // grace period and then drop the runtime.
            rt.shutdown_timeout(Duration::from_secs(1));
        });
        log::info!("viz server on http://{addr}");
        Ok(Self { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, waits up to about a second for open sessions.
    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for VizServer {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}
