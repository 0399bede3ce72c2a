//! The viewer's wire protocol: `GET /model` and the `/ws` socket, in
//! kinematics mode (in process) and simulation mode (the binary).

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use locokit::viz::{Hub, VizMode, VizServer};
use locokit_core::model::{neutral_configuration, serialize_model, Registry};
use serde_json::{json, Value};
use tokio::net::TcpStream as AsyncTcp;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<AsyncTcp>>;

fn kin_server(robot: &str, rate: f64) -> VizServer {
    let model = Registry::builtin().model(robot).unwrap();
    let q0 = neutral_configuration(&model);
    VizServer::start(0, Hub::new(model, VizMode::Kin, rate, q0)).unwrap()
}

async fn connect(addr: SocketAddr) -> Ws {
    connect_async(format!("ws://{addr}/ws")).await.expect("websocket connects").0
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("message in time").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn next_of(ws: &mut Ws, kind: &str) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == kind {
            return v;
        }
    }
}

/// A state frame sent after this call, skipping any already queued.
async fn fresh_state(ws: &mut Ws) -> Value {
    loop {
        let start = Instant::now();
        let v = next_of(ws, "state").await;
        if start.elapsed() > Duration::from_millis(5) {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

fn http_get(addr: SocketAddr, path: &str) -> (String, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let (head, body) = raw.split_once("\r\n\r\n").unwrap();
    (head.to_string(), body.to_string())
}

#[test]
fn get_model_returns_model_json() {
    let server = kin_server("arm6", 30.0);
    let (head, body) = http_get(server.addr(), "/model");
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    assert!(head.to_ascii_lowercase().contains("content-type: application/json"), "{head}");
    let expected = serialize_model(&Registry::builtin().model("arm6").unwrap());
    let got: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(got, serde_json::from_str::<Value>(&expected).unwrap());
    assert_eq!(got["name"], "arm6");
    assert_eq!(got["floating_base"], false);
    server.stop();
}

#[tokio::test]
async fn kin_hello_then_states() {
    let server = kin_server("arm2", 30.0);
    let mut ws = connect(server.addr()).await;
    let hello = next_json(&mut ws).await;
    assert_eq!(hello, json!({"type": "hello", "mode": "kin", "rate": 30.0}));
    let s = next_of(&mut ws, "state").await;
    assert_eq!(s["q"], json!([0.0, 0.0]));
    assert_eq!(s["base"], json!({"pos": [0.0, 0.0, 0.0], "rpy": [0.0, 0.0, 0.0]}));
    assert!(s["t"].is_number());
}

#[tokio::test]
async fn set_joint_moves_the_end_effector() {
    let server = kin_server("arm2", 30.0);
    let mut ws = connect(server.addr()).await;
    next_of(&mut ws, "hello").await;
    send(&mut ws, json!({"type": "set_joint", "name": "j1", "value": std::f64::consts::FRAC_PI_2})).await;
    let s = fresh_state(&mut ws).await;
    let q: Vec<f64> = serde_json::from_value(s["q"].clone()).unwrap();
    assert_eq!(q, vec![std::f64::consts::FRAC_PI_2, 0.0]);
    // Planar 2R with unit links.
    let ee = (q[0].cos() + (q[0] + q[1]).cos(), q[0].sin() + (q[0] + q[1]).sin());
    assert!(ee.0.abs() < 1e-12 && (ee.1 - 2.0).abs() < 1e-12, "{ee:?}");

    // Out of range is clamped, unknown joints are refused.
    send(&mut ws, json!({"type": "set_joint", "name": "j2", "value": 10.0})).await;
    let s = fresh_state(&mut ws).await;
    assert!((s["q"][1].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-12, "{s}");
    send(&mut ws, json!({"type": "set_joint", "name": "j9", "value": 0.0})).await;
    let e = next_of(&mut ws, "error").await;
    assert!(e["message"].as_str().unwrap().contains("j9"), "{e}");
}

#[tokio::test]
async fn state_frames_arrive_at_the_requested_rate() {
    let server = kin_server("arm2", 30.0);
    let mut ws = connect(server.addr()).await;
    next_of(&mut ws, "hello").await;
    next_of(&mut ws, "state").await;
    let start = Instant::now();
    let mut n = 0;
    while start.elapsed() < Duration::from_secs(1) {
        next_of(&mut ws, "state").await;
        n += 1;
    }
    let rate = n as f64 / start.elapsed().as_secs_f64();
    assert!((rate - 30.0).abs() < 4.0, "{rate} Hz");
}

struct Running(Child);

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// `locokit simulate --serve 0`; returns the process and the bound address.
fn serve_simulation(robot: &str) -> (Running, SocketAddr) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_locokit"))
        .args(["simulate", "--model", robot, "--duration", "120", "--serve", "0"])
        .env("RUST_LOG", "off")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.split("http://").nth(1).and_then(|s| s.split_whitespace().next()).unwrap_or_else(|| panic!("{line}"));
    (Running(child), addr.parse().unwrap())
}

fn t_of(v: &Value) -> f64 {
    v["t"].as_f64().unwrap()
}

#[tokio::test]
async fn sim_pause_step_reset() {
    let (_proc, addr) = serve_simulation("pend1");
    let mut ws = connect(addr).await;
    assert_eq!(next_json(&mut ws).await, json!({"type": "hello", "mode": "sim", "rate": 30.0}));

    // Runs in real time.
    let a = t_of(&fresh_state(&mut ws).await);
    tokio::time::sleep(Duration::from_millis(200)).await;
    let b = t_of(&fresh_state(&mut ws).await);
    assert!(b - a > 0.1, "{a} -> {b}");

    send(&mut ws, json!({"type": "pause"})).await;
    assert_eq!(next_of(&mut ws, "ack").await, json!({"type": "ack", "cmd": "pause", "paused": true}));
    tokio::time::sleep(Duration::from_millis(50)).await;
    let t0 = t_of(&fresh_state(&mut ws).await);
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(t_of(&fresh_state(&mut ws).await), t0, "paused clock moved");

    for _ in 0..3 {
        send(&mut ws, json!({"type": "step"})).await;
        next_of(&mut ws, "ack").await;
    }
    tokio::time::sleep(Duration::from_millis(50)).await;
    let t3 = t_of(&fresh_state(&mut ws).await);
    assert!((t3 - t0 - 3e-3).abs() < 1e-9, "{t0} -> {t3}");

    send(&mut ws, json!({"type": "reset"})).await;
    next_of(&mut ws, "ack").await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    let s = fresh_state(&mut ws).await;
    assert_eq!(t_of(&s), 0.0);
    assert_eq!(s["q"], json!([0.0]));

    // set_joint belongs to kinematics mode.
    send(&mut ws, json!({"type": "set_joint", "name": "hinge", "value": 0.3})).await;
    next_of(&mut ws, "error").await;

    send(&mut ws, json!({"type": "pause"})).await;
    assert_eq!(next_of(&mut ws, "ack").await["paused"], false);
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert!(t_of(&fresh_state(&mut ws).await) > 0.05);
}
