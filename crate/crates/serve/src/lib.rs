//! WebSocket service that gives every connection its own streaming predictor.
//!
//! Clients send JSON text frames:
//! `{"type":"sample","pitch":p,"roll":r}`, `{"type":"reset"}`,
//! `{"type":"config","warm_start":b}`. The server answers with
//! `prediction`, `ack` and `error` messages.

use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use gesture_core::nn::{Model, NnError};
use gesture_core::seqdata::Label;
use gesture_core::stream::{StreamConfig, StreamPrediction, StreamPredictor};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(120);

/// Close code sent when the server shuts down.
pub const CLOSE_GOING_AWAY: u16 = 1001;
/// Close code sent when a session is reaped for inactivity.
pub const CLOSE_NORMAL: u16 = 1000;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Sample { pitch: f64, roll: f64 },
    Reset,
    Config { warm_start: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
pub struct Probs {
    pub nod: f64,
    pub shake: f64,
    pub other: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AckOf {
    Reset,
    Config,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Prediction { sample_index: u64, probs: Probs, label: Label },
    Ack { of: AckOf },
    Error { detail: String },
}

impl From<StreamPrediction> for ServerMessage {
    fn from(p: StreamPrediction) -> Self {
        let [nod, shake, other] = p.prediction.probs;
        ServerMessage::Prediction {
            sample_index: p.sample_index,
            probs: Probs { nod, shake, other },
            label: p.prediction.label,
        }
    }
}

impl ServerMessage {
    fn error(detail: impl Into<String>) -> Self {
        ServerMessage::Error { detail: detail.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

fn parse_client(text: &str) -> Result<ClientMessage, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    match value.get("type").and_then(|t| t.as_str()) {
        Some("sample" | "reset" | "config") => {
            serde_json::from_value(value).map_err(|e| format!("malformed message: {e}"))
        }
        Some(other) => Err(format!("unknown message type {other:?}")),
        None => Err("message has no string \"type\" field".to_string()),
    }
}

/// Per-connection state.
#[derive(Debug)]
pub struct Session {
    pub id: u64,
    predictor: StreamPredictor,
    last_activity: Instant,
}

impl Session {
    pub fn new(id: u64, model: Arc<Model>, cfg: StreamConfig) -> Result<Self, NnError> {
        Ok(Self { id, predictor: StreamPredictor::new(model, cfg)?, last_activity: Instant::now() })
    }

    pub fn last_activity(&self) -> Instant {
        self.last_activity
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        self.last_activity = Instant::now();
        match msg {
            ClientMessage::Sample { pitch, roll } => match self.predictor.push_sample(pitch, roll) {
                Ok(Some(p)) => vec![p.into()],
                Ok(None) => Vec::new(),
                Err(e) => vec![ServerMessage::error(e.to_string())],
            },
            ClientMessage::Reset => {
                self.predictor.reset();
                vec![ServerMessage::Ack { of: AckOf::Reset }]
            }
            ClientMessage::Config { warm_start } => {
                self.predictor.set_warm_start(warm_start);
                vec![ServerMessage::Ack { of: AckOf::Config }]
            }
        }
    }

    /// Handles one text frame. Bad input produces an error message and
    /// leaves the session usable.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match parse_client(text) {
            Ok(msg) => self.handle(msg),
            Err(detail) => {
                self.last_activity = Instant::now();
                vec![ServerMessage::error(detail)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ServerConfig {
    pub stream: StreamConfig,
    pub idle_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { stream: StreamConfig::default(), idle_timeout: DEFAULT_IDLE_TIMEOUT }
    }
}

#[derive(Clone)]
struct AppState {
    model: Arc<Model>,
    cfg: ServerConfig,
    next_id: Arc<AtomicU64>,
    shutdown: watch::Receiver<bool>,
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn close(socket: &mut WebSocket, code: u16, reason: &str) {
    let frame = CloseFrame { code, reason: reason.into() };
    let _ = socket.send(Message::Close(Some(frame))).await;
}

async fn run_session(mut socket: WebSocket, state: AppState) {
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let mut session = match Session::new(id, state.model.clone(), state.cfg.stream) {
        Ok(s) => s,
        Err(e) => {
            let _ = send(&mut socket, &ServerMessage::error(e.to_string())).await;
            close(&mut socket, 1011, "session setup failed").await;
            return;
        }
    };
    let mut shutdown = state.shutdown.clone();
    if *shutdown.borrow() {
        close(&mut socket, CLOSE_GOING_AWAY, "server shutting down").await;
        return;
    }
    tracing::debug!(session = id, "session opened");
    loop {
        let idle_deadline = session.last_activity() + state.cfg.idle_timeout;
        tokio::select! {
            _ = shutdown.changed() => {
                close(&mut socket, CLOSE_GOING_AWAY, "server shutting down").await;
                break;
            }
            _ = tokio::time::sleep_until(idle_deadline.into()) => {
                tracing::debug!(session = id, "idle timeout");
                close(&mut socket, CLOSE_NORMAL, "idle timeout").await;
                break;
            }
            frame = socket.recv() => {
                let text = match frame {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => {
                        if !send(&mut socket, &ServerMessage::error("binary frames are not supported")).await {
                            break;
                        }
                        continue;
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                // inference is CPU-bound; keep it off the async workers
                let (s, replies) = tokio::task::spawn_blocking(move || {
                    let replies = session.handle_text(text.as_str());
                    (session, replies)
                })
                .await
                .expect("session handler panicked");
                session = s;
                let mut ok = true;
                for reply in &replies {
                    ok = ok && send(&mut socket, reply).await;
                }
                if !ok {
                    break;
                }
            }
        }
    }
    tracing::debug!(session = id, "session closed");
}

/// Serves `/ws` on `listener` until `shutdown` resolves, then closes every
/// open session with a close frame and returns.
pub async fn serve(
    listener: TcpListener,
    model: Arc<Model>,
    cfg: ServerConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    StreamPredictor::new(model.clone(), cfg.stream)?;
    let (tx, rx) = watch::channel(false);
    let state = AppState { model, cfg, next_id: Arc::new(AtomicU64::new(0)), shutdown: rx };
    let app = Router::new().route("/ws", get(ws_handler)).with_state(state);
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            tracing::info!("shutting down");
            let _ = tx.send(true);
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gesture_core::nn::{CellKind, ModelConfig};
    use gesture_core::preprocess::Standardizer;

    fn session(time_steps: usize) -> Session {
        let cfg = ModelConfig::new(CellKind::Gru, 3).with_time_steps(time_steps).with_seed(1);
        let model = Arc::new(Model::init(cfg, Standardizer::IDENTITY).unwrap());
        Session::new(0, model, StreamConfig { buffer_len: time_steps, ..StreamConfig::default() }).unwrap()
    }

    fn sample(i: usize) -> String {
        format!(r#"{{"type":"sample","pitch":{},"roll":{}}}"#, (i as f64 * 0.1).sin() * 0.2, 0.05)
    }

    #[test]
    fn predictions_follow_stride() {
        let mut s = session(240);
        let mut at = Vec::new();
        for i in 0..270 {
            for m in s.handle_text(&sample(i)) {
                match m {
                    ServerMessage::Prediction { sample_index, probs, .. } => {
                        assert!((probs.nod + probs.shake + probs.other - 1.0).abs() < 1e-9);
                        at.push(sample_index);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
        assert_eq!(at, vec![240, 255, 270]);
    }

    #[test]
    fn reset_and_config_ack() {
        let mut s = session(20);
        for i in 0..15 {
            s.handle_text(&sample(i));
        }
        assert_eq!(s.handle_text(r#"{"type":"reset"}"#), vec![ServerMessage::Ack { of: AckOf::Reset }]);
        assert!((0..10).all(|i| s.handle_text(&sample(i)).is_empty()));
        assert_eq!(
            s.handle_text(r#"{"type":"config","warm_start":true}"#),
            vec![ServerMessage::Ack { of: AckOf::Config }]
        );
        let out: Vec<_> = (10..15).flat_map(|i| s.handle_text(&sample(i))).collect();
        assert!(matches!(out[..], [ServerMessage::Prediction { sample_index: 15, .. }]));
    }

    #[test]
    fn bad_messages_are_reported() {
        let mut s = session(20);
        for (text, needle) in [
            ("{not json", "malformed JSON"),
            (r#"{"type":"wave"}"#, "unknown message type"),
            (r#"{"pitch":1}"#, "no string"),
            (r#"{"type":"sample","pitch":"x","roll":0}"#, "malformed message"),
            (r#"{"type":"config"}"#, "malformed message"),
        ] {
            match &s.handle_text(text)[..] {
                [ServerMessage::Error { detail }] => assert!(detail.contains(needle), "{detail}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(s.handle_text(&sample(0)).is_empty());
    }

    #[test]
    fn wire_format() {
        let p = ServerMessage::Prediction {
            sample_index: 240,
            probs: Probs { nod: 0.5, shake: 0.25, other: 0.25 },
            label: Label::Nod,
        };
        assert_eq!(
            p.to_json(),
            r#"{"type":"prediction","sample_index":240,"probs":{"nod":0.5,"shake":0.25,"other":0.25},"label":"nod"}"#
        );
        assert_eq!(ServerMessage::Ack { of: AckOf::Reset }.to_json(), r#"{"type":"ack","of":"reset"}"#);
        assert_eq!(ServerMessage::error("x").to_json(), r#"{"type":"error","detail":"x"}"#);
    }
}
