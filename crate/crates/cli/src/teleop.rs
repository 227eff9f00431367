//! Live teleoperation: a websocket session that steps the environment on a
//! fixed clock, applying the latest action the operator sent.
//!
//! Every frame is a single JSON text message with a `type` field. Clients
//! send `hello`, `action` and `control`; the server answers with `hello`,
//! `state` (after every tick and every control), `saved` and `error`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use retract_core::demos::{Control, RecordingSession, SessionEvent, SessionPhase};
use retract_core::eval::TE_SAMPLES;
use retract_core::{Action, SceneConfig, Vec3};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TICK_HZ: f64 = 20.0;

const INDEX_HTML: &str = include_str!("../static/index.html");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello { protocol: u32 },
    Action { beta: [i64; 3] },
    Control(Control),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub fingerprint: String,
    pub fields: BTreeMap<String, String>,
    pub start: Vec3,
    pub tick_hz: f64,
    pub reposition_delay: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub ee: Vec3,
    /// Particle positions, row-major with x varying fastest.
    pub particles: Vec<Vec3>,
    pub grid: (usize, usize),
    pub gripper_closed: bool,
    pub t: usize,
    pub te: f64,
    pub episode_reward: f64,
    pub phase: String,
    /// Ticks left in the repositioning pause.
    pub remaining: usize,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { protocol: u32, scene: SceneSummary },
    State(StateFrame),
    Saved { path: String, episodes: usize },
    Error { message: String },
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub scene: SceneConfig,
    pub start: Vec3,
    pub tick: Duration,
    pub delay: usize,
    /// Demo file rewritten with every kept episode on each save.
    pub out: PathBuf,
}

struct AppState {
    opts: ServeOptions,
    busy: AtomicBool,
}

/// Releases the single-session slot when a session ends, however it ends.
struct SessionSlot<'a>(&'a AtomicBool);

impl Drop for SessionSlot<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

pub fn router(opts: ServeOptions) -> Router {
    let state = Arc::new(AppState { opts, busy: AtomicBool::new(false) });
    Router::new().route("/", get(index)).route("/ws", get(upgrade)).with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, opts: ServeOptions) -> std::io::Result<()> {
    axum::serve(listener, router(opts)).await
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

fn summary(opts: &ServeOptions) -> SceneSummary {
    SceneSummary {
        fingerprint: opts.scene.fingerprint(),
        fields: opts.scene.to_kv().entries().clone(),
        start: opts.start,
        tick_hz: 1.0 / opts.tick.as_secs_f64(),
        reposition_delay: opts.delay,
    }
}

fn state_frame(session: &RecordingSession) -> StateFrame {
    let env = session.env();
    let s = env.state();
    let (phase, remaining) = match session.phase() {
        SessionPhase::Idle => ("idle", 0),
        SessionPhase::Active => ("active", 0),
        SessionPhase::Repositioning { remaining } => ("repositioning", remaining),
    };
    StateFrame {
        ee: s.ee_position,
        particles: s.tissue.particles.clone(),
        grid: (s.tissue.nx, s.tissue.nz),
        gripper_closed: s.gripper_closed,
        t: s.t,
        te: env.tumour_exposure(TE_SAMPLES),
        episode_reward: session.episode_reward(),
        phase: phase.to_string(),
        remaining,
        completed: session.completed_episodes(),
    }
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("server messages serialise");
    socket.send(Message::Text(text.into())).await.is_ok()
}

fn error(message: impl Into<String>) -> ServerMessage {
    ServerMessage::Error { message: message.into() }
}

/// Handles one client frame; returns the replies to send.
fn handle_frame(text: &str, session: &mut RecordingSession, mailbox: &mut Option<Action>, opts: &ServeOptions) -> Vec<ServerMessage> {
    let msg = match serde_json::from_str::<ClientMessage>(text) {
        Ok(m) => m,
        Err(e) => return vec![error(format!("malformed frame: {e}"))],
    };
    match msg {
        ClientMessage::Hello { protocol } => {
            let mut out = vec![ServerMessage::Hello { protocol: PROTOCOL_VERSION, scene: summary(opts) }];
            if protocol != PROTOCOL_VERSION {
                out.push(error(format!("protocol version mismatch: client {protocol}, server {PROTOCOL_VERSION}")));
            }
            out
        }
        ClientMessage::Action { beta } => match Action::new(beta) {
            Ok(a) => {
                *mailbox = Some(a);
                vec![]
            }
            Err(e) => vec![error(format!("rejected action {beta:?}: {e}"))],
        },
        ClientMessage::Control(c) => match session.control(c) {
            Ok(SessionEvent::Saved(set)) => match set.save(&opts.out) {
                Ok(()) => {
                    log::info!("saved {} episodes to {}", set.episode_count(), opts.out.display());
                    vec![ServerMessage::Saved { path: opts.out.display().to_string(), episodes: set.episode_count() }]
                }
                Err(e) => vec![error(format!("could not save demonstrations: {e}"))],
            },
            Ok(_) => {
                *mailbox = None;
                vec![ServerMessage::State(state_frame(session))]
            }
            Err(e) => vec![error(e.to_string())],
        },
    }
}

async fn run_session(mut socket: WebSocket, state: Arc<AppState>) {
    if state.busy.swap(true, Ordering::SeqCst) {
        send(&mut socket, &error("busy: another operator session is active")).await;
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    let _slot = SessionSlot(&state.busy);
    let opts = &state.opts;
    let mut session = RecordingSession::new(opts.scene.clone(), opts.start, opts.delay);
    let mut mailbox: Option<Action> = None;
    let mut ticker = tokio::time::interval(opts.tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            frame = socket.recv() => {
                let replies = match frame {
                    None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                    Some(Ok(Message::Text(text))) => handle_frame(text.as_str(), &mut session, &mut mailbox, opts),
                    Some(Ok(Message::Binary(_))) => vec![error("malformed frame: binary frames are not supported")],
                    Some(Ok(_)) => vec![],
                };
                for r in &replies {
                    if !send(&mut socket, r).await {
                        return;
                    }
                }
            }
            _ = ticker.tick() => {
                let reply = match session.tick(mailbox.take()) {
                    Ok(_) => ServerMessage::State(state_frame(&session)),
                    Err(e) => error(e.to_string()),
                };
                if !send(&mut socket, &reply).await {
                    return;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"control","command":"start"}"#).unwrap();
        assert_eq!(m, ClientMessage::Control(Control::Start));
        let m: ClientMessage =
            serde_json::from_str(r#"{"type":"control","command":"set_start","position":{"x":1.0,"y":20.0,"z":0.0}}"#).unwrap();
        assert_eq!(m, ClientMessage::Control(Control::SetStart { position: Vec3::new(1.0, 20.0, 0.0) }));
        let m: ClientMessage = serde_json::from_str(r#"{"type":"action","beta":[0,-1,1]}"#).unwrap();
        assert_eq!(m, ClientMessage::Action { beta: [0, -1, 1] });
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"teleport"}"#).is_err());
    }

    #[test]
    fn out_of_range_action_is_an_error_and_leaves_the_mailbox_alone() {
        let scene = SceneConfig::desk_scale();
        let opts = ServeOptions {
            scene: scene.clone(),
            start: Vec3::new(0.0, 20.0, 0.0),
            tick: Duration::from_millis(50),
            delay: 0,
            out: "x".into(),
        };
        let mut session = RecordingSession::new(scene, opts.start, 0);
        let mut mailbox = None;
        let replies = handle_frame(r#"{"type":"action","beta":[0,2,0]}"#, &mut session, &mut mailbox, &opts);
        assert!(matches!(&replies[..], [ServerMessage::Error { message }] if message.contains("[0, 2, 0]")));
        assert_eq!(mailbox, None);
    }

    #[test]
    fn server_frames_are_tagged() {
        let text = serde_json::to_string(&error("x")).unwrap();
        assert_eq!(text, r#"{"type":"error","message":"x"}"#);
    }
}
