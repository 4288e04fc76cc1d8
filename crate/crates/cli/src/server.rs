//! Match server: one websocket session per game with a remote Bob, plus a
//! read-only state endpoint.

use std::collections::HashMap;
use std::future::{Future, IntoFuture};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use schmidt_core::alice_strategy::{activation_index, enumerate_dangers, AliceStrategy, StrategyConstants};
use schmidt_core::bob_strategies::{BallConstraints, ClientMessage, RemoteBob, ServerMessage, VerdictResult};
use schmidt_core::game_core::{run_game_observed, verify_transcript, Move, Player};
use schmidt_core::metric_space::Ball;
use schmidt_core::Rectangle;
use serde::Serialize;
use tokio::sync::mpsc;

use crate::config::RunConfig;
use crate::CliError;

struct Session {
    moves: Vec<Move>,
    dangers: Vec<Ball>,
    finished: bool,
    last_seen: Instant,
}

pub struct ServerState {
    cfg: RunConfig,
    constants: StrategyConstants,
    rect: Rectangle,
    idle: Duration,
    sessions: Mutex<HashMap<String, Session>>,
    next_id: AtomicU64,
}

/// Body of `GET /state/{id}`.
#[derive(Clone, Debug, Serialize)]
pub struct StateView {
    pub balls: Vec<Move>,
    /// Number of the next move.
    pub turn: usize,
    pub to_move: Player,
    pub constraints: BallConstraints,
    pub finished: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dangers: Option<Vec<Ball>>,
}

impl ServerState {
    fn view(&self, s: &Session) -> StateView {
        let last = s.moves.last();
        StateView {
            balls: s.moves.clone(),
            turn: s.moves.len() + 1,
            to_move: last.map_or(Player::Bob, |m| m.player.other()),
            constraints: BallConstraints {
                container: last.map(|m| m.ball),
                radius: last.map(|m| m.ball.radius * self.cfg.game_config().ratio_for(m.player.other())),
            },
            finished: s.finished,
            dangers: self.cfg.reveal.then(|| s.dangers.clone()),
        }
    }

    /// Hulls of the dangers of the block the game is in.
    fn current_dangers(&self, moves: &[Move]) -> Vec<Ball> {
        let Some(a) = activation_index(moves, &self.constants) else {
            return Vec::new();
        };
        let j = (moves.len() - 1 - a) / (2 * self.constants.r);
        let opening = &moves[a + 2 * j * self.constants.r];
        enumerate_dangers(&self.cfg.system, &self.rect, &self.constants, j, &opening.ball)
            .map(|d| d.into_iter().map(|c| c.hull).collect())
            .unwrap_or_default()
    }

    fn touch(&self, id: &str) {
        if let Some(s) = self.sessions.lock().expect("session table").get_mut(id) {
            s.last_seen = Instant::now();
        }
    }

    fn record(&self, id: &str, moves: &[Move]) {
        let dangers = if self.cfg.reveal {
            self.current_dangers(moves)
        } else {
            Vec::new()
        };
        if let Some(s) = self.sessions.lock().expect("session table").get_mut(id) {
            s.moves = moves.to_vec();
            s.dangers = dangers;
            s.last_seen = Instant::now();
        }
    }

    fn finish(&self, id: &str) {
        if let Some(s) = self.sessions.lock().expect("session table").get_mut(id) {
            s.finished = true;
            s.last_seen = Instant::now();
        }
    }

    fn reap(&self) {
        let idle = self.idle;
        self.sessions
            .lock()
            .expect("session table")
            .retain(|_, s| s.last_seen.elapsed() < idle);
    }
}

async fn state_handler(State(st): State<Arc<ServerState>>, Path(id): Path<String>) -> Response {
    let sessions = st.sessions.lock().expect("session table");
    match sessions.get(&id) {
        Some(s) => Json(st.view(s)).into_response(),
        None => (StatusCode::NOT_FOUND, format!("no session {id}")).into_response(),
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(st): State<Arc<ServerState>>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, st))
}

fn frame(m: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(m).expect("message serializes").into())
}

async fn run_session(socket: WebSocket, st: Arc<ServerState>) {
    let id = format!("s{}", st.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    st.sessions.lock().expect("session table").insert(
        id.clone(),
        Session {
            moves: Vec::new(),
            dangers: Vec::new(),
            finished: false,
            last_seen: Instant::now(),
        },
    );
    log::info!("session {id} opened");
    let (mut sink, mut stream) = socket.split();
    let (wtx, mut wrx) = mpsc::unbounded_channel::<ServerMessage>();
    let _ = wtx.send(ServerMessage::Session { id: id.clone() });

    let writer = tokio::spawn(async move {
        while let Some(m) = wrx.recv().await {
            let over = matches!(m, ServerMessage::GameOver { .. });
            if sink.send(frame(&m)).await.is_err() {
                break;
            }
            if over {
                break;
            }
        }
        let _ = sink.close().await;
    });

    // referee side talks through std channels; a thread forwards to the socket
    let (out_tx, out_rx) = std::sync::mpsc::channel::<ServerMessage>();
    let (in_tx, in_rx) = std::sync::mpsc::channel::<ClientMessage>();
    let bridge_tx = wtx.clone();
    std::thread::spawn(move || {
        for m in out_rx {
            if bridge_tx.send(m).is_err() {
                break;
            }
        }
    });

    let game_st = st.clone();
    let game_id = id.clone();
    let game = tokio::task::spawn_blocking(move || {
        let st = game_st;
        let cfg = st.cfg.game_config();
        let mut bob = RemoteBob::new(out_tx.clone(), in_rx, st.idle);
        let mut alice = AliceStrategy::new(st.cfg.system.clone(), st.rect, st.constants.clone());
        let mut moves = Vec::new();
        let res = run_game_observed(&cfg, &st.cfg.system, &st.rect, &mut alice, &mut bob, &mut |m| {
            moves.push(*m);
            st.record(&game_id, &moves);
        });
        let msg = match res {
            Ok(t) => {
                if let Some(last) = t.moves.last().filter(|m| m.player == Player::Alice) {
                    let _ = out_tx.send(ServerMessage::AliceMoved { ball: last.ball });
                }
                let report = verify_transcript(&t, &st.constants, &st.cfg.system, &st.rect);
                ServerMessage::GameOver {
                    outcome: Some(t.outcome),
                    final_radius: Some(t.final_radius),
                    report: Some(report),
                    error: None,
                }
            }
            Err(e) => ServerMessage::GameOver {
                outcome: None,
                final_radius: None,
                report: None,
                error: Some(e.to_string()),
            },
        };
        let _ = out_tx.send(msg);
        st.finish(&game_id);
    });

    while let Some(Ok(frame)) = stream.next().await {
        let text = match frame {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            Message::Close(_) => break,
            _ => continue,
        };
        st.touch(&id);
        match serde_json::from_str::<ClientMessage>(&text) {
            Ok(m) => {
                if in_tx.send(m).is_err() {
                    break;
                }
            }
            Err(e) => {
                let _ = wtx.send(ServerMessage::Verdict {
                    result: VerdictResult::Reject,
                    reason: Some(format!("malformed ({e})")),
                });
            }
        }
    }
    drop(in_tx);
    drop(wtx);
    let _ = game.await;
    let _ = writer.await;
    log::info!("session {id} closed");
}

pub fn router(st: Arc<ServerState>) -> Router {
    Router::new()
        .route("/ws", get(ws_handler))
        .route("/state/{id}", get(state_handler))
        .with_state(st)
}

/// Bind the listener; returns the bound address and the serving future.
pub async fn bind(
    cfg: &RunConfig,
) -> Result<(SocketAddr, impl Future<Output = std::io::Result<()>>), CliError> {
    let constants = cfg.constants()?;
    let rect = cfg.rectangle(&constants)?;
    let st = Arc::new(ServerState {
        cfg: cfg.clone(),
        constants,
        rect,
        idle: Duration::from_secs(cfg.idle_secs.max(1)),
        sessions: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(0),
    });
    let listener = tokio::net::TcpListener::bind(&cfg.addr)
        .await
        .map_err(|e| CliError::Config(format!("cannot listen on {}: {e}", cfg.addr)))?;
    let addr = listener.local_addr().map_err(|e| CliError::Failed(e.to_string()))?;
    let reaper = st.clone();
    tokio::spawn(async move {
        let period = (reaper.idle / 4).min(Duration::from_secs(5));
        loop {
            tokio::time::sleep(period).await;
            reaper.reap();
        }
    });
    Ok((addr, axum::serve(listener, router(st)).into_future()))
}

pub fn cmd_serve(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(e.to_string()))?;
    rt.block_on(async {
        let (addr, server) = bind(cfg).await?;
        let _ = writeln!(out, "listening on ws://{addr}/ws (state at http://{addr}/state/<id>)");
        let _ = out.flush();
        server.await.map_err(|e| CliError::Failed(e.to_string()))
    })
}
