//! Live demo sessions over a WebSocket at `/ws`.
//!
//! Each connection runs its own tick loop. Every tick the shepherd heads for the last mouse
//! position the client sent (zero command before the first input, or when the mouse sits on
//! the shepherd), the world advances one step and a state frame goes out. Finished episodes are
//! appended to a flat-file dataset with every tick labelled; aborted and timed-out ones are not.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{ensure, Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use log::{info, warn};
use shepherd_core::curriculum::{spawn_scenario, CurriculumPlan, LessonId, Termination};
use shepherd_core::dataset::{record_episode, write_dataset, EpisodeRecord, Manifest, RawObservation, Sample, ZeroTicks};
use shepherd_core::episode::{EpisodeMetrics, MetricsTracker};
use shepherd_core::policy::{Behaviour, PolicyObservation, ShepherdCommand, StopMode};
use shepherd_core::sim::{is_collected, SimParams, WorldState};
use shepherd_core::Vec2;
use tokio::net::TcpListener;
use tokio::time::{interval, MissedTickBehavior};

use crate::pipeline::{episode_file, EPISODE_DIR, MANIFEST_FILE};
use crate::protocol::{ClientMessage, ServerMessage};

pub const DEFAULT_TICK_RATE: f64 = 30.0;
pub const HUMAN_DEMONSTRATOR: &str = "human";

/// One human-steered episode.
#[derive(Debug, Clone)]
pub struct Session {
    pub lesson: LessonId,
    pub n: usize,
    pub seed: u64,
    pub world: WorldState,
    termination: Termination,
    tracker: MetricsTracker,
    prev: Option<RawObservation>,
    trajectory: Vec<(RawObservation, ShepherdCommand)>,
    mouse: Option<Vec2>,
}

impl Session {
    pub fn start(lesson: LessonId, n: usize, seed: u64, params: &SimParams) -> Result<Self> {
        let scenario = spawn_scenario(lesson, n, params, seed)?;
        let mut tracker = MetricsTracker::default();
        tracker.observe(&PolicyObservation::from_world(&scenario.world, None));
        Ok(Self {
            lesson,
            n,
            seed,
            world: scenario.world,
            termination: scenario.termination,
            tracker,
            prev: None,
            trajectory: Vec::new(),
            mouse: None,
        })
    }

    pub fn set_mouse(&mut self, pos: Vec2) {
        self.mouse = Some(pos);
    }

    /// Unit vector from the shepherd to the mouse; zero without input or when they coincide.
    pub fn command(&self, obs: &PolicyObservation, params: &SimParams) -> ShepherdCommand {
        let dir = self.mouse.and_then(|m| (m - self.world.shepherd_pos).try_unit());
        match dir {
            None => ShepherdCommand::stopped(),
            Some(direction) => ShepherdCommand {
                direction,
                behaviour: if obs.herd_is_collected(params) {
                    Behaviour::Drive
                } else {
                    Behaviour::Collect
                },
            },
        }
    }

    /// Advance one tick with the current command, recording it.
    pub fn tick(&mut self, params: &SimParams) -> Result<()> {
        let obs = PolicyObservation::from_world(&self.world, self.prev.as_ref());
        let cmd = self.command(&obs, params);
        let raw = obs.raw();
        self.world.step(cmd.direction, params)?;
        self.trajectory.push((raw, cmd));
        self.prev = Some(raw);
        self.tracker
            .observe(&PolicyObservation::from_world(&self.world, self.prev.as_ref()));
        Ok(())
    }

    /// `Some(true)` once the lesson's goal is met, `Some(false)` at the time limit.
    pub fn outcome(&self, params: &SimParams) -> Option<bool> {
        if self.termination.reached(&self.world, params) {
            Some(true)
        } else if self.world.t >= params.t_max {
            Some(false)
        } else {
            None
        }
    }

    pub fn metrics(&self, success: bool) -> EpisodeMetrics {
        self.tracker.finish(success, self.world.t)
    }

    /// One sample per tick played, idle ticks included.
    pub fn samples(&self, sim_id: u64, params: &SimParams) -> Result<Vec<Sample>> {
        Ok(record_episode(
            &self.trajectory,
            self.n,
            self.lesson,
            sim_id,
            params,
            ZeroTicks::Keep,
        )?)
    }

    pub fn state_frame(&self, params: &SimParams) -> ServerMessage {
        ServerMessage::State {
            t: self.world.t,
            shepherd: self.world.shepherd_pos.to_array(),
            goal: self.world.goal.to_array(),
            sheep: self.world.sheep.iter().map(|s| s.pos.to_array()).collect(),
            collected: is_collected(&self.world, params),
        }
    }
}

/// Dataset directory the server appends finished human episodes to.
#[derive(Debug)]
pub struct HumanStore {
    dir: PathBuf,
    manifest: Manifest,
}

impl HumanStore {
    /// Open `dir`, continuing an existing human dataset recorded with the same params.
    pub fn open(dir: &Path, params: &SimParams) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            let m = Manifest::load(&path)?;
            ensure!(
                m.demonstrator == HUMAN_DEMONSTRATOR,
                "{} holds `{}` demonstrations; use a separate directory for human sessions",
                path.display(),
                m.demonstrator
            );
            ensure!(
                &m.params == params,
                "{} was recorded with different simulation params",
                path.display()
            );
            m
        } else {
            Manifest {
                seed: 0,
                params: params.clone(),
                demonstrator: HUMAN_DEMONSTRATOR.to_string(),
                stop_mode: StopMode::Circle,
                plan: CurriculumPlan { sets: Vec::new() },
                episodes: Vec::new(),
                excluded: Vec::new(),
                train: None,
            }
        };
        fs::create_dir_all(dir.join(EPISODE_DIR)).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn persist(&mut self, session: &Session, success: bool, params: &SimParams) -> Result<EpisodeRecord> {
        let sim_id = self.manifest.episodes.iter().map(|e| e.sim_id + 1).max().unwrap_or(0);
        let samples = session.samples(sim_id, params)?;
        let file = episode_file(sim_id, session.lesson);
        write_dataset(&samples, &self.dir.join(&file))?;
        let record = EpisodeRecord {
            sim_id,
            lesson: session.lesson,
            n: session.n,
            seed: session.seed,
            file,
            duration: session.world.t,
            success,
            samples: samples.len(),
        };
        self.manifest.episodes.push(record.clone());
        self.manifest.save(&self.manifest_path())?;
        Ok(record)
    }
}

#[derive(Clone)]
pub struct ServerState {
    pub params: Arc<SimParams>,
    pub tick_rate: f64,
    pub store: Arc<Mutex<HumanStore>>,
}

impl ServerState {
    pub fn new(params: SimParams, tick_rate: f64, data_dir: &Path) -> Result<Self> {
        params.validate()?;
        ensure!(
            tick_rate.is_finite() && tick_rate > 0.0,
            "tick rate must be positive, got {tick_rate}"
        );
        let store = HumanStore::open(data_dir, &params)?;
        Ok(Self {
            params: Arc::new(params),
            tick_rate,
            store: Arc::new(Mutex::new(store)),
        })
    }
}

pub fn router(state: ServerState) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(state)
}

pub async fn serve(listener: TcpListener, state: ServerState) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        info!("serving demo sessions on ws://{addr}/ws");
    }
    axum::serve(listener, router(state)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<ServerState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

/// Report the end of an episode, saving it first if it succeeded.
async fn finish(socket: &mut WebSocket, state: &ServerState, session: &Session, success: bool) -> bool {
    let metrics = session.metrics(success);
    if success {
        let saved = state
            .store
            .lock()
            .map_err(|_| anyhow::anyhow!("dataset store poisoned"))
            .and_then(|mut store| store.persist(session, success, &state.params));
        match saved {
            Ok(rec) => info!("saved human episode {} ({} ticks)", rec.sim_id, rec.duration),
            Err(e) => {
                warn!("could not save episode: {e:#}");
                if !send(socket, &ServerMessage::error(format!("episode not saved: {e:#}"))).await {
                    return false;
                }
            }
        }
    }
    send(socket, &ServerMessage::Done { success, metrics }).await
}

async fn connection(mut socket: WebSocket, state: ServerState) {
    let params = state.params.clone();
    let mut ticker = interval(Duration::from_secs_f64(1.0 / state.tick_rate));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut session: Option<Session> = None;
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => {
                        let _ = send(&mut socket, &ServerMessage::error("binary frames are not supported")).await;
                        let _ = socket.send(Message::Close(None)).await;
                        break;
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match ClientMessage::parse(text.as_str()) {
                    Err(e) => {
                        let _ = send(&mut socket, &ServerMessage::error(format!("malformed message: {e}"))).await;
                        let _ = socket.send(Message::Close(None)).await;
                        break;
                    }
                    Ok(ClientMessage::Start { lesson, n, seed }) => {
                        if session.is_some() {
                            Some(ServerMessage::error("a session is already running"))
                        } else {
                            match Session::start(lesson, n, seed, &params) {
                                Ok(s) => {
                                    let frame = s.state_frame(&params);
                                    session = Some(s);
                                    ticker.reset();
                                    Some(frame)
                                }
                                Err(e) => Some(ServerMessage::error(format!("cannot start: {e:#}"))),
                            }
                        }
                    }
                    Ok(ClientMessage::Input { x, y }) => match session.as_mut() {
                        Some(s) if x.is_finite() && y.is_finite() => {
                            s.set_mouse(Vec2::new(x, y));
                            None
                        }
                        Some(_) => Some(ServerMessage::error("input must be finite")),
                        // Mouse frames keep streaming after an episode ends.
                        None => None,
                    },
                    Ok(ClientMessage::Stop) => match session.take() {
                        Some(_) => None,
                        None => Some(ServerMessage::error("no session running")),
                    },
                };
                if let Some(msg) = reply {
                    if !send(&mut socket, &msg).await {
                        break;
                    }
                }
            }
            _ = ticker.tick(), if session.is_some() => {
                let Some(s) = session.as_mut() else { continue };
                if let Some(success) = s.outcome(&params) {
                    let ok = finish(&mut socket, &state, s, success).await;
                    session = None;
                    if ok { continue } else { break }
                }
                if let Err(e) = s.tick(&params) {
                    session = None;
                    if !send(&mut socket, &ServerMessage::error(format!("simulation failed: {e:#}"))).await {
                        break;
                    }
                    continue;
                }
                if !send(&mut socket, &s.state_frame(&params)).await {
                    break;
                }
                if let Some(success) = s.outcome(&params) {
                    let ok = finish(&mut socket, &state, s, success).await;
                    session = None;
                    if !ok {
                        break;
                    }
                }
            }
        }
    }
}
