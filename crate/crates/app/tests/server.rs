use std::net::SocketAddr;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use shepherd_app::protocol::ServerMessage;
use shepherd_app::server::{self, HumanStore, ServerState, Session};
use shepherd_core::curriculum::{spawn_scenario, LessonId};
use shepherd_core::dataset::{read_dataset, Manifest};
use shepherd_core::policy::{oracle_direction, PolicyObservation};
use shepherd_core::sim::{switching_distance, SimParams, WorldState};
use shepherd_core::Vec2;
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn launch(params: SimParams, tick_rate: f64) -> (SocketAddr, ServerState, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let state = ServerState::new(params, tick_rate, dir.path()).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(server::serve(listener, state.clone()));
    (addr, state, dir)
}

async fn connect(addr: SocketAddr) -> Client {
    tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(ws: &mut Client, text: &str) {
    ws.send(Message::text(text.to_string())).await.unwrap();
}

/// Next server frame; `None` once the server closes the connection.
async fn next(ws: &mut Client) -> Option<ServerMessage> {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(30), ws.next())
            .await
            .expect("server went quiet")?;
        match msg {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(t.as_str()).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

fn v(p: [f64; 2]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn oracle_mouse_completes_and_persists_a_drive_episode() {
    let params = SimParams::default();
    let (addr, state, dir) = launch(params.clone(), 2000.0).await;
    let mut ws = connect(addr).await;
    send(&mut ws, r#"{"type":"start","lesson":"1.1","n":20,"seed":3}"#).await;

    let mut last_t = None;
    let done = loop {
        match next(&mut ws).await.expect("connection closed mid-episode") {
            ServerMessage::State { t, shepherd, goal, sheep, .. } => {
                if let Some(prev) = last_t {
                    assert_eq!(t, prev + 1);
                }
                last_t = Some(t);
                let world = WorldState::new(sheep.into_iter().map(v).collect(), v(shepherd), v(goal), 0).unwrap();
                let cmd = oracle_direction(&PolicyObservation::from_world(&world, None), &params);
                let mouse = v(shepherd) + cmd.direction * 5.0;
                send(&mut ws, &format!(r#"{{"type":"input","x":{},"y":{}}}"#, mouse.x, mouse.y)).await;
            }
            ServerMessage::Done { success, metrics } => break (success, metrics),
            ServerMessage::Error { msg } => panic!("{msg}"),
        }
    };
    let (success, metrics) = done;
    assert!(success);
    assert_eq!(Some(metrics.duration), last_t);

    let manifest_path = dir.path().join("manifest.json");
    let manifest = Manifest::load(&manifest_path).unwrap();
    assert_eq!(manifest.demonstrator, "human");
    assert_eq!(manifest.episodes.len(), 1);
    let rec = &manifest.episodes[0];
    assert_eq!((rec.lesson, rec.n, rec.seed), (LessonId::DriveStraight, 20, 3));
    assert_eq!(rec.duration, metrics.duration);
    assert_eq!(rec.samples as u64, rec.duration);
    let samples = read_dataset(&manifest.episode_path(&manifest_path, rec)).unwrap();
    assert_eq!(samples.len() as u64, metrics.duration);
    assert!(samples.windows(2).all(|w| w[1].t == w[0].t + 1));
    assert_eq!(state.store.lock().unwrap().manifest(), &manifest);

    // A second episode on the same connection gets the next id.
    send(&mut ws, r#"{"type":"start","lesson":"1.1","n":20,"seed":4}"#).await;
    assert!(matches!(next(&mut ws).await, Some(ServerMessage::State { t: 0, .. })));
    send(&mut ws, r#"{"type":"stop"}"#).await;
}

#[tokio::test]
async fn first_frame_of_a_stray_lesson_has_its_geometry() {
    let params = SimParams::default();
    let (addr, _, _dir) = launch(params.clone(), 30.0).await;
    let mut ws = connect(addr).await;
    send(&mut ws, r#"{"type":"start","lesson":"2.2","n":50,"seed":7}"#).await;
    let Some(ServerMessage::State { t, shepherd, goal, sheep, collected }) = next(&mut ws).await else {
        panic!("expected a state frame");
    };
    assert_eq!(t, 0);
    let expected = spawn_scenario(LessonId::CollectSingleRandom, 50, &params, 7).unwrap().world;
    assert_eq!(v(shepherd), expected.shepherd_pos);
    assert_eq!(v(goal), expected.goal);
    let sheep: Vec<Vec2> = sheep.into_iter().map(v).collect();
    assert_eq!(sheep, expected.sheep.iter().map(|s| s.pos).collect::<Vec<_>>());

    // One stray between 1.25 f(N) and 2 f(N) from the GCM; the herd is not collected.
    let gcm = Vec2::mean(sheep.iter().copied()).unwrap();
    let f = switching_distance(50, params.interaction_radius).unwrap();
    let far: Vec<f64> = sheep.iter().map(|p| p.distance(gcm)).filter(|&d| d >= f).collect();
    assert_eq!(far.len(), 1);
    assert!(far[0] >= 1.25 * f - 1e-9 && far[0] <= 2.0 * f + 1e-9);
    assert!(!collected);
}

#[tokio::test]
async fn shepherd_follows_the_mouse_at_full_speed() {
    let params = SimParams::default();
    let (addr, _, _dir) = launch(params.clone(), 200.0).await;
    let mut ws = connect(addr).await;
    send(&mut ws, r#"{"type":"start","lesson":"1.1","n":20,"seed":1}"#).await;
    let Some(ServerMessage::State { shepherd: start, .. }) = next(&mut ws).await else {
        panic!()
    };
    // Without input the shepherd waits.
    for _ in 0..3 {
        let Some(ServerMessage::State { shepherd, .. }) = next(&mut ws).await else {
            panic!()
        };
        assert_eq!(shepherd, start);
    }
    let target = v(start) + Vec2::new(0.0, -1000.0);
    send(&mut ws, &format!(r#"{{"type":"input","x":{},"y":{}}}"#, target.x, target.y)).await;
    let mut prev = v(start);
    let mut moved = 0;
    while moved < 5 {
        let Some(ServerMessage::State { shepherd, .. }) = next(&mut ws).await else {
            panic!()
        };
        let step = v(shepherd) - prev;
        if step.norm() > 0.0 {
            assert!((step - Vec2::new(0.0, -params.shepherd_speed)).norm() < 1e-9, "{step:?}");
            moved += 1;
        }
        prev = v(shepherd);
    }
}

#[test]
fn mouse_on_the_shepherd_leaves_it_in_place() {
    let params = SimParams::default();
    let mut s = Session::start(LessonId::DriveRandom, 30, 5, &params).unwrap();
    let before = s.world.shepherd_pos;
    s.set_mouse(before);
    s.tick(&params).unwrap();
    assert_eq!(s.world.shepherd_pos, before);
    s.set_mouse(before + Vec2::new(3.0, 4.0));
    s.tick(&params).unwrap();
    assert!((s.world.shepherd_pos - (before + Vec2::new(0.6, 0.8) * params.shepherd_speed)).norm() < 1e-12);
    let samples = s.samples(0, &params).unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(samples[0].label, Vec2::ZERO);
}

#[tokio::test]
async fn protocol_errors() {
    let (addr, state, _dir) = launch(SimParams::default(), 30.0).await;

    // Recoverable: bad start values, duplicate start, stop without a session. Input with no
    // session is dropped silently.
    let mut ws = connect(addr).await;
    send(&mut ws, r#"{"type":"input","x":1,"y":1}"#).await;
    send(&mut ws, r#"{"type":"start","lesson":"3.2","n":0,"seed":1}"#).await;
    assert!(matches!(next(&mut ws).await, Some(ServerMessage::Error { .. })));
    send(&mut ws, r#"{"type":"start","lesson":"3.2","n":30,"seed":1}"#).await;
    assert!(matches!(next(&mut ws).await, Some(ServerMessage::State { t: 0, .. })));
    send(&mut ws, r#"{"type":"start","lesson":"3.2","n":30,"seed":1}"#).await;
    loop {
        match next(&mut ws).await {
            Some(ServerMessage::Error { msg }) => {
                assert!(msg.contains("already"), "{msg}");
                break;
            }
            Some(ServerMessage::State { .. }) => continue,
            other => panic!("{other:?}"),
        }
    }
    send(&mut ws, r#"{"type":"stop"}"#).await;
    send(&mut ws, r#"{"type":"stop"}"#).await;
    loop {
        match next(&mut ws).await {
            Some(ServerMessage::Error { .. }) => break,
            Some(ServerMessage::State { .. }) => continue,
            other => panic!("{other:?}"),
        }
    }

    // Fatal: a malformed frame gets an error and the connection closes.
    send(&mut ws, r#"{"type":"teleport"}"#).await;
    assert!(matches!(next(&mut ws).await, Some(ServerMessage::Error { .. })));
    assert!(next(&mut ws).await.is_none());

    let mut ws = connect(addr).await;
    send(&mut ws, "{not json").await;
    assert!(matches!(next(&mut ws).await, Some(ServerMessage::Error { .. })));
    assert!(next(&mut ws).await.is_none());

    assert!(state.store.lock().unwrap().manifest().episodes.is_empty());
}

#[tokio::test]
async fn time_limit_ends_the_episode_without_saving() {
    let params = SimParams {
        t_max: 5,
        ..SimParams::default()
    };
    let (addr, state, _dir) = launch(params, 500.0).await;
    let mut ws = connect(addr).await;
    send(&mut ws, r#"{"type":"start","lesson":"3.3","n":40,"seed":2}"#).await;
    let mut frames = 0;
    let (success, metrics) = loop {
        match next(&mut ws).await.unwrap() {
            ServerMessage::State { .. } => frames += 1,
            ServerMessage::Done { success, metrics } => break (success, metrics),
            ServerMessage::Error { msg } => panic!("{msg}"),
        }
    };
    assert!(!success);
    assert_eq!(metrics.duration, 5);
    assert_eq!(frames, 6);
    assert!(state.store.lock().unwrap().manifest().episodes.is_empty());
}

#[test]
fn store_refuses_scripted_datasets_and_other_params() {
    let dir = tempfile::tempdir().unwrap();
    let params = SimParams::default();
    {
        let mut store = HumanStore::open(dir.path(), &params).unwrap();
        let mut s = Session::start(LessonId::DriveStraight, 10, 1, &params).unwrap();
        s.tick(&params).unwrap();
        let rec = store.persist(&s, true, &params).unwrap();
        assert_eq!((rec.sim_id, rec.samples, rec.duration), (0, 1, 1));
    }
    let reopened = HumanStore::open(dir.path(), &params).unwrap();
    assert_eq!(reopened.manifest().episodes.len(), 1);
    let other = SimParams {
        shepherd_speed: 2.0,
        ..params.clone()
    };
    assert!(HumanStore::open(dir.path(), &other).is_err());

    let path = dir.path().join("manifest.json");
    let mut m = Manifest::load(&path).unwrap();
    m.demonstrator = "demonstrator-stop".into();
    m.save(&path).unwrap();
    assert!(HumanStore::open(dir.path(), &params).is_err());
}
