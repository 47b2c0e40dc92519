use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use piano_genie::engine::summarize_latencies;
use piano_genie::model::{save_checkpoint, GenieModel, ModelConfig};
use piano_genie::service::{spawn, Health, RunningServer, ServeOptions, ServerMessage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Fixture {
    server: RunningServer,
    _dir: tempfile::TempDir,
}

async fn start(hidden: usize, idle_timeout: Duration) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = ModelConfig { hidden_size: hidden, ..ModelConfig::default() };
    let model = GenieModel::<f32>::init(config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let ckpt = dir.path().join("model.pgck");
    save_checkpoint(&ckpt, &model, Some(10)).unwrap();
    let assets = dir.path().join("ui");
    std::fs::create_dir(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<!doctype html><title>genie</title>").unwrap();
    let options = ServeOptions {
        static_dir: Some(assets),
        idle_timeout,
        ..ServeOptions::new(ckpt, "127.0.0.1:0".parse().unwrap())
    };
    Fixture { server: spawn(options).await.unwrap(), _dir: dir }
}

async fn connect(f: &Fixture) -> Ws {
    connect_async(format!("ws://{}/ws", f.server.addr)).await.unwrap().0
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::text(text)).await.unwrap();
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("reply in time").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn http_get(f: &Fixture, path: &str) -> String {
    let mut stream = TcpStream::connect(f.server.addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n");
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut out = String::new();
    stream.read_to_string(&mut out).await.unwrap();
    out
}

async fn health(f: &Fixture) -> Health {
    let resp = http_get(f, "/healthz").await;
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    serde_json::from_str(resp.split("\r\n\r\n").nth(1).unwrap()).unwrap()
}

fn code(m: &ServerMessage) -> &str {
    match m {
        ServerMessage::Error { code, .. } => code,
        other => panic!("expected error, got {other:?}"),
    }
}

#[tokio::test]
async fn init_press_release() {
    let f = start(16, Duration::from_secs(600)).await;
    let mut ws = connect(&f).await;
    send(&mut ws, r#"{"type":"press","button":1}"#).await;
    assert_eq!(code(&recv(&mut ws).await), "no_session");
    send(&mut ws, r#"{"type":"init","seed":5}"#).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::Ready { .. }));
    send(&mut ws, r#"{"type":"press","button":3,"t_ms":0}"#).await;
    let ServerMessage::NoteOn { key, button: 3, .. } = recv(&mut ws).await else { panic!("expected note_on") };
    assert!(key < 88);
    send(&mut ws, r#"{"type":"lookahead"}"#).await;
    let ServerMessage::LookaheadResult { matrix } = recv(&mut ws).await else { panic!("expected lookahead") };
    assert_eq!((matrix.len(), matrix[0].len()), (8, 88));
    for row in &matrix {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    send(&mut ws, r#"{"type":"release","button":3,"t_ms":100}"#).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::NoteOff { key: k, button: 3, .. } if k == key));
    send(&mut ws, r#"{"type":"release","button":3}"#).await;
    assert_eq!(code(&recv(&mut ws).await), "not_held");
    send(&mut ws, r#"{"type":"press","button":9}"#).await;
    assert_eq!(code(&recv(&mut ws).await), "invalid_button");
    send(&mut ws, r#"{"type":"set_temperature","temperature":-1}"#).await;
    assert_eq!(code(&recv(&mut ws).await), "invalid_temperature");
    send(&mut ws, r#"{"type":"set_temperature","temperature":0}"#).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::Ready { .. }));
    f.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn malformed_messages_keep_the_connection() {
    let f = start(8, Duration::from_secs(600)).await;
    let mut ws = connect(&f).await;
    send(&mut ws, "not json").await;
    assert_eq!(code(&recv(&mut ws).await), "bad_message");
    send(&mut ws, r#"{"type":"dance"}"#).await;
    assert_eq!(code(&recv(&mut ws).await), "unknown_type");
    send(&mut ws, r#"{"type":"press"}"#).await;
    assert_eq!(code(&recv(&mut ws).await), "bad_message");
    ws.send(Message::binary(vec![1, 2, 3])).await.unwrap();
    assert_eq!(code(&recv(&mut ws).await), "bad_message");
    send(&mut ws, r#"{"type":"init"}"#).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::Ready { .. }));
    f.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn same_seed_connections_agree() {
    let f = start(16, Duration::from_secs(600)).await;
    let mut streams = Vec::new();
    for _ in 0..2 {
        let mut ws = connect(&f).await;
        send(&mut ws, r#"{"type":"init","seed":99,"temperature":1.0}"#).await;
        recv(&mut ws).await;
        let mut keys = Vec::new();
        for i in 0..40 {
            send(&mut ws, &format!(r#"{{"type":"press","button":{},"t_ms":{}}}"#, i % 8, i * 50)).await;
            loop {
                if let ServerMessage::NoteOn { key, .. } = recv(&mut ws).await {
                    keys.push(key);
                    break;
                }
            }
        }
        streams.push(keys);
    }
    assert_eq!(streams[0], streams[1]);
    f.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn healthz_and_static_assets() {
    let f = start(8, Duration::from_secs(600)).await;
    let h = health(&f).await;
    assert!(h.checkpoint.starts_with("model.pgck#"), "{}", h.checkpoint);
    assert_eq!(h.active_sessions, 0);
    assert!(h.press_latency.is_none());
    let mut ws = connect(&f).await;
    send(&mut ws, r#"{"type":"init"}"#).await;
    recv(&mut ws).await;
    send(&mut ws, r#"{"type":"press","button":0}"#).await;
    recv(&mut ws).await;
    let h = health(&f).await;
    assert_eq!(h.active_sessions, 1);
    assert_eq!(h.press_latency.unwrap().count, 1);
    let page = http_get(&f, "/index.html").await;
    assert!(page.starts_with("HTTP/1.1 200") && page.contains("<title>genie</title>"), "{page}");
    f.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn dropped_connection_releases_notes() {
    let f = start(8, Duration::from_secs(600)).await;
    let mut ws = connect(&f).await;
    send(&mut ws, r#"{"type":"init"}"#).await;
    recv(&mut ws).await;
    for b in 0..3 {
        send(&mut ws, &format!(r#"{{"type":"press","button":{b}}}"#)).await;
        recv(&mut ws).await;
    }
    assert_eq!(f.server.registry.sounding_notes(), 3);
    drop(ws);
    let deadline = Instant::now() + Duration::from_secs(5);
    while f.server.registry.active_sessions() > 0 {
        assert!(Instant::now() < deadline, "session not cleaned up");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    assert_eq!(f.server.registry.sounding_notes(), 0);
    f.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn idle_sessions_expire() {
    let f = start(8, Duration::from_millis(200)).await;
    let mut ws = connect(&f).await;
    send(&mut ws, r#"{"type":"init"}"#).await;
    recv(&mut ws).await;
    send(&mut ws, r#"{"type":"press","button":2}"#).await;
    let ServerMessage::NoteOn { key, .. } = recv(&mut ws).await else { panic!() };
    assert!(matches!(recv(&mut ws).await, ServerMessage::NoteOff { key: k, .. } if k == key));
    assert_eq!(code(&recv(&mut ws).await), "no_session");
    f.server.shutdown().await.unwrap();
}

#[tokio::test]
async fn shutdown_sends_note_offs_and_closes() {
    let f = start(8, Duration::from_secs(600)).await;
    let mut ws = connect(&f).await;
    send(&mut ws, r#"{"type":"init"}"#).await;
    recv(&mut ws).await;
    send(&mut ws, r#"{"type":"press","button":4}"#).await;
    let ServerMessage::NoteOn { key, .. } = recv(&mut ws).await else { panic!() };
    let registry = f.server.registry.clone();
    let stop = tokio::spawn(f.server.shutdown());
    assert!(matches!(recv(&mut ws).await, ServerMessage::NoteOff { key: k, button: 4, .. } if k == key));
    let rest = tokio::time::timeout(Duration::from_secs(5), async {
        while let Some(Ok(m)) = ws.next().await {
            if let Message::Close(_) = m {
                return true;
            }
        }
        true
    })
    .await
    .unwrap();
    assert!(rest);
    stop.await.unwrap().unwrap();
    assert_eq!(registry.sounding_notes(), 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn end_to_end_press_latency() {
    let f = start(128, Duration::from_secs(600)).await;
    let mut ws = connect(&f).await;
    send(&mut ws, r#"{"type":"init","seed":1}"#).await;
    recv(&mut ws).await;
    let mut samples = Vec::new();
    for i in 0..300 {
        let b = i % 8;
        let start = Instant::now();
        send(&mut ws, &format!(r#"{{"type":"press","button":{b}}}"#)).await;
        loop {
            if let ServerMessage::NoteOn { .. } = recv(&mut ws).await {
                break;
            }
        }
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        send(&mut ws, &format!(r#"{{"type":"release","button":{b}}}"#)).await;
        recv(&mut ws).await;
    }
    let s = summarize_latencies(&samples[20..]).unwrap();
    println!("end-to-end press latency p50 {:.3} ms, p99 {:.3} ms", s.p50_ms, s.p99_ms);
    assert!(s.p50_ms < 15.0, "{s:?}");
    f.server.shutdown().await.unwrap();
}
