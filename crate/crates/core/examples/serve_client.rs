//! Start the service on a random port with an untrained model, connect a
//! WebSocket client, play a few notes and shut down.
//!
//!     cargo run --example serve_client

use futures::{SinkExt, StreamExt};
use piano_genie::model::{save_checkpoint, GenieModel, ModelConfig};
use piano_genie::service::{spawn, ServeOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio_tungstenite::tungstenite::Message;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("genie-serve-example");
    std::fs::create_dir_all(&dir)?;
    let ckpt = dir.join("model.pgck");
    let model = GenieModel::<f32>::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    save_checkpoint(&ckpt, &model, None)?;

    let server = spawn(ServeOptions::new(&ckpt, "127.0.0.1:0".parse()?)).await?;
    println!("listening on {}", server.addr);
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/ws", server.addr)).await?;

    let script = [
        r#"{"type":"init","seed":1}"#,
        r#"{"type":"press","button":0}"#,
        r#"{"type":"press","button":4}"#,
        r#"{"type":"release","button":0}"#,
        r#"{"type":"press","button":7}"#,
        r#"{"type":"reset"}"#,
    ];
    for msg in script {
        println!("> {msg}");
        ws.send(Message::text(msg)).await?;
        // every message gets at least one reply; reset may send several
        loop {
            let reply = tokio::time::timeout(std::time::Duration::from_millis(200), ws.next()).await;
            match reply {
                Ok(Some(Ok(Message::Text(t)))) => println!("< {t}"),
                _ => break,
            }
        }
    }
    server.shutdown().await?;
    Ok(())
}
