//! Websocket front end. Each connection gets its own session.

use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;

use crate::session::Loaded;
use crate::worker::{spawn_session, Outbound};

/// Accepts connections until the listener fails.
pub async fn serve(listener: TcpListener, initial: Option<Arc<Loaded>>) -> std::io::Result<()> {
    loop {
        let (stream, peer) = listener.accept().await?;
        log::info!("connection from {peer}");
        let initial = initial.clone();
        tokio::spawn(async move {
            if let Err(e) = connection(stream, initial).await {
                log::warn!("connection {peer} ended: {e}");
            }
        });
    }
}

async fn connection(stream: TcpStream, initial: Option<Arc<Loaded>>) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let mut client = spawn_session(initial);
    let input = client.sender().expect("fresh session accepts input");

    let reader = async move {
        while let Some(msg) = source.next().await {
            match msg? {
                Message::Text(t) => {
                    if input.send(t.as_str().to_owned()).is_err() {
                        break;
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
        drop(input);
        Ok::<_, tokio_tungstenite::tungstenite::Error>(())
    };

    client.close();
    let writer = async {
        while let Some(out) = client.recv().await {
            let msg = match out {
                Outbound::Text(t) => Message::text(t),
                Outbound::Binary(b) => Message::binary(b),
            };
            sink.send(msg).await?;
        }
        let _ = sink.close().await;
        Ok::<_, tokio_tungstenite::tungstenite::Error>(())
    };

    let (r, w) = tokio::join!(reader, writer);
    let threads = client;
    tokio::task::spawn_blocking(move || threads.join());
    r.and(w)
}
