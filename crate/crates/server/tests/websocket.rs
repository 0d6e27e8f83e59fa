mod common;

use common::*;
use dfd_server::{decode_frame, serve, Response};
use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_round_trip() {
    let fx = fixture(2);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, None));

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}")).await.unwrap();
    ws.send(Message::text(fx.load_json())).await.unwrap();
    ws.send(Message::text(r#"{"type":"add_handle","vertex":0}"#)).await.unwrap();
    ws.send(Message::text(translate(0, [0.0, 0.0, 1.0]))).await.unwrap();

    let mut replies = Vec::new();
    let mut last_frame = None;
    while last_frame.as_ref().map(|(r, _)| *r) != Some(3) {
        let msg = tokio::time::timeout(std::time::Duration::from_secs(30), ws.next())
            .await
            .expect("timed out")
            .unwrap()
            .unwrap();
        match msg {
            Message::Text(t) => replies.push(serde_json::from_str::<Response>(t.as_str()).unwrap()),
            Message::Binary(b) => last_frame = Some(decode_frame(&b).unwrap()),
            _ => {}
        }
    }
    assert!(matches!(replies[0], Response::Loaded { rev: 1, channels: 8, .. }));
    assert!(matches!(replies[1], Response::HandleAdded { rev: 2, .. }));
    assert!(matches!(replies[2], Response::HandleUpdated { rev: 3, .. }));
    let (_, v) = last_frame.unwrap();
    assert_eq!(v.len(), fx.mesh.vertices.len());
    // the handle itself follows its transform exactly
    assert!((v[0][2] - (fx.mesh.vertices[0][2] + 1.0)).abs() < 1e-6);
    ws.close(None).await.unwrap();
}
