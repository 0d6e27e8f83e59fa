#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use dfd_core::{save_field, save_obj, shapes, Encoding, FeatureField, Mesh};
use dfd_server::{decode_frame, Loaded, Outbound, Response, SessionClient};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub mesh_path: PathBuf,
    pub field_path: PathBuf,
    pub mesh: Mesh,
}

pub fn fixture(subdivisions: u32) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mesh = shapes::icosphere(subdivisions);
    let field = FeatureField::new(Encoding::Fourier { bands: 2 }, 32, 8, &mesh.bounds(), 3);
    let mesh_path = dir.path().join("m.obj");
    let field_path = dir.path().join("f.dfdw");
    save_obj(&mesh_path, &mesh.vertices, &mesh.faces).unwrap();
    save_field(&field_path, &field).unwrap();
    let mesh = dfd_core::load_mesh(&mesh_path).unwrap();
    Fixture {
        dir,
        mesh_path,
        field_path,
        mesh,
    }
}

impl Fixture {
    pub fn loaded(&self) -> Arc<Loaded> {
        Arc::new(Loaded::from_files(&self.mesh_path, &self.field_path).unwrap())
    }

    pub fn load_json(&self) -> String {
        serde_json::json!({
            "type": "load",
            "mesh_path": self.mesh_path,
            "field_path": self.field_path,
        })
        .to_string()
    }
}

pub fn text(out: Outbound) -> Response {
    match out {
        Outbound::Text(t) => serde_json::from_str(&t).unwrap(),
        Outbound::Binary(_) => panic!("expected a text message"),
    }
}

/// Next text reply, skipping frames.
pub fn next_text(c: &mut SessionClient) -> Response {
    loop {
        match c.blocking_recv().expect("session closed") {
            Outbound::Text(t) => return serde_json::from_str(&t).unwrap(),
            Outbound::Binary(_) => {}
        }
    }
}

/// Reads until a frame with revision `rev` arrives, returning it.
pub fn frame_at(c: &mut SessionClient, rev: u64) -> Vec<[f32; 3]> {
    loop {
        if let Outbound::Binary(b) = c.blocking_recv().expect("session closed") {
            let (r, v) = decode_frame(&b).unwrap();
            assert!(r <= rev, "frame rev {r} overtook {rev}");
            if r == rev {
                return v;
            }
        }
    }
}

pub fn translate(id: u64, t: [f64; 3]) -> String {
    serde_json::json!({
        "type": "update_handle",
        "id": id,
        "matrix": [1.0, 0.0, 0.0, t[0], 0.0, 1.0, 0.0, t[1], 0.0, 0.0, 1.0, t[2]],
    })
    .to_string()
}
