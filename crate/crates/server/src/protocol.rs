//! Wire format.
//!
//! Control messages are JSON text frames tagged by `"type"`. Every server
//! message carries `"rev"`, the session revision it reflects. Geometry goes
//! out as binary frames: `u64 rev`, `u64 n`, then `3n` f32 positions, all
//! little endian.

use std::path::PathBuf;

use dfd_core::{SymmetryPlane, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Load {
        mesh_path: PathBuf,
        field_path: PathBuf,
    },
    /// Reloads a state written by `snapshot`.
    Restore {
        path: PathBuf,
    },
    AddHandle {
        vertex: u32,
    },
    UpdateHandle {
        id: u64,
        /// 3x4 row-major `[L | t]`.
        matrix: Vec<f64>,
    },
    RemoveHandle {
        id: u64,
    },
    SetAnchors {
        vertices: Vec<u32>,
    },
    SetLambda {
        value: f32,
    },
    SetMode {
        mode: String,
    },
    /// `mode` is `auto`, `off` or `plane`; `plane` takes `x|y|z` or
    /// `nx,ny,nz,d`.
    Symmetry {
        mode: String,
        #[serde(default)]
        plane: Option<String>,
        #[serde(default)]
        force: bool,
    },
    QueryWeights {
        handle_id: u64,
    },
    Snapshot {
        dir: PathBuf,
    },
    Stats,
}

impl Request {
    pub fn kind(&self) -> &'static str {
        match self {
            Request::Load { .. } => "load",
            Request::Restore { .. } => "restore",
            Request::AddHandle { .. } => "add_handle",
            Request::UpdateHandle { .. } => "update_handle",
            Request::RemoveHandle { .. } => "remove_handle",
            Request::SetAnchors { .. } => "set_anchors",
            Request::SetLambda { .. } => "set_lambda",
            Request::SetMode { .. } => "set_mode",
            Request::Symmetry { .. } => "symmetry",
            Request::QueryWeights { .. } => "query_weights",
            Request::Snapshot { .. } => "snapshot",
            Request::Stats => "stats",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("requests serialize")
    }
}

/// Work counters; `rows_bound` only moves on `add_handle` and restores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub rows_bound: u64,
    pub distance_evaluations: u64,
    pub rows_reweighted: u64,
    pub poses_requested: u64,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Loaded {
        rev: u64,
        vertices: usize,
        faces: usize,
        channels: usize,
    },
    HandleAdded {
        rev: u64,
        id: u64,
        vertex: u32,
    },
    HandleUpdated {
        rev: u64,
        id: u64,
    },
    HandleRemoved {
        rev: u64,
        id: u64,
    },
    AnchorsSet {
        rev: u64,
        count: usize,
    },
    LambdaSet {
        rev: u64,
        value: f32,
    },
    ModeSet {
        rev: u64,
        mode: String,
    },
    Symmetry {
        rev: u64,
        planes: Vec<SymmetryPlane>,
        active: Option<SymmetryPlane>,
    },
    Weights {
        rev: u64,
        handle_id: u64,
        weights: Vec<f32>,
    },
    Snapshot {
        rev: u64,
        obj: PathBuf,
        state: PathBuf,
    },
    Stats {
        rev: u64,
        stats: SessionStats,
    },
    Error {
        rev: u64,
        request: Option<String>,
        message: String,
    },
}

impl Response {
    pub fn rev(&self) -> u64 {
        match self {
            Response::Loaded { rev, .. }
            | Response::HandleAdded { rev, .. }
            | Response::HandleUpdated { rev, .. }
            | Response::HandleRemoved { rev, .. }
            | Response::AnchorsSet { rev, .. }
            | Response::LambdaSet { rev, .. }
            | Response::ModeSet { rev, .. }
            | Response::Symmetry { rev, .. }
            | Response::Weights { rev, .. }
            | Response::Snapshot { rev, .. }
            | Response::Stats { rev, .. }
            | Response::Error { rev, .. } => *rev,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("responses serialize")
    }
}

pub const FRAME_HEADER: usize = 16;

pub fn encode_frame(rev: u64, vertices: &[Vec3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER + vertices.len() * 12);
    out.extend_from_slice(&rev.to_le_bytes());
    out.extend_from_slice(&(vertices.len() as u64).to_le_bytes());
    for v in vertices {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

/// Returns the revision and positions of a geometry frame.
pub fn decode_frame(bytes: &[u8]) -> Result<(u64, Vec<Vec3>), String> {
    if bytes.len() < FRAME_HEADER {
        return Err(format!("geometry frame of {} bytes is shorter than its header", bytes.len()));
    }
    let rev = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[FRAME_HEADER..];
    if body.len() != n.saturating_mul(12) {
        return Err(format!("geometry frame declares {n} vertices but carries {} bytes", body.len()));
    }
    let vertices = body
        .chunks_exact(12)
        .map(|c| {
            [
                f32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
                f32::from_le_bytes(c[8..12].try_into().unwrap()),
            ]
        })
        .collect();
    Ok((rev, vertices))
}
