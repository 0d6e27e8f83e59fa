//! Handle weights from feature proximity.
//!
//! The weight of vertex `i` for a handle at vertex `j` is
//! `max(1 - |Z_i - Z_j|, 0)` on unit-norm features. Only the K handle rows
//! of the conceptual n x n matrix are ever stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DfdError, Result};
use crate::field::FeatureField;
use crate::geodesic::GeodesicRow;
use crate::mesh::Mesh;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DFWT";
pub const WEIGHTS_VERSION: u32 = 1;
/// Vertices per cache block in the binding kernel.
const BLOCK: usize = 1024;
const UNIT_TOL: f32 = 1e-4;

/// Per-vertex unit-norm features `Z`, `n x C`.
///
/// Kept twice: row-major for per-vertex lookups, and as blocks of `BLOCK`
/// vertices stored channel-major so the distance kernels stream
/// contiguous columns.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexFeatures {
    channels: usize,
    data: Vec<f32>,
    blocks: Vec<f32>,
}

impl VertexFeatures {
    pub fn new(channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || !data.len().is_multiple_of(channels) {
            return Err(DfdError::invalid(format!(
                "{} values do not form rows of {channels} channels",
                data.len()
            )));
        }
        if let Some(i) = data.chunks(channels).position(|r| {
            let n = r.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
            !((n as f32 - 1.0).abs() <= UNIT_TOL)
        }) {
            return Err(DfdError::invalid(format!("feature row {i} is not unit norm")));
        }
        Ok(Self::from_rows_unchecked(channels, data))
    }

    fn from_rows_unchecked(channels: usize, data: Vec<f32>) -> Self {
        let mut blocks = vec![0f32; data.len()];
        blocks
            .par_chunks_mut(BLOCK * channels)
            .zip(data.par_chunks(BLOCK * channels))
            .for_each(|(dst, src)| {
                let len = src.len() / channels;
                for (i, row) in src.chunks_exact(channels).enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        dst[c * len + i] = *v;
                    }
                }
            });
        VertexFeatures {
            channels,
            data,
            blocks,
        }
    }

    /// `Z = phi(V)`; the field output is unit norm by construction.
    pub fn from_field(field: &FeatureField, mesh: &Mesh) -> Self {
        Self::from_rows_unchecked(field.channels(), field.eval(&mesh.vertices))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn as_rows(&self) -> &[f32] {
        &self.data
    }

    fn block_count(&self) -> usize {
        self.len().div_ceil(BLOCK)
    }

    /// Channel-major block `b` and its vertex count.
    fn block(&self, b: usize) -> (&[f32], usize) {
        let c = self.channels;
        let start = b * BLOCK * c;
        let end = ((b + 1) * BLOCK * c).min(self.blocks.len());
        (&self.blocks[start..end], (end - start) / c)
    }
}

/// Squared feature distances from one handle to every vertex of a block.
#[inline]
fn block_sq_dist(cols: &[f32], len: usize, h: &[f32], acc: &mut [f64]) {
    let acc = &mut acc[..len];
    acc.fill(0.0);
    for (c, &hc) in h.iter().enumerate() {
        let col = &cols[c * len..(c + 1) * len];
        for (a, z) in acc.iter_mut().zip(col) {
            let d = (*z - hc) as f64;
            *a += d * d;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub handles: Vec<u32>,
    pub n: usize,
    /// One length-n row per handle.
    pub rows: Vec<Vec<f32>>,
    pub anchors_applied: bool,
    pub lambda: f32,
}

impl WeightMatrix {
    pub fn empty(n: usize) -> Self {
        WeightMatrix {
            handles: Vec::new(),
            n,
            rows: Vec::new(),
            anchors_applied: false,
            lambda: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    /// `sum_k W_ki` per vertex.
    pub fn totals(&self) -> Vec<f64> {
        let mut t = vec![0f64; self.n];
        for r in &self.rows {
            for (a, w) in t.iter_mut().zip(r) {
                *a += *w as f64;
            }
        }
        t
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(self.handles.len() as u32).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        for h in &self.handles {
            w.write_all(&h.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.n * 4);
        for r in &self.rows {
            buf.clear();
            for v in r {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 20];
        r.read_exact(&mut head)
            .map_err(|_| DfdError::Format("weights file truncated".into()))?;
        if &head[..4] != WEIGHTS_MAGIC {
            return Err(DfdError::Format("not a weights file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != WEIGHTS_VERSION {
            return Err(DfdError::Version {
                found: version,
                expected: WEIGHTS_VERSION,
            });
        }
        let k = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(head[12..20].try_into().unwrap()) as usize;
        let mut ids = vec![0u8; k * 4];
        r.read_exact(&mut ids)
            .map_err(|_| DfdError::Format("weights file truncated".into()))?;
        let handles: Vec<u32> = ids
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mut rows = Vec::with_capacity(k);
        let mut bytes = vec![0u8; n * 4];
        for _ in 0..k {
            r.read_exact(&mut bytes)
                .map_err(|_| DfdError::Format("weights file truncated".into()))?;
            rows.push(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            );
        }
        Ok(WeightMatrix {
            handles,
            n,
            rows,
            anchors_applied: false,
            lambda: 0.0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| DfdError::io(path, e))?;
        self.write(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| DfdError::io(path, e))?;
        Self::read(BufReader::new(f))
    }
}

/// `1 - |a - b|`.
pub fn feature_distance(a: &[f32], b: &[f32]) -> f32 {
    (1.0 - sq_dist(a, b).sqrt()) as f32
}

/// Squared distance with double accumulation over eight lanes.
#[inline]
fn sq_dist(a: &[f32], h: &[f32]) -> f64 {
    let mut acc = [0f64; 8];
    let ca = a.chunks_exact(8);
    let ch = h.chunks_exact(8);
    let (ra, rh) = (ca.remainder(), ch.remainder());
    for (x, y) in ca.zip(ch) {
        for l in 0..8 {
            let d = x[l] as f64 - y[l] as f64;
            acc[l] += d * d;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rh) {
        let d = *x as f64 - *y as f64;
        tail += d * d;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Counts how much work a bind did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BindStats {
    pub distance_evaluations: u64,
}

pub fn bind(features: &VertexFeatures, handles: &[u32]) -> Result<WeightMatrix> {
    Ok(bind_with_stats(features, handles)?.0)
}

/// Binds one row per handle. Vertices are processed in cache-sized blocks
/// so each block of features is read once for all handles.
pub fn bind_with_stats(features: &VertexFeatures, handles: &[u32]) -> Result<(WeightMatrix, BindStats)> {
    let n = features.len();
    for &h in handles {
        if h as usize >= n {
            return Err(DfdError::IndexOutOfRange {
                what: "handle vertex",
                index: h as usize,
                len: n,
            });
        }
    }
    let handle_feats: Vec<&[f32]> = handles.iter().map(|&h| features.row(h as usize)).collect();
    let mut rows: Vec<Vec<f32>> = vec![vec![0f32; n]; handles.len()];
    let mut per_block: Vec<Vec<&mut [f32]>> = (0..features.block_count())
        .map(|_| Vec::with_capacity(handles.len()))
        .collect();
    for row in rows.iter_mut() {
        for (b, sl) in row.chunks_mut(BLOCK).enumerate() {
            per_block[b].push(sl);
        }
    }
    let evals: u64 = per_block
        .into_par_iter()
        .enumerate()
        .map(|(b, mut outs)| {
            let (cols, len) = features.block(b);
            let mut acc = vec![0f64; len];
            let mut count = 0u64;
            for (out, hf) in outs.iter_mut().zip(&handle_feats) {
                block_sq_dist(cols, len, hf, &mut acc);
                for (w, a) in out.iter_mut().zip(&acc) {
                    *w = (1.0 - a.sqrt()).max(0.0) as f32;
                }
                count += len as u64;
            }
            count
        })
        .sum();
    Ok((
        WeightMatrix {
            handles: handles.to_vec(),
            n,
            rows,
            anchors_applied: false,
            lambda: 0.0,
        },
        BindStats {
            distance_evaluations: evals,
        },
    ))
}

/// Binds a single extra row without touching existing ones.
pub fn bind_row(features: &VertexFeatures, handle: u32) -> Result<Vec<f32>> {
    Ok(bind(features, &[handle])?.rows.pop().unwrap_or_default())
}

/// Per vertex, the strongest proximity weight to any anchor.
pub fn anchor_suppression(features: &VertexFeatures, anchors: &[u32]) -> Result<Vec<f32>> {
    let n = features.len();
    for &a in anchors {
        if a as usize >= n {
            return Err(DfdError::IndexOutOfRange {
                what: "anchor vertex",
                index: a as usize,
                len: n,
            });
        }
    }
    let anchor_feats: Vec<&[f32]> = anchors.iter().map(|&a| features.row(a as usize)).collect();
    let mut out = vec![0f32; n];
    out.par_chunks_mut(BLOCK).enumerate().for_each(|(b, dst)| {
        let (cols, len) = features.block(b);
        let mut acc = vec![0f64; len];
        let mut best = vec![0f64; len];
        for af in &anchor_feats {
            block_sq_dist(cols, len, af, &mut acc);
            for (m, a) in best.iter_mut().zip(&acc) {
                *m = m.max(1.0 - a.sqrt());
            }
        }
        for (d, m) in dst.iter_mut().zip(&best) {
            *d = *m as f32;
        }
    });
    Ok(out)
}

/// `W_ij <- max(W_ij - max_k W_ik, 0)` over anchor vertices `k`.
///
/// A one-shot update defined on the pre-anchor matrix: applying a second
/// anchor set to an already anchored matrix is not the same as applying the
/// union once.
pub fn apply_anchors(weights: &WeightMatrix, features: &VertexFeatures, anchors: &[u32]) -> Result<WeightMatrix> {
    if features.len() != weights.n {
        return Err(DfdError::invalid("features and weights disagree on vertex count"));
    }
    let mut out = weights.clone();
    if anchors.is_empty() {
        return Ok(out);
    }
    let sup = anchor_suppression(features, anchors)?;
    out.rows.par_iter_mut().for_each(|r| suppress_row(r, &sup));
    out.anchors_applied = true;
    Ok(out)
}

pub fn suppress_row(row: &mut [f32], suppression: &[f32]) {
    for (w, s) in row.iter_mut().zip(suppression) {
        *w = (*w - *s).max(0.0);
    }
}

/// `W'_ij = W_ij (1 - G_ij)^lambda`, one geodesic row per handle.
pub fn apply_locality(weights: &WeightMatrix, geodesics: &[GeodesicRow], lambda: f32) -> Result<WeightMatrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(DfdError::invalid(format!("locality exponent must be >= 0, got {lambda}")));
    }
    if geodesics.len() != weights.len() {
        return Err(DfdError::invalid(format!(
            "{} geodesic rows for {} handles",
            geodesics.len(),
            weights.len()
        )));
    }
    for (g, &h) in geodesics.iter().zip(&weights.handles) {
        if g.source != h || g.distances.len() != weights.n {
            return Err(DfdError::invalid(format!("geodesic row does not match handle {h}")));
        }
    }
    let mut out = weights.clone();
    out.lambda = lambda;
    if lambda == 0.0 {
        return Ok(out);
    }
    out.rows
        .par_iter_mut()
        .zip(geodesics)
        .for_each(|(r, g)| localize_row(r, &g.distances, lambda));
    Ok(out)
}

pub fn localize_row(row: &mut [f32], geodesic: &[f32], lambda: f32) {
    if lambda == 0.0 {
        return;
    }
    let l = lambda as f64;
    for (w, g) in row.iter_mut().zip(geodesic) {
        let base = (1.0 - *g as f64).clamp(0.0, 1.0);
        *w = (*w as f64 * base.powf(l)) as f32;
    }
}

/// Coefficient of the default transform: `max(1 - sum_k W_ki, 0)`.
pub fn pou_weights(weights: &WeightMatrix) -> Vec<f32> {
    weights
        .totals()
        .into_iter()
        .map(|t| (1.0 - t).max(0.0) as f32)
        .collect()
}
