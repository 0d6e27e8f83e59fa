//! Normalized geodesic distances.
//!
//! Distances are shortest paths over the mesh edge graph weighted by
//! Euclidean edge length. Every row is divided by its largest finite value,
//! and vertices that cannot be reached from the source get 1 so that
//! disconnected pieces count as maximally far.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{DfdError, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicRow {
    pub source: u32,
    pub distances: Vec<f32>,
}

/// Edge graph in compressed form, built once per mesh and shared by queries.
#[derive(Debug, Clone)]
pub struct EdgeGraph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    lengths: Vec<f64>,
}

impl EdgeGraph {
    pub fn new(mesh: &Mesh) -> Self {
        let (offsets, targets) = mesh.vertex_neighbors();
        let mut lengths = vec![0.0; targets.len()];
        for v in 0..mesh.vertices.len() {
            let p = mesh.vertices[v];
            for k in offsets[v]..offsets[v + 1] {
                let q = mesh.vertices[targets[k] as usize];
                let d = [
                    p[0] as f64 - q[0] as f64,
                    p[1] as f64 - q[1] as f64,
                    p[2] as f64 - q[2] as f64,
                ];
                lengths[k] = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            }
        }
        EdgeGraph {
            offsets,
            targets,
            lengths,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Raw (unnormalized) shortest-path lengths; `f64::INFINITY` when unreachable.
    pub fn shortest_paths(&self, source: u32) -> Result<Vec<f64>> {
        let n = self.vertex_count();
        if source as usize >= n {
            return Err(DfdError::IndexOutOfRange {
                what: "geodesic source",
                index: source as usize,
                len: n,
            });
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[source as usize] = 0.0;
        heap.push(Reverse((OrdF64(0.0), source)));
        while let Some(Reverse((OrdF64(d), v))) = heap.pop() {
            let v = v as usize;
            if d > dist[v] {
                continue;
            }
            for k in self.offsets[v]..self.offsets[v + 1] {
                let w = self.targets[k] as usize;
                let nd = d + self.lengths[k];
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(Reverse((OrdF64(nd), w as u32)));
                }
            }
        }
        Ok(dist)
    }

    pub fn geodesics_from(&self, source: u32) -> Result<GeodesicRow> {
        let raw = self.shortest_paths(source)?;
        let max = raw
            .iter()
            .copied()
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max);
        let distances = raw
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if i == source as usize {
                    0.0
                } else if !d.is_finite() || max == 0.0 {
                    1.0
                } else {
                    (d / max) as f32
                }
            })
            .collect();
        Ok(GeodesicRow { source, distances })
    }
}

pub fn geodesics_from(mesh: &Mesh, source: u32) -> Result<GeodesicRow> {
    EdgeGraph::new(mesh).geodesics_from(source)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
