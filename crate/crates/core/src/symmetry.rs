//! Semantic symmetry planes over a feature field.

use serde::{Deserialize, Serialize};

use crate::deform::AffineTransform;
use crate::error::{DfdError, Result};
use crate::field::FeatureField;
use crate::mesh::{Mesh, Vec3};

pub const DEFAULT_EPSILON: f64 = 0.1;
/// Vertices closer than this fraction of the bbox diagonal lie on a plane.
pub const ON_PLANE_FRACTION: f64 = 1e-9;

/// The plane `normal . x = offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryPlane {
    pub normal: [f64; 3],
    pub offset: f64,
    pub score: f64,
    pub accepted: bool,
}

impl SymmetryPlane {
    /// Unscored plane; `normal` need not be unit length.
    pub fn new(normal: [f64; 3], offset: f64) -> Self {
        let len = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
        SymmetryPlane {
            normal: normal.map(|c| c / len),
            offset: offset / len,
            score: f64::NAN,
            accepted: false,
        }
    }

    pub fn with_score(mut self, score: f64, epsilon: f64) -> Self {
        self.score = score;
        self.accepted = score < epsilon;
        self
    }

    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] - self.offset
    }

    /// +1, -1, or 0 within `tol` of the plane.
    pub fn side(&self, p: [f64; 3], tol: f64) -> i8 {
        let s = self.signed_distance(p);
        if s > tol {
            1
        } else if s < -tol {
            -1
        } else {
            0
        }
    }

    pub fn flipped(&self) -> Self {
        SymmetryPlane {
            normal: self.normal.map(|c| -c),
            offset: -self.offset,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let len = (self.normal.iter().map(|c| c * c).sum::<f64>()).sqrt();
        if !len.is_finite() || (len - 1.0).abs() > 1e-9 || !self.offset.is_finite() {
            return Err(DfdError::invalid("symmetry plane needs a finite unit normal"));
        }
        Ok(())
    }
}

/// Parses `nx,ny,nz,d`, or `x|y|z` (through the mesh bbox center) when a
/// center is supplied.
pub fn parse_plane(s: &str, center: [f64; 3]) -> Result<SymmetryPlane> {
    let axis = |a: usize| {
        let mut n = [0.0; 3];
        n[a] = 1.0;
        SymmetryPlane::new(n, center[a])
    };
    match s {
        "x" => return Ok(axis(0)),
        "y" => return Ok(axis(1)),
        "z" => return Ok(axis(2)),
        _ => {}
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| DfdError::invalid(format!("bad plane '{s}': expected x|y|z or nx,ny,nz,d")))?;
    if v.len() != 4 || v[..3].iter().all(|c| *c == 0.0) || v.iter().any(|c| !c.is_finite()) {
        return Err(DfdError::invalid(format!("bad plane '{s}': expected nx,ny,nz,d")));
    }
    Ok(SymmetryPlane::new([v[0], v[1], v[2]], v[3]))
}

pub fn reflect_point(plane: &SymmetryPlane, p: [f64; 3]) -> [f64; 3] {
    let s = 2.0 * plane.signed_distance(p);
    [
        p[0] - s * plane.normal[0],
        p[1] - s * plane.normal[1],
        p[2] - s * plane.normal[2],
    ]
}

/// `R D R`: reflect, apply `D`, reflect back.
pub fn reflect_transform(plane: &SymmetryPlane, d: &AffineTransform) -> AffineTransform {
    let n = plane.normal;
    let mut h = [[0.0; 3]; 3];
    for (r, row) in h.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = f64::from(u8::from(r == c)) - 2.0 * n[r] * n[c];
        }
    }
    let r = AffineTransform {
        linear: h,
        translation: n.map(|c| 2.0 * plane.offset * c),
    };
    r.compose(d).compose(&r)
}

/// Absolute on-plane tolerance for a mesh.
pub fn plane_tolerance(mesh: &Mesh) -> f64 {
    ON_PLANE_FRACTION * mesh.bounds().diagonal()
}

/// Mean over all vertices of `|phi(v) - phi(R v)|`, with on-plane vertices
/// contributing zero. `eval` maps points to row-major features.
pub fn plane_score(
    eval: impl Fn(&[Vec3]) -> Vec<f32>,
    channels: usize,
    mesh: &Mesh,
    plane: &SymmetryPlane,
) -> f64 {
    let n = mesh.vertex_count();
    if n == 0 {
        return 0.0;
    }
    let tol = plane_tolerance(mesh);
    let mut off = Vec::new();
    let mut mirrored = Vec::new();
    for v in &mesh.vertices {
        let p = v.map(|c| c as f64);
        if plane.side(p, tol) != 0 {
            off.push(*v);
            mirrored.push(reflect_point(plane, p).map(|c| c as f32));
        }
    }
    let a = eval(&off);
    let b = eval(&mirrored);
    let total: f64 = a
        .chunks(channels)
        .zip(b.chunks(channels))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| (*p as f64 - *q as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / n as f64
}

pub fn evaluate_plane(field: &FeatureField, mesh: &Mesh, plane: &SymmetryPlane, epsilon: f64) -> SymmetryPlane {
    let score = plane_score(|p| field.eval(p), field.channels(), mesh, plane);
    plane.with_score(score, epsilon)
}

/// The three axis planes through the bbox center, scored.
pub fn axis_planes(mesh: &Mesh) -> [SymmetryPlane; 3] {
    let c = mesh.bounds().center();
    [
        SymmetryPlane::new([1.0, 0.0, 0.0], c[0]),
        SymmetryPlane::new([0.0, 1.0, 0.0], c[1]),
        SymmetryPlane::new([0.0, 0.0, 1.0], c[2]),
    ]
}

pub fn detect_axis_symmetries(field: &FeatureField, mesh: &Mesh, epsilon: f64) -> Vec<SymmetryPlane> {
    axis_planes(mesh)
        .iter()
        .map(|p| evaluate_plane(field, mesh, p, epsilon))
        .collect()
}

/// Handle sides relative to each vertex. `omega(i)` gives the handles on
/// vertex `i`'s side, on the other side, and on the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct HandlePartition {
    pub vertex_side: Vec<i8>,
    pub handle_side: Vec<i8>,
}

impl HandlePartition {
    pub fn omega(&self, vertex: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let s = self.vertex_side[vertex];
        let (mut same, mut other, mut on) = (Vec::new(), Vec::new(), Vec::new());
        for (k, &h) in self.handle_side.iter().enumerate() {
            if h == 0 || s == 0 {
                on.push(k);
            } else if h == s {
                same.push(k);
            } else {
                other.push(k);
            }
        }
        (same, other, on)
    }
}

pub fn partition_handles(plane: &SymmetryPlane, mesh: &Mesh, handles: &[u32]) -> Result<HandlePartition> {
    let tol = plane_tolerance(mesh);
    let side = |v: &Vec3| plane.side(v.map(|c| c as f64), tol);
    let mut handle_side = Vec::with_capacity(handles.len());
    for &h in handles {
        let v = mesh.vertices.get(h as usize).ok_or(DfdError::IndexOutOfRange {
            what: "handle vertex",
            index: h as usize,
            len: mesh.vertex_count(),
        })?;
        handle_side.push(side(v));
    }
    Ok(HandlePartition {
        vertex_side: mesh.vertices.iter().map(side).collect(),
        handle_side,
    })
}
