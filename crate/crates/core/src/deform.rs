//! Posing: blending handle transforms per vertex.
//!
//! Three blend modes are offered. `Literal` is `V' = sum_k W_k D_k V`.
//! `Displacement` (the default) is `V' = V + sum_k W_k (D_k V - V)`, which
//! returns the rest pose exactly for identity transforms no matter what the
//! weights sum to. `Pou` adds a default transform `D_0` weighted by
//! `max(1 - sum_k W_k, 0)`.
//!
//! Positions are f32; accumulation is f64 per vertex.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DfdError, Result};
use crate::mesh::{Mesh, Vec3};
use crate::symmetry::{reflect_transform, SymmetryPlane};
use crate::weights::WeightMatrix;

/// Vertices per work unit; six f64 arrays of this length fit in L2.
const CHUNK: usize = 4096;

/// `x -> linear * x + translation`, in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub linear: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        linear: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    pub fn translation(t: [f64; 3]) -> Self {
        AffineTransform {
            translation: t,
            ..Self::IDENTITY
        }
    }

    /// Rows of the 3x4 matrix `[L | t]`.
    pub fn from_rows(m: &[f64]) -> Result<Self> {
        if m.len() != 12 {
            return Err(DfdError::invalid(format!("affine matrix needs 12 values, got {}", m.len())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(DfdError::invalid("affine matrix has non-finite entries"));
        }
        Ok(AffineTransform {
            linear: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            translation: [m[3], m[7], m[11]],
        })
    }

    pub fn to_rows(&self) -> [f64; 12] {
        let l = &self.linear;
        let t = &self.translation;
        [
            l[0][0], l[0][1], l[0][2], t[0], l[1][0], l[1][1], l[1][2], t[1], l[2][0], l[2][1], l[2][2], t[2],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_rows().iter().all(|v| v.is_finite())
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let l = &self.linear;
        let mut out = self.translation;
        for (r, o) in out.iter_mut().enumerate() {
            *o += l[r][0] * p[0] + l[r][1] * p[1] + l[r][2] * p[2];
        }
        out
    }

    /// `self after other`.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let mut linear = [[0.0; 3]; 3];
        for (r, row) in linear.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.linear[r][k] * other.linear[k][c]).sum();
            }
        }
        AffineTransform {
            linear,
            translation: self.apply(other.translation),
        }
    }

    fn lerp(&self, other: &AffineTransform, a: f64, b: f64) -> AffineTransform {
        let x = self.to_rows();
        let y = other.to_rows();
        let mut m = [0.0; 12];
        for i in 0..12 {
            m[i] = a * x[i] + b * y[i];
        }
        AffineTransform::from_rows(&m).expect("finite blend")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Handle {
    pub vertex: u32,
    pub transform: AffineTransform,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HandleSet {
    pub handles: Vec<Handle>,
    /// `D_0` for the partition-of-unity mode.
    #[serde(default)]
    pub default_transform: AffineTransform,
}

impl HandleSet {
    pub fn new(handles: Vec<Handle>) -> Self {
        HandleSet {
            handles,
            default_transform: AffineTransform::IDENTITY,
        }
    }

    pub fn vertices(&self) -> Vec<u32> {
        self.handles.iter().map(|h| h.vertex).collect()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for h in &self.handles {
            if h.vertex as usize >= n {
                return Err(DfdError::IndexOutOfRange {
                    what: "handle vertex",
                    index: h.vertex as usize,
                    len: n,
                });
            }
            if !h.transform.is_finite() {
                return Err(DfdError::invalid(format!("handle at vertex {} has a non-finite transform", h.vertex)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendMode {
    Literal,
    #[default]
    Displacement,
    Pou,
}

impl FromStr for BlendMode {
    type Err = DfdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(BlendMode::Literal),
            "displacement" => Ok(BlendMode::Displacement),
            "pou" => Ok(BlendMode::Pou),
            _ => Err(DfdError::invalid(format!(
                "unknown blend mode '{s}' (literal|displacement|pou)"
            ))),
        }
    }
}

impl std::fmt::Display for BlendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlendMode::Literal => "literal",
            BlendMode::Displacement => "displacement",
            BlendMode::Pou => "pou",
        })
    }
}

/// Rest positions split into f64 coordinate arrays, built once per mesh.
#[derive(Debug, Clone)]
pub struct RestPose {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl RestPose {
    pub fn new(vertices: &[Vec3]) -> Self {
        RestPose {
            x: vertices.iter().map(|v| v[0] as f64).collect(),
            y: vertices.iter().map(|v| v[1] as f64).collect(),
            z: vertices.iter().map(|v| v[2] as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Per-vertex side of a symmetry plane: +1, -1 or 0 when on the plane.
pub fn vertex_sides(plane: &SymmetryPlane, rest: &RestPose, tol: f64) -> Vec<f64> {
    (0..rest.len())
        .map(|i| plane.side([rest.x[i], rest.y[i], rest.z[i]], tol) as f64)
        .collect()
}

/// What the kernel applies for one handle: `C v + sigma_i (E v)` with
/// `sigma_i` the vertex side (only when posing symmetrically).
struct Effective {
    c: [f64; 12],
    e: Option<[f64; 12]>,
}

fn check_bound(weights: &WeightMatrix, handles: &HandleSet, n: usize) -> Result<()> {
    if weights.n != n {
        return Err(DfdError::invalid(format!(
            "weights bound for {} vertices, mesh has {n}",
            weights.n
        )));
    }
    if weights.handles != handles.vertices() {
        return Err(DfdError::invalid(
            "weights were bound for a different handle set",
        ));
    }
    handles.validate(n)
}

pub fn pose(mesh: &Mesh, weights: &WeightMatrix, handles: &HandleSet, mode: BlendMode) -> Result<Vec<Vec3>> {
    pose_rest(&RestPose::new(&mesh.vertices), weights, handles, mode)
}

pub fn pose_rest(rest: &RestPose, weights: &WeightMatrix, handles: &HandleSet, mode: BlendMode) -> Result<Vec<Vec3>> {
    check_bound(weights, handles, rest.len())?;
    let rows: Vec<&[f32]> = weights.rows.iter().map(|r| r.as_slice()).collect();
    let transforms: Vec<AffineTransform> = handles.handles.iter().map(|h| h.transform).collect();
    pose_rows(&PoseRequest {
        rest,
        rows: &rows,
        transforms: &transforms,
        handle_vertices: &weights.handles,
        default_transform: handles.default_transform,
        mode,
        symmetry: None,
    })
}

/// Posing with mirrored transforms for handles on the far side of `plane`.
///
/// For vertex `i`, a handle on the same side applies `D_k`; one on the other
/// side applies `R D_k R`. Handles or vertices lying on the plane use the
/// average of the two, which keeps the result continuous as a handle
/// crosses the plane.
pub fn pose_symmetric(
    mesh: &Mesh,
    weights: &WeightMatrix,
    handles: &HandleSet,
    plane: &SymmetryPlane,
    mode: BlendMode,
    force: bool,
) -> Result<Vec<Vec3>> {
    let rest = RestPose::new(&mesh.vertices);
    let tol = crate::symmetry::plane_tolerance(mesh);
    let sides = vertex_sides(plane, &rest, tol);
    pose_symmetric_rest(&rest, &sides, weights, handles, plane, mode, force)
}

pub fn pose_symmetric_rest(
    rest: &RestPose,
    sides: &[f64],
    weights: &WeightMatrix,
    handles: &HandleSet,
    plane: &SymmetryPlane,
    mode: BlendMode,
    force: bool,
) -> Result<Vec<Vec3>> {
    if !plane.accepted && !force {
        return Err(DfdError::invalid(format!(
            "symmetry plane not accepted (score {:.4})",
            plane.score
        )));
    }
    check_bound(weights, handles, rest.len())?;
    let rows: Vec<&[f32]> = weights.rows.iter().map(|r| r.as_slice()).collect();
    let transforms: Vec<AffineTransform> = handles.handles.iter().map(|h| h.transform).collect();
    pose_rows(&PoseRequest {
        rest,
        rows: &rows,
        transforms: &transforms,
        handle_vertices: &weights.handles,
        default_transform: handles.default_transform,
        mode,
        symmetry: Some((plane, sides)),
    })
}

/// Everything one pose needs, with weight rows borrowed.
#[derive(Debug, Clone, Copy)]
pub struct PoseRequest<'a> {
    pub rest: &'a RestPose,
    pub rows: &'a [&'a [f32]],
    pub transforms: &'a [AffineTransform],
    pub handle_vertices: &'a [u32],
    pub default_transform: AffineTransform,
    pub mode: BlendMode,
    /// Plane plus the per-vertex sides from [`vertex_sides`].
    pub symmetry: Option<(&'a SymmetryPlane, &'a [f64])>,
}

/// The posing kernel behind every public entry point. Does not check plane
/// acceptance.
pub fn pose_rows(req: &PoseRequest) -> Result<Vec<Vec3>> {
    let n = req.rest.len();
    let k = req.rows.len();
    if req.transforms.len() != k || req.handle_vertices.len() != k {
        return Err(DfdError::invalid(format!(
            "{k} weight rows for {} transforms and {} handle vertices",
            req.transforms.len(),
            req.handle_vertices.len()
        )));
    }
    if let Some(r) = req.rows.iter().find(|r| r.len() != n) {
        return Err(DfdError::invalid(format!("weight row of length {} for {n} vertices", r.len())));
    }
    for (&v, t) in req.handle_vertices.iter().zip(req.transforms) {
        if v as usize >= n {
            return Err(DfdError::IndexOutOfRange {
                what: "handle vertex",
                index: v as usize,
                len: n,
            });
        }
        if !t.is_finite() {
            return Err(DfdError::invalid(format!("handle at vertex {v} has a non-finite transform")));
        }
    }
    let eff: Vec<Effective> = match req.symmetry {
        None => req
            .transforms
            .iter()
            .map(|t| Effective {
                c: t.to_rows(),
                e: None,
            })
            .collect(),
        Some((plane, sides)) => {
            if sides.len() != n {
                return Err(DfdError::invalid("side array does not match vertex count"));
            }
            req.transforms
                .iter()
                .zip(req.handle_vertices)
                .map(|(d, &v)| {
                    let s = sides[v as usize];
                    let r = reflect_transform(plane, d);
                    // alpha = (1 + sigma s) / 2 blend of D and R D R
                    Effective {
                        c: d.lerp(&r, 0.5, 0.5).to_rows(),
                        e: (s != 0.0).then(|| d.lerp(&r, 0.5 * s, -0.5 * s).to_rows()),
                    }
                })
                .collect()
        }
    };
    Ok(blend(
        req.rest,
        req.rows,
        &eff,
        req.default_transform,
        req.symmetry.map(|(_, s)| s),
        req.mode,
    ))
}

fn blend(
    rest: &RestPose,
    rows: &[&[f32]],
    eff: &[Effective],
    default: AffineTransform,
    sides: Option<&[f64]>,
    mode: BlendMode,
) -> Vec<Vec3> {
    let n = rest.len();
    let mut out = vec![[0f32; 3]; n];
    // Displacement accumulates (D - I) v + t; the others accumulate D v + t.
    let mut coeffs: Vec<([f64; 12], Option<[f64; 12]>)> = eff.iter().map(|e| (e.c, e.e)).collect();
    if mode == BlendMode::Displacement {
        for (c, _) in &mut coeffs {
            c[0] -= 1.0;
            c[5] -= 1.0;
            c[10] -= 1.0;
        }
    }
    let d0 = default.to_rows();
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, dst)| {
        let start = ci * CHUNK;
        let len = dst.len();
        let x = &rest.x[start..start + len];
        let y = &rest.y[start..start + len];
        let z = &rest.z[start..start + len];
        let mut ax = vec![0f64; len];
        let mut ay = vec![0f64; len];
        let mut az = vec![0f64; len];
        let mut wsum = if mode == BlendMode::Pou { vec![0f64; len] } else { Vec::new() };
        for (row, (c, e)) in rows.iter().zip(&coeffs) {
            let w = &row[start..start + len];
            if w.iter().all(|v| *v == 0.0) {
                continue;
            }
            accumulate(&mut ax, &mut ay, &mut az, x, y, z, w, c);
            if let (Some(e), Some(sides)) = (e, sides) {
                let s = &sides[start..start + len];
                accumulate_signed(&mut ax, &mut ay, &mut az, x, y, z, w, s, e);
            }
            if mode == BlendMode::Pou {
                for (t, wi) in wsum.iter_mut().zip(w) {
                    *t += *wi as f64;
                }
            }
        }
        match mode {
            BlendMode::Displacement => {
                for i in 0..len {
                    dst[i] = [(x[i] + ax[i]) as f32, (y[i] + ay[i]) as f32, (z[i] + az[i]) as f32];
                }
            }
            BlendMode::Literal => {
                for i in 0..len {
                    dst[i] = [ax[i] as f32, ay[i] as f32, az[i] as f32];
                }
            }
            BlendMode::Pou => {
                for i in 0..len {
                    let c0 = (1.0 - wsum[i]).max(0.0);
                    let p = [x[i], y[i], z[i]];
                    let q = [
                        d0[0] * p[0] + d0[1] * p[1] + d0[2] * p[2] + d0[3],
                        d0[4] * p[0] + d0[5] * p[1] + d0[6] * p[2] + d0[7],
                        d0[8] * p[0] + d0[9] * p[1] + d0[10] * p[2] + d0[11],
                    ];
                    dst[i] = [
                        (ax[i] + c0 * q[0]) as f32,
                        (ay[i] + c0 * q[1]) as f32,
                        (az[i] + c0 * q[2]) as f32,
                    ];
                }
            }
        }
    });
    out
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate(
    ax: &mut [f64],
    ay: &mut [f64],
    az: &mut [f64],
    x: &[f64],
    y: &[f64],
    z: &[f64],
    w: &[f32],
    m: &[f64; 12],
) {
    let len = ax.len();
    let (ax, ay, az) = (&mut ax[..len], &mut ay[..len], &mut az[..len]);
    let (x, y, z, w) = (&x[..len], &y[..len], &z[..len], &w[..len]);
    for i in 0..len {
        let wi = w[i] as f64;
        let (px, py, pz) = (x[i], y[i], z[i]);
        ax[i] += wi * (m[0] * px + m[1] * py + m[2] * pz + m[3]);
        ay[i] += wi * (m[4] * px + m[5] * py + m[6] * pz + m[7]);
        az[i] += wi * (m[8] * px + m[9] * py + m[10] * pz + m[11]);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_signed(
    ax: &mut [f64],
    ay: &mut [f64],
    az: &mut [f64],
    x: &[f64],
    y: &[f64],
    z: &[f64],
    w: &[f32],
    s: &[f64],
    m: &[f64; 12],
) {
    let len = ax.len();
    let (ax, ay, az) = (&mut ax[..len], &mut ay[..len], &mut az[..len]);
    let (x, y, z, w, s) = (&x[..len], &y[..len], &z[..len], &w[..len], &s[..len]);
    for i in 0..len {
        let wi = w[i] as f64 * s[i];
        let (px, py, pz) = (x[i], y[i], z[i]);
        ax[i] += wi * (m[0] * px + m[1] * py + m[2] * pz + m[3]);
        ay[i] += wi * (m[4] * px + m[5] * py + m[6] * pz + m[7]);
        az[i] += wi * (m[8] * px + m[9] * py + m[10] * pz + m[11]);
    }
}
