//! Pinhole cameras and Fibonacci view sampling.

use serde::{Deserialize, Serialize};

use crate::error::{DfdError, Result};
use crate::mesh::Mesh;

/// Default vertical field of view, degrees.
pub const DEFAULT_FOV_DEG: f64 = 45.0;
/// Camera distance from the bounding-sphere center in bounding radii.
/// Must exceed `1 / sin(fov / 2)` (2.61 at 45 degrees) for the whole
/// sphere to project inside the frame.
pub const CAMERA_DISTANCE_FACTOR: f64 = 2.7;
pub const DEFAULT_RESOLUTION: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

/// Orthonormal camera frame: `right`, `up`, `forward`.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub origin: [f64; 3],
    pub right: [f64; 3],
    pub up: [f64; 3],
    pub forward: [f64; 3],
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(DfdError::invalid(format!("fov {} outside (0, 180)", self.fov_deg)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(DfdError::invalid("camera resolution must be at least 1x1"));
        }
        if !(self.near < self.far) || self.near <= 0.0 {
            return Err(DfdError::invalid("camera needs 0 < near < far"));
        }
        let f = sub(self.target, self.position);
        if dot(f, f) == 0.0 {
            return Err(DfdError::invalid("camera position equals its target"));
        }
        Ok(())
    }

    pub fn frame(&self) -> CameraFrame {
        let forward = normalize(sub(self.target, self.position));
        let mut up_hint = normalize(self.up);
        if dot(forward, up_hint).abs() > 0.999 {
            up_hint = if forward[2].abs() < 0.9 {
                [0.0, 0.0, 1.0]
            } else {
                [1.0, 0.0, 0.0]
            };
        }
        let right = normalize(cross(forward, up_hint));
        let up = cross(right, forward);
        let focal = 0.5 * self.height as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        CameraFrame {
            origin: self.position,
            right,
            up,
            forward,
            focal,
            cx: 0.5 * self.width as f64,
            cy: 0.5 * self.height as f64,
        }
    }
}

impl CameraFrame {
    /// Camera-space coordinates `(x right, y up, z forward)`.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let d = sub(p, self.origin);
        [dot(d, self.right), dot(d, self.up), dot(d, self.forward)]
    }

    /// Continuous pixel coordinates (x right, y down) and forward depth.
    pub fn project(&self, p: [f64; 3]) -> [f64; 3] {
        let c = self.to_camera(p);
        [
            self.cx + self.focal * c[0] / c[2],
            self.cy - self.focal * c[1] / c[2],
            c[2],
        ]
    }

    /// Unit world-space direction of the ray through pixel position `(px, py)`.
    pub fn ray_direction(&self, px: f64, py: f64) -> [f64; 3] {
        let x = (px - self.cx) / self.focal;
        let y = (self.cy - py) / self.focal;
        normalize([
            self.forward[0] + x * self.right[0] + y * self.up[0],
            self.forward[1] + x * self.right[1] + y * self.up[1],
            self.forward[2] + x * self.right[2] + y * self.up[2],
        ])
    }
}

/// Unit directions of an `n`-point Fibonacci spiral on the sphere.
pub fn fibonacci_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let theta = golden * i as f64;
            [r * theta.cos(), y, r * theta.sin()]
        })
        .collect()
}

/// `n` cameras on a Fibonacci spiral around the mesh, all looking at its
/// bounding-sphere center.
pub fn fibonacci_cameras(n: usize, mesh: &Mesh, resolution: u32) -> Result<Vec<Camera>> {
    if n == 0 {
        return Err(DfdError::invalid("need at least one view"));
    }
    let (center, radius) = mesh.bounding_sphere();
    if !(radius > 0.0) {
        return Err(DfdError::Degenerate("all mesh vertices coincide".into()));
    }
    let dist = CAMERA_DISTANCE_FACTOR * radius;
    Ok(fibonacci_directions(n)
        .into_iter()
        .map(|d| Camera {
            position: [
                center[0] + dist * d[0],
                center[1] + dist * d[1],
                center[2] + dist * d[2],
            ],
            target: center,
            up: [0.0, 1.0, 0.0],
            fov_deg: DEFAULT_FOV_DEG,
            width: resolution,
            height: resolution,
            near: 0.01 * radius,
            far: dist + 2.0 * radius,
        })
        .collect())
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}
