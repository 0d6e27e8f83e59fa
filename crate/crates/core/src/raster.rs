//! Z-buffered triangle rasterization with perspective-correct barycentrics,
//! and the pixel-to-surface map built on top of it.
//!
//! Conventions: a pixel `(x, y)` is covered when its center
//! `(x + 0.5, y + 0.5)` lies inside (or on the edge of) a projected
//! triangle. The nearest depth wins and equal depths keep the lower face
//! index. Back faces are not culled. Zero-area projections cover nothing.
//! Triangles with a vertex in front of the near plane are skipped rather
//! than clipped.

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::camera::{cross, dot, normalize, sub, Camera};
use crate::mesh::Mesh;

pub const EMPTY: u32 = u32::MAX;
/// Relative depth band treated as a tie.
const DEPTH_TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RasterMap {
    pub width: u32,
    pub height: u32,
    /// Covering face per pixel, `EMPTY` where uncovered. Row-major, row 0 on top.
    pub face: Vec<u32>,
    pub bary: Vec<[f32; 3]>,
    /// Forward camera-space depth (`f32::INFINITY` where uncovered).
    pub depth: Vec<f32>,
}

impl RasterMap {
    pub fn covered(&self) -> usize {
        self.face.iter().filter(|&&f| f != EMPTY).count()
    }

    pub fn coverage(&self) -> f64 {
        self.covered() as f64 / self.face.len() as f64
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }
}

/// One supervised pixel: the 3D surface point under its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSample {
    pub view: u32,
    pub x: u32,
    pub y: u32,
    pub face: u32,
    pub bary: [f32; 3],
    pub point: [f32; 3],
}

pub fn rasterize(mesh: &Mesh, camera: &Camera) -> RasterMap {
    let (w, h) = (camera.width, camera.height);
    let npix = (w as usize) * (h as usize);
    let mut face = vec![EMPTY; npix];
    let mut bary = vec![[0f32; 3]; npix];
    let mut zbuf = vec![f64::INFINITY; npix];
    let frame = camera.frame();

    let projected: Vec<[f64; 3]> = mesh
        .vertices
        .iter()
        .map(|v| frame.project(v.map(|c| c as f64)))
        .collect();

    for (fi, f) in mesh.faces.iter().enumerate() {
        let p = f.map(|i| projected[i as usize]);
        if p.iter().any(|q| !(q[2] > camera.near) || !q[0].is_finite() || !q[1].is_finite()) {
            continue;
        }
        if p.iter().all(|q| q[2] > camera.far) {
            continue;
        }
        let area = edge(p[0], p[1], p[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        // pixel x covers centers x + 0.5 in [min_x, max_x]
        let x0 = ((min_x - 0.5).ceil().max(0.0)) as i64;
        let x1 = ((max_x - 0.5).floor().min(w as f64 - 1.0)) as i64;
        let y0 = ((min_y - 0.5).ceil().max(0.0)) as i64;
        let y1 = ((max_y - 0.5).floor().min(h as f64 - 1.0)) as i64;
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let inv_area = 1.0 / area;
        let inv_z = [1.0 / p[0][2], 1.0 / p[1][2], 1.0 / p[2][2]];
        for y in y0..=y1 {
            let cy = y as f64 + 0.5;
            for x in x0..=x1 {
                let c = [x as f64 + 0.5, cy, 0.0];
                let l0 = edge(p[1], p[2], c) * inv_area;
                let l1 = edge(p[2], p[0], c) * inv_area;
                let l2 = edge(p[0], p[1], c) * inv_area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let q0 = l0 * inv_z[0];
                let q1 = l1 * inv_z[1];
                let q2 = l2 * inv_z[2];
                let s = q0 + q1 + q2;
                let depth = 1.0 / s;
                if depth < camera.near || depth > camera.far {
                    continue;
                }
                let idx = y as usize * w as usize + x as usize;
                if depth < zbuf[idx] * (1.0 - DEPTH_TIE) {
                    zbuf[idx] = depth;
                    face[idx] = fi as u32;
                    bary[idx] = [(q0 / s) as f32, (q1 / s) as f32, (q2 / s) as f32];
                }
            }
        }
    }
    RasterMap {
        width: w,
        height: h,
        face,
        bary,
        depth: zbuf.iter().map(|&d| d as f32).collect(),
    }
}

/// Signed doubled area of `(a, b, c)` in pixel space.
#[inline]
fn edge(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// One sample per covered pixel with `P = B · T`: the barycentric blend of
/// the covering face's vertex positions.
pub fn surface_points(raster: &RasterMap, mesh: &Mesh, view: u32) -> Vec<RenderSample> {
    let mut out = Vec::with_capacity(raster.covered());
    for y in 0..raster.height {
        for x in 0..raster.width {
            let idx = raster.index(x, y);
            let f = raster.face[idx];
            if f == EMPTY {
                continue;
            }
            let b = raster.bary[idx];
            out.push(RenderSample {
                view,
                x,
                y,
                face: f,
                bary: b,
                point: blend_point(mesh, f, b),
            });
        }
    }
    out
}

pub fn blend_point(mesh: &Mesh, face: u32, b: [f32; 3]) -> [f32; 3] {
    let t = mesh.faces[face as usize].map(|i| mesh.vertices[i as usize]);
    let mut p = [0f64; 3];
    for k in 0..3 {
        for (a, pa) in p.iter_mut().enumerate() {
            *pa += b[k] as f64 * t[k][a] as f64;
        }
    }
    p.map(|c| c as f32)
}

/// Rasterizes every view in parallel. Output order follows `cameras`.
/// Vertex-only samples for the ablation: every vertex that passes the depth
/// test lands on its containing pixel, one vertex per pixel (lowest index
/// wins). The sample point is the vertex itself.
pub fn vertex_samples(mesh: &Mesh, cameras: &[Camera], rasters: &[RasterMap]) -> Vec<RenderSample> {
    let (_, radius) = mesh.bounding_sphere();
    let tol = 1e-2 * radius;
    let mut out = Vec::new();
    for (view, (cam, r)) in cameras.iter().zip(rasters).enumerate() {
        let fr = cam.frame();
        let mut taken = vec![false; r.face.len()];
        for v in &mesh.vertices {
            let p = fr.project(v.map(|c| c as f64));
            if !(p[2] > cam.near) || p[0] < 0.0 || p[1] < 0.0 {
                continue;
            }
            let (x, y) = (p[0].floor() as u64, p[1].floor() as u64);
            if x >= r.width as u64 || y >= r.height as u64 {
                continue;
            }
            let idx = r.index(x as u32, y as u32);
            if taken[idx] || r.face[idx] == EMPTY || p[2] > r.depth[idx] as f64 + tol {
                continue;
            }
            taken[idx] = true;
            out.push(RenderSample {
                view: view as u32,
                x: x as u32,
                y: y as u32,
                face: r.face[idx],
                bary: r.bary[idx],
                point: *v,
            });
        }
    }
    out
}

pub fn rasterize_views(mesh: &Mesh, cameras: &[Camera]) -> Vec<RasterMap> {
    cameras.par_iter().map(|c| rasterize(mesh, c)).collect()
}

/// Flat-shaded RGB image of a raster for the external feature extractor.
/// Three fixed directional lights in camera space over a white background.
pub fn shade(raster: &RasterMap, mesh: &Mesh, camera: &Camera) -> RgbImage {
    let frame = camera.frame();
    let lights = [
        (normalize([0.4, 0.6, -1.0]), 0.65),
        (normalize([-0.7, 0.2, -0.5]), 0.25),
        (normalize([0.0, -0.8, -0.3]), 0.15),
    ];
    let normals: Vec<[f64; 3]> = mesh
        .faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| mesh.vertices[i as usize].map(|x| x as f64));
            let n = cross(sub(b, a), sub(c, a));
            let l = dot(n, n).sqrt();
            if l > 0.0 {
                let n = [n[0] / l, n[1] / l, n[2] / l];
                [dot(n, frame.right), dot(n, frame.up), dot(n, frame.forward)]
            } else {
                [0.0, 0.0, -1.0]
            }
        })
        .collect();
    RgbImage::from_fn(raster.width, raster.height, |x, y| {
        let f = raster.face[raster.index(x, y)];
        if f == EMPTY {
            return Rgb([255, 255, 255]);
        }
        let n = normals[f as usize];
        // two-sided lighting: face the normal toward the viewer
        let n = if n[2] > 0.0 { [-n[0], -n[1], -n[2]] } else { n };
        let mut intensity = 0.12;
        for (dir, power) in lights {
            intensity += power * (-dot(n, dir)).max(0.0);
        }
        let v = (intensity.min(1.0) * 235.0) as u8;
        Rgb([v, v, v])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::fibonacci_cameras;
    use crate::shapes;

    fn front_camera(res: u32) -> Camera {
        Camera {
            position: [0.0, 0.0, 3.0],
            target: [0.0, 0.0, 0.0],
            up: [0.0, 1.0, 0.0],
            fov_deg: 45.0,
            width: res,
            height: res,
            near: 0.1,
            far: 10.0,
        }
    }

    #[test]
    fn big_triangle_coverage_matches_projected_area() {
        let mesh = Mesh::new(
            vec![[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [-1.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let cam = front_camera(512);
        let r = rasterize(&mesh, &cam);
        // analytic: project the corners and take the polygon area
        let fr = cam.frame();
        let p: Vec<[f64; 3]> = mesh.vertices.iter().map(|v| fr.project(v.map(|c| c as f64))).collect();
        let area = 0.5 * edge(p[0], p[1], p[2]).abs();
        let expect = area / (512.0 * 512.0);
        assert!((r.coverage() - expect).abs() / expect < 0.01, "{} vs {expect}", r.coverage());
    }

    #[test]
    fn background_pixels_are_empty() {
        let mesh = shapes::icosphere(2);
        let cam = fibonacci_cameras(1, &mesh, 64).unwrap()[0];
        let r = rasterize(&mesh, &cam);
        assert_eq!(r.face[0], EMPTY);
        assert!(r.depth[0].is_infinite());
        let samples = surface_points(&r, &mesh, 0);
        assert_eq!(samples.len(), r.covered());
        assert!(samples.iter().all(|s| s.x != 0 || s.y != 0));
    }

    #[test]
    fn coplanar_stack_lower_index_wins() {
        let tri = vec![[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]];
        let mut verts = tri.clone();
        verts.extend(tri.iter().map(|v| [v[0] * 0.999, v[1] * 0.999, 0.0]));
        let mesh = Mesh::new(verts, vec![[3, 4, 5], [0, 1, 2], [0, 2, 1]]).unwrap();
        let r = rasterize(&mesh, &front_camera(64));
        assert!(r.covered() > 0);
        for &f in &r.face {
            assert!(f == EMPTY || f == 0, "face {f}");
        }
        // identical triangle listed twice: earliest wins everywhere
        let mesh = Mesh::new(tri.clone(), vec![[0, 1, 2], [0, 1, 2], [2, 1, 0]]).unwrap();
        let r = rasterize(&mesh, &front_camera(64));
        assert!(r.face.iter().all(|&f| f == EMPTY || f == 0));
    }

    #[test]
    fn vertex_and_centroid_barycentrics() {
        let mesh = shapes::icosphere(1);
        let f = 7;
        let p = blend_point(&mesh, f, [1.0, 0.0, 0.0]);
        assert_eq!(p, mesh.vertices[mesh.faces[f as usize][0] as usize]);
        let c = blend_point(&mesh, f, [1.0 / 3.0; 3]);
        let t = mesh.faces[f as usize].map(|i| mesh.vertices[i as usize]);
        for a in 0..3 {
            let expect = (t[0][a] + t[1][a] + t[2][a]) / 3.0;
            assert!((c[a] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn barycentrics_are_normalized() {
        let mesh = shapes::icosphere(3);
        for cam in fibonacci_cameras(5, &mesh, 96).unwrap() {
            let r = rasterize(&mesh, &cam);
            for (i, &f) in r.face.iter().enumerate() {
                if f != EMPTY {
                    let b = r.bary[i];
                    assert!(b.iter().all(|&c| c >= -1e-6));
                    assert!(((b[0] + b[1] + b[2]) - 1.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn points_lie_on_face_planes() {
        let mesh = shapes::l_shape(2);
        let diag = mesh.bounds().diagonal();
        for (v, cam) in fibonacci_cameras(4, &mesh, 80).unwrap().iter().enumerate() {
            let r = rasterize(&mesh, cam);
            for s in surface_points(&r, &mesh, v as u32) {
                let [a, b, c] = mesh.faces[s.face as usize].map(|i| mesh.vertices[i as usize].map(|x| x as f64));
                let n = normalize(cross(sub(b, a), sub(c, a)));
                let d = dot(sub(s.point.map(|x| x as f64), a), n).abs();
                assert!(d < 1e-6 * diag, "plane distance {d}");
            }
        }
    }

    #[test]
    fn coverage_invariant_under_refinement() {
        let coarse = shapes::grid(1, 1, 1.5);
        let fine = shapes::subdivide(&shapes::subdivide(&coarse));
        let cam = Camera {
            position: [0.3, 0.2, 3.0],
            ..front_camera(128)
        };
        let a = rasterize(&coarse, &cam).covered();
        let b = rasterize(&fine, &cam).covered();
        assert_eq!(a, b);
    }
}
