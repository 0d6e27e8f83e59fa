//! Procedural test shapes.

use std::collections::HashMap;

use crate::mesh::{Mesh, Vec3};

/// Unit icosphere with `20 * 4^subdivisions` faces.
pub fn icosphere(subdivisions: u32) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut verts: Vec<[f64; 3]> = raw.iter().map(|&v| normalize(v)).collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<[f64; 3]>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a as usize], verts[b as usize]);
                verts.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                verts.len() as u32 - 1
            })
        };
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    Mesh {
        vertices: verts.iter().map(|v| v.map(|c| c as f32)).collect(),
        faces,
        colors: None,
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Latitude/longitude unit sphere with `2 * segments * (rings - 1)` faces.
pub fn uv_sphere(segments: u32, rings: u32) -> Mesh {
    assert!(segments >= 3 && rings >= 2);
    let mut vertices = Vec::new();
    vertices.push([0.0, 1.0, 0.0]);
    for r in 1..rings {
        let phi = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let theta = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push([
                (phi.sin() * theta.cos()) as f32,
                phi.cos() as f32,
                (phi.sin() * theta.sin()) as f32,
            ]);
        }
    }
    vertices.push([0.0, -1.0, 0.0]);
    let south = vertices.len() as u32 - 1;
    let ring = |r: u32, s: u32| 1 + (r - 1) * segments + (s % segments);
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s + 1), ring(1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    for s in 0..segments {
        faces.push([south, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    Mesh {
        vertices,
        faces,
        colors: None,
    }
}

/// A UV sphere with roughly `target_faces` faces.
pub fn sphere_with_faces(target_faces: usize) -> Mesh {
    // faces = 2 * s * (r - 1) with s = 2r
    let r = ((target_faces as f64 / 4.0).sqrt().round() as u32).max(3);
    uv_sphere(2 * r, r + 1)
}

/// Flat `size x size` square in the z = 0 plane, split into `nx * ny` quads.
pub fn grid(nx: u32, ny: u32, size: f32) -> Mesh {
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                size * (i as f32 / nx as f32 - 0.5),
                size * (j as f32 / ny as f32 - 0.5),
                0.0,
            ]);
        }
    }
    let idx = |i: u32, j: u32| j * (nx + 1) + i;
    let mut faces = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh {
        vertices,
        faces,
        colors: None,
    }
}

/// Closed axis-aligned box with each side split into `n * n` quads.
pub fn subdivided_box(min: Vec3, max: Vec3, n: u32) -> Mesh {
    let mut mesh = Mesh::default();
    // (fixed axis, side, u axis, v axis)
    let sides = [
        (0, 0, 2, 1),
        (0, 1, 1, 2),
        (1, 0, 0, 2),
        (1, 1, 2, 0),
        (2, 0, 1, 0),
        (2, 1, 0, 1),
    ];
    for (axis, side, ua, va) in sides {
        let base = mesh.vertices.len() as u32;
        for j in 0..=n {
            for i in 0..=n {
                let mut p = [0f32; 3];
                p[axis] = if side == 0 { min[axis] } else { max[axis] };
                p[ua] = min[ua] + (max[ua] - min[ua]) * i as f32 / n as f32;
                p[va] = min[va] + (max[va] - min[va]) * j as f32 / n as f32;
                mesh.vertices.push(p);
            }
        }
        let idx = |i: u32, j: u32| base + j * (n + 1) + i;
        for j in 0..n {
            for i in 0..n {
                mesh.faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                mesh.faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
    }
    weld(&mesh)
}

/// Merges vertices with bitwise-identical positions.
pub fn weld(mesh: &Mesh) -> Mesh {
    let mut map: HashMap<[u32; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let remap: Vec<u32> = mesh
        .vertices
        .iter()
        .map(|v| {
            *map.entry(v.map(f32::to_bits)).or_insert_with(|| {
                vertices.push(*v);
                vertices.len() as u32 - 1
            })
        })
        .collect();
    Mesh {
        vertices,
        faces: mesh.faces.iter().map(|f| f.map(|i| remap[i as usize])).collect(),
        colors: None,
    }
}

/// Concatenates meshes without welding shared positions.
pub fn merge(meshes: &[Mesh]) -> Mesh {
    let mut out = Mesh::default();
    for m in meshes {
        let base = out.vertices.len() as u32;
        out.vertices.extend_from_slice(&m.vertices);
        out.faces
            .extend(m.faces.iter().map(|f| f.map(|i| i + base)));
    }
    out
}

/// An L made of two boxes: a long bar along +x and a post along +y at the
/// low-x end. Not mirror symmetric across its bounding-box x mid-plane.
pub fn l_shape(n: u32) -> Mesh {
    merge(&[
        subdivided_box([0.0, 0.0, 0.0], [2.0, 0.5, 0.5], n),
        subdivided_box([0.0, 0.5, 0.0], [0.5, 2.0, 0.5], n),
    ])
}

/// Two-part labeling of a mesh: part 1 where the face centroid has
/// `x >= split_x`, part 0 otherwise.
pub fn split_labels_x(mesh: &Mesh, split_x: f32) -> Vec<u32> {
    mesh.faces
        .iter()
        .map(|f| {
            let cx = f.iter().map(|&i| mesh.vertices[i as usize][0]).sum::<f32>() / 3.0;
            u32::from(cx >= split_x)
        })
        .collect()
}

/// Uniformly subdivides each triangle into four (no welding across faces
/// is needed since midpoints are shared through a map).
pub fn subdivide(mesh: &Mesh) -> Mesh {
    let mut verts = mesh.vertices.clone();
    let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
        *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
            let (p, q) = (verts[a as usize], verts[b as usize]);
            verts.push([
                0.5 * (p[0] + q[0]),
                0.5 * (p[1] + q[1]),
                0.5 * (p[2] + q[2]),
            ]);
            verts.len() as u32 - 1
        })
    };
    for f in &mesh.faces {
        let ab = midpoint(f[0], f[1], &mut verts);
        let bc = midpoint(f[1], f[2], &mut verts);
        let ca = midpoint(f[2], f[0], &mut verts);
        faces.push([f[0], ab, ca]);
        faces.push([f[1], bc, ab]);
        faces.push([f[2], ca, bc]);
        faces.push([ab, bc, ca]);
    }
    Mesh {
        vertices: verts,
        faces,
        colors: None,
    }
}
