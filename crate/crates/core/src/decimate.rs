//! Quadric-error edge-collapse simplification.
//!
//! Classic Garland–Heckbert collapses driven by a min-heap with lazy
//! invalidation. Face quadrics are area weighted; open boundary edges get
//! an extra perpendicular-plane quadric so borders do not erode. A collapse
//! is rejected if it flips a surrounding face or would pinch the surface
//! (more common neighbours than shared faces).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::mesh::{Mesh, Vec3};

const BOUNDARY_WEIGHT: f64 = 1.0e3;

/// Result of a decimation, with the source index of every surviving face.
#[derive(Debug, Clone)]
pub struct Decimated {
    pub mesh: Mesh,
    pub face_origin: Vec<u32>,
}

/// Simplifies `mesh` to at most `target_faces` faces when it has more.
/// Stops early if no legal collapse remains.
pub fn decimate_qem(mesh: &Mesh, target_faces: usize) -> Mesh {
    decimate_qem_tracked(mesh, target_faces).mesh
}

pub fn decimate_qem_tracked(mesh: &Mesh, target_faces: usize) -> Decimated {
    let target_faces = target_faces.max(4);
    if mesh.faces.len() <= target_faces {
        return Decimated {
            mesh: mesh.clone(),
            face_origin: (0..mesh.faces.len() as u32).collect(),
        };
    }
    let mut state = Collapser::new(mesh);
    state.run(target_faces);
    state.finish()
}

#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: [f64; 3], d: f64, w: f64) -> Self {
        let [a, b, c] = n;
        Quadric([
            w * a * a,
            w * a * b,
            w * a * c,
            w * a * d,
            w * b * b,
            w * b * c,
            w * b * d,
            w * c * c,
            w * c * d,
            w * d * d,
        ])
    }

    fn add(&mut self, o: &Quadric) {
        for (a, b) in self.0.iter_mut().zip(o.0.iter()) {
            *a += b;
        }
    }

    fn sum(a: &Quadric, b: &Quadric) -> Quadric {
        let mut q = *a;
        q.add(b);
        q
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        let q = &self.0;
        let [x, y, z] = p;
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    /// Minimizer of the quadric, if the 3x3 system is well conditioned.
    fn optimum(&self) -> Option<[f64; 3]> {
        let q = &self.0;
        let m = [[q[0], q[1], q[2]], [q[1], q[4], q[5]], [q[2], q[5], q[7]]];
        let rhs = [-q[3], -q[6], -q[8]];
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let scale = m[0][0].abs().max(m[1][1].abs()).max(m[2][2].abs());
        if scale == 0.0 || det.abs() <= 1e-9 * scale * scale * scale {
            return None;
        }
        let solve_col = |col: usize| {
            let mut mm = m;
            for r in 0..3 {
                mm[r][col] = rhs[r];
            }
            mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1])
                - mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0])
                + mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0])
        };
        Some([solve_col(0) / det, solve_col(1) / det, solve_col(2) / det])
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: u32,
    b: u32,
    stamp_a: u32,
    stamp_b: u32,
    target: [f64; 3],
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, deterministic tie-break on the edge
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

struct Collapser {
    pos: Vec<[f64; 3]>,
    quadrics: Vec<Quadric>,
    stamp: Vec<u32>,
    vertex_alive: Vec<bool>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<u32>>,
    live_faces: usize,
    heap: BinaryHeap<Candidate>,
    scratch_a: Vec<u32>,
    scratch_b: Vec<u32>,
}

impl Collapser {
    fn new(mesh: &Mesh) -> Self {
        let n = mesh.vertices.len();
        let pos: Vec<[f64; 3]> = mesh.vertices.iter().map(|v| v.map(|c| c as f64)).collect();
        let mut quadrics = vec![Quadric::default(); n];
        let mut vertex_faces: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (fi, f) in mesh.faces.iter().enumerate() {
            for &v in f {
                let list = &mut vertex_faces[v as usize];
                if list.last() != Some(&(fi as u32)) {
                    list.push(fi as u32);
                }
            }
            if let Some((normal, area)) = face_normal(&pos, f) {
                let d = -dot(normal, pos[f[0] as usize]);
                let q = Quadric::plane(normal, d, area);
                for &v in f {
                    quadrics[v as usize].add(&q);
                }
            }
        }

        // Boundary edges: those used by exactly one face.
        let mut directed: Vec<(u32, u32, u32)> = Vec::with_capacity(mesh.faces.len() * 3);
        for (fi, f) in mesh.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a != b {
                    directed.push((a.min(b), a.max(b), fi as u32));
                }
            }
        }
        directed.sort_unstable();
        let mut i = 0;
        while i < directed.len() {
            let mut j = i + 1;
            while j < directed.len() && directed[j].0 == directed[i].0 && directed[j].1 == directed[i].1 {
                j += 1;
            }
            if j - i == 1 {
                let (a, b, fi) = directed[i];
                let f = mesh.faces[fi as usize];
                if let Some((fnormal, _)) = face_normal(&pos, &f) {
                    let e = sub(pos[b as usize], pos[a as usize]);
                    let len2 = dot(e, e);
                    let bn = cross(e, fnormal);
                    let bl = dot(bn, bn).sqrt();
                    if bl > 0.0 {
                        let bn = [bn[0] / bl, bn[1] / bl, bn[2] / bl];
                        let d = -dot(bn, pos[a as usize]);
                        let q = Quadric::plane(bn, d, BOUNDARY_WEIGHT * len2);
                        quadrics[a as usize].add(&q);
                        quadrics[b as usize].add(&q);
                    }
                }
            }
            i = j;
        }

        let mut state = Collapser {
            pos,
            quadrics,
            stamp: vec![0; n],
            vertex_alive: vec![true; n],
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.faces.len()],
            vertex_faces,
            live_faces: mesh.faces.len(),
            heap: BinaryHeap::new(),
            scratch_a: Vec::new(),
            scratch_b: Vec::new(),
        };
        let mut k = 0;
        while k < directed.len() {
            let (a, b, _) = directed[k];
            state.push_candidate(a, b);
            while k < directed.len() && directed[k].0 == a && directed[k].1 == b {
                k += 1;
            }
        }
        state
    }

    fn push_candidate(&mut self, a: u32, b: u32) {
        let q = Quadric::sum(&self.quadrics[a as usize], &self.quadrics[b as usize]);
        let pa = self.pos[a as usize];
        let pb = self.pos[b as usize];
        let mid = [
            0.5 * (pa[0] + pb[0]),
            0.5 * (pa[1] + pb[1]),
            0.5 * (pa[2] + pb[2]),
        ];
        let edge_len = dot(sub(pa, pb), sub(pa, pb)).sqrt();
        let mut best = (q.eval(pa), pa);
        for p in [pb, mid] {
            let c = q.eval(p);
            if c < best.0 {
                best = (c, p);
            }
        }
        if let Some(opt) = q.optimum() {
            // Ill-posed optima can land far from the edge on flat regions.
            let off = sub(opt, mid);
            if dot(off, off).sqrt() <= 2.0 * edge_len {
                let c = q.eval(opt);
                if c <= best.0 {
                    best = (c, opt);
                }
            }
        }
        self.heap.push(Candidate {
            cost: best.0.max(0.0),
            a,
            b,
            stamp_a: self.stamp[a as usize],
            stamp_b: self.stamp[b as usize],
            target: best.1,
        });
    }

    fn run(&mut self, target_faces: usize) {
        while self.live_faces > target_faces {
            let Some(c) = self.heap.pop() else { break };
            let (a, b) = (c.a as usize, c.b as usize);
            if !self.vertex_alive[a]
                || !self.vertex_alive[b]
                || self.stamp[a] != c.stamp_a
                || self.stamp[b] != c.stamp_b
            {
                continue;
            }
            if self.is_legal(c.a, c.b, c.target) {
                self.collapse(c.a, c.b, c.target);
            }
        }
    }

    fn neighbors_into(&self, v: u32, out: &mut Vec<u32>) {
        out.clear();
        for &f in &self.vertex_faces[v as usize] {
            if !self.face_alive[f as usize] {
                continue;
            }
            for &w in &self.faces[f as usize] {
                if w != v {
                    out.push(w);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }

    fn is_legal(&mut self, a: u32, b: u32, target: [f64; 3]) -> bool {
        let mut na = std::mem::take(&mut self.scratch_a);
        let mut nb = std::mem::take(&mut self.scratch_b);
        self.neighbors_into(a, &mut na);
        self.neighbors_into(b, &mut nb);
        let common = {
            let (mut i, mut j, mut c) = (0, 0, 0);
            while i < na.len() && j < nb.len() {
                match na[i].cmp(&nb[j]) {
                    Ordering::Less => i += 1,
                    Ordering::Greater => j += 1,
                    Ordering::Equal => {
                        c += 1;
                        i += 1;
                        j += 1;
                    }
                }
            }
            c
        };
        self.scratch_a = na;
        self.scratch_b = nb;
        let shared = self.vertex_faces[a as usize]
            .iter()
            .filter(|&&f| self.face_alive[f as usize] && self.faces[f as usize].contains(&b))
            .count();
        if common > shared {
            return false;
        }
        for &v in &[a, b] {
            for &f in &self.vertex_faces[v as usize] {
                if !self.face_alive[f as usize] {
                    continue;
                }
                let face = self.faces[f as usize];
                if face.contains(&a) && face.contains(&b) {
                    continue;
                }
                let Some((before, _)) = face_normal(&self.pos, &face) else {
                    continue;
                };
                let moved = face.map(|w| {
                    if w == a || w == b {
                        target
                    } else {
                        self.pos[w as usize]
                    }
                });
                let n = cross(sub(moved[1], moved[0]), sub(moved[2], moved[0]));
                let len = dot(n, n).sqrt();
                if len == 0.0 || dot(n, before) / len < 0.05 {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, a: u32, b: u32, target: [f64; 3]) {
        let b_faces = std::mem::take(&mut self.vertex_faces[b as usize]);
        for &f in &b_faces {
            if !self.face_alive[f as usize] {
                continue;
            }
            let face = &mut self.faces[f as usize];
            if face.contains(&a) {
                self.face_alive[f as usize] = false;
                self.live_faces -= 1;
            } else {
                for w in face.iter_mut() {
                    if *w == b {
                        *w = a;
                    }
                }
                self.vertex_faces[a as usize].push(f);
            }
        }
        let face_alive = &self.face_alive;
        let list = &mut self.vertex_faces[a as usize];
        list.retain(|&f| face_alive[f as usize]);
        list.sort_unstable();
        list.dedup();

        self.pos[a as usize] = target;
        let qb = self.quadrics[b as usize];
        self.quadrics[a as usize].add(&qb);
        self.vertex_alive[b as usize] = false;
        self.stamp[a as usize] += 1;
        self.stamp[b as usize] += 1;

        let mut nbrs = std::mem::take(&mut self.scratch_a);
        self.neighbors_into(a, &mut nbrs);
        for &w in &nbrs {
            // neighbours' other edges carry a stale cost only through `a`
            self.push_candidate(a.min(w), a.max(w));
        }
        self.scratch_a = nbrs;
    }

    fn finish(self) -> Decimated {
        let mut remap = vec![u32::MAX; self.pos.len()];
        let mut vertices: Vec<Vec3> = Vec::new();
        let mut faces = Vec::with_capacity(self.live_faces);
        let mut face_origin = Vec::with_capacity(self.live_faces);
        for (fi, face) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            let mapped = face.map(|v| {
                let slot = &mut remap[v as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(self.pos[v as usize].map(|c| c as f32));
                }
                *slot
            });
            faces.push(mapped);
            face_origin.push(fi as u32);
        }
        Decimated {
            mesh: Mesh {
                vertices,
                faces,
                colors: None,
            },
            face_origin,
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Unit normal and area, or `None` for a zero-area face.
fn face_normal(pos: &[[f64; 3]], f: &[u32; 3]) -> Option<([f64; 3], f64)> {
    let (p0, p1, p2) = (pos[f[0] as usize], pos[f[1] as usize], pos[f[2] as usize]);
    let n = cross(sub(p1, p0), sub(p2, p0));
    let len = dot(n, n).sqrt();
    (len > 0.0).then(|| ([n[0] / len, n[1] / len, n[2] / len], 0.5 * len))
}
