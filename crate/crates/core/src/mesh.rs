//! Indexed triangle meshes and their file formats.
//!
//! Meshes are plain vertex/face arrays. Nothing here requires the surface to
//! be manifold, closed or connected: scanned shapes with holes, fins and
//! loose components load and flow through the rest of the pipeline.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{DfdError, Result};

pub type Vec3 = [f32; 3];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

/// Axis-aligned bounds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            faces,
            colors: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(DfdError::EmptyMesh);
        }
        let n = self.vertices.len();
        for f in &self.faces {
            for &i in f {
                if i as usize >= n {
                    return Err(DfdError::IndexOutOfRange {
                        what: "face vertex",
                        index: i as usize,
                        len: n,
                    });
                }
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(DfdError::invalid("vertex color count differs from vertex count"));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn bounds(&self) -> Aabb {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                min[a] = min[a].min(v[a] as f64);
                max[a] = max[a].max(v[a] as f64);
            }
        }
        Aabb { min, max }
    }

    /// Center of the bounding box and the radius of the smallest sphere about
    /// that center enclosing every vertex.
    pub fn bounding_sphere(&self) -> ([f64; 3], f64) {
        let c = self.bounds().center();
        let r = self
            .vertices
            .iter()
            .map(|v| {
                let d = [v[0] as f64 - c[0], v[1] as f64 - c[1], v[2] as f64 - c[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .fold(0.0, f64::max);
        (c, r)
    }

    /// Unique undirected edges as sorted `(lo, hi)` pairs.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut edges = Vec::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a != b {
                    edges.push((a.min(b), a.max(b)));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Compressed vertex adjacency: `offsets[i]..offsets[i+1]` indexes the
    /// neighbours of vertex `i` in the returned list.
    pub fn vertex_neighbors(&self) -> (Vec<usize>, Vec<u32>) {
        let n = self.vertices.len();
        let edges = self.edges();
        let mut degree = vec![0usize; n + 1];
        for &(a, b) in &edges {
            degree[a as usize + 1] += 1;
            degree[b as usize + 1] += 1;
        }
        for i in 0..n {
            degree[i + 1] += degree[i];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut adj = vec![0u32; offsets[n]];
        for &(a, b) in &edges {
            adj[fill[a as usize]] = b;
            fill[a as usize] += 1;
            adj[fill[b as usize]] = a;
            fill[b as usize] += 1;
        }
        (offsets, adj)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        let u = sub64(b, a);
        let v = sub64(c, a);
        0.5 * norm(cross(u, v))
    }
}

pub(crate) fn sub64(a: Vec3, b: Vec3) -> [f64; 3] {
    [
        a[0] as f64 - b[0] as f64,
        a[1] as f64 - b[1] as f64,
        a[2] as f64 - b[2] as f64,
    ]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Loads an OBJ or PLY file, chosen by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let file = File::open(path).map_err(|e| DfdError::io(path, e))?;
    let reader = BufReader::new(file);
    match ext.as_str() {
        "obj" => read_obj(reader),
        "ply" => read_ply(reader),
        other => Err(DfdError::Format(format!(
            "unsupported mesh extension {other:?} (expected .obj or .ply)"
        ))),
    }
}

pub fn read_obj<R: BufRead>(reader: R) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut faces = Vec::new();
    let mut poly: Vec<u32> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let vals: Vec<f32> = it
                    .map(|t| t.parse::<f32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| DfdError::Parse {
                        line: line_no,
                        msg: e.to_string(),
                    })?;
                if vals.len() < 3 {
                    return Err(DfdError::Parse {
                        line: line_no,
                        msg: "vertex needs three coordinates".into(),
                    });
                }
                vertices.push([vals[0], vals[1], vals[2]]);
                if vals.len() >= 6 {
                    colors.push([vals[3], vals[4], vals[5]].map(|c| {
                        let c = if c > 1.0 { c / 255.0 } else { c };
                        (c.clamp(0.0, 1.0) * 255.0).round() as u8
                    }));
                }
            }
            Some("f") => {
                poly.clear();
                for tok in it {
                    let idx = tok.split('/').next().unwrap_or("");
                    let i: i64 = idx.parse().map_err(|_| DfdError::Parse {
                        line: line_no,
                        msg: format!("bad face index {tok:?}"),
                    })?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(DfdError::Parse {
                            line: line_no,
                            msg: "face index 0 is invalid in OBJ".into(),
                        });
                    };
                    if resolved < 0 {
                        return Err(DfdError::IndexOutOfRange {
                            what: "face vertex",
                            index: 0,
                            len: vertices.len(),
                        });
                    }
                    poly.push(resolved as u32);
                }
                fan_triangulate(&poly, &mut faces);
            }
            _ => {}
        }
    }
    let colors = (!colors.is_empty() && colors.len() == vertices.len()).then_some(colors);
    let mesh = Mesh {
        vertices,
        faces,
        colors,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn fan_triangulate(poly: &[u32], out: &mut Vec<[u32; 3]>) {
    for k in 1..poly.len().saturating_sub(1) {
        out.push([poly[0], poly[k], poly[k + 1]]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => PlyScalar::I8,
            "uchar" | "uint8" => PlyScalar::U8,
            "short" | "int16" => PlyScalar::I16,
            "ushort" | "uint16" => PlyScalar::U16,
            "int" | "int32" => PlyScalar::I32,
            "uint" | "uint32" => PlyScalar::U32,
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyScalar::I8 | PlyScalar::U8 => 1,
            PlyScalar::I16 | PlyScalar::U16 => 2,
            PlyScalar::I32 | PlyScalar::U32 | PlyScalar::F32 => 4,
            PlyScalar::F64 => 8,
        }
    }

    fn read_le(self, buf: &[u8]) -> f64 {
        match self {
            PlyScalar::I8 => buf[0] as i8 as f64,
            PlyScalar::U8 => buf[0] as f64,
            PlyScalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            PlyScalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            PlyScalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            PlyScalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            PlyScalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            PlyScalar::F64 => f64::from_le_bytes(buf[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum PlyProperty {
    Scalar(String, PlyScalar),
    List(String, PlyScalar, PlyScalar),
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

#[derive(Debug, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

/// Reads binary little-endian (and ASCII) PLY. Only `vertex` positions,
/// optional `red/green/blue`, and `face` index lists are kept.
pub fn read_ply<R: BufRead>(mut reader: R) -> Result<Mesh> {
    let mut line = String::new();
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut first = true;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(DfdError::Format("PLY header not terminated".into()));
        }
        let t = line.trim();
        if first {
            if t != "ply" {
                return Err(DfdError::Format("missing 'ply' magic".into()));
            }
            first = false;
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", ..] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", ..] => format = Some(PlyFormat::BinaryLe),
            ["format", other, ..] => {
                return Err(DfdError::Format(format!("unsupported PLY format {other}")))
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| DfdError::Format(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| DfdError::Format("property before element".into()))?;
                let ct = PlyScalar::parse(ct)
                    .ok_or_else(|| DfdError::Format(format!("bad list count type {ct}")))?;
                let it = PlyScalar::parse(it)
                    .ok_or_else(|| DfdError::Format(format!("bad list item type {it}")))?;
                el.props.push(PlyProperty::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| DfdError::Format("property before element".into()))?;
                let ty = PlyScalar::parse(ty)
                    .ok_or_else(|| DfdError::Format(format!("bad property type {ty}")))?;
                el.props.push(PlyProperty::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let format = format.ok_or_else(|| DfdError::Format("PLY format line missing".into()))?;

    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    let mut poly = Vec::new();
    let mut ascii_tokens: Vec<String> = Vec::new();
    let mut ascii_pos = 0usize;
    if format == PlyFormat::Ascii {
        let mut rest = String::new();
        reader.read_to_string(&mut rest)?;
        ascii_tokens = rest.split_whitespace().map(str::to_owned).collect();
    }
    let mut scalar = |reader: &mut R, ty: PlyScalar| -> Result<f64> {
        match format {
            PlyFormat::BinaryLe => {
                let mut buf = [0u8; 8];
                reader
                    .read_exact(&mut buf[..ty.size()])
                    .map_err(|_| DfdError::Format("PLY body truncated".into()))?;
                Ok(ty.read_le(&buf))
            }
            PlyFormat::Ascii => {
                let tok = ascii_tokens
                    .get(ascii_pos)
                    .ok_or_else(|| DfdError::Format("PLY body truncated".into()))?;
                ascii_pos += 1;
                tok.parse::<f64>()
                    .map_err(|_| DfdError::Format(format!("bad PLY number {tok}")))
            }
        }
    };

    for el in &elements {
        for _ in 0..el.count {
            let mut pos = [0f32; 3];
            let mut rgb = [0u8; 3];
            let mut has_rgb = false;
            for p in &el.props {
                match p {
                    PlyProperty::Scalar(name, ty) => {
                        let v = scalar(&mut reader, *ty)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => pos[0] = v as f32,
                                "y" => pos[1] = v as f32,
                                "z" => pos[2] = v as f32,
                                "red" => {
                                    rgb[0] = v as u8;
                                    has_rgb = true
                                }
                                "green" => rgb[1] = v as u8,
                                "blue" => rgb[2] = v as u8,
                                _ => {}
                            }
                        }
                    }
                    PlyProperty::List(name, ct, it) => {
                        let count = scalar(&mut reader, *ct)? as usize;
                        poly.clear();
                        for _ in 0..count {
                            let v = scalar(&mut reader, *it)?;
                            if v < 0.0 {
                                return Err(DfdError::Format("negative PLY face index".into()));
                            }
                            poly.push(v as u32);
                        }
                        if el.name == "face"
                            && (name == "vertex_indices" || name == "vertex_index")
                        {
                            fan_triangulate(&poly, &mut faces);
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(pos);
                if has_rgb {
                    colors.push(rgb);
                }
            }
        }
    }
    let colors = (!colors.is_empty() && colors.len() == vertices.len()).then_some(colors);
    let mesh = Mesh {
        vertices,
        faces,
        colors,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Formats with nine significant digits, enough to round-trip any `f32`.
pub fn fmt_sig9(x: f32) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.8e}", x as f64);
    let (mant, exp) = s.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let mut f = format!("{:.*}", decimals, x as f64);
        if f.contains('.') {
            while f.ends_with('0') {
                f.pop();
            }
            if f.ends_with('.') {
                f.pop();
            }
        }
        f
    } else {
        let mut m = mant.to_string();
        if m.contains('.') {
            while m.ends_with('0') {
                m.pop();
            }
            if m.ends_with('.') {
                m.pop();
            }
        }
        format!("{m}e{exp}")
    }
}

pub fn write_obj<W: Write>(mut w: W, vertices: &[Vec3], faces: &[[u32; 3]]) -> std::io::Result<()> {
    for v in vertices {
        writeln!(w, "v {} {} {}", fmt_sig9(v[0]), fmt_sig9(v[1]), fmt_sig9(v[2]))?;
    }
    for f in faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()
}

pub fn save_obj(path: impl AsRef<Path>, vertices: &[Vec3], faces: &[[u32; 3]]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DfdError::io(path, e))?;
    write_obj(BufWriter::new(file), vertices, faces).map_err(|e| DfdError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obj(s: &str) -> Result<Mesh> {
        read_obj(s.as_bytes())
    }

    #[test]
    fn single_triangle_obj() {
        let m = obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let m = obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.vertex_count(), 4);
    }

    #[test]
    fn obj_slash_and_negative_indices() {
        let m = obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf -3/1 -2/1/1 -1//1\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn obj_out_of_range_and_empty() {
        assert!(matches!(
            obj("v 0 0 0\nf 1 2 3\n"),
            Err(DfdError::IndexOutOfRange { .. })
        ));
        assert!(matches!(obj("# nothing\n"), Err(DfdError::EmptyMesh)));
    }

    #[test]
    fn degenerate_faces_are_kept() {
        let m = obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.face_count(), 1);
        assert_eq!(m.face_area(0), 0.0);
    }

    fn ply_binary(nv: usize, faces: &[[u32; 3]]) -> Vec<u8> {
        let mut out = format!(
            "ply\nformat binary_little_endian 1.0\ncomment test\nelement vertex {nv}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            faces.len()
        )
        .into_bytes();
        for i in 0..nv {
            for c in [i as f32, 0.5 * i as f32, -(i as f32)] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        for f in faces {
            out.push(3);
            for &i in f {
                out.extend_from_slice(&(i as i32).to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn binary_ply_loads() {
        let bytes = ply_binary(4, &[[0, 1, 2], [1, 2, 3]]);
        let m = read_ply(&bytes[..]).unwrap();
        assert_eq!(m.vertex_count(), 4);
        assert_eq!(m.vertices[3], [3.0, 1.5, -3.0]);
        assert_eq!(m.faces, vec![[0, 1, 2], [1, 2, 3]]);
    }

    #[test]
    fn ply_index_out_of_range() {
        let bytes = ply_binary(10, &[[0, 1, 999]]);
        let err = read_ply(&bytes[..]).unwrap_err();
        assert!(err.to_string().contains("index out of range"), "{err}");
    }

    #[test]
    fn truncated_ply_errors() {
        let bytes = ply_binary(4, &[[0, 1, 2]]);
        assert!(read_ply(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn ascii_ply_with_colors() {
        let s = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n3 0 1 2\n";
        let m = read_ply(s.as_bytes()).unwrap();
        assert_eq!(m.colors.as_ref().unwrap()[1], [0, 255, 0]);
        assert_eq!(m.faces.len(), 1);
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(-0.5), "-0.5");
        let tiny = fmt_sig9(1.0e-7);
        assert!(tiny.contains('e'));
        assert_eq!(tiny.parse::<f32>().unwrap(), 1.0e-7);
    }

    proptest! {
        #[test]
        fn obj_write_read_roundtrips_f32(coords in proptest::collection::vec(-1.0e6f32..1.0e6, 9)) {
            let verts: Vec<Vec3> = coords.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let mut buf = Vec::new();
            write_obj(&mut buf, &verts, &[[0, 1, 2]]).unwrap();
            let m = read_obj(&buf[..]).unwrap();
            prop_assert_eq!(m.vertices, verts);
        }

        #[test]
        fn fan_triangulation_keeps_vertex_count(k in 3usize..12) {
            let mut s = String::new();
            for i in 0..k {
                let a = i as f32 / k as f32 * std::f32::consts::TAU;
                s.push_str(&format!("v {} {} 0\n", a.cos(), a.sin()));
            }
            s.push('f');
            for i in 0..k { s.push_str(&format!(" {}", i + 1)); }
            s.push('\n');
            let m = read_obj(s.as_bytes()).unwrap();
            prop_assert_eq!(m.vertex_count(), k);
            prop_assert_eq!(m.face_count(), k - 2);
        }
    }
}
