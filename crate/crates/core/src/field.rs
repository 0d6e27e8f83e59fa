//! The per-shape feature field: a 4-layer MLP mapping 3D points to
//! unit-norm feature vectors.
//!
//! Layout: `encode(p) -> [Linear -> LayerNorm -> ReLU] x 3 -> Linear ->
//! normalize`. Inputs are first mapped into the shape's unit frame
//! (bounding-box center, longest half extent), then optionally lifted with
//! `sin/cos(2^l * u)` Fourier features for `l < L`.
//!
//! The model is generic over the float type so that the analytic gradients
//! can be checked in `f64` while training runs in `f32`.

use std::fmt::Debug;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{DfdError, Result};
use crate::mesh::Aabb;

pub const FIELD_MAGIC: &[u8; 4] = b"DFDW";
pub const FIELD_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_BANDS: u32 = 6;
const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;
/// Rows per forward pass during inference.
const EVAL_CHUNK: usize = 4096;

pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + std::ops::AddAssign
    + Send
    + Sync
    + Debug
    + Default
    + 'static
{
}
impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Encoding {
    None,
    Fourier { bands: u32 },
}

impl Encoding {
    pub fn input_dim(&self) -> usize {
        match self {
            Encoding::None => 3,
            Encoding::Fourier { bands } => 3 + 6 * *bands as usize,
        }
    }

    fn write_row<A: Real>(&self, u: [f64; 3], out: &mut [A]) {
        out[0] = A::from_f64(u[0]).unwrap();
        out[1] = A::from_f64(u[1]).unwrap();
        out[2] = A::from_f64(u[2]).unwrap();
        if let Encoding::Fourier { bands } = self {
            let mut k = 3;
            for l in 0..*bands {
                let f = (1u64 << l) as f64;
                for c in u {
                    let (s, co) = (f * c).sin_cos();
                    out[k] = A::from_f64(s).unwrap();
                    out[k + 1] = A::from_f64(co).unwrap();
                    k += 2;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<A> {
    /// `out x in`
    pub w: Array2<A>,
    pub b: Array1<A>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<A> {
    pub gamma: Array1<A>,
    pub beta: Array1<A>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField<A: Real = f32> {
    pub encoding: Encoding,
    /// Normalization box as `[min x, min y, min z, max x, max y, max z]`.
    pub bounds: [f32; 6],
    pub dense: Vec<Dense<A>>,
    pub norms: Vec<LayerNorm<A>>,
}

/// Gradients with the same shapes as the field parameters.
#[derive(Debug, Clone)]
pub struct Gradients<A> {
    pub dense: Vec<Dense<A>>,
    pub norms: Vec<LayerNorm<A>>,
}

/// Activations kept for the backward pass.
struct HiddenCache<A> {
    xhat: Array2<A>,
    inv_std: Array1<A>,
    /// post-ReLU output
    act: Array2<A>,
}

pub struct ForwardCache<A> {
    input: Array2<A>,
    hidden: Vec<HiddenCache<A>>,
    /// raw output before normalization
    y_norm: Array1<A>,
    /// normalized output
    pub out: Array2<A>,
}

impl<A: Real> FeatureField<A> {
    /// Randomly initialized field (Kaiming-uniform weights, zero biases,
    /// identity LayerNorm).
    pub fn new(encoding: Encoding, hidden: usize, channels: usize, bounds: &Aabb, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [encoding.input_dim(), hidden, hidden, hidden, channels];
        let dense = (0..4)
            .map(|k| {
                let (fan_in, fan_out) = (widths[k], widths[k + 1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    A::from_f64(rng.random_range(-limit..limit)).unwrap()
                });
                Dense {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        let norms = (0..3)
            .map(|_| LayerNorm {
                gamma: Array1::from_elem(hidden, A::one()),
                beta: Array1::zeros(hidden),
            })
            .collect();
        FeatureField {
            encoding,
            bounds: [
                bounds.min[0] as f32,
                bounds.min[1] as f32,
                bounds.min[2] as f32,
                bounds.max[0] as f32,
                bounds.max[1] as f32,
                bounds.max[2] as f32,
            ],
            dense,
            norms,
        }
    }

    pub fn widths(&self) -> [usize; 5] {
        [
            self.dense[0].w.ncols(),
            self.dense[0].w.nrows(),
            self.dense[1].w.nrows(),
            self.dense[2].w.nrows(),
            self.dense[3].w.nrows(),
        ]
    }

    pub fn channels(&self) -> usize {
        self.dense[3].w.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.dense.iter().map(|d| d.w.len() + d.b.len()).sum::<usize>()
            + self.norms.iter().map(|n| n.gamma.len() + n.beta.len()).sum::<usize>()
    }

    /// Maps a model-space point into the field's unit frame.
    pub fn normalize_point(&self, p: [f32; 3]) -> [f64; 3] {
        let b = self.bounds;
        let c = [
            0.5 * (b[0] as f64 + b[3] as f64),
            0.5 * (b[1] as f64 + b[4] as f64),
            0.5 * (b[2] as f64 + b[5] as f64),
        ];
        let half = 0.5
            * ((b[3] - b[0]) as f64)
                .max((b[4] - b[1]) as f64)
                .max((b[5] - b[2]) as f64);
        let half = if half > 0.0 { half } else { 1.0 };
        [
            (p[0] as f64 - c[0]) / half,
            (p[1] as f64 - c[1]) / half,
            (p[2] as f64 - c[2]) / half,
        ]
    }

    pub fn encode_batch(&self, points: &[[f32; 3]]) -> Array2<A> {
        let dim = self.encoding.input_dim();
        let mut x = Array2::zeros((points.len(), dim));
        for (row, p) in x.outer_iter_mut().zip(points) {
            let u = self.normalize_point(*p);
            self.encoding
                .write_row(u, row.into_slice().expect("row-major encode buffer"));
        }
        x
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn forward(&self, input: Array2<A>) -> ForwardCache<A> {
        let mut hidden = Vec::with_capacity(3);
        let mut cur = input.clone();
        for k in 0..3 {
            let h = affine(&cur.view(), &self.dense[k]);
            let (xhat, inv_std) = layer_norm(h);
            let mut act = &xhat * &self.norms[k].gamma + &self.norms[k].beta;
            act.mapv_inplace(|v| if v > A::zero() { v } else { A::zero() });
            cur = act.clone();
            hidden.push(HiddenCache { xhat, inv_std, act });
        }
        let y = affine(&cur.view(), &self.dense[3]);
        let (out, y_norm) = normalize_rows(y);
        ForwardCache {
            input,
            hidden,
            y_norm,
            out,
        }
    }

    /// Unit-norm outputs for a batch, without caching.
    pub fn infer(&self, input: Array2<A>) -> Array2<A> {
        let mut cur = input;
        for k in 0..3 {
            let h = affine(&cur.view(), &self.dense[k]);
            let (xhat, _) = layer_norm(h);
            let mut act = xhat * &self.norms[k].gamma + &self.norms[k].beta;
            act.mapv_inplace(|v| if v > A::zero() { v } else { A::zero() });
            cur = act;
        }
        normalize_rows(affine(&cur.view(), &self.dense[3])).0
    }

    /// Accumulates parameter gradients given `d loss / d output` for every
    /// row of the cached batch.
    pub fn backward(&self, cache: &ForwardCache<A>, d_out: &Array2<A>, grads: &mut Gradients<A>) {
        // through the final normalization: (g - o (o . g)) / |y|
        let mut dy = d_out.clone();
        Zip::from(dy.rows_mut())
            .and(cache.out.rows())
            .and(&cache.y_norm)
            .for_each(|mut g, o, &n| {
                let proj = g.dot(&o);
                let inv = A::one() / n;
                Zip::from(&mut g).and(&o).for_each(|gi, &oi| *gi = (*gi - oi * proj) * inv);
            });
        let mut delta = dy;
        for k in (0..4).rev() {
            let prev: ArrayView2<A> = if k == 0 {
                cache.input.view()
            } else {
                cache.hidden[k - 1].act.view()
            };
            let g = &mut grads.dense[k];
            ndarray::linalg::general_mat_mul(A::one(), &delta.t(), &prev, A::one(), &mut g.w);
            g.b += &delta.sum_axis(Axis(0));
            if k == 0 {
                break;
            }
            let mut da = delta.dot(&self.dense[k].w);
            let hc = &cache.hidden[k - 1];
            // ReLU
            Zip::from(&mut da).and(&hc.act).for_each(|d, &a| {
                if a <= A::zero() {
                    *d = A::zero();
                }
            });
            let ln = &self.norms[k - 1];
            let gn = &mut grads.norms[k - 1];
            gn.gamma += &(&da * &hc.xhat).sum_axis(Axis(0));
            gn.beta += &da.sum_axis(Axis(0));
            let dxhat = &da * &ln.gamma;
            delta = layer_norm_backward(&dxhat, &hc.xhat, &hc.inv_std);
        }
    }

    pub fn zero_gradients(&self) -> Gradients<A> {
        Gradients {
            dense: self
                .dense
                .iter()
                .map(|d| Dense {
                    w: Array2::zeros(d.w.raw_dim()),
                    b: Array1::zeros(d.b.raw_dim()),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| LayerNorm {
                    gamma: Array1::zeros(n.gamma.raw_dim()),
                    beta: Array1::zeros(n.beta.raw_dim()),
                })
                .collect(),
        }
    }

    /// Parameter tensors in checkpoint order: per layer weights, bias, then
    /// (hidden layers only) LayerNorm scale and shift.
    pub fn parameters_mut(&mut self) -> Vec<&mut [A]> {
        let mut out = Vec::with_capacity(14);
        let mut norms = self.norms.iter_mut();
        for d in self.dense.iter_mut() {
            out.push(d.w.as_slice_mut().expect("contiguous weights"));
            out.push(d.b.as_slice_mut().expect("contiguous bias"));
            if let Some(n) = norms.next() {
                out.push(n.gamma.as_slice_mut().expect("contiguous scale"));
                out.push(n.beta.as_slice_mut().expect("contiguous shift"));
            }
        }
        out
    }

    pub fn parameters(&self) -> Vec<&[A]> {
        let mut out = Vec::with_capacity(14);
        let mut norms = self.norms.iter();
        for d in self.dense.iter() {
            out.push(d.w.as_slice().expect("contiguous weights"));
            out.push(d.b.as_slice().expect("contiguous bias"));
            if let Some(n) = norms.next() {
                out.push(n.gamma.as_slice().expect("contiguous scale"));
                out.push(n.beta.as_slice().expect("contiguous shift"));
            }
        }
        out
    }

    /// Sum over the batch of `|phi(p) - z|^2`, with `z` rows already unit norm.
    pub fn loss(&self, points: &[[f32; 3]], targets: &Array2<A>) -> A {
        let out = self.infer(self.encode_batch(points));
        squared_error(&out, targets)
    }
}

impl<A: Real> Gradients<A> {
    pub fn tensors(&self) -> Vec<&[A]> {
        let mut out = Vec::with_capacity(14);
        let mut norms = self.norms.iter();
        for d in self.dense.iter() {
            out.push(d.w.as_slice().expect("contiguous"));
            out.push(d.b.as_slice().expect("contiguous"));
            if let Some(n) = norms.next() {
                out.push(n.gamma.as_slice().expect("contiguous"));
                out.push(n.beta.as_slice().expect("contiguous"));
            }
        }
        out
    }

    pub fn scale(&mut self, s: A) {
        for d in &mut self.dense {
            d.w.mapv_inplace(|v| v * s);
            d.b.mapv_inplace(|v| v * s);
        }
        for n in &mut self.norms {
            n.gamma.mapv_inplace(|v| v * s);
            n.beta.mapv_inplace(|v| v * s);
        }
    }

    pub fn fill_zero(&mut self) {
        for d in &mut self.dense {
            d.w.fill(A::zero());
            d.b.fill(A::zero());
        }
        for n in &mut self.norms {
            n.gamma.fill(A::zero());
            n.beta.fill(A::zero());
        }
    }
}

impl FeatureField<f32> {
    /// Unit-norm features for arbitrary points, `points.len() * C` values.
    /// Works in fixed-size chunks so memory stays bounded for millions of
    /// points; each point's result is independent of its chunk.
    pub fn eval(&self, points: &[[f32; 3]]) -> Vec<f32> {
        let c = self.channels();
        let mut out = vec![0f32; points.len() * c];
        out.par_chunks_mut(EVAL_CHUNK * c)
            .zip(points.par_chunks(EVAL_CHUNK))
            .for_each(|(dst, pts)| {
                let y = self.infer(self.encode_batch(pts));
                dst.copy_from_slice(y.as_slice().expect("row-major output"));
            });
        out
    }

    /// Same network in double precision.
    pub fn to_f64(&self) -> FeatureField<f64> {
        FeatureField {
            encoding: self.encoding,
            bounds: self.bounds,
            dense: self
                .dense
                .iter()
                .map(|d| Dense {
                    w: d.w.mapv(|v| v as f64),
                    b: d.b.mapv(|v| v as f64),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| LayerNorm {
                    gamma: n.gamma.mapv(|v| v as f64),
                    beta: n.beta.mapv(|v| v as f64),
                })
                .collect(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&FIELD_VERSION.to_le_bytes())?;
        let (kind, bands) = match self.encoding {
            Encoding::None => (0u8, 0u32),
            Encoding::Fourier { bands } => (1u8, bands),
        };
        w.write_all(&[kind])?;
        w.write_all(&bands.to_le_bytes())?;
        for width in self.widths() {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        w.write_all(&(self.channels() as u32).to_le_bytes())?;
        for b in self.bounds {
            w.write_all(&b.to_le_bytes())?;
        }
        let mut buf = Vec::new();
        for t in self.parameters() {
            buf.clear();
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(DfdError::Format("not a field checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FIELD_VERSION {
            return Err(DfdError::Version {
                found: version,
                expected: FIELD_VERSION,
            });
        }
        let mut kind = [0u8; 1];
        read_exact(&mut r, &mut kind)?;
        let bands = read_u32(&mut r)?;
        let encoding = match kind[0] {
            0 => Encoding::None,
            1 => Encoding::Fourier { bands },
            k => return Err(DfdError::Format(format!("unknown encoding kind {k}"))),
        };
        let mut widths = [0usize; 5];
        for w in &mut widths {
            *w = read_u32(&mut r)? as usize;
        }
        let channels = read_u32(&mut r)? as usize;
        if widths[0] != encoding.input_dim()
            || widths[4] != channels
            || widths[1] != widths[2]
            || widths[2] != widths[3]
        {
            return Err(DfdError::Format(format!(
                "inconsistent layer widths {widths:?} for C = {channels}"
            )));
        }
        if widths[1] == 0 || channels == 0 || widths[1] > 1 << 16 || channels > 1 << 16 {
            return Err(DfdError::Format(format!("implausible layer widths {widths:?}")));
        }
        let mut bounds = [0f32; 6];
        for b in &mut bounds {
            *b = read_f32(&mut r)?;
        }
        let mut field = FeatureField::<f32> {
            encoding,
            bounds,
            dense: (0..4)
                .map(|k| Dense {
                    w: Array2::zeros((widths[k + 1], widths[k])),
                    b: Array1::zeros(widths[k + 1]),
                })
                .collect(),
            norms: (0..3)
                .map(|_| LayerNorm {
                    gamma: Array1::zeros(widths[1]),
                    beta: Array1::zeros(widths[1]),
                })
                .collect(),
        };
        for t in field.parameters_mut() {
            let mut bytes = vec![0u8; t.len() * 4];
            read_exact(&mut r, &mut bytes)?;
            for (v, b) in t.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        Ok(field)
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

pub fn save_field(path: impl AsRef<Path>, field: &FeatureField) -> Result<()> {
    field.save(path)
}

pub fn load_field(path: impl AsRef<Path>) -> Result<FeatureField> {
    FeatureField::load(path)
}

pub fn eval_field(field: &FeatureField, points: &[[f32; 3]]) -> Vec<f32> {
    field.eval(points)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| DfdError::Format("field checkpoint truncated".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn affine<A: Real>(x: &ArrayView2<A>, layer: &Dense<A>) -> Array2<A> {
    let mut h = x.dot(&layer.w.t());
    h += &layer.b;
    h
}

/// Row-wise standardization; returns `x_hat` and `1 / std`.
fn layer_norm<A: Real>(mut h: Array2<A>) -> (Array2<A>, Array1<A>) {
    let n = A::from_usize(h.ncols()).unwrap();
    let eps = A::from_f64(LN_EPS).unwrap();
    let mut inv_std = Array1::zeros(h.nrows());
    for (mut row, is) in h.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        let mut var = A::zero();
        for v in row.iter() {
            let d = *v - mean;
            var += d * d;
        }
        var = var / n;
        let inv = A::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
        *is = inv;
    }
    (h, inv_std)
}

fn layer_norm_backward<A: Real>(dxhat: &Array2<A>, xhat: &Array2<A>, inv_std: &Array1<A>) -> Array2<A> {
    let n = A::from_usize(dxhat.ncols()).unwrap();
    let mut out = Array2::zeros(dxhat.raw_dim());
    Zip::from(out.rows_mut())
        .and(dxhat.rows())
        .and(xhat.rows())
        .and(inv_std)
        .for_each(|mut o, d, x, &is| {
            let mean_d = d.sum() / n;
            let mean_dx = d.dot(&x) / n;
            Zip::from(&mut o)
                .and(&d)
                .and(&x)
                .for_each(|oi, &di, &xi| *oi = is * (di - mean_d - xi * mean_dx));
        });
    out
}

fn normalize_rows<A: Real>(mut y: Array2<A>) -> (Array2<A>, Array1<A>) {
    let eps = A::from_f64(NORM_EPS).unwrap();
    let mut norms = Array1::zeros(y.nrows());
    for (mut row, n) in y.rows_mut().into_iter().zip(norms.iter_mut()) {
        let len = row.dot(&row).sqrt().max(eps);
        row.mapv_inplace(|v| v / len);
        *n = len;
    }
    (y, norms)
}

pub(crate) fn squared_error<A: Real>(out: &Array2<A>, targets: &Array2<A>) -> A {
    let mut total = A::zero();
    Zip::from(out).and(targets).for_each(|&o, &t| {
        let d = o - t;
        total += d * d;
    });
    total
}

/// Rows `[start, end)` of a row-major feature buffer as an array.
pub fn rows_to_array<A: Real>(flat: &[f32], channels: usize, rows: &[usize]) -> Array2<A> {
    let mut out = Array2::zeros((rows.len(), channels));
    for (mut dst, &r) in out.outer_iter_mut().zip(rows) {
        for (d, s) in dst.iter_mut().zip(&flat[r * channels..(r + 1) * channels]) {
            *d = A::from_f32(*s).unwrap();
        }
    }
    out
}

/// Slices a cache-free view helper used by tests and the trainer.
pub fn slice_rows<A: Real>(a: &Array2<A>, start: usize, end: usize) -> Array2<A> {
    a.slice(s![start..end, ..]).to_owned()
}
