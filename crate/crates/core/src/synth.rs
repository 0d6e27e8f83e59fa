//! Built-in synthetic encoders.
//!
//! They stand in for a pretrained image backbone so that every stage of
//! the pipeline can be exercised without model weights:
//!
//! * `parts`: one-hot part label of the covered face plus a small random
//!   perturbation (a Gaussian direction scaled to length 0.05).
//! * `smooth`: `sin`/`cos` of three fixed frequencies of each canonical
//!   coordinate (18 channels).
//! * `mirror`: like `smooth` but the x terms use `2x^2 - 1`, making the
//!   feature exactly even in x about the frame center.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DfdError, Result};
use crate::features::{push_normalized, FeatureImage, SampleSet};
use crate::mesh::{Aabb, Mesh};
use crate::raster::{RasterMap, RenderSample, EMPTY};

pub const SMOOTH_FREQUENCIES: [f64; 3] = [1.0, 2.0, 3.0];
pub const SMOOTH_CHANNELS: usize = 18;
pub const PARTS_NOISE: f64 = 0.05;
pub const DEFAULT_PARTS_CHANNELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Parts,
    Smooth,
    Mirror,
}

impl FromStr for SynthMode {
    type Err = DfdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parts" => Ok(SynthMode::Parts),
            "smooth" => Ok(SynthMode::Smooth),
            "mirror" => Ok(SynthMode::Mirror),
            other => Err(DfdError::invalid(format!(
                "unknown synthetic encoder {other:?} (parts|smooth|mirror)"
            ))),
        }
    }
}

/// Maps model coordinates into `[-1, 1]` along the longest axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitFrame {
    pub center: [f64; 3],
    pub half_extent: f64,
}

impl UnitFrame {
    pub fn from_bounds(b: &Aabb) -> Self {
        let e = b.extent();
        let half = 0.5 * e[0].max(e[1]).max(e[2]);
        UnitFrame {
            center: b.center(),
            half_extent: if half > 0.0 { half } else { 1.0 },
        }
    }

    pub fn apply(&self, p: [f32; 3]) -> [f64; 3] {
        [
            (p[0] as f64 - self.center[0]) / self.half_extent,
            (p[1] as f64 - self.center[1]) / self.half_extent,
            (p[2] as f64 - self.center[2]) / self.half_extent,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    pub mode: SynthMode,
    pub frame: UnitFrame,
    /// Per-face part labels (required for `parts`).
    pub labels: Option<Vec<u32>>,
    /// Channel count for `parts`; the trigonometric encoders always use 18.
    pub parts_channels: usize,
    pub seed: u64,
}

impl SyntheticEncoder {
    pub fn new(mode: SynthMode, frame: UnitFrame) -> Self {
        SyntheticEncoder {
            mode,
            frame,
            labels: None,
            parts_channels: DEFAULT_PARTS_CHANNELS,
            seed: 0,
        }
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn channels(&self) -> usize {
        match self.mode {
            SynthMode::Parts => self.parts_channels,
            SynthMode::Smooth | SynthMode::Mirror => SMOOTH_CHANNELS,
        }
    }

    pub fn validate(&self, face_count: usize) -> Result<()> {
        if self.mode == SynthMode::Parts {
            let labels = self
                .labels
                .as_ref()
                .ok_or_else(|| DfdError::Missing("part-label sidecar for `parts` encoder".into()))?;
            if labels.len() != face_count {
                return Err(DfdError::invalid(format!(
                    "{} part labels for {face_count} faces",
                    labels.len()
                )));
            }
            if let Some(&max) = labels.iter().max() {
                if max as usize >= self.parts_channels {
                    return Err(DfdError::invalid(format!(
                        "part label {max} needs more than {} channels",
                        self.parts_channels
                    )));
                }
            }
        }
        Ok(())
    }

    /// Raw (unnormalized) feature for a surface point. `key` identifies the
    /// pixel and seeds the `parts` noise.
    pub fn encode(&self, point: [f32; 3], face: u32, key: u64, out: &mut [f32]) {
        match self.mode {
            SynthMode::Parts => {
                out.fill(0.0);
                let label = self.labels.as_ref().map_or(0, |l| l[face as usize]) as usize;
                out[label] = 1.0;
                let mut rng = SplitMix::new(self.seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let noise: Vec<f64> = (0..out.len()).map(|_| rng.gaussian()).collect();
                let n = noise.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for (o, z) in out.iter_mut().zip(noise) {
                    *o += (PARTS_NOISE * z / n) as f32;
                }
            }
            SynthMode::Smooth | SynthMode::Mirror => {
                let mut u = self.frame.apply(point);
                if self.mode == SynthMode::Mirror {
                    u[0] = 2.0 * u[0] * u[0] - 1.0;
                }
                let mut k = 0;
                for w in SMOOTH_FREQUENCIES {
                    for c in u {
                        out[k] = (w * c).sin() as f32;
                        out[k + 1] = (w * c).cos() as f32;
                        k += 2;
                    }
                }
            }
        }
    }

    /// Feature image for one rendered view; uncovered pixels stay zero.
    pub fn render_view(&self, mesh: &Mesh, raster: &RasterMap, view: u32) -> Result<FeatureImage> {
        self.validate(mesh.face_count())?;
        let c = self.channels();
        let mut im = FeatureImage::zeros(view, raster.width, raster.height, c as u32);
        for y in 0..raster.height {
            for x in 0..raster.width {
                let idx = raster.index(x, y);
                let f = raster.face[idx];
                if f == EMPTY {
                    continue;
                }
                let p = crate::raster::blend_point(mesh, f, raster.bary[idx]);
                self.encode(p, f, pixel_key(view, x, y), im.pixel_mut(x, y));
            }
        }
        Ok(im)
    }

    /// Feature images rebuilt from stored raster samples.
    pub fn images_from_samples(
        &self,
        samples: &[RenderSample],
        views: u32,
        width: u32,
        height: u32,
        face_count: usize,
    ) -> Result<Vec<FeatureImage>> {
        self.validate(face_count)?;
        let c = self.channels() as u32;
        let mut images: Vec<FeatureImage> = (0..views)
            .map(|v| FeatureImage::zeros(v, width, height, c))
            .collect();
        for s in samples {
            let im = images
                .get_mut(s.view as usize)
                .ok_or_else(|| DfdError::invalid(format!("sample view {} >= {views}", s.view)))?;
            if s.face as usize >= face_count {
                return Err(DfdError::IndexOutOfRange {
                    what: "sample face",
                    index: s.face as usize,
                    len: face_count,
                });
            }
            self.encode(s.point, s.face, pixel_key(s.view, s.x, s.y), im.pixel_mut(s.x, s.y));
        }
        Ok(images)
    }
}

impl SyntheticEncoder {
    /// Normalized features for raster samples, the same values
    /// [`crate::features::attach_features`] would read back from rendered
    /// feature images.
    pub fn sample_set(&self, samples: &[RenderSample], face_count: usize) -> Result<SampleSet> {
        self.validate(face_count)?;
        let c = self.channels();
        let mut set = SampleSet {
            points: Vec::with_capacity(samples.len()),
            features: Vec::with_capacity(samples.len() * c),
            channels: c,
            dropped: 0,
        };
        let mut raw = vec![0f32; c];
        for s in samples {
            if s.face as usize >= face_count {
                return Err(DfdError::IndexOutOfRange {
                    what: "sample face",
                    index: s.face as usize,
                    len: face_count,
                });
            }
            self.encode(s.point, s.face, pixel_key(s.view, s.x, s.y), &mut raw);
            if push_normalized(&mut set.features, &raw) {
                set.points.push(s.point);
            } else {
                set.dropped += 1;
            }
        }
        Ok(set)
    }
}

pub fn pixel_key(view: u32, x: u32, y: u32) -> u64 {
    ((view as u64) << 40) ^ ((y as u64) << 20) ^ x as u64
}

/// Reads a part-label sidecar: one non-negative integer per face, one per
/// line (blank lines and `#` comments ignored).
pub fn load_part_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DfdError::io(path, e))?;
    parse_part_labels(&text)
}

pub fn parse_part_labels(text: &str) -> Result<Vec<u32>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.trim().parse::<u32>().map_err(|_| DfdError::Parse {
                line: i + 1,
                msg: format!("bad part label {l:?}"),
            })
        })
        .collect()
}

pub fn save_part_labels(path: impl AsRef<Path>, labels: &[u32]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(labels.len() * 2);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| DfdError::io(path, e))
}

/// Small counter-based generator; keeps per-pixel noise independent of
/// evaluation order.
struct SplitMix(u64);

impl SplitMix {
    fn new(seed: u64) -> Self {
        SplitMix(seed)
    }

    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    fn gaussian(&mut self) -> f64 {
        let (u1, u2) = (self.uniform(), self.uniform());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
