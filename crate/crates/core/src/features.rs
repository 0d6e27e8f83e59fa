//! Per-pixel feature maps, raster-sample files and their attachment.
//!
//! `.fmap` (little-endian): `"DFDF"`, u32 version = 1, u32 view id, u32 H,
//! u32 W, u32 C, then `H * W * C` f32 in row-major `[y][x][c]` order.
//!
//! `.rsmp` (little-endian): `"DFDS"`, u32 version = 1, u64 sample count,
//! then per sample u32 view, u32 x, u32 y, u32 face, 3 x f32 barycentric,
//! 3 x f32 surface point.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{DfdError, Result};
use crate::raster::RenderSample;

pub const FMAP_MAGIC: &[u8; 4] = b"DFDF";
pub const RSMP_MAGIC: &[u8; 4] = b"DFDS";
pub const FORMAT_VERSION: u32 = 1;
/// Features whose raw norm falls below this are dropped.
pub const MIN_FEATURE_NORM: f32 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub view: u32,
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl FeatureImage {
    pub fn zeros(view: u32, width: u32, height: u32, channels: u32) -> Self {
        FeatureImage {
            view,
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels as usize],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let c = self.channels as usize;
        let start = (y as usize * self.width as usize + x as usize) * c;
        &self.data[start..start + c]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f32] {
        let c = self.channels as usize;
        let start = (y as usize * self.width as usize + x as usize) * c;
        &mut self.data[start..start + c]
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FMAP_MAGIC)?;
        for v in [FORMAT_VERSION, self.view, self.height, self.width, self.channels] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| DfdError::Format("fmap truncated".into()))?;
        if &magic != FMAP_MAGIC {
            return Err(DfdError::Format("not an fmap file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(DfdError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let view = read_u32(&mut r)?;
        let height = read_u32(&mut r)?;
        let width = read_u32(&mut r)?;
        let channels = read_u32(&mut r)?;
        let count = height as usize * width as usize * channels as usize;
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| DfdError::Format("fmap payload truncated".into()))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DfdError::Format(format!("non-finite value in fmap for view {view}")));
        }
        Ok(FeatureImage {
            view,
            width,
            height,
            channels,
            data,
        })
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

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| DfdError::Format("file truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| DfdError::Format("file truncated".into()))?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_samples<W: Write>(mut w: W, samples: &[RenderSample]) -> Result<()> {
    w.write_all(RSMP_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(40 * 4096);
    for chunk in samples.chunks(4096) {
        buf.clear();
        for s in chunk {
            for v in [s.view, s.x, s.y, s.face] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in s.bary.iter().chain(s.point.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(mut r: R) -> Result<Vec<RenderSample>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DfdError::Format("rsmp truncated".into()))?;
    if &magic != RSMP_MAGIC {
        return Err(DfdError::Format("not an rsmp file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(DfdError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = read_u64(&mut r)? as usize;
    let mut bytes = vec![0u8; count.checked_mul(40).ok_or_else(|| DfdError::Format("bad count".into()))?];
    r.read_exact(&mut bytes)
        .map_err(|_| DfdError::Format("rsmp payload truncated".into()))?;
    let u = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let f = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    Ok(bytes
        .chunks_exact(40)
        .map(|b| RenderSample {
            view: u(&b[0..]),
            x: u(&b[4..]),
            y: u(&b[8..]),
            face: u(&b[12..]),
            bary: [f(&b[16..]), f(&b[20..]), f(&b[24..])],
            point: [f(&b[28..]), f(&b[32..]), f(&b[36..])],
        })
        .collect())
}

pub fn save_samples(path: impl AsRef<Path>, samples: &[RenderSample]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| DfdError::io(path, e))?;
    write_samples(BufWriter::new(f), samples)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<RenderSample>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| DfdError::io(path, e))?;
    read_samples(BufReader::new(f))
}

/// Surface points with unit-norm features attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Vec<[f32; 3]>,
    /// `points.len() * channels` unit-norm rows.
    pub features: Vec<f32>,
    pub channels: usize,
    /// Samples discarded for a (near-)zero raw feature.
    pub dropped: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    /// Normalizes every row again, dropping rows that became degenerate.
    pub fn renormalized(&self) -> SampleSet {
        let mut out = SampleSet {
            points: Vec::with_capacity(self.len()),
            features: Vec::with_capacity(self.features.len()),
            channels: self.channels,
            dropped: self.dropped,
        };
        for i in 0..self.len() {
            if push_normalized(&mut out.features, self.feature(i)) {
                out.points.push(self.points[i]);
            } else {
                out.dropped += 1;
            }
        }
        out
    }
}

pub(crate) fn push_normalized(out: &mut Vec<f32>, raw: &[f32]) -> bool {
    let norm = raw.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm < MIN_FEATURE_NORM as f64 {
        return false;
    }
    out.extend(raw.iter().map(|&v| (v as f64 / norm) as f32));
    true
}

/// Looks up each sample's pixel in its view's feature image and divides by
/// the L2 norm.
pub fn attach_features(samples: &[RenderSample], images: &[FeatureImage]) -> Result<SampleSet> {
    let by_view: HashMap<u32, &FeatureImage> = images.iter().map(|im| (im.view, im)).collect();
    let channels = match images.first() {
        Some(im) => im.channels as usize,
        None if samples.is_empty() => 0,
        None => return Err(DfdError::Missing("no feature images supplied".into())),
    };
    for im in images {
        if im.channels as usize != channels {
            return Err(DfdError::invalid(format!(
                "view {} has {} channels, expected {channels}",
                im.view, im.channels
            )));
        }
        if im.data.len() != im.width as usize * im.height as usize * channels {
            return Err(DfdError::invalid(format!("view {} payload size mismatch", im.view)));
        }
        if im.data.iter().any(|v| v.is_nan()) {
            return Err(DfdError::invalid(format!("NaN in feature data for view {}", im.view)));
        }
    }
    let mut set = SampleSet {
        points: Vec::with_capacity(samples.len()),
        features: Vec::with_capacity(samples.len() * channels),
        channels,
        dropped: 0,
    };
    for s in samples {
        let im = by_view
            .get(&s.view)
            .ok_or_else(|| DfdError::Missing(format!("feature image for view {}", s.view)))?;
        if s.x >= im.width || s.y >= im.height {
            return Err(DfdError::invalid(format!(
                "sample pixel ({}, {}) outside {}x{} feature image for view {}",
                s.x, s.y, im.width, im.height, s.view
            )));
        }
        if push_normalized(&mut set.features, im.pixel(s.x, s.y)) {
            set.points.push(s.point);
        } else {
            set.dropped += 1;
        }
    }
    Ok(set)
}

/// Checks that feature images match the render resolution per view.
pub fn check_resolution(images: &[FeatureImage], width: u32, height: u32) -> Result<()> {
    for im in images {
        if im.width != width || im.height != height {
            return Err(DfdError::invalid(format!(
                "feature image for view {} is {}x{}, render is {width}x{height}",
                im.view, im.width, im.height
            )));
        }
    }
    Ok(())
}
