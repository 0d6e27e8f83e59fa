//! Render and distill orchestration shared by the CLI, benches and tests.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{fibonacci_cameras, Camera, DEFAULT_RESOLUTION};
use crate::decimate::decimate_qem_tracked;
use crate::error::{DfdError, Result};
use crate::features::SampleSet;
use crate::field::{Encoding, FeatureField, DEFAULT_BANDS};
use crate::mesh::{Aabb, Mesh};
use crate::raster::{rasterize, surface_points, vertex_samples, RenderSample};
use crate::synth::{SynthMode, SyntheticEncoder, UnitFrame, DEFAULT_PARTS_CHANNELS};
use crate::train::{matched_epochs, train_field, TrainConfig, TrainReport, DEFAULT_EPOCHS};

pub const DEFAULT_VIEWS: usize = 100;
pub const DEFAULT_DECIMATE_THRESHOLD: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub mesh: PathBuf,
    pub work_dir: PathBuf,
    pub views: usize,
    pub resolution: u32,
    pub decimate_threshold: usize,
    pub epochs: usize,
    pub bands: u32,
    pub channels: usize,
    pub seed: u64,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            mesh: PathBuf::new(),
            work_dir: PathBuf::from("dfd-work"),
            views: DEFAULT_VIEWS,
            resolution: DEFAULT_RESOLUTION,
            decimate_threshold: DEFAULT_DECIMATE_THRESHOLD,
            epochs: DEFAULT_EPOCHS,
            bands: DEFAULT_BANDS,
            channels: DEFAULT_PARTS_CHANNELS,
            seed: 0,
        }
    }
}

impl ProjectConfig {
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            views: self.views,
            resolution: self.resolution,
            decimate_threshold: self.decimate_threshold,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            seed: self.seed,
            encoding: if self.bands == 0 {
                Encoding::None
            } else {
                Encoding::Fourier { bands: self.bands }
            },
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub views: usize,
    pub resolution: u32,
    pub decimate_threshold: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        ProjectConfig::default().render_options()
    }
}

/// Wall-clock seconds per phase. Decimation and rendering together are the
/// render phase; everything after (feature lookup and fitting) is training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub decimate: f64,
    pub render: f64,
    pub train: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.decimate + self.render + self.train
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// Every covered pixel, lifted through its barycentric surface point.
    #[default]
    Barycentric,
    /// Only pixels hit by a visible vertex, supervised at the vertex.
    Vertex,
}

impl std::str::FromStr for Supervision {
    type Err = DfdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "barycentric" => Ok(Supervision::Barycentric),
            "vertex" => Ok(Supervision::Vertex),
            _ => Err(DfdError::invalid(format!("unknown supervision '{s}' (barycentric|vertex)"))),
        }
    }
}

/// The mesh actually rendered: the input, or its decimation.
#[derive(Debug, Clone)]
pub struct RenderMesh {
    pub mesh: Mesh,
    /// Source face of every render-mesh face.
    pub face_origin: Vec<u32>,
    pub decimated: bool,
    pub decimate_seconds: f64,
}

pub fn prepare_render_mesh(mesh: &Mesh, threshold: usize) -> RenderMesh {
    let t = Instant::now();
    if mesh.face_count() > threshold {
        let d = decimate_qem_tracked(mesh, threshold);
        RenderMesh {
            mesh: d.mesh,
            face_origin: d.face_origin,
            decimated: true,
            decimate_seconds: t.elapsed().as_secs_f64(),
        }
    } else {
        RenderMesh {
            mesh: mesh.clone(),
            face_origin: (0..mesh.face_count() as u32).collect(),
            decimated: false,
            decimate_seconds: 0.0,
        }
    }
}

/// Render-mesh part labels derived from per-input-face labels.
pub fn carry_labels(labels: &[u32], face_origin: &[u32]) -> Result<Vec<u32>> {
    face_origin
        .iter()
        .map(|&f| {
            labels.get(f as usize).copied().ok_or(DfdError::IndexOutOfRange {
                what: "part label",
                index: f as usize,
                len: labels.len(),
            })
        })
        .collect()
}

/// Rasterizes every view and collects the supervision samples, one view at
/// a time so full raster maps never pile up.
pub fn render_samples(
    render: &Mesh,
    cameras: &[Camera],
    supervision: Supervision,
) -> Vec<RenderSample> {
    let per_view: Vec<Vec<RenderSample>> = cameras
        .par_iter()
        .enumerate()
        .map(|(v, cam)| {
            let r = rasterize(render, cam);
            match supervision {
                Supervision::Barycentric => surface_points(&r, render, v as u32),
                Supervision::Vertex => {
                    let mut s = vertex_samples(render, std::slice::from_ref(cam), std::slice::from_ref(&r));
                    for x in &mut s {
                        x.view = v as u32;
                    }
                    s
                }
            }
        })
        .collect();
    per_view.concat()
}

/// Covered pixel count over all views, without keeping the samples.
pub fn covered_pixels(render: &Mesh, cameras: &[Camera]) -> usize {
    cameras.par_iter().map(|c| rasterize(render, c).covered()).sum()
}

#[derive(Debug, Clone)]
pub struct Distilled {
    pub field: FeatureField,
    pub report: TrainReport,
    pub timings: PhaseTimings,
    pub render: RenderMesh,
    pub supervision: Supervision,
    /// Samples before dropping zero features.
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub mode: SynthMode,
    /// Per input face; required for `parts`.
    pub labels: Option<Vec<u32>>,
    pub parts_channels: usize,
    pub seed: u64,
}

impl SyntheticSource {
    pub fn new(mode: SynthMode) -> Self {
        SyntheticSource {
            mode,
            labels: None,
            parts_channels: DEFAULT_PARTS_CHANNELS,
            seed: 0,
        }
    }

    /// Encoder for the render mesh, in the input mesh's canonical frame.
    pub fn encoder(&self, bounds: &Aabb, render: &RenderMesh) -> Result<SyntheticEncoder> {
        let mut enc = SyntheticEncoder::new(self.mode, UnitFrame::from_bounds(bounds));
        enc.parts_channels = self.parts_channels;
        enc.seed = self.seed;
        if let Some(l) = &self.labels {
            enc = enc.with_labels(carry_labels(l, &render.face_origin)?);
        }
        enc.validate(render.mesh.face_count())?;
        Ok(enc)
    }
}

/// Full distillation with a built-in encoder: decimate, render, encode,
/// fit. With vertex supervision the epoch count is scaled so that the fit
/// processes as many samples as the barycentric run would.
pub fn distill_synthetic(
    mesh: &Mesh,
    source: &SyntheticSource,
    render_opts: &RenderOptions,
    train: &TrainConfig,
    supervision: Supervision,
) -> Result<Distilled> {
    mesh.validate()?;
    if let Some(l) = &source.labels {
        if l.len() != mesh.face_count() {
            return Err(DfdError::invalid(format!(
                "{} part labels for {} faces",
                l.len(),
                mesh.face_count()
            )));
        }
    }
    let bounds = mesh.bounds();
    let render = prepare_render_mesh(mesh, render_opts.decimate_threshold);
    let t = Instant::now();
    let cameras = fibonacci_cameras(render_opts.views, &render.mesh, render_opts.resolution)?;
    let samples = render_samples(&render.mesh, &cameras, supervision);
    let mut train = train.clone();
    if supervision == Supervision::Vertex {
        let reference = covered_pixels(&render.mesh, &cameras);
        train.epochs = matched_epochs(train.epochs, reference, samples.len());
    }
    let render_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let enc = source.encoder(&bounds, &render)?;
    let set = enc.sample_set(&samples, render.mesh.face_count())?;
    let n_samples = samples.len();
    drop(samples);
    let (field, report) = train_field(&set, &bounds, &train)?;
    let timings = PhaseTimings {
        decimate: render.decimate_seconds,
        render: render_seconds,
        train: t.elapsed().as_secs_f64(),
    };
    Ok(Distilled {
        field,
        report,
        timings,
        render,
        supervision,
        samples: n_samples,
    })
}

/// Fits a field to an already assembled sample set.
pub fn distill_samples(set: &SampleSet, bounds: &Aabb, train: &TrainConfig) -> Result<(FeatureField, TrainReport)> {
    train_field(set, bounds, train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn small_meshes_are_not_decimated() {
        let m = shapes::icosphere(3);
        let r = prepare_render_mesh(&m, 50_000);
        assert!(!r.decimated);
        assert_eq!(r.mesh.face_count(), m.face_count());
        let big = prepare_render_mesh(&m, 300);
        assert!(big.decimated && big.mesh.face_count() <= 300);
        assert!(big.face_origin.iter().all(|&f| (f as usize) < m.face_count()));
    }

    #[test]
    fn smoke_distill() {
        let m = shapes::icosphere(2);
        let opts = RenderOptions {
            views: 4,
            resolution: 32,
            decimate_threshold: 50_000,
        };
        let train = TrainConfig {
            epochs: 2,
            hidden: 16,
            batch_size: 256,
            ..Default::default()
        };
        let d = distill_synthetic(&m, &SyntheticSource::new(SynthMode::Smooth), &opts, &train, Supervision::Barycentric).unwrap();
        assert_eq!(d.report.losses.len(), 3);
        assert!(d.samples > 1000);
        assert_eq!(d.field.channels(), 18);
        let v = distill_synthetic(&m, &SyntheticSource::new(SynthMode::Smooth), &opts, &train, Supervision::Vertex).unwrap();
        assert!(v.samples < d.samples);
        // same processed-sample budget, rounded up to whole epochs
        assert!(v.report.samples_processed >= d.report.samples_processed);
        assert!(v.report.samples_processed < d.report.samples_processed + v.samples as u64);
    }

    #[test]
    fn parts_labels_must_match_faces() {
        let m = shapes::icosphere(1);
        let mut src = SyntheticSource::new(SynthMode::Parts);
        src.labels = Some(vec![0; 3]);
        let opts = RenderOptions {
            views: 1,
            resolution: 16,
            decimate_threshold: 50_000,
        };
        assert!(distill_synthetic(&m, &src, &opts, &TrainConfig::default(), Supervision::Barycentric).is_err());
    }
}
