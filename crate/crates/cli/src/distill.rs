//! `dfd synth-features` and `dfd distill`.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Args, ValueEnum};
use dfd_core::features::attach_features;
use dfd_core::field::DEFAULT_HIDDEN;
use dfd_core::pipeline::{
    covered_pixels, distill_synthetic, render_samples, RenderMesh, RenderOptions, Supervision, SyntheticSource,
    DEFAULT_DECIMATE_THRESHOLD, DEFAULT_VIEWS,
};
use dfd_core::synth::{load_part_labels, pixel_key, DEFAULT_PARTS_CHANNELS};
use dfd_core::train::{matched_epochs, DEFAULT_BATCH, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE};
use dfd_core::{
    load_mesh, save_field, train_field, Encoding, FeatureImage, PhaseTimings, RenderSample, SampleSet, SynthMode,
    TrainConfig, TrainReport,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::render::{load_rendered, Rendered};
use crate::workdir::{ensure_dir, Layout, WorkLock};
use crate::{write_json, CliError, CliResult, WorkArgs};

fn synth_mode(s: &str) -> Result<SynthMode, String> {
    s.parse().map_err(|e: dfd_core::DfdError| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub work: WorkArgs,
    /// parts | smooth | mirror
    #[arg(long, value_parser = synth_mode)]
    pub mode: SynthMode,
    /// Part label per input face, one per line (parts only).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PARTS_CHANNELS)]
    pub channels: usize,
    /// Defaults to `<work-dir>/features`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Supervise only at visible vertices instead of every covered pixel.
    Vertex,
}

#[derive(Debug, Clone, Args)]
pub struct DistillArgs {
    /// Input mesh; required with --synthetic.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[command(flatten)]
    pub work: WorkArgs,
    /// Encode features on the fly with a built-in encoder.
    #[arg(long, value_parser = synth_mode, conflicts_with = "features", required_unless_present = "features")]
    pub synthetic: Option<SynthMode>,
    /// Directory of `.fmap` files matching a previous `dfd render`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PARTS_CHANNELS)]
    pub channels: usize,
    #[arg(long, default_value_t = DEFAULT_VIEWS)]
    pub views: usize,
    #[arg(long = "res", default_value_t = dfd_core::camera::DEFAULT_RESOLUTION)]
    pub resolution: u32,
    #[arg(long, default_value_t = DEFAULT_DECIMATE_THRESHOLD)]
    pub decimate_threshold: usize,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Fourier bands; 0 disables the encoding.
    #[arg(long, default_value_t = dfd_core::field::DEFAULT_BANDS)]
    pub bands: u32,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub learning_rate: f64,
    /// Stop training after this many seconds and keep the partial field.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

impl DistillArgs {
    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let time_limit = match self.time_limit {
            Some(s) if !(s > 0.0 && s.is_finite()) => return Err(CliError::bad_input("--time-limit must be positive")),
            Some(s) => Some(Duration::from_secs_f64(s)),
            None => None,
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.work.seed,
            encoding: if self.bands == 0 {
                Encoding::None
            } else {
                Encoding::Fourier { bands: self.bands }
            },
            hidden: self.hidden,
            max_steps: self.max_steps,
            time_limit,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn supervision(&self) -> Supervision {
        match self.ablation {
            Some(Ablation::Vertex) => Supervision::Vertex,
            None => Supervision::Barycentric,
        }
    }
}

/// Contents of `distill.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillReport {
    pub timings: PhaseTimings,
    pub supervision: Supervision,
    pub source: String,
    pub samples: usize,
    pub render_faces: usize,
    pub decimated: bool,
    pub channels: usize,
    pub train: TrainReport,
}

fn source(mode: SynthMode, labels: &Option<PathBuf>, channels: usize, seed: u64) -> CliResult<SyntheticSource> {
    if mode == SynthMode::Parts && labels.is_none() {
        return Err(CliError::bad_input("the parts encoder needs --labels"));
    }
    let mut s = SyntheticSource::new(mode);
    s.parts_channels = channels;
    s.seed = seed;
    s.labels = labels.as_ref().map(load_part_labels).transpose()?;
    Ok(s)
}

fn render_mesh(r: &Rendered) -> RenderMesh {
    RenderMesh {
        mesh: r.mesh.clone(),
        face_origin: r.face_origin.clone(),
        decimated: r.report.decimated,
        decimate_seconds: r.report.decimate_seconds,
    }
}

pub fn run_synth(a: &SynthArgs) -> CliResult<()> {
    let _lock = WorkLock::acquire(&a.work.work_dir)?;
    let layout = Layout::new(&a.work.work_dir);
    let rendered = load_rendered(&layout)?;
    let src = source(a.mode, &a.labels, a.channels, a.work.seed)?;
    if let Some(l) = &src.labels {
        if l.len() != rendered.report.input_faces {
            return Err(CliError::bad_input(format!(
                "{} part labels for {} input faces",
                l.len(),
                rendered.report.input_faces
            )));
        }
    }
    let enc = src.encoder(&rendered.report.bounds, &render_mesh(&rendered))?;
    let dir = a.out.clone().unwrap_or_else(|| layout.features_dir());
    ensure_dir(&dir)?;
    let res = rendered.report.resolution;
    let groups = by_view(&rendered.samples, rendered.report.views)?;
    let c = enc.channels();
    groups.par_iter().enumerate().try_for_each(|(v, group)| {
        let mut im = FeatureImage::zeros(v as u32, res, res, c as u32);
        for s in *group {
            enc.encode(s.point, s.face, pixel_key(s.view, s.x, s.y), im.pixel_mut(s.x, s.y));
        }
        im.save(Layout::fmap(&dir, v)).map_err(CliError::from)
    })?;
    println!("{}", serde_json::json!({ "views": groups.len(), "channels": c, "dir": dir }));
    Ok(())
}

/// Splits view-ordered samples into one slice per view.
fn by_view(samples: &[RenderSample], views: usize) -> CliResult<Vec<&[RenderSample]>> {
    let mut out = vec![&samples[..0]; views];
    for chunk in samples.chunk_by(|a, b| a.view == b.view) {
        let v = chunk[0].view as usize;
        if v >= views || !out[v].is_empty() {
            return Err(CliError::bad_input("raster samples are not grouped by view; re-run `dfd render`"));
        }
        out[v] = chunk;
    }
    Ok(out)
}

/// Attaches features one view at a time so only one feature image is
/// resident.
fn attach_from_dir(samples: &[RenderSample], views: usize, dir: &std::path::Path) -> CliResult<SampleSet> {
    let mut set: Option<SampleSet> = None;
    for (v, group) in by_view(samples, views)?.into_iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let path = Layout::fmap(dir, v);
        if !path.exists() {
            return Err(CliError::bad_input(format!("missing feature image {}", path.display())));
        }
        let im = FeatureImage::load(&path)?;
        let part = attach_features(group, std::slice::from_ref(&im))?;
        match &mut set {
            None => set = Some(part),
            Some(s) => {
                if s.channels != part.channels {
                    return Err(CliError::bad_input(format!(
                        "view {v} has {} channels, earlier views have {}",
                        part.channels, s.channels
                    )));
                }
                s.points.extend(part.points);
                s.features.extend(part.features);
                s.dropped += part.dropped;
            }
        }
    }
    set.ok_or_else(|| CliError::bad_input("no covered pixels to supervise"))
}

pub fn run(a: &DistillArgs) -> CliResult<DistillReport> {
    let _lock = WorkLock::acquire(&a.work.work_dir)?;
    let layout = Layout::new(&a.work.work_dir);
    let train = a.train_config()?;
    let supervision = a.supervision();
    let report = match (&a.synthetic, &a.features) {
        (Some(mode), _) => {
            let mesh_path = a
                .mesh
                .as_ref()
                .ok_or_else(|| CliError::bad_input("--synthetic needs --mesh"))?;
            let mesh = load_mesh(mesh_path)?;
            let src = source(*mode, &a.labels, a.channels, a.work.seed)?;
            let opts = RenderOptions {
                views: a.views,
                resolution: a.resolution,
                decimate_threshold: a.decimate_threshold,
            };
            let d = distill_synthetic(&mesh, &src, &opts, &train, supervision)?;
            save_field(layout.field(), &d.field)?;
            DistillReport {
                timings: d.timings,
                supervision,
                source: format!("synthetic:{}", serde_json::to_value(mode).unwrap().as_str().unwrap_or("")),
                samples: d.samples,
                render_faces: d.render.mesh.face_count(),
                decimated: d.render.decimated,
                channels: d.field.channels(),
                train: d.report,
            }
        }
        (None, Some(dir)) => {
            let rendered = load_rendered(&layout)?;
            let mut train = train;
            let t = Instant::now();
            let samples = match supervision {
                Supervision::Barycentric => rendered.samples,
                Supervision::Vertex => {
                    let s = render_samples(&rendered.mesh, &rendered.cameras, Supervision::Vertex);
                    let reference = covered_pixels(&rendered.mesh, &rendered.cameras);
                    train.epochs = matched_epochs(train.epochs, reference, s.len());
                    s
                }
            };
            let extra_render = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let set = attach_from_dir(&samples, rendered.report.views, dir)?;
            let (field, tr) = train_field(&set, &rendered.report.bounds, &train)?;
            save_field(layout.field(), &field)?;
            DistillReport {
                timings: PhaseTimings {
                    decimate: rendered.report.decimate_seconds,
                    render: rendered.report.render_seconds + extra_render,
                    train: t.elapsed().as_secs_f64(),
                },
                supervision,
                source: format!("features:{}", dir.display()),
                samples: samples.len(),
                render_faces: rendered.report.render_faces,
                decimated: rendered.report.decimated,
                channels: field.channels(),
                train: tr,
            }
        }
        (None, None) => return Err(CliError::bad_input("give --synthetic MODE or --features DIR")),
    };
    write_json(&layout.distill_report(), &report)?;
    println!(
        "{}",
        serde_json::json!({
            "decimate": report.timings.decimate,
            "render": report.timings.render,
            "train": report.timings.train,
            "total": report.timings.total(),
            "samples": report.samples,
            "final_loss": report.train.losses.last(),
            "timed_out": report.train.timed_out,
        })
    );
    Ok(report)
}
