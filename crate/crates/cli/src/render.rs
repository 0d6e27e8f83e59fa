//! `dfd render`.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use dfd_core::camera::DEFAULT_RESOLUTION;
use dfd_core::features::save_samples;
use dfd_core::pipeline::{prepare_render_mesh, DEFAULT_DECIMATE_THRESHOLD, DEFAULT_VIEWS};
use dfd_core::raster::{rasterize, shade, surface_points};
use dfd_core::{fibonacci_cameras, load_mesh, save_obj, Aabb, Camera, RenderSample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::workdir::{ensure_dir, Layout, WorkLock};
use crate::{write_json, CliError, CliResult, WorkArgs};

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[command(flatten)]
    pub work: WorkArgs,
    #[arg(long, default_value_t = DEFAULT_VIEWS)]
    pub views: usize,
    #[arg(long = "res", default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: u32,
    #[arg(long, default_value_t = DEFAULT_DECIMATE_THRESHOLD)]
    pub decimate_threshold: usize,
    /// Skip the shaded PNGs (only the external extractor reads them).
    #[arg(long)]
    pub no_images: bool,
}

/// Contents of `render/render.json`. Timings make it the one
/// non-reproducible render artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderReport {
    pub mesh: PathBuf,
    pub input_faces: usize,
    pub input_vertices: usize,
    pub render_faces: usize,
    pub decimated: bool,
    pub views: usize,
    pub resolution: u32,
    pub samples: usize,
    /// Bounds of the input mesh; synthetic encoders and the field use them.
    pub bounds: Aabb,
    pub decimate_seconds: f64,
    pub render_seconds: f64,
}

pub fn run(a: &RenderArgs) -> CliResult<RenderReport> {
    let _lock = WorkLock::acquire(&a.work.work_dir)?;
    let layout = Layout::new(&a.work.work_dir);
    let mesh = load_mesh(&a.mesh)?;
    mesh.validate()?;
    if a.resolution == 0 {
        return Err(CliError::bad_input("--res must be positive"));
    }
    let render = prepare_render_mesh(&mesh, a.decimate_threshold);
    let t = Instant::now();
    let cameras = fibonacci_cameras(a.views, &render.mesh, a.resolution)?;
    let dir = layout.render_dir();
    ensure_dir(&dir)?;
    let per_view: Vec<CliResult<Vec<RenderSample>>> = cameras
        .par_iter()
        .enumerate()
        .map(|(k, cam)| {
            let r = rasterize(&render.mesh, cam);
            if !a.no_images {
                let path = layout.view_image(k);
                shade(&r, &render.mesh, cam)
                    .save(&path)
                    .map_err(|e| CliError::internal(format!("writing {}: {e}", path.display())))?;
            }
            Ok(surface_points(&r, &render.mesh, k as u32))
        })
        .collect();
    let samples = per_view.into_iter().collect::<CliResult<Vec<_>>>()?.concat();
    save_samples(layout.samples(), &samples)?;
    write_json(&layout.cameras(), &cameras)?;
    save_obj(layout.render_mesh(), &render.mesh.vertices, &render.mesh.faces)?;
    write_json(&face_origin_path(&layout), &render.face_origin)?;
    let report = RenderReport {
        mesh: a.mesh.clone(),
        input_faces: mesh.face_count(),
        input_vertices: mesh.vertex_count(),
        render_faces: render.mesh.face_count(),
        decimated: render.decimated,
        views: a.views,
        resolution: a.resolution,
        samples: samples.len(),
        bounds: mesh.bounds(),
        decimate_seconds: render.decimate_seconds,
        render_seconds: t.elapsed().as_secs_f64(),
    };
    write_json(&layout.render_report(), &report)?;
    println!(
        "{}",
        serde_json::json!({
            "decimate": report.decimate_seconds,
            "render": report.render_seconds,
            "samples": report.samples,
            "render_faces": report.render_faces,
        })
    );
    Ok(report)
}

pub fn face_origin_path(layout: &Layout) -> PathBuf {
    layout.render_dir().join("face_origin.json")
}

/// Everything `render` left behind, loaded back.
pub struct Rendered {
    pub report: RenderReport,
    pub cameras: Vec<Camera>,
    pub mesh: dfd_core::Mesh,
    pub face_origin: Vec<u32>,
    pub samples: Vec<RenderSample>,
}

pub fn load_rendered(layout: &Layout) -> CliResult<Rendered> {
    let report_path = layout.render_report();
    if !report_path.exists() {
        return Err(CliError::bad_input(format!(
            "{} not found; run `dfd render` first",
            report_path.display()
        )));
    }
    let report: RenderReport = crate::read_json(&report_path)?;
    let cameras: Vec<Camera> = crate::read_json(&layout.cameras())?;
    let face_origin: Vec<u32> = crate::read_json(&face_origin_path(layout))?;
    let mesh = load_mesh(layout.render_mesh())?;
    let samples = dfd_core::features::load_samples(layout.samples())?;
    if face_origin.len() != mesh.face_count() || cameras.len() != report.views {
        return Err(CliError::bad_input("render artifacts are inconsistent; re-run `dfd render`"));
    }
    Ok(Rendered {
        report,
        cameras,
        mesh,
        face_origin,
        samples,
    })
}
