//! `dfd bench`: preprocess, bind and pose timings per mesh resolution.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use dfd_core::decimate::decimate_qem;
use dfd_core::deform::{pose_rest, RestPose};
use dfd_core::shapes::subdivide;
use dfd_core::train::optimizer_steps_on_this_thread;
use dfd_core::{bind, load_field, load_mesh, AffineTransform, BlendMode, FeatureField, Handle, HandleSet, Mesh, VertexFeatures};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::workdir::WorkLock;
use crate::{CliError, CliResult, WorkArgs};

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[command(flatten)]
    pub work: WorkArgs,
    /// Target face counts; the mesh is subdivided and/or decimated to each.
    #[arg(long, value_delimiter = ',', default_value = "10000,100000")]
    pub resolutions: Vec<usize>,
    /// Random handle sets per bind size.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pub handle_counts: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub pose_handles: usize,
    #[arg(long, default_value_t = 20)]
    pub pose_trials: usize,
    /// Defaults to `<work-dir>/bench.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Preprocess,
    Bind,
    Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub faces: usize,
    pub vertices: usize,
    pub phase: Phase,
    pub handles: usize,
    pub trials: usize,
    pub mean_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub optimizer_steps: u64,
}

pub const CSV_HEADER: &str = "faces,vertices,phase,handles,trials,mean_seconds,min_seconds,max_seconds,optimizer_steps";

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let phase = match r.phase {
            Phase::Preprocess => "preprocess",
            Phase::Bind => "bind",
            Phase::Pose => "pose",
        };
        let _ = writeln!(
            s,
            "{},{},{phase},{},{},{:.9},{:.9},{:.9},{}",
            r.faces, r.vertices, r.handles, r.trials, r.mean_seconds, r.min_seconds, r.max_seconds, r.optimizer_steps
        );
    }
    s
}

/// The mesh at roughly `faces` faces: subdivided until large enough, then
/// decimated down.
pub fn at_resolution(mesh: &Mesh, faces: usize) -> Mesh {
    let mut m = mesh.clone();
    while m.face_count() < faces {
        m = subdivide(&m);
    }
    if m.face_count() > faces {
        m = decimate_qem(&m, faces);
    }
    m
}

fn summarize(times: &[f64]) -> (f64, f64, f64) {
    let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let max = times.iter().copied().fold(0.0, f64::max);
    (mean, min, max)
}

pub struct BenchPlan {
    pub trials: usize,
    pub handle_counts: Vec<usize>,
    pub pose_handles: usize,
    pub pose_trials: usize,
    pub seed: u64,
}

/// Times one resolution. Handle sets are drawn uniformly with replacement.
pub fn bench_mesh(mesh: &Mesh, field: &FeatureField, plan: &BenchPlan) -> CliResult<Vec<BenchRow>> {
    let n = mesh.vertex_count();
    if n == 0 {
        return Err(CliError::bad_input("empty mesh"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ n as u64);
    let mut rows = Vec::new();
    let row = |phase, handles, times: &[f64], steps| {
        let (mean, min, max) = summarize(times);
        BenchRow {
            faces: mesh.face_count(),
            vertices: n,
            phase,
            handles,
            trials: times.len(),
            mean_seconds: mean,
            min_seconds: min,
            max_seconds: max,
            optimizer_steps: steps,
        }
    };

    let t = Instant::now();
    let features = VertexFeatures::from_field(field, mesh);
    rows.push(row(Phase::Preprocess, 0, &[t.elapsed().as_secs_f64()], 0));

    for &k in &plan.handle_counts {
        let steps = optimizer_steps_on_this_thread();
        let mut times = Vec::with_capacity(plan.trials);
        for _ in 0..plan.trials {
            let hs: Vec<u32> = (0..k).map(|_| rng.random_range(0..n as u32)).collect();
            let t = Instant::now();
            let w = bind(&features, &hs)?;
            times.push(t.elapsed().as_secs_f64());
            std::hint::black_box(&w);
        }
        rows.push(row(Phase::Bind, k, &times, optimizer_steps_on_this_thread() - steps));
    }

    let k = plan.pose_handles.max(1);
    let hv: Vec<u32> = (0..k).map(|_| rng.random_range(0..n as u32)).collect();
    let w = bind(&features, &hv)?;
    let rest = RestPose::new(&mesh.vertices);
    let mut times = Vec::with_capacity(plan.pose_trials);
    for _ in 0..plan.pose_trials.max(1) {
        let hs = HandleSet::new(
            hv.iter()
                .map(|&v| Handle {
                    vertex: v,
                    transform: AffineTransform::translation([
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                    ]),
                })
                .collect(),
        );
        let t = Instant::now();
        let out = pose_rest(&rest, &w, &hs, BlendMode::Displacement)?;
        times.push(t.elapsed().as_secs_f64());
        std::hint::black_box(&out);
    }
    rows.push(row(Phase::Pose, k, &times, 0));
    Ok(rows)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn run(a: &BenchArgs) -> CliResult<()> {
    if a.resolutions.is_empty() || a.resolutions.contains(&0) {
        return Err(CliError::bad_input("--resolutions needs positive face counts"));
    }
    let _lock = WorkLock::acquire(&a.work.work_dir)?;
    let mesh = load_mesh(&a.mesh)?;
    mesh.validate()?;
    let field = load_field(&a.field)?;
    let plan = BenchPlan {
        trials: a.trials,
        handle_counts: a.handle_counts.clone(),
        pose_handles: a.pose_handles,
        pose_trials: a.pose_trials,
        seed: a.work.seed,
    };
    let mut rows = Vec::new();
    for &r in &a.resolutions {
        let m = at_resolution(&mesh, r);
        log::info!("bench at {} faces / {} vertices", m.face_count(), m.vertex_count());
        rows.extend(bench_mesh(&m, &field, &plan)?);
    }
    let csv = to_csv(&rows);
    let out = a.out.clone().unwrap_or_else(|| a.work.work_dir.join("bench.csv"));
    std::fs::write(&out, &csv).map_err(|e| CliError::internal(format!("writing {}: {e}", out.display())))?;
    print!("{csv}");
    Ok(())
}
