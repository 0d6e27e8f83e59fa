//! `dfd bind`, `dfd pose` and `dfd symmetry`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use dfd_core::deform::{pose, pose_symmetric};
use dfd_core::geodesic::EdgeGraph;
use dfd_core::symmetry::{parse_plane, DEFAULT_EPSILON};
use dfd_core::{
    apply_anchors, apply_locality, bind, detect_axis_symmetries, evaluate_plane, load_field, load_mesh, save_obj,
    AffineTransform, BlendMode, FeatureField, Handle, HandleSet, Mesh, SymmetryPlane, VertexFeatures, WeightMatrix,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{read_json, CliError, CliResult};

#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    /// Comma-separated anchor vertices.
    #[arg(long, value_delimiter = ',')]
    pub anchors: Vec<u32>,
    /// Geodesic locality exponent; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f32,
}

#[derive(Debug, Clone, Args)]
pub struct BindArgs {
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Comma-separated handle vertices.
    #[arg(long, value_delimiter = ',', required = true)]
    pub handles: Vec<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PoseArgs {
    #[command(flatten)]
    pub weights: WeightArgs,
    /// JSON list of `{"vertex": i, "matrix": [12 floats, row-major 3x4]}`.
    #[arg(long)]
    pub handles: PathBuf,
    /// literal | displacement | pou
    #[arg(long, default_value = "displacement")]
    pub mode: BlendMode,
    /// auto | none | plane=x|y|z|nx,ny,nz,d
    #[arg(long, default_value = "none")]
    pub symmetry: String,
    /// Use a requested plane even if it scores above the threshold.
    #[arg(long)]
    pub force_symmetry: bool,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SymmetryArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Extra candidate planes (`x|y|z` or `nx,ny,nz,d`); repeatable.
    #[arg(long)]
    pub plane: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandleSpec {
    pub vertex: u32,
    pub matrix: Vec<f64>,
}

pub fn load_handles(path: &Path) -> CliResult<HandleSet> {
    let specs: Vec<HandleSpec> = read_json(path)?;
    let handles = specs
        .iter()
        .map(|s| {
            Ok(Handle {
                vertex: s.vertex,
                transform: AffineTransform::from_rows(&s.matrix)?,
            })
        })
        .collect::<dfd_core::Result<Vec<_>>>()?;
    Ok(HandleSet::new(handles))
}

pub struct Loaded {
    pub mesh: Mesh,
    pub field: FeatureField,
    pub features: VertexFeatures,
}

pub fn load(mesh: &Path, field: &Path) -> CliResult<Loaded> {
    let mesh = load_mesh(mesh)?;
    mesh.validate()?;
    let field = load_field(field)?;
    let features = VertexFeatures::from_field(&field, &mesh);
    Ok(Loaded { mesh, field, features })
}

/// Bind, then anchors, then locality.
pub fn weights_for(l: &Loaded, handles: &[u32], anchors: &[u32], lambda: f32) -> CliResult<WeightMatrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(CliError::bad_input(format!("--lambda must be >= 0, got {lambda}")));
    }
    let mut w = bind(&l.features, handles)?;
    if !anchors.is_empty() {
        w = apply_anchors(&w, &l.features, anchors)?;
    }
    if lambda > 0.0 {
        let graph = EdgeGraph::new(&l.mesh);
        let rows = handles
            .par_iter()
            .map(|&h| graph.geodesics_from(h))
            .collect::<dfd_core::Result<Vec<_>>>()?;
        w = apply_locality(&w, &rows, lambda)?;
    }
    Ok(w)
}

pub fn run_bind(a: &BindArgs) -> CliResult<()> {
    if a.handles.is_empty() {
        return Err(CliError::bad_input("--handles needs at least one vertex"));
    }
    let l = load(&a.weights.mesh, &a.weights.field)?;
    let t = Instant::now();
    let w = weights_for(&l, &a.handles, &a.weights.anchors, a.weights.lambda)?;
    let seconds = t.elapsed().as_secs_f64();
    w.save(&a.out)?;
    println!(
        "{}",
        serde_json::json!({ "handles": w.len(), "vertices": w.n, "bind_seconds": seconds, "out": a.out })
    );
    Ok(())
}

/// Resolves `--symmetry` to a plane, or `None` for a plain pose.
pub fn resolve_symmetry(spec: &str, l: &Loaded, epsilon: f64, force: bool) -> CliResult<Option<SymmetryPlane>> {
    match spec {
        "none" | "off" => Ok(None),
        "auto" => {
            let best = detect_axis_symmetries(&l.field, &l.mesh, epsilon)
                .into_iter()
                .filter(|p| p.accepted)
                .min_by(|a, b| a.score.total_cmp(&b.score));
            if best.is_none() {
                log::warn!("no axis plane passed the symmetry test; posing without symmetry");
            }
            Ok(best)
        }
        s => {
            let Some(p) = s.strip_prefix("plane=") else {
                return Err(CliError::bad_input(format!(
                    "bad --symmetry '{s}' (auto|none|plane=x|y|z|nx,ny,nz,d)"
                )));
            };
            let plane = parse_plane(p, l.mesh.bounds().center())?;
            let scored = evaluate_plane(&l.field, &l.mesh, &plane, epsilon);
            if !scored.accepted && !force {
                return Err(CliError::bad_input(format!(
                    "plane {p} scores {:.4} >= {epsilon}; pass --force-symmetry to use it anyway",
                    scored.score
                )));
            }
            Ok(Some(scored))
        }
    }
}

pub fn run_pose(a: &PoseArgs) -> CliResult<()> {
    let hs = load_handles(&a.handles)?;
    let l = load(&a.weights.mesh, &a.weights.field)?;
    hs.validate(l.mesh.vertex_count())?;
    let plane = resolve_symmetry(&a.symmetry, &l, a.epsilon, a.force_symmetry)?;
    let t = Instant::now();
    let w = weights_for(&l, &hs.vertices(), &a.weights.anchors, a.weights.lambda)?;
    let bind_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let v = match &plane {
        Some(p) => pose_symmetric(&l.mesh, &w, &hs, p, a.mode, true)?,
        None => pose(&l.mesh, &w, &hs, a.mode)?,
    };
    let pose_seconds = t.elapsed().as_secs_f64();
    save_obj(&a.out, &v, &l.mesh.faces)?;
    println!(
        "{}",
        serde_json::json!({
            "handles": hs.handles.len(),
            "mode": a.mode.to_string(),
            "symmetry": plane,
            "bind_seconds": bind_seconds,
            "pose_seconds": pose_seconds,
            "out": a.out,
        })
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneLine {
    pub plane: String,
    pub normal: [f64; 3],
    pub offset: f64,
    pub score: f64,
    pub accepted: bool,
}

pub fn symmetry_lines(a: &SymmetryArgs) -> CliResult<Vec<PlaneLine>> {
    let l = load(&a.mesh, &a.field)?;
    let center = l.mesh.bounds().center();
    let mut out: Vec<PlaneLine> = detect_axis_symmetries(&l.field, &l.mesh, a.epsilon)
        .into_iter()
        .zip(["x", "y", "z"])
        .map(|(p, name)| line(name, p))
        .collect();
    for spec in &a.plane {
        let p = parse_plane(spec, center)?;
        out.push(line(spec, evaluate_plane(&l.field, &l.mesh, &p, a.epsilon)));
    }
    Ok(out)
}

fn line(name: &str, p: SymmetryPlane) -> PlaneLine {
    PlaneLine {
        plane: name.to_string(),
        normal: p.normal,
        offset: p.offset,
        score: p.score,
        accepted: p.accepted,
    }
}

pub fn run_symmetry(a: &SymmetryArgs) -> CliResult<()> {
    for l in symmetry_lines(a)? {
        println!("{}", serde_json::to_string(&l).map_err(|e| CliError::internal(e.to_string()))?);
    }
    Ok(())
}
