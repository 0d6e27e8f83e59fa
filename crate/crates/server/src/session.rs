//! Session state and the single-writer request handler.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dfd_core::deform::{pose_rows, vertex_sides, PoseRequest, RestPose};
use dfd_core::geodesic::EdgeGraph;
use dfd_core::symmetry::{detect_axis_symmetries, parse_plane, plane_tolerance, DEFAULT_EPSILON};
use dfd_core::train::optimizer_steps_on_this_thread;
use dfd_core::weights::{anchor_suppression, bind_with_stats, localize_row, suppress_row};
use dfd_core::{
    evaluate_plane, load_field, load_mesh, save_obj, AffineTransform, BlendMode, DfdError, FeatureField, Mesh,
    SymmetryPlane, Vec3, VertexFeatures,
};
use serde::{Deserialize, Serialize};

use crate::protocol::{Request, Response, SessionStats};

/// Everything derived once from a mesh and its field.
pub struct Loaded {
    pub mesh: Mesh,
    pub field: FeatureField,
    pub features: VertexFeatures,
    pub rest: RestPose,
    pub graph: EdgeGraph,
    pub mesh_path: Option<PathBuf>,
    pub field_path: Option<PathBuf>,
}

impl Loaded {
    pub fn from_parts(mesh: Mesh, field: FeatureField) -> Self {
        let features = VertexFeatures::from_field(&field, &mesh);
        let rest = RestPose::new(&mesh.vertices);
        let graph = EdgeGraph::new(&mesh);
        Loaded {
            mesh,
            field,
            features,
            rest,
            graph,
            mesh_path: None,
            field_path: None,
        }
    }

    pub fn from_files(mesh_path: &Path, field_path: &Path) -> dfd_core::Result<Self> {
        let mesh = load_mesh(mesh_path)?;
        let field = load_field(field_path)?;
        let mut l = Self::from_parts(mesh, field);
        l.mesh_path = Some(mesh_path.to_path_buf());
        l.field_path = Some(field_path.to_path_buf());
        Ok(l)
    }
}

struct HandleState {
    id: u64,
    vertex: u32,
    transform: AffineTransform,
    /// Raw proximity row, never recomputed after binding.
    base: Arc<Vec<f32>>,
    geodesic: Option<Arc<Vec<f32>>>,
    /// After anchors and locality.
    row: Arc<Vec<f32>>,
}

/// An immutable snapshot of what to pose, handed to the pose worker.
pub struct PoseJob {
    pub rev: u64,
    pub loaded: Arc<Loaded>,
    pub rows: Vec<Arc<Vec<f32>>>,
    pub transforms: Vec<AffineTransform>,
    pub vertices: Vec<u32>,
    pub mode: BlendMode,
    pub symmetry: Option<(SymmetryPlane, Arc<Vec<f64>>)>,
}

impl PoseJob {
    pub fn run(&self) -> dfd_core::Result<Vec<Vec3>> {
        let rows: Vec<&[f32]> = self.rows.iter().map(|r| r.as_slice()).collect();
        pose_rows(&PoseRequest {
            rest: &self.loaded.rest,
            rows: &rows,
            transforms: &self.transforms,
            handle_vertices: &self.vertices,
            default_transform: AffineTransform::IDENTITY,
            mode: self.mode,
            symmetry: self.symmetry.as_ref().map(|(p, s)| (p, s.as_slice())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHandle {
    pub id: u64,
    pub vertex: u32,
    pub matrix: Vec<f64>,
}

/// Session state as written by `snapshot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotState {
    pub rev: u64,
    pub mesh_path: Option<PathBuf>,
    pub field_path: Option<PathBuf>,
    pub handles: Vec<SnapshotHandle>,
    pub anchors: Vec<u32>,
    pub lambda: f32,
    pub mode: BlendMode,
    pub symmetry: Option<SymmetryPlane>,
}

#[derive(Default)]
pub struct Session {
    loaded: Option<Arc<Loaded>>,
    handles: Vec<HandleState>,
    next_id: u64,
    anchors: Vec<u32>,
    suppression: Option<Arc<Vec<f32>>>,
    lambda: f32,
    mode: BlendMode,
    plane: Option<SymmetryPlane>,
    sides: Option<Arc<Vec<f64>>>,
    rev: u64,
    stats: SessionStats,
    steps_at_start: u64,
}

type Outcome = Result<(Vec<Response>, bool), DfdError>;

impl Session {
    pub fn new() -> Self {
        Session {
            steps_at_start: optimizer_steps_on_this_thread(),
            ..Default::default()
        }
    }

    pub fn with_loaded(loaded: Arc<Loaded>) -> Self {
        let mut s = Self::new();
        s.install(loaded);
        s
    }

    pub fn rev(&self) -> u64 {
        self.rev
    }

    pub fn stats(&self) -> SessionStats {
        SessionStats {
            optimizer_steps: optimizer_steps_on_this_thread() - self.steps_at_start,
            ..self.stats
        }
    }

    pub fn loaded(&self) -> Option<&Arc<Loaded>> {
        self.loaded.as_ref()
    }

    pub fn handle_ids(&self) -> Vec<u64> {
        self.handles.iter().map(|h| h.id).collect()
    }

    /// Parses and applies one text message. Returns the responses and, if
    /// the state changed, the pose to broadcast.
    pub fn handle_text(&mut self, text: &str) -> (Vec<Response>, Option<PoseJob>) {
        match serde_json::from_str::<Request>(text) {
            Ok(req) => self.handle(req),
            Err(e) => (
                vec![Response::Error {
                    rev: self.rev,
                    request: None,
                    message: format!("malformed message: {e}"),
                }],
                None,
            ),
        }
    }

    pub fn handle(&mut self, req: Request) -> (Vec<Response>, Option<PoseJob>) {
        let kind = req.kind();
        match self.apply(req) {
            Ok((responses, mutated)) => {
                let job = if mutated { self.pose_job() } else { None };
                if job.is_some() {
                    self.stats.poses_requested += 1;
                }
                (responses, job)
            }
            Err(e) => (
                vec![Response::Error {
                    rev: self.rev,
                    request: Some(kind.to_string()),
                    message: e.to_string(),
                }],
                None,
            ),
        }
    }

    fn bump(&mut self) -> u64 {
        self.rev += 1;
        self.rev
    }

    fn require(&self) -> Result<Arc<Loaded>, DfdError> {
        self.loaded
            .clone()
            .ok_or_else(|| DfdError::Missing("no mesh loaded; send load first".into()))
    }

    fn index_of(&self, id: u64) -> Result<usize, DfdError> {
        self.handles
            .iter()
            .position(|h| h.id == id)
            .ok_or_else(|| DfdError::invalid(format!("unknown handle id {id}")))
    }

    fn apply(&mut self, req: Request) -> Outcome {
        match req {
            Request::Load { mesh_path, field_path } => {
                let loaded = Arc::new(Loaded::from_files(&mesh_path, &field_path)?);
                check_pair(&loaded)?;
                self.install(loaded.clone());
                let rev = self.bump();
                Ok((vec![loaded_response(rev, &loaded)], true))
            }
            Request::Restore { path } => self.restore(&path),
            Request::AddHandle { vertex } => {
                let loaded = self.require()?;
                let (w, stats) = bind_with_stats(&loaded.features, &[vertex])?;
                self.stats.rows_bound += 1;
                self.stats.distance_evaluations += stats.distance_evaluations;
                let base = Arc::new(w.rows.into_iter().next().unwrap_or_default());
                let id = self.next_id;
                self.next_id += 1;
                let mut h = HandleState {
                    id,
                    vertex,
                    transform: AffineTransform::IDENTITY,
                    row: base.clone(),
                    base,
                    geodesic: None,
                };
                self.reweight(&loaded, &mut h)?;
                self.handles.push(h);
                let rev = self.bump();
                Ok((vec![Response::HandleAdded { rev, id, vertex }], true))
            }
            Request::UpdateHandle { id, matrix } => {
                let i = self.index_of(id)?;
                let t = AffineTransform::from_rows(&matrix)?;
                self.handles[i].transform = t;
                let rev = self.bump();
                Ok((vec![Response::HandleUpdated { rev, id }], true))
            }
            Request::RemoveHandle { id } => {
                let i = self.index_of(id)?;
                self.handles.remove(i);
                let rev = self.bump();
                Ok((vec![Response::HandleRemoved { rev, id }], true))
            }
            Request::SetAnchors { vertices } => {
                let loaded = self.require()?;
                self.suppression = if vertices.is_empty() {
                    None
                } else {
                    Some(Arc::new(anchor_suppression(&loaded.features, &vertices)?))
                };
                self.anchors = vertices;
                self.reweight_all(&loaded)?;
                let rev = self.bump();
                Ok((
                    vec![Response::AnchorsSet {
                        rev,
                        count: self.anchors.len(),
                    }],
                    true,
                ))
            }
            Request::SetLambda { value } => {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(DfdError::invalid(format!("locality exponent must be >= 0, got {value}")));
                }
                let loaded = self.require()?;
                self.lambda = value;
                self.reweight_all(&loaded)?;
                let rev = self.bump();
                Ok((vec![Response::LambdaSet { rev, value }], true))
            }
            Request::SetMode { mode } => {
                self.mode = mode.parse()?;
                let rev = self.bump();
                Ok((
                    vec![Response::ModeSet {
                        rev,
                        mode: self.mode.to_string(),
                    }],
                    true,
                ))
            }
            Request::Symmetry { mode, plane, force } => self.symmetry(&mode, plane.as_deref(), force),
            Request::QueryWeights { handle_id } => {
                let i = self.index_of(handle_id)?;
                Ok((
                    vec![Response::Weights {
                        rev: self.rev,
                        handle_id,
                        weights: self.handles[i].row.as_ref().clone(),
                    }],
                    false,
                ))
            }
            Request::Snapshot { dir } => {
                let (obj, state) = self.snapshot(&dir)?;
                Ok((
                    vec![Response::Snapshot {
                        rev: self.rev,
                        obj,
                        state,
                    }],
                    false,
                ))
            }
            Request::Stats => Ok((
                vec![Response::Stats {
                    rev: self.rev,
                    stats: self.stats(),
                }],
                false,
            )),
        }
    }

    fn install(&mut self, loaded: Arc<Loaded>) {
        self.loaded = Some(loaded);
        self.handles.clear();
        self.anchors.clear();
        self.suppression = None;
        self.lambda = 0.0;
        self.plane = None;
        self.sides = None;
    }

    /// Recomputes a handle's effective row from its bound row.
    fn reweight(&mut self, loaded: &Loaded, h: &mut HandleState) -> Result<(), DfdError> {
        if self.suppression.is_none() && self.lambda == 0.0 {
            h.row = h.base.clone();
            return Ok(());
        }
        let mut row = h.base.as_ref().clone();
        if let Some(s) = &self.suppression {
            suppress_row(&mut row, s);
        }
        if self.lambda > 0.0 {
            if h.geodesic.is_none() {
                h.geodesic = Some(Arc::new(loaded.graph.geodesics_from(h.vertex)?.distances));
            }
            localize_row(&mut row, h.geodesic.as_ref().unwrap(), self.lambda);
        }
        h.row = Arc::new(row);
        self.stats.rows_reweighted += 1;
        Ok(())
    }

    fn reweight_all(&mut self, loaded: &Loaded) -> Result<(), DfdError> {
        let mut handles = std::mem::take(&mut self.handles);
        let result = handles.iter_mut().try_for_each(|h| self.reweight(loaded, h));
        self.handles = handles;
        result
    }

    fn symmetry(&mut self, mode: &str, plane: Option<&str>, force: bool) -> Outcome {
        let loaded = self.require()?;
        let mut planes = Vec::new();
        let active = match mode {
            "off" => None,
            "auto" => {
                planes = detect_axis_symmetries(&loaded.field, &loaded.mesh, DEFAULT_EPSILON);
                planes
                    .iter()
                    .filter(|p| p.accepted)
                    .min_by(|a, b| a.score.total_cmp(&b.score))
                    .copied()
            }
            "plane" => {
                let spec = plane.ok_or_else(|| DfdError::invalid("symmetry plane mode needs a plane"))?;
                let p = parse_plane(spec, loaded.mesh.bounds().center())?;
                let scored = evaluate_plane(&loaded.field, &loaded.mesh, &p, DEFAULT_EPSILON);
                planes.push(scored);
                if !scored.accepted && !force {
                    return Err(DfdError::invalid(format!(
                        "plane rejected (score {:.4} >= {DEFAULT_EPSILON}); pass force to use it anyway",
                        scored.score
                    )));
                }
                Some(scored)
            }
            other => return Err(DfdError::invalid(format!("unknown symmetry mode '{other}' (auto|off|plane)"))),
        };
        self.sides = active.map(|p| Arc::new(vertex_sides(&p, &loaded.rest, plane_tolerance(&loaded.mesh))));
        self.plane = active;
        let rev = self.bump();
        Ok((vec![Response::Symmetry { rev, planes, active }], true))
    }

    pub fn pose_job(&self) -> Option<PoseJob> {
        let loaded = self.loaded.clone()?;
        Some(PoseJob {
            rev: self.rev,
            loaded,
            rows: self.handles.iter().map(|h| h.row.clone()).collect(),
            transforms: self.handles.iter().map(|h| h.transform).collect(),
            vertices: self.handles.iter().map(|h| h.vertex).collect(),
            mode: self.mode,
            symmetry: self.plane.zip(self.sides.clone()),
        })
    }

    /// Current pose, computed synchronously.
    pub fn pose_now(&self) -> Result<(u64, Vec<Vec3>), DfdError> {
        let job = self.pose_job().ok_or_else(|| DfdError::Missing("no mesh loaded".into()))?;
        Ok((job.rev, job.run()?))
    }

    pub fn snapshot_state(&self) -> SnapshotState {
        SnapshotState {
            rev: self.rev,
            mesh_path: self.loaded.as_ref().and_then(|l| l.mesh_path.clone()),
            field_path: self.loaded.as_ref().and_then(|l| l.field_path.clone()),
            handles: self
                .handles
                .iter()
                .map(|h| SnapshotHandle {
                    id: h.id,
                    vertex: h.vertex,
                    matrix: h.transform.to_rows().to_vec(),
                })
                .collect(),
            anchors: self.anchors.clone(),
            lambda: self.lambda,
            mode: self.mode,
            symmetry: self.plane,
        }
    }

    /// Writes `snapshot.obj` (current pose) and `snapshot.json` into `dir`.
    pub fn snapshot(&self, dir: &Path) -> Result<(PathBuf, PathBuf), DfdError> {
        let loaded = self.require()?;
        let (_, vertices) = self.pose_now()?;
        fs::create_dir_all(dir).map_err(|e| DfdError::io(dir, e))?;
        let obj = dir.join("snapshot.obj");
        let state = dir.join("snapshot.json");
        save_obj(&obj, &vertices, &loaded.mesh.faces)?;
        let json = serde_json::to_string_pretty(&self.snapshot_state()).map_err(|e| DfdError::Format(e.to_string()))?;
        fs::write(&state, json).map_err(|e| DfdError::io(&state, e))?;
        Ok((obj, state))
    }

    fn restore(&mut self, path: &Path) -> Outcome {
        let text = fs::read_to_string(path).map_err(|e| DfdError::io(path, e))?;
        let st: SnapshotState = serde_json::from_str(&text).map_err(|e| DfdError::Format(e.to_string()))?;
        let (Some(mesh_path), Some(field_path)) = (&st.mesh_path, &st.field_path) else {
            return Err(DfdError::Missing("snapshot has no mesh/field paths".into()));
        };
        let reuse = self
            .loaded
            .as_ref()
            .filter(|l| l.mesh_path.as_ref() == Some(mesh_path) && l.field_path.as_ref() == Some(field_path))
            .cloned();
        let loaded = match reuse {
            Some(l) => l,
            None => Arc::new(Loaded::from_files(mesh_path, field_path)?),
        };
        check_pair(&loaded)?;
        // build into a fresh session so a bad snapshot leaves this one intact
        let mut next = Session {
            steps_at_start: self.steps_at_start,
            stats: self.stats,
            rev: self.rev,
            ..Default::default()
        };
        next.install(loaded.clone());
        next.mode = st.mode;
        next.lambda = st.lambda;
        if !(st.lambda >= 0.0) {
            return Err(DfdError::invalid("snapshot has a negative locality exponent"));
        }
        if !st.anchors.is_empty() {
            next.suppression = Some(Arc::new(anchor_suppression(&loaded.features, &st.anchors)?));
        }
        next.anchors = st.anchors.clone();
        for h in &st.handles {
            let (w, stats) = bind_with_stats(&loaded.features, &[h.vertex])?;
            next.stats.rows_bound += 1;
            next.stats.distance_evaluations += stats.distance_evaluations;
            let base = Arc::new(w.rows.into_iter().next().unwrap_or_default());
            let mut hs = HandleState {
                id: h.id,
                vertex: h.vertex,
                transform: AffineTransform::from_rows(&h.matrix)?,
                row: base.clone(),
                base,
                geodesic: None,
            };
            next.reweight(&loaded, &mut hs)?;
            next.handles.push(hs);
        }
        next.next_id = st.handles.iter().map(|h| h.id + 1).max().unwrap_or(0);
        if let Some(p) = st.symmetry {
            p.validate()?;
            next.sides = Some(Arc::new(vertex_sides(&p, &loaded.rest, plane_tolerance(&loaded.mesh))));
            next.plane = Some(p);
        }
        *self = next;
        let rev = self.bump();
        Ok((vec![loaded_response(rev, &loaded)], true))
    }
}

fn check_pair(loaded: &Loaded) -> Result<(), DfdError> {
    if loaded.mesh.vertices.is_empty() {
        return Err(DfdError::EmptyMesh);
    }
    Ok(())
}

fn loaded_response(rev: u64, loaded: &Loaded) -> Response {
    Response::Loaded {
        rev,
        vertices: loaded.mesh.vertex_count(),
        faces: loaded.mesh.face_count(),
        channels: loaded.field.channels(),
    }
}
