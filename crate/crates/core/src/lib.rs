//! Deformation weights from distilled per-shape feature fields.
//!
//! A mesh is rendered from many views, 2D features are lifted onto surface
//! samples, and a small MLP is fitted so that every 3D point maps to a unit
//! feature vector. Handle weights are then a clamped distance in that
//! feature space, and poses blend the handle transforms per vertex.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod decimate;
pub mod deform;
pub mod error;
pub mod features;
pub mod field;
pub mod geodesic;
pub mod mesh;
pub mod pipeline;
pub mod raster;
pub mod shapes;
pub mod symmetry;
pub mod synth;
pub mod train;
pub mod weights;

pub use camera::{fibonacci_cameras, Camera};
pub use error::{DfdError, Result};
pub use features::{FeatureImage, SampleSet};
pub use field::{eval_field, load_field, save_field, Encoding, FeatureField};
pub use geodesic::geodesics_from;
pub use mesh::{load_mesh, save_obj, Aabb, Mesh, Vec3};
pub use raster::{rasterize, RasterMap, RenderSample};
pub use synth::{SynthMode, SyntheticEncoder};
pub use train::{train_field, TrainConfig, TrainReport};
pub use deform::{pose, pose_symmetric, AffineTransform, BlendMode, Handle, HandleSet};
pub use symmetry::{detect_axis_symmetries, evaluate_plane, reflect_point, reflect_transform, SymmetryPlane};
pub use weights::{apply_anchors, apply_locality, bind, pou_weights, VertexFeatures, WeightMatrix};
pub use pipeline::{distill_synthetic, PhaseTimings, ProjectConfig, RenderOptions, Supervision, SyntheticSource};
