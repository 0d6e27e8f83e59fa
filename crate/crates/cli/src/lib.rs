//! The `dfd` command line.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dfd_core::DfdError;

pub mod bench;
pub mod distill;
pub mod edit;
pub mod render;
pub mod workdir;

pub const EXIT_OK: i32 = 0;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn bad_input(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_BAD_INPUT,
            message: msg.into(),
        }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DfdError> for CliError {
    fn from(e: DfdError) -> Self {
        let code = match e {
            DfdError::Diverged(_) | DfdError::Stream(_) => EXIT_INTERNAL,
            DfdError::Io { ref source, .. }
                if !matches!(
                    source.kind(),
                    std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied | std::io::ErrorKind::InvalidData
                ) =>
            {
                EXIT_INTERNAL
            }
            _ => EXIT_BAD_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dfd", version, about = "Feature-field mesh deformation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decimate if needed, render views, write images, cameras and raster samples.
    Render(render::RenderArgs),
    /// Write `.fmap` feature images for a rendered work directory using a built-in encoder.
    SynthFeatures(distill::SynthArgs),
    /// Fit a feature field and write `field.dfdf`.
    Distill(distill::DistillArgs),
    /// Compute weight rows for a set of handles and write a `.wts` file.
    Bind(edit::BindArgs),
    /// Deform a mesh from a JSON handle file and write an OBJ.
    Pose(edit::PoseArgs),
    /// Score candidate symmetry planes, one JSON line each.
    Symmetry(edit::SymmetryArgs),
    /// Time preprocess, bind and pose over several resolutions and write CSV.
    Bench(bench::BenchArgs),
    /// Serve interactive editing sessions over a websocket.
    Serve(ServeArgs),
}

/// Options shared by the commands that own a work directory.
#[derive(Debug, Clone, Args)]
pub struct WorkArgs {
    #[arg(long, default_value = "dfd-work")]
    pub work_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Preload this mesh into every new session (needs --field).
    #[arg(long, requires = "field")]
    pub mesh: Option<PathBuf>,
    #[arg(long, requires = "mesh")]
    pub field: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Render(a) => render::run(&a).map(|_| ()),
        Command::SynthFeatures(a) => distill::run_synth(&a),
        Command::Distill(a) => distill::run(&a).map(|_| ()),
        Command::Bind(a) => edit::run_bind(&a),
        Command::Pose(a) => edit::run_pose(&a),
        Command::Symmetry(a) => edit::run_symmetry(&a),
        Command::Bench(a) => bench::run(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn serve(a: &ServeArgs) -> CliResult<()> {
    let initial = match (&a.mesh, &a.field) {
        (Some(m), Some(f)) => Some(std::sync::Arc::new(dfd_server::Loaded::from_files(m, f)?)),
        _ => None,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::internal(format!("cannot start runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| CliError::bad_input(format!("cannot listen on {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(|e| CliError::internal(e.to_string()))?;
        // scripts wait for this line before connecting
        println!("listening on ws://{addr}");
        dfd_server::serve(listener, initial)
            .await
            .map_err(|e| CliError::internal(format!("server stopped: {e}")))
    })
}

/// Applies `DFD_THREADS` to the global worker pool.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("DFD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::bad_input(format!("DFD_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::internal(format!("thread pool: {e}")))
}

pub fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::internal(format!("writing {}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::bad_input(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))
}
