//! Graph-cut boundary segmentation of tubular fiber bundles in
//! diffusion-tensor volumes.
//!
//! The pipeline tracks streamlines between two seed regions, derives a
//! centerline with twist-free frames, samples fractional anisotropy on a
//! plane/ray lattice around it, builds a directed capacitated graph over the
//! lattice and cuts it with an exact min s-t cut. The cut becomes a boundary
//! point cloud, a watertight triangle mesh and a voxelized label volume that
//! can be scored against ground truth with the Dice coefficient.
//!
//! ## Modules
//!
//! - [`volume`] — raw+JSON volume I/O and trilinear sampling
//! - [`tensor`] — symmetric 3x3 eigensolver, FA, principal directions
//! - [`tracking`] — deterministic streamline tracking and centerline frames
//! - [`cost`] — 3D filter masks, bundle-mean FA and the lattice cost field
//! - [`graphcut`] — graph construction and exact max-flow/min-cut
//! - [`surface`] — boundary extraction, tube triangulation, voxelization
//! - [`phantom`] — procedural torus / curved-tube phantoms with ground truth
//! - [`eval`] — Dice scoring and the filter-comparison report
//! - [`pipeline`] — JSON-configured end-to-end driver used by the CLI
//!
//! ## Runnable examples
//!
//! ```text
//! cargo run --example fa_map          # FA volume of a torus phantom
//! cargo run --example masks           # mean / Gaussian filter masks
//! cargo run --example track_torus     # tracking + centerline vs. analytic ring
//! cargo run --example graph_counts    # lattice graph node/arc bookkeeping
//! cargo run --example mesh_voxelize   # tube mesh -> labels volume check
//! cargo run --example segment_torus   # full pipeline on the torus phantom
//! cargo run --example segment_curved  # full pipeline on the curved phantom
//! cargo run --example filter_report   # automatic-vs-manual cost comparison
//! ```
//!
//! The `fibercut` binary exposes the same pipeline as subcommands
//! (`fa`, `track`, `phantom`, `segment`, `dsc`, `report`).

pub mod cost;
pub mod eval;
pub mod graphcut;
pub mod phantom;
pub mod pipeline;
pub mod surface;
pub mod tensor;
pub mod tracking;
pub mod volume;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header {path}: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid volume header: {0}")]
    InvalidHeader(String),
    #[error("payload size mismatch for {path}: header implies {expected} bytes, file has {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in volume payload at element {0}")]
    NonFinite(usize),
    #[error("invalid tensor: eigenvalue {0} is strongly negative")]
    InvalidTensor(f64),
    #[error("invalid tensor at voxel ({0}, {1}, {2}): eigenvalue {3} is strongly negative")]
    InvalidTensorAt(usize, usize, usize, f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no streamline connects the seed regions; cannot derive a centerline")]
    NoCenterline,
    #[error("degenerate centerline: {0}")]
    DegenerateCenterline(String),
    #[error("degenerate cut at plane {plane}, ray {ray}: boundary index {index} is outside [0, {max}]")]
    DegenerateCut {
        plane: usize,
        ray: usize,
        index: isize,
        max: usize,
    },
    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),
    #[error("voxelization parity inconsistency on {0} rows; mesh is not watertight")]
    ParityInconsistency(usize),
    #[error("network too large for exhaustive cut enumeration: {0} non-terminal nodes (limit 20)")]
    NetworkTooLarge(usize),
    #[error("phantom does not fit the grid: {0}")]
    PhantomOutOfGrid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
