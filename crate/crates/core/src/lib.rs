//! Robot-centric 2.5D elevation mapping.
//!
//! Point clouds are fused into a fixed-size grid that moves with the robot.
//! Each cell holds a height estimate with its variance; ray casting removes
//! cells that the sensor can see through and keeps an upper bound for cells
//! it cannot see. Terrain analysis (normals, traversability) runs after each
//! scan, and [`postprocess`] turns the map into smoothed layers and planar
//! regions for a planner.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod drift;
pub mod error;
pub mod grid;
pub mod integration;
pub mod io;
pub mod postprocess;
pub mod raycast;
pub mod runner;
pub mod sensing;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{CellIndex, ElevationMap, GridSpec, Layer, ShiftReport, VarianceGrowth};
pub use integration::{integrate_scan, PipelineParams, ScanStats, UpdateParams};
pub use sensing::{Point, PointCloud, RigidTransform};

use rayon::prelude::*;

/// Whether per-cell and per-point work runs on one thread or on the rayon pool.
///
/// Both modes produce the same map; only the drift mean may differ in the
/// last bits because its sum is split into chunks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ExecMode {
    #[default]
    Deterministic,
    Parallel,
}

impl std::str::FromStr for ExecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" | "deterministic" => Ok(ExecMode::Deterministic),
            "par" | "parallel" => Ok(ExecMode::Parallel),
            other => Err(Error::InvalidParam(format!("unknown mode `{other}` (det|par)"))),
        }
    }
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecMode::Deterministic => "det",
            ExecMode::Parallel => "par",
        })
    }
}

pub(crate) fn cell_map<T, F>(n: usize, mode: ExecMode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Deterministic => (0..n).map(f).collect(),
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}
