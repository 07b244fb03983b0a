//! Text file formats: run configuration, map snapshots, point clouds with
//! pose sidecars, planar-region documents and layer exports.

pub mod cloud;
pub mod config;
pub mod export;
pub mod regions;
pub mod snapshot;

pub use cloud::{read_cloud_csv, read_pose_csv, sidecar_path, write_cloud_csv, write_pose_csv};
pub use config::{BenchParams, RunConfig, RunParams};
pub use export::{export_csv, export_pgm, parse_csv_layer};
pub use regions::regions_to_text;
pub use snapshot::{load_snapshot, parse_snapshot, save_snapshot, snapshot_to_text};

use std::path::Path;

use crate::error::{Error, Result};

/// Shortest text that parses back to the same bits; `nan` for NaN.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:?}")
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_text_round_trips() {
        for v in [0.0, -0.0, 0.1, 1e-300, -3.5e7, f64::MIN_POSITIVE, 1.0 / 3.0, f64::INFINITY] {
            let back: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert!("nan".parse::<f64>().unwrap().is_nan());
    }
}
