//! Experiment drivers behind the command line: simulated runs, replay of
//! recorded clouds and the timing benchmark.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::ElevationMap;
use crate::integration::{integrate_scan, Phase, PhaseTimings, ScanStats, TOTAL_LABEL};
use crate::io::{self, RunConfig};
use crate::sensing::{PointCloud, RigidTransform};
use crate::sim::{render_scan, Primitive, RayPattern, SceneSpec, SensorSpec};

/// One simulated scan.
#[derive(Clone, Debug)]
pub struct SimStep {
    pub index: usize,
    pub time: f64,
    pub true_pose: RigidTransform,
    pub estimated_pose: RigidTransform,
    pub cloud: PointCloud,
    pub stats: ScanStats,
}

/// Steps a configured scene, sensor and trajectory through the pipeline.
pub struct Simulation {
    pub config: RunConfig,
    pub map: ElevationMap,
    times: Vec<f64>,
    next: usize,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let times = config.scan_times();
        Ok(Self {
            map: ElevationMap::new(config.grid),
            config,
            times,
            next: 0,
        })
    }

    pub fn scan_times(&self) -> &[f64] {
        &self.times
    }

    /// Renders and integrates the next scan; `None` when the run is over.
    pub fn step(&mut self) -> Result<Option<SimStep>> {
        let Some(&time) = self.times.get(self.next) else {
            return Ok(None);
        };
        let index = self.next;
        self.next += 1;
        let cfg = &self.config;
        let (true_pose, estimated_pose) = cfg.trajectory.pose_at(time)?;
        let cloud = render_scan(&cfg.scene, &true_pose, &cfg.sensor, time, cfg.run.seed, index as u64, cfg.mode());
        let stats = integrate_scan(&mut self.map, &cloud, &estimated_pose, &cfg.pipeline)?;
        Ok(Some(SimStep {
            index,
            time,
            true_pose,
            estimated_pose,
            cloud,
            stats,
        }))
    }
}

pub const COUNTER_COLUMNS: [&str; 14] = [
    "points_in",
    "points_out_of_range",
    "points_excluded",
    "points_out_of_map",
    "points_rejected_outlier",
    "points_ignored_low",
    "points_fused",
    "cells_updated",
    "cells_removed_by_cleanup",
    "cells_cleared_by_overlap",
    "upper_bounds_lowered",
    "drift_points",
    "drift_offset_applied",
    "drift_clamped",
];

/// Header of the per-scan statistics CSV. Timing columns (milliseconds) come last.
pub fn stats_csv_header() -> String {
    let mut cols = vec!["scan", "time", "status"];
    cols.extend(COUNTER_COLUMNS);
    let mut s = cols.join(",");
    for p in Phase::ALL {
        s.push_str(&format!(",{} [ms]", p.label()));
    }
    s.push_str(&format!(",{TOTAL_LABEL} [ms]\n"));
    s
}

fn timing_cells(t: &PhaseTimings) -> String {
    let mut s = String::new();
    for p in Phase::ALL {
        s.push_str(&format!(",{:.4}", t.get(p) * 1e3));
    }
    s.push_str(&format!(",{:.4}", t.total() * 1e3));
    s
}

pub fn stats_csv_row(scan: usize, time: f64, st: &ScanStats) -> String {
    let counters = [
        st.points_in,
        st.points_out_of_range,
        st.points_excluded,
        st.points_out_of_map,
        st.points_rejected_outlier,
        st.points_ignored_low,
        st.points_fused,
        st.cells_updated,
        st.cells_removed_by_cleanup,
        st.cells_cleared_by_overlap,
        st.upper_bounds_lowered,
        st.drift_points,
    ];
    let mut s = format!("{scan},{},ok", io::fmt_f64(time));
    for c in counters {
        s.push_str(&format!(",{c}"));
    }
    s.push_str(&format!(",{},{}", io::fmt_f64(st.drift_offset_applied), st.drift_clamped));
    s.push_str(&timing_cells(&st.phase_timings));
    s.push('\n');
    s
}

fn skipped_row(scan: usize, reason: &str) -> String {
    let blanks = ",".repeat(COUNTER_COLUMNS.len() + Phase::ALL.len() + 1);
    format!("{scan},,{reason}{blanks}\n")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub scans: usize,
    pub skipped: usize,
    pub snapshots: Vec<PathBuf>,
}

fn snapshot_path(out: &Path, scan: usize) -> PathBuf {
    out.join(format!("snapshot_{scan:05}.txt"))
}

/// Runs the configured simulation, writing snapshots every
/// `run.publish_every` scans, `stats.csv`, and optionally the rendered clouds
/// with pose sidecars (estimated poses) under `clouds/`.
pub fn run_simulate(config: &RunConfig, out: &Path, emit_clouds: bool) -> Result<RunSummary> {
    let mut sim = Simulation::new(config.clone())?;
    let mut csv = stats_csv_header();
    let mut summary = RunSummary::default();
    while let Some(step) = sim.step()? {
        csv.push_str(&stats_csv_row(step.index, step.time, &step.stats));
        if emit_clouds {
            let cloud = out.join("clouds").join(format!("scan_{:05}.csv", step.index));
            io::write_cloud_csv(&cloud, &step.cloud.points)?;
            io::write_pose_csv(&io::sidecar_path(&cloud), step.time, &step.estimated_pose)?;
        }
        summary.scans += 1;
        if summary.scans % config.run.publish_every == 0 {
            let p = snapshot_path(out, step.index);
            io::save_snapshot(&sim.map, &p)?;
            summary.snapshots.push(p);
        }
    }
    io::write_text(&out.join("stats.csv"), &csv)?;
    Ok(summary)
}

/// Cloud files of a replay directory: every `*.csv` except pose sidecars, by name.
pub fn replay_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.ends_with(".csv") && !name.ends_with(".pose.csv")
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Feeds recorded clouds through the pipeline. Scans without a pose sidecar
/// are skipped and reported in the stats with status `skipped_no_pose`.
pub fn run_replay(config: &RunConfig, input: &Path, out: &Path) -> Result<RunSummary> {
    config.validate()?;
    let mut map = ElevationMap::new(config.grid);
    let mut csv = stats_csv_header();
    let mut summary = RunSummary::default();
    let mut last_time = f64::NEG_INFINITY;
    for (k, file) in replay_inputs(input)?.iter().enumerate() {
        let side = io::sidecar_path(file);
        if !side.exists() {
            eprintln!("warning: {} has no pose sidecar, skipped", file.display());
            csv.push_str(&skipped_row(k, "skipped_no_pose"));
            summary.skipped += 1;
            continue;
        }
        let (time, pose) = io::read_pose_csv(&side)?;
        if time < last_time {
            return Err(Error::parse(side.display().to_string(), 2, format!("time {time} goes backwards")));
        }
        last_time = time;
        let cloud = PointCloud::new(io::read_cloud_csv(file)?, time);
        let stats = integrate_scan(&mut map, &cloud, &pose, &config.pipeline)?;
        csv.push_str(&stats_csv_row(k, time, &stats));
        summary.scans += 1;
        if summary.scans % config.run.publish_every == 0 {
            let p = snapshot_path(out, k);
            io::save_snapshot(&map, &p)?;
            summary.snapshots.push(p);
        }
    }
    io::write_text(&out.join("stats.csv"), &csv)?;
    Ok(summary)
}

/// Median per-phase timings for one point count.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub points: usize,
    /// Seconds, in [`Phase::ALL`] order.
    pub phases: [f64; 6],
}

impl BenchRow {
    /// Sum of the phase medians.
    pub fn total(&self) -> f64 {
        self.phases.iter().sum()
    }
}

/// Flat ground seen by a downward spiral that returns exactly `points` hits.
pub fn bench_scan(points: usize, seed: u64) -> (PointCloud, RigidTransform) {
    let scene = SceneSpec {
        primitives: vec![Primitive::Ground { z: 0.0 }],
    };
    let sensor = SensorSpec {
        pattern: RayPattern::Spiral {
            count: points,
            min_elevation: -85f64.to_radians(),
            max_elevation: -15f64.to_radians(),
        },
        max_range: 50.0,
        alpha_d: 1e-4,
        rate: 10.0,
    };
    let pose = RigidTransform::from_translation(0.0, 0.0, 1.0);
    let cloud = render_scan(&scene, &pose, &sensor, 0.0, seed, 0, crate::ExecMode::Parallel);
    debug_assert_eq!(cloud.len(), points);
    (cloud, pose)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// For each point count: one warm-up scan, then `repetitions` timed scans.
pub fn run_bench(config: &RunConfig, counts: &[usize], repetitions: usize) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &n in counts {
        let (mut cloud, pose) = bench_scan(n, config.run.seed);
        let mut map = ElevationMap::new(config.grid);
        integrate_scan(&mut map, &cloud, &pose, &config.pipeline)?;
        let mut samples: Vec<PhaseTimings> = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            cloud.stamp = 0.1 * (rep + 1) as f64;
            samples.push(integrate_scan(&mut map, &cloud, &pose, &config.pipeline)?.phase_timings);
        }
        let mut phases = [0.0; 6];
        for (k, p) in Phase::ALL.iter().enumerate() {
            phases[k] = median(samples.iter().map(|t| t.get(*p)).collect());
        }
        rows.push(BenchRow { points: n, phases });
    }
    Ok(rows)
}

/// Timing table in milliseconds, columns named after the phases.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("number of points");
    for p in Phase::ALL {
        s.push_str(&format!(",{}", p.label()));
    }
    s.push_str(&format!(",{TOTAL_LABEL}\n"));
    for r in rows {
        s.push_str(&r.points.to_string());
        for v in r.phases {
            s.push_str(&format!(",{:.4}", v * 1e3));
        }
        s.push_str(&format!(",{:.4}\n", r.total() * 1e3));
    }
    s
}
