//! Per-scan fusion: point pre-counting, the per-cell Kalman update with its
//! gates, and the scan orchestrator.

use std::time::Instant;

use rayon::prelude::*;

use crate::analysis::{self, OverlapParams, TraversabilityFilter};
use crate::drift::{self, DriftParams};
use crate::error::{Error, Result};
use crate::grid::{ElevationMap, VarianceGrowth};
use crate::raycast::{self, CleanupParams};
use crate::sensing::{self, ExclusionParams, Point, PointCloud, RigidTransform, SensorNoiseParams};
use crate::ExecMode;

/// Tunables of the height update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateParams {
    /// Gate on `|p_z − h| / σ_m`.
    pub mahalanobis_threshold: f64,
    /// Variance added to a cell when a point is rejected as an outlier, m².
    pub outlier_variance: f64,
    /// Above this many points per scan, points below the estimate are ignored.
    pub wall_count_threshold: u32,
    /// Variance added per nominal period to cells not updated, m².
    pub time_variance: f64,
    pub max_variance: f64,
    /// Prior variance of a fresh cell, m².
    pub initial_variance: f64,
    /// Seconds.
    pub nominal_period: f64,
    /// Points farther than this from the sensor are dropped, m.
    pub max_range: f64,
    pub noise: SensorNoiseParams,
    pub exclusion: ExclusionParams,
    pub drift_enabled: bool,
    pub overlap_enabled: bool,
}

impl Default for UpdateParams {
    fn default() -> Self {
        Self {
            mahalanobis_threshold: 2.5,
            outlier_variance: 0.01,
            wall_count_threshold: 5,
            time_variance: 1e-5,
            max_variance: 1.0,
            initial_variance: 100.0,
            nominal_period: 0.1,
            max_range: 20.0,
            noise: SensorNoiseParams::default(),
            exclusion: ExclusionParams::default(),
            drift_enabled: true,
            overlap_enabled: true,
        }
    }
}

impl UpdateParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mahalanobis_threshold > 0.0
            && self.outlier_variance >= 0.0
            && self.wall_count_threshold >= 1
            && self.time_variance >= 0.0
            && self.max_variance > 0.0
            && self.initial_variance > 0.0
            && self.nominal_period > 0.0
            && self.max_range > 0.0;
        if !ok {
            return Err(Error::InvalidParam(format!("bad update params {self:?}")));
        }
        self.noise.validate()?;
        self.exclusion.validate()
    }

    pub fn variance_growth(&self) -> VarianceGrowth {
        VarianceGrowth {
            time_variance: self.time_variance,
            max_variance: self.max_variance,
            nominal_period: self.nominal_period,
        }
    }
}

/// Everything [`integrate_scan`] needs.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineParams {
    pub update: UpdateParams,
    pub drift: DriftParams,
    pub cleanup: CleanupParams,
    pub overlap: OverlapParams,
    pub traversability: TraversabilityFilter,
    pub mode: ExecMode,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            update: UpdateParams::default(),
            drift: DriftParams::default(),
            cleanup: CleanupParams::default(),
            overlap: OverlapParams::default(),
            traversability: TraversabilityFilter::default(),
            mode: ExecMode::Deterministic,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.update.validate()?;
        self.drift.validate()?;
        self.cleanup.validate()?;
        self.overlap.validate()?;
        match &self.traversability {
            TraversabilityFilter::Geometric(p) => p.validate(),
            TraversabilityFilter::ConvNet(s) => s.validate(),
        }
    }
}

/// Processing phases, named after the rows of the usual per-feature timing table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    TransformAndErrorCount,
    DriftCompensation,
    HeightUpdateAndRaycast,
    OverlapClearance,
    Traversability,
    NormalCalculation,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::TransformAndErrorCount,
        Phase::DriftCompensation,
        Phase::HeightUpdateAndRaycast,
        Phase::OverlapClearance,
        Phase::Traversability,
        Phase::NormalCalculation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Phase::TransformAndErrorCount => "point transform & z error count",
            Phase::DriftCompensation => "drift compensation",
            Phase::HeightUpdateAndRaycast => "height update & ray casting",
            Phase::OverlapClearance => "overlap clearance",
            Phase::Traversability => "traversability",
            Phase::NormalCalculation => "normal calculation",
        }
    }
}

pub const TOTAL_LABEL: &str = "total";

/// Seconds spent per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings(pub [f64; 6]);

impl PhaseTimings {
    pub fn get(&self, phase: Phase) -> f64 {
        self.0[phase as usize]
    }

    fn add(&mut self, phase: Phase, since: Instant) {
        self.0[phase as usize] += since.elapsed().as_secs_f64();
    }

    /// Sum of all phases.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScanStats {
    pub points_in: usize,
    pub points_out_of_range: usize,
    pub points_excluded: usize,
    pub points_out_of_map: usize,
    pub points_rejected_outlier: usize,
    pub points_ignored_low: usize,
    pub points_fused: usize,
    pub cells_updated: usize,
    pub cells_removed_by_cleanup: usize,
    pub cells_cleared_by_overlap: usize,
    pub upper_bounds_lowered: usize,
    pub drift_points: usize,
    pub drift_offset_applied: f64,
    pub drift_clamped: bool,
    pub phase_timings: PhaseTimings,
}

impl ScanStats {
    /// Every input point has exactly one disposition.
    pub fn is_conserved(&self) -> bool {
        self.points_in
            == self.points_out_of_range
                + self.points_excluded
                + self.points_out_of_map
                + self.points_rejected_outlier
                + self.points_ignored_low
                + self.points_fused
    }
}

/// Per-cell point tally of one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTally {
    pub count: Vec<u32>,
    /// `NaN` where `count == 0`.
    pub max_height: Vec<f64>,
}

/// Counts points per cell and records the highest point in each.
pub fn precount_scan(points: &[Point], map: &ElevationMap) -> CellTally {
    let spec = map.spec();
    let mut tally = CellTally {
        count: vec![0; spec.len()],
        max_height: vec![f64::NAN; spec.len()],
    };
    for p in points {
        if let Some(i) = spec.flat_at(p[0], p[1]) {
            tally.count[i] += 1;
            let m = &mut tally.max_height[i];
            if m.is_nan() || p[2] > *m {
                *m = p[2];
            }
        }
    }
    tally
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellState {
    pub height: f64,
    pub variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Disposition {
    Fused,
    Outlier,
    IgnoredLow,
}

/// One measurement against one cell.
///
/// Gates run in order: the wall rule (busy cell, point below the estimate),
/// then the Mahalanobis test `|p_z − h|/σ_m`, then the fusion
/// `h' = (σ_p² h + σ_m² p_z)/(σ_m² + σ_p²)`, `σ'² = σ_m² σ_p²/(σ_m² + σ_p²)`.
/// A cell without an estimate starts from `h = p_z`, `σ_m² = initial_variance`.
pub fn kalman_update_cell(
    prior: Option<CellState>,
    p_z: f64,
    point_variance: f64,
    cell_count: u32,
    params: &UpdateParams,
) -> Result<(CellState, Disposition)> {
    let prior_var = prior.map_or(params.initial_variance, |c| c.variance);
    if !(point_variance > 0.0) || !(prior_var > 0.0) {
        return Err(Error::InvalidVariance {
            cell: prior_var,
            point: point_variance,
        });
    }
    let Some(CellState { height: h, variance: var_m }) = prior else {
        let var = prior_var * point_variance / (prior_var + point_variance);
        return Ok((
            CellState {
                height: p_z,
                variance: var.min(params.max_variance),
            },
            Disposition::Fused,
        ));
    };
    let state = CellState {
        height: h,
        variance: var_m,
    };
    if cell_count > params.wall_count_threshold && p_z < h {
        return Ok((state, Disposition::IgnoredLow));
    }
    if (p_z - h).abs() / var_m.sqrt() > params.mahalanobis_threshold {
        let variance = (var_m + params.outlier_variance).min(params.max_variance);
        return Ok((CellState { height: h, variance }, Disposition::Outlier));
    }
    let sum = var_m + point_variance;
    Ok((
        CellState {
            height: (point_variance * h + var_m * p_z) / sum,
            variance: (var_m * point_variance / sum).min(params.max_variance),
        },
        Disposition::Fused,
    ))
}

struct Prepared {
    point: Point,
    variance: f64,
    cell: Option<usize>,
}

#[derive(Default)]
struct CellOutcome {
    state: Option<CellState>,
    fused: usize,
    outliers: usize,
    ignored: usize,
}

fn fuse_cell_sequence<'a>(
    prior: Option<CellState>,
    count: u32,
    points: impl Iterator<Item = &'a Prepared>,
    params: &UpdateParams,
) -> Result<CellOutcome> {
    let mut out = CellOutcome {
        state: prior,
        ..Default::default()
    };
    for p in points {
        let (next, disp) = kalman_update_cell(out.state, p.point[2], p.variance, count, params)?;
        out.state = Some(next);
        match disp {
            Disposition::Fused => out.fused += 1,
            Disposition::Outlier => out.outliers += 1,
            Disposition::IgnoredLow => out.ignored += 1,
        }
    }
    Ok(out)
}

/// Fuses one scan into the map.
///
/// Order: recenter on the pose, transform and filter the points, estimate and
/// remove height drift, pre-count, height update, ray casting (cleanup and
/// upper bound), overlap clearance, normals, traversability, and finally time
/// variance for cells that received no measurement.
pub fn integrate_scan(
    map: &mut ElevationMap,
    cloud: &PointCloud,
    pose: &RigidTransform,
    params: &PipelineParams,
) -> Result<ScanStats> {
    pose.validate()?;
    let up = &params.update;
    let mode = params.mode;
    let now = cloud.stamp;
    let origin = pose.origin();
    let mut stats = ScanStats {
        points_in: cloud.len(),
        ..Default::default()
    };
    let mut timings = PhaseTimings::default();

    // Transform, filter and pre-count.
    let t = Instant::now();
    map.recenter([origin[0], origin[1]]);
    let spec = *map.spec();
    let max_range_sq = up.max_range * up.max_range;
    let prepare = |p: &Point| -> Result<Prepared, bool> {
        let d2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        if !(d2 <= max_range_sq) {
            return Err(false);
        }
        let q = pose.apply(p);
        let rel = [q[0] - origin[0], q[1] - origin[1], q[2] - origin[2]];
        if sensing::is_excluded(&rel, &up.exclusion) {
            return Err(true);
        }
        Ok(Prepared {
            point: q,
            variance: sensing::point_variance(d2.sqrt(), &up.noise),
            cell: spec.flat_at(q[0], q[1]),
        })
    };
    let results: Vec<Result<Prepared, bool>> = match mode {
        ExecMode::Deterministic => cloud.points.iter().map(prepare).collect(),
        ExecMode::Parallel => cloud.points.par_iter().map(prepare).collect(),
    };
    let mut prepared = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(p) => prepared.push(p),
            Err(true) => stats.points_excluded += 1,
            Err(false) => stats.points_out_of_range += 1,
        }
    }
    let in_map: Vec<Point> = prepared
        .iter()
        .filter(|p| p.cell.is_some())
        .map(|p| p.point)
        .collect();
    stats.points_out_of_map = prepared.len() - in_map.len();
    let drift_estimate = up
        .drift_enabled
        .then(|| drift::compute_drift_error(map, &in_map, &params.drift, mode));
    let tally = precount_scan(&in_map, map);
    timings.add(Phase::TransformAndErrorCount, t);

    let t = Instant::now();
    if let Some(est) = drift_estimate {
        stats.drift_points = est.n;
        if est.n >= params.drift.min_points {
            let applied = drift::apply_height_offset(map, est.mean_error, &params.drift);
            stats.drift_offset_applied = applied.offset;
            stats.drift_clamped = applied.clamped;
        }
    }
    timings.add(Phase::DriftCompensation, t);

    // Height update, then the batched ray pass against the updated map.
    let t = Instant::now();
    let mut updated = vec![false; spec.len()];
    let prior_of = |m: &ElevationMap, i: usize| {
        m.valid[i].then(|| CellState {
            height: m.elevation[i],
            variance: m.variance[i],
        })
    };
    let outcomes: Vec<(usize, CellOutcome)> = match mode {
        ExecMode::Deterministic => {
            // Sequential in scan order.
            let mut touched = Vec::new();
            let mut per_cell: Vec<Option<CellOutcome>> = Vec::new();
            let mut slot = vec![usize::MAX; spec.len()];
            for p in &prepared {
                let Some(i) = p.cell else { continue };
                if slot[i] == usize::MAX {
                    slot[i] = per_cell.len();
                    touched.push(i);
                    per_cell.push(Some(CellOutcome {
                        state: prior_of(map, i),
                        ..Default::default()
                    }));
                }
                let o = per_cell[slot[i]].as_mut().expect("slot filled");
                let step = fuse_cell_sequence(o.state, tally.count[i], std::iter::once(p), up)?;
                o.state = step.state;
                o.fused += step.fused;
                o.outliers += step.outliers;
                o.ignored += step.ignored;
            }
            touched
                .into_iter()
                .zip(per_cell)
                .map(|(i, o)| (i, o.expect("filled")))
                .collect()
        }
        ExecMode::Parallel => {
            // Each cell is owned by exactly one task; within a cell the scan order is kept.
            let mut order: Vec<(usize, usize)> = prepared
                .iter()
                .enumerate()
                .filter_map(|(k, p)| p.cell.map(|c| (c, k)))
                .collect();
            order.par_sort_unstable();
            let groups: Vec<&[(usize, usize)]> = order.chunk_by(|a, b| a.0 == b.0).collect();
            let m: &ElevationMap = map;
            groups
                .par_iter()
                .map(|g| {
                    let i = g[0].0;
                    let pts = g.iter().map(|&(_, k)| &prepared[k]);
                    fuse_cell_sequence(prior_of(m, i), tally.count[i], pts, up).map(|o| (i, o))
                })
                .collect::<Result<_>>()?
        }
    };
    for (i, o) in &outcomes {
        stats.points_fused += o.fused;
        stats.points_rejected_outlier += o.outliers;
        stats.points_ignored_low += o.ignored;
        let Some(state) = o.state else { continue };
        if o.fused > 0 {
            map.set_estimate(*i, state.height, state.variance, now);
            updated[*i] = true;
            stats.cells_updated += 1;
        } else if map.valid[*i] {
            map.variance[*i] = state.variance;
        }
    }
    map.scan_point_count = tally.count;

    let endpoints: Vec<Point> = prepared.iter().map(|p| p.point).collect();
    let rays = raycast::cast_rays(map, &origin, &endpoints, &params.cleanup, now, mode);
    stats.cells_removed_by_cleanup = rays.removed.len();
    stats.upper_bounds_lowered = rays.upper_bounds_lowered;

    if let Some(prev) = map.last_scan_time {
        let growth = up.variance_growth();
        map.add_time_variance_where(now - prev, &growth, |i| !updated[i]);
    }
    map.last_scan_time = Some(now);
    timings.add(Phase::HeightUpdateAndRaycast, t);

    let t = Instant::now();
    if up.overlap_enabled {
        let cleared = analysis::overlap_clearance(map, [origin[0], origin[1]], origin[2], &params.overlap);
        stats.cells_cleared_by_overlap = cleared.len();
    }
    timings.add(Phase::OverlapClearance, t);

    let t = Instant::now();
    analysis::compute_normals(map, mode);
    timings.add(Phase::NormalCalculation, t);

    let t = Instant::now();
    params.traversability.apply(map, mode)?;
    timings.add(Phase::Traversability, t);

    stats.phase_timings = timings;
    debug_assert!(stats.is_conserved());
    Ok(stats)
}
