//! Per-cell terrain analysis: surface normals, traversability and overlap
//! clearance.

pub mod convnet;

use crate::error::{Error, Result};
use crate::grid::{CellIndex, ElevationMap};
use crate::{cell_map, ExecMode};

pub use convnet::{Activation, ConvLayer, ConvNetSpec};

/// Recomputes the normal layer from the raw elevation.
///
/// Gradients use central differences where both neighbors along an axis are
/// valid and one-sided differences where only one is. A cell needs at least one
/// valid neighbor on each axis to get a normal.
pub fn compute_normals(map: &mut ElevationMap, mode: ExecMode) {
    let spec = *map.spec();
    let (w, h, res) = (spec.width, spec.height, spec.resolution);
    let normals: Vec<Option<[f64; 3]>> = {
        let m: &ElevationMap = map;
        let at = |r: usize, c: usize| -> Option<f64> {
            let i = r * w + c;
            m.valid[i].then(|| m.elevation[i])
        };
        cell_map(spec.len(), mode, |i| {
            if !m.valid[i] {
                return None;
            }
            let (r, c) = (i / w, i % w);
            let hc = m.elevation[i];
            let gradient = |lo: Option<f64>, hi: Option<f64>| -> Option<f64> {
                match (lo, hi) {
                    (Some(a), Some(b)) => Some((b - a) / (2.0 * res)),
                    (Some(a), None) => Some((hc - a) / res),
                    (None, Some(b)) => Some((b - hc) / res),
                    (None, None) => None,
                }
            };
            let left = (c > 0).then(|| at(r, c - 1)).flatten();
            let right = (c + 1 < w).then(|| at(r, c + 1)).flatten();
            let down = (r > 0).then(|| at(r - 1, c)).flatten();
            let up = (r + 1 < h).then(|| at(r + 1, c)).flatten();
            let gx = gradient(left, right)?;
            let gy = gradient(down, up)?;
            let n = (gx * gx + gy * gy + 1.0).sqrt();
            Some([-gx / n, -gy / n, 1.0 / n])
        })
    };
    for (i, n) in normals.into_iter().enumerate() {
        match n {
            Some(n) => {
                map.normal[i] = n;
                map.normal_valid[i] = true;
            }
            None => {
                map.normal[i] = [f64::NAN; 3];
                map.normal_valid[i] = false;
            }
        }
    }
}

/// Geometric traversability from slope, step height and roughness.
#[derive(Clone, Debug, PartialEq)]
pub struct TraversabilityParams {
    /// Radians.
    pub slope_max: f64,
    /// Meters.
    pub step_max: f64,
    /// Meters (standard deviation).
    pub roughness_max: f64,
    /// Odd window size in cells.
    pub window: usize,
    /// Weights of slope, step and roughness scores.
    pub weights: [f64; 3],
}

impl Default for TraversabilityParams {
    fn default() -> Self {
        Self {
            slope_max: 30f64.to_radians(),
            step_max: 0.2,
            roughness_max: 0.1,
            window: 5,
            weights: [0.4, 0.3, 0.3],
        }
    }
}

impl TraversabilityParams {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        let ok = self.window >= 3
            && self.window % 2 == 1
            && self.slope_max > 0.0
            && self.step_max > 0.0
            && self.roughness_max > 0.0
            && self.weights.iter().all(|w| *w >= 0.0)
            && (sum - 1.0).abs() < 1e-9;
        if !ok {
            return Err(Error::InvalidParam(format!("bad traversability params {self:?}")));
        }
        Ok(())
    }
}

/// Individual scores `[slope, step, roughness]` of one cell, each in `[0, 1]`.
pub fn geometric_scores(map: &ElevationMap, i: usize, params: &TraversabilityParams) -> [f64; 3] {
    let spec = map.spec();
    let (w, h) = (spec.width as i64, spec.height as i64);
    let clamp01 = |v: f64| v.clamp(0.0, 1.0);

    let slope = if map.normal_valid[i] {
        let nz = map.normal[i][2].clamp(-1.0, 1.0);
        clamp01(1.0 - nz.acos() / params.slope_max)
    } else {
        0.0
    };

    let radius = (params.window / 2) as i64;
    let (r0, c0) = ((i as i64) / w, (i as i64) % w);
    let hc = map.elevation[i];
    let mut max_step = 0.0f64;
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    for r in (r0 - radius).max(0)..=(r0 + radius).min(h - 1) {
        for c in (c0 - radius).max(0)..=(c0 + radius).min(w - 1) {
            let j = (r * w + c) as usize;
            if !map.valid[j] {
                continue;
            }
            let d = map.elevation[j] - hc;
            max_step = max_step.max(d.abs());
            n += 1;
            sum += d;
            sum_sq += d * d;
        }
    }
    let mean = sum / n as f64;
    let std = (sum_sq / n as f64 - mean * mean).max(0.0).sqrt();
    [
        slope,
        clamp01(1.0 - max_step / params.step_max),
        clamp01(1.0 - std / params.roughness_max),
    ]
}

pub fn traversability_geometric(map: &mut ElevationMap, params: &TraversabilityParams, mode: ExecMode) {
    let values = {
        let m: &ElevationMap = map;
        cell_map(m.len(), mode, |i| {
            if !m.valid[i] {
                return f64::NAN;
            }
            let s = geometric_scores(m, i, params);
            (params.weights[0] * s[0] + params.weights[1] * s[1] + params.weights[2] * s[2])
                .clamp(0.0, 1.0)
        })
    };
    map.traversability = values;
}

/// Which traversability estimator the pipeline runs.
#[derive(Clone, Debug, PartialEq)]
pub enum TraversabilityFilter {
    Geometric(TraversabilityParams),
    ConvNet(ConvNetSpec),
}

impl Default for TraversabilityFilter {
    fn default() -> Self {
        TraversabilityFilter::Geometric(TraversabilityParams::default())
    }
}

impl TraversabilityFilter {
    pub fn apply(&self, map: &mut ElevationMap, mode: ExecMode) -> Result<()> {
        match self {
            TraversabilityFilter::Geometric(p) => traversability_geometric(map, p, mode),
            TraversabilityFilter::ConvNet(spec) => {
                let input = map.layer(&spec.input)?;
                let out = convnet::conv_filter_inference(&input, spec, mode)?;
                for i in 0..map.len() {
                    map.traversability[i] = if map.valid[i] { out[i] } else { f64::NAN };
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapParams {
    /// Meters, horizontal distance from the robot.
    pub radius: f64,
    /// Meters.
    pub height_threshold: f64,
}

impl Default for OverlapParams {
    fn default() -> Self {
        Self {
            radius: 1.5,
            height_threshold: 1.0,
        }
    }
}

impl OverlapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.height_threshold > 0.0) {
            return Err(Error::InvalidParam(format!("bad overlap params {self:?}")));
        }
        Ok(())
    }
}

/// Invalidates cells near the robot whose height is far from the robot's.
pub fn overlap_clearance(
    map: &mut ElevationMap,
    robot_xy: [f64; 2],
    robot_z: f64,
    params: &OverlapParams,
) -> Vec<CellIndex> {
    let spec = *map.spec();
    let res = spec.resolution;
    let [cc, cr] = spec.cell_coords(robot_xy[0], robot_xy[1]);
    let reach = (params.radius / res).ceil() + 1.0;
    let c_lo = (cc - reach).floor().max(0.0) as usize;
    let r_lo = (cr - reach).floor().max(0.0) as usize;
    let c_hi = ((cc + reach).ceil().max(0.0) as usize).min(spec.width);
    let r_hi = ((cr + reach).ceil().max(0.0) as usize).min(spec.height);
    let r2 = params.radius * params.radius;
    let mut cleared = Vec::new();
    for row in r_lo..r_hi {
        for col in c_lo..c_hi {
            let idx = CellIndex::new(row, col);
            let i = spec.flat(idx);
            if !map.valid[i] {
                continue;
            }
            let [x, y] = spec.index_to_world(idx);
            let d2 = (x - robot_xy[0]).powi(2) + (y - robot_xy[1]).powi(2);
            if d2 <= r2 && (map.elevation[i] - robot_z).abs() > params.height_threshold {
                map.invalidate(i);
                map.clear_upper_bound(i);
                cleared.push(idx);
            }
        }
    }
    cleared
}
