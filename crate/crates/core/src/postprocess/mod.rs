//! Map products for locomotion planning: hole filling, smoothing chains and
//! planar regions.

mod planes;

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::Layer;
use crate::{cell_map, ExecMode};

pub use planes::{
    fit_plane, polygon_area, segment_planes, PlanarRegion, Plane, PlaneFit, PlaneSegParams, Polygon,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterStep {
    /// `sigma` and `radius` in cells.
    Gaussian { sigma: f64, radius: usize },
    Box { radius: usize },
    Median { radius: usize },
    MinInpaint,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterChainSpec {
    pub steps: Vec<FilterStep>,
}

impl FilterChainSpec {
    pub fn new(steps: Vec<FilterStep>) -> Self {
        Self { steps }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.steps.iter().enumerate() {
            let ok = match *s {
                FilterStep::Gaussian { sigma, radius } => sigma > 0.0 && radius >= 1,
                FilterStep::Box { radius } | FilterStep::Median { radius } => radius >= 1,
                FilterStep::MinInpaint => true,
            };
            if !ok {
                return Err(Error::InvalidParam(format!("filter step {k}: {s:?}")));
            }
        }
        Ok(())
    }
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / w, i % w);
    [
        (r > 0).then(|| i - w),
        (c > 0).then(|| i - 1),
        (c + 1 < w).then(|| i + 1),
        (r + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

fn neighbors8(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (r, c) = ((i / w) as i64, (i % w) as i64);
    (-1i64..=1)
        .flat_map(move |dr| (-1i64..=1).map(move |dc| (r + dr, c + dc)))
        .filter(move |&(rr, cc)| {
            (rr, cc) != (r, c) && rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64
        })
        .map(move |(rr, cc)| rr as usize * w + cc as usize)
}

/// Fills every 4-connected group of invalid cells with the lowest valid
/// height 8-adjacent to the group.
pub fn inpaint_min(layer: &Layer) -> Result<Layer> {
    let (w, h) = (layer.width, layer.height);
    if !layer.valid.iter().any(|v| *v) {
        return Err(Error::NothingToInpaint);
    }
    let mut out = layer.clone();
    let mut seen = layer.valid.clone();
    let mut component = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        component.clear();
        seen[start] = true;
        queue.push_back(start);
        let mut border_min = f64::INFINITY;
        while let Some(i) = queue.pop_front() {
            component.push(i);
            for j in neighbors8(i, w, h) {
                if layer.valid[j] {
                    border_min = border_min.min(layer.values[j]);
                }
            }
            for j in neighbors4(i, w, h) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if border_min.is_finite() {
            for &i in &component {
                out.values[i] = border_min;
                out.valid[i] = true;
            }
        }
    }
    Ok(out)
}

fn window(i: usize, w: usize, h: usize, radius: usize) -> impl Iterator<Item = (usize, i64, i64)> {
    let (r, c) = ((i / w) as i64, (i % w) as i64);
    let rad = radius as i64;
    (-rad..=rad)
        .flat_map(move |dr| (-rad..=rad).map(move |dc| (dr, dc)))
        .filter_map(move |(dr, dc)| {
            let (rr, cc) = (r + dr, c + dc);
            (rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64)
                .then(|| (rr as usize * w + cc as usize, dr, dc))
        })
}

fn weighted_mean(layer: &Layer, radius: usize, weight: impl Fn(i64, i64) -> f64 + Sync, mode: ExecMode) -> Vec<f64> {
    let (w, h) = (layer.width, layer.height);
    cell_map(layer.len(), mode, |i| {
        if !layer.valid[i] {
            return layer.values[i];
        }
        // Accumulating offsets from the center keeps a constant layer exact.
        let center = layer.values[i];
        let (mut acc, mut norm) = (0.0, 0.0);
        for (j, dr, dc) in window(i, w, h, radius) {
            if layer.valid[j] {
                let k = weight(dr, dc);
                acc += k * (layer.values[j] - center);
                norm += k;
            }
        }
        center + acc / norm
    })
}

fn median(layer: &Layer, radius: usize, mode: ExecMode) -> Vec<f64> {
    let (w, h) = (layer.width, layer.height);
    cell_map(layer.len(), mode, |i| {
        if !layer.valid[i] {
            return layer.values[i];
        }
        let mut vals: Vec<f64> = window(i, w, h, radius)
            .filter(|(j, _, _)| layer.valid[*j])
            .map(|(j, _, _)| layer.values[j])
            .collect();
        vals.sort_by(f64::total_cmp);
        let m = vals.len() / 2;
        if vals.len() % 2 == 1 {
            vals[m]
        } else {
            0.5 * (vals[m - 1] + vals[m])
        }
    })
}

/// Applies the steps in order. Kernels and medians only see valid cells, so
/// validity changes only through `MinInpaint`.
pub fn smooth_chain(layer: &Layer, chain: &FilterChainSpec, mode: ExecMode) -> Result<Layer> {
    chain.validate()?;
    let mut cur = layer.clone();
    for step in &chain.steps {
        match *step {
            FilterStep::Gaussian { sigma, radius } => {
                let s2 = 2.0 * sigma * sigma;
                cur.values = weighted_mean(&cur, radius, |dr, dc| (-((dr * dr + dc * dc) as f64) / s2).exp(), mode);
            }
            FilterStep::Box { radius } => cur.values = weighted_mean(&cur, radius, |_, _| 1.0, mode),
            FilterStep::Median { radius } => cur.values = median(&cur, radius, mode),
            FilterStep::MinInpaint => match inpaint_min(&cur) {
                Ok(filled) => cur = filled,
                Err(Error::NothingToInpaint) => {}
                Err(e) => return Err(e),
            },
        }
    }
    Ok(cur)
}
