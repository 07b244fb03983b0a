//! Grid traversal along sensor rays, visibility cleanup and the upper-bound layer.
//!
//! Traversal is an exact boundary-crossing walk (Amanatides–Woo style) over
//! the xy projection of the segment, so no cell is skipped at shallow angles.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CellIndex, ElevationMap, GridSpec};
use crate::sensing::Point;
use crate::ExecMode;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CleanupParams {
    /// Minimum `|r·n|` for a penetrated cell to be removed.
    pub alpha_n: f64,
    /// Seconds a cell must have gone without an update before removal.
    pub t_free: f64,
    pub cleanup_enabled: bool,
    pub upper_bound_enabled: bool,
}

impl Default for CleanupParams {
    fn default() -> Self {
        Self {
            alpha_n: 0.2,
            t_free: 1.0,
            cleanup_enabled: true,
            upper_bound_enabled: true,
        }
    }
}

impl CleanupParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_n) || !(self.t_free >= 0.0) {
            return Err(Error::InvalidParam(format!("bad cleanup params {self:?}")));
        }
        Ok(())
    }
}

/// A cell crossed by a ray and the ray's height at the middle of the crossing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayCell {
    pub index: CellIndex,
    pub ray_height: f64,
}

/// Cells crossed by the xy projection of `origin → endpoint`, in order,
/// excluding the endpoint's own cell. A vertical ray yields its origin cell.
pub fn traverse_cells(origin: &Point, endpoint: &Point, spec: &GridSpec) -> Vec<RayCell> {
    let mut out = Vec::new();
    walk(origin, endpoint, spec, false, |index, ray_height| {
        out.push(RayCell { index, ray_height })
    });
    out
}

/// Visits the same cells as [`traverse_cells`] without allocating.
#[inline]
pub fn for_each_ray_cell(
    origin: &Point,
    endpoint: &Point,
    spec: &GridSpec,
    visit: impl FnMut(CellIndex, f64),
) {
    walk(origin, endpoint, spec, false, visit);
}

/// Full chain including the endpoint cell; used for symmetry checks.
pub fn traverse_cells_inclusive(origin: &Point, endpoint: &Point, spec: &GridSpec) -> Vec<RayCell> {
    let mut out = Vec::new();
    walk(origin, endpoint, spec, true, |index, ray_height| {
        out.push(RayCell { index, ray_height })
    });
    out
}

fn walk(
    a: &Point,
    b: &Point,
    spec: &GridSpec,
    include_end: bool,
    mut visit: impl FnMut(CellIndex, f64),
) {
    let (w, h) = (spec.width as i64, spec.height as i64);
    let [u0, v0] = spec.cell_coords(a[0], a[1]);
    let [u1, v1] = spec.cell_coords(b[0], b[1]);
    let (du, dv) = (u1 - u0, v1 - v0);
    let z_at = |t: f64| a[2] + t * (b[2] - a[2]);

    if du == 0.0 && dv == 0.0 {
        if let Some(idx) = spec.try_index(a[0], a[1]) {
            visit(idx, z_at(0.5));
        }
        return;
    }

    // Clip the parameter range to the grid rectangle [0, w] × [0, h].
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, d, hi) in [(u0, du, w as f64), (v0, dv, h as f64)] {
        if d == 0.0 {
            if p < 0.0 || p >= hi {
                return;
            }
        } else {
            let (ta, tb) = ((0.0 - p) / d, (hi - p) / d);
            let (lo, up) = if ta < tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(up);
        }
    }
    if !(t0 < t1) {
        return;
    }

    let end_cell = if include_end { None } else { spec.try_index(b[0], b[1]) };

    let start_u = u0 + t0 * du;
    let start_v = v0 + t0 * dv;
    let mut col = (start_u.floor() as i64).clamp(0, w - 1);
    let mut row = (start_v.floor() as i64).clamp(0, h - 1);

    let step_c: i64 = if du > 0.0 { 1 } else { -1 };
    let step_r: i64 = if dv > 0.0 { 1 } else { -1 };
    let next_boundary = |cell: i64, p0: f64, d: f64| -> f64 {
        if d > 0.0 {
            (cell as f64 + 1.0 - p0) / d
        } else if d < 0.0 {
            (cell as f64 - p0) / d
        } else {
            f64::INFINITY
        }
    };
    // Crossing parameters are recomputed from the cell index rather than
    // accumulated, so corner ties are decided without drift.
    let mut t_max_c = next_boundary(col, u0, du);
    let mut t_max_r = next_boundary(row, v0, dv);

    let mut t_in = t0;
    let limit = (w + h + 4) as usize;
    for _ in 0..limit {
        let t_out = t_max_c.min(t_max_r).min(t1);
        let idx = CellIndex::new(row as usize, col as usize);
        // Cells touched with zero length (an origin on a cell edge) are skipped.
        let crossed = t_out > t_in;
        if t_out >= t1 {
            if crossed && end_cell != Some(idx) {
                visit(idx, z_at(0.5 * (t_in + t_out)));
            }
            return;
        }
        if crossed {
            visit(idx, z_at(0.5 * (t_in + t_out)));
        }
        t_in = t_in.max(t_out);
        if t_max_c <= t_max_r {
            col += step_c;
            t_max_c = next_boundary(col, u0, du);
        }
        if t_max_r <= t_in {
            row += step_r;
            t_max_r = next_boundary(row, v0, dv);
        }
        if col < 0 || col >= w || row < 0 || row >= h {
            return;
        }
    }
}

/// Unit direction of `origin → endpoint`.
#[inline]
pub fn ray_direction(origin: &Point, endpoint: &Point) -> Point {
    let d = [
        endpoint[0] - origin[0],
        endpoint[1] - origin[1],
        endpoint[2] - origin[2],
    ];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n > 0.0 {
        [d[0] / n, d[1] / n, d[2] / n]
    } else {
        [0.0, 0.0, -1.0]
    }
}

/// All four removal gates for one traversed cell.
#[inline]
pub fn is_penetrated(
    map: &ElevationMap,
    i: usize,
    ray_height: f64,
    dir: &Point,
    params: &CleanupParams,
    now: f64,
) -> bool {
    if !map.valid[i] || !map.normal_valid[i] {
        return false;
    }
    let sigma = map.variance[i].sqrt();
    if !(ray_height < map.elevation[i] - sigma) {
        return false;
    }
    // A NaN stamp (never updated) fails this comparison and keeps the cell.
    if !(now - map.last_update[i] > params.t_free) {
        return false;
    }
    let n = map.normal[i];
    (dir[0] * n[0] + dir[1] * n[1] + dir[2] * n[2]).abs() > params.alpha_n
}

/// Removes every cell along the ray that the ray demonstrably passed through.
pub fn visibility_cleanup(
    map: &mut ElevationMap,
    origin: &Point,
    endpoint: &Point,
    params: &CleanupParams,
    now: f64,
) -> Vec<CellIndex> {
    let spec = *map.spec();
    let dir = ray_direction(origin, endpoint);
    let mut removed = Vec::new();
    for_each_ray_cell(origin, endpoint, &spec, |idx, z| {
        let i = spec.flat(idx);
        if is_penetrated(map, i, z, &dir, params, now) {
            removed.push(idx);
        }
    });
    for idx in &removed {
        map.invalidate(spec.flat(*idx));
    }
    removed
}

/// Lowers the upper bound of unobserved traversed cells to the ray height.
pub fn update_upper_bound(map: &mut ElevationMap, traversed: &[RayCell]) {
    let spec = *map.spec();
    for rc in traversed {
        let i = spec.flat(rc.index);
        if map.valid[i] {
            continue;
        }
        lower_bound_to(map, i, rc.ray_height);
    }
}

#[inline]
fn lower_bound_to(map: &mut ElevationMap, i: usize, z: f64) {
    if !map.upper_bound_valid[i] || z < map.upper_bound[i] {
        map.upper_bound[i] = z;
        map.upper_bound_valid[i] = true;
    }
}

/// Result of the batched ray pass of one scan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaycastOutcome {
    /// Flat indices of removed cells, ascending.
    pub removed: Vec<usize>,
    pub upper_bounds_lowered: usize,
}

/// Casts one ray per endpoint from `origin` and applies cleanup and upper-bound
/// updates for the whole batch.
///
/// Removal is decided against the map state on entry and is idempotent; the
/// upper-bound candidates are a per-cell minimum. Both are order independent,
/// so sequential and parallel execution give identical maps. Upper bounds are
/// applied to cells that are unobserved after this batch's removals.
pub fn cast_rays(
    map: &mut ElevationMap,
    origin: &Point,
    endpoints: &[Point],
    params: &CleanupParams,
    now: f64,
    mode: ExecMode,
) -> RaycastOutcome {
    if !params.cleanup_enabled && !params.upper_bound_enabled {
        return RaycastOutcome::default();
    }
    let spec = *map.spec();
    let n = spec.len();
    let remove: Vec<AtomicBool> = (0..n).map(|_| AtomicBool::new(false)).collect();
    let ceiling: Vec<AtomicU64> = (0..n)
        .map(|_| AtomicU64::new(f64::INFINITY.to_bits()))
        .collect();

    {
        let map_ref: &ElevationMap = map;
        let one_ray = |endpoint: &Point| {
            let dir = ray_direction(origin, endpoint);
            for_each_ray_cell(origin, endpoint, &spec, |idx, z| {
                let i = spec.flat(idx);
                if params.cleanup_enabled && is_penetrated(map_ref, i, z, &dir, params, now) {
                    remove[i].store(true, Ordering::Relaxed);
                }
                if params.upper_bound_enabled {
                    atomic_min_f64(&ceiling[i], z);
                }
            });
        };
        match mode {
            ExecMode::Deterministic => endpoints.iter().for_each(one_ray),
            ExecMode::Parallel => endpoints.par_iter().for_each(one_ray),
        }
    }

    let mut outcome = RaycastOutcome::default();
    for i in 0..n {
        if remove[i].load(Ordering::Relaxed) {
            map.invalidate(i);
            outcome.removed.push(i);
        }
    }
    if params.upper_bound_enabled {
        for i in 0..n {
            let z = f64::from_bits(ceiling[i].load(Ordering::Relaxed));
            if z.is_finite() && !map.valid[i] {
                let before = (map.upper_bound_valid[i], map.upper_bound[i].to_bits());
                lower_bound_to(map, i, z);
                if before != (map.upper_bound_valid[i], map.upper_bound[i].to_bits()) {
                    outcome.upper_bounds_lowered += 1;
                }
            }
        }
    }
    outcome
}

#[inline]
fn atomic_min_f64(slot: &AtomicU64, z: f64) {
    let mut cur = slot.load(Ordering::Relaxed);
    while z < f64::from_bits(cur) {
        match slot.compare_exchange_weak(cur, z.to_bits(), Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(actual) => cur = actual,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> GridSpec {
        GridSpec::new(0.04, 250, 250, [0.0, 0.0]).unwrap()
    }

    #[test]
    fn axis_aligned_three_cells() {
        let s = spec();
        let [x, y] = s.index_to_world(CellIndex::new(100, 100));
        let cells = traverse_cells(&[x, y, 1.0], &[x + 0.12, y, 0.0], &s);
        let cols: Vec<_> = cells.iter().map(|c| c.index.col).collect();
        assert_eq!(cols, vec![100, 101, 102]);
        assert!(cells.iter().all(|c| c.index.row == 100));
        // Heights decrease monotonically along a descending ray.
        assert!(cells.windows(2).all(|w| w[0].ray_height > w[1].ray_height));
    }

    #[test]
    fn vertical_ray_is_origin_cell() {
        let s = spec();
        let cells = traverse_cells(&[0.3, 0.3, 1.0], &[0.3, 0.3, 0.0], &s);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].index, s.world_to_index(0.3, 0.3).unwrap());
        assert!((cells[0].ray_height - 0.5).abs() < 1e-12);
    }

    #[test]
    fn segment_outside_map_is_empty() {
        let s = spec();
        assert!(traverse_cells(&[6.0, 6.0, 1.0], &[7.0, 8.0, 0.0], &s).is_empty());
    }

    #[test]
    fn clipped_segment_enters_from_edge() {
        let s = spec();
        let cells = traverse_cells(&[-6.0, 0.01, 1.0], &[-4.9, 0.01, 0.0], &s);
        assert_eq!(cells.first().unwrap().index.col, 0);
        // (-4.9 + 5) / 0.04 = 2.5 → endpoint in col 2, excluded.
        assert_eq!(cells.len(), 2);
    }

    fn map_with_box() -> (ElevationMap, usize) {
        let s = GridSpec::new(0.1, 20, 20, [0.0, 0.0]).unwrap();
        let mut m = ElevationMap::new(s);
        let i = s.flat(s.world_to_index(0.55, 0.05).unwrap());
        m.set_estimate(i, 1.0, 0.01, 0.0);
        m.normal[i] = [0.0, 0.0, 1.0];
        m.normal_valid[i] = true;
        (m, i)
    }

    #[test]
    fn cleanup_gates() {
        let p = CleanupParams {
            alpha_n: 0.5,
            t_free: 1.0,
            ..Default::default()
        };
        // Ray from (0,0.05,1.4) to (1.0,0.05,-0.4): slope -1.8 per meter; at x=0.55 → z=0.41.
        let origin = [0.0, 0.05, 1.4];
        let end = [1.0, 0.05, -0.4];
        let dir = ray_direction(&origin, &end);
        assert!(dir[2].abs() > 0.5);

        let (mut m, i) = map_with_box();
        let removed = visibility_cleanup(&mut m, &origin, &end, &p, 5.0);
        assert_eq!(removed.len(), 1);
        assert!(!m.valid[i]);

        // Fresh cell survives the staleness gate.
        let (mut m, i) = map_with_box();
        assert!(visibility_cleanup(&mut m, &origin, &end, &p, 0.5).is_empty());
        assert!(m.valid[i]);

        // Ray passing at 0.95 > h − σ = 0.9 keeps the cell.
        let (mut m, i) = map_with_box();
        let high = [[0.0, 0.05, 0.95], [1.0, 0.05, 0.95]];
        assert!(visibility_cleanup(&mut m, &high[0], &high[1], &p, 5.0).is_empty());
        assert!(m.valid[i]);

        // No normal, no removal.
        let (mut m, i) = map_with_box();
        m.normal_valid[i] = false;
        assert!(visibility_cleanup(&mut m, &origin, &end, &p, 5.0).is_empty());
    }

    #[test]
    fn penetration_hand_example() {
        // h=1.0, σ=0.1, ray at 0.5, stale, |r·n| = 0.9 > 0.5.
        let (m, i) = map_with_box();
        let dir = [0.0, (1.0f64 - 0.81).sqrt(), -0.9];
        let p = CleanupParams {
            alpha_n: 0.5,
            ..Default::default()
        };
        assert!(is_penetrated(&m, i, 0.5, &dir, &p, 10.0));
        assert!(!is_penetrated(&m, i, 0.95, &dir, &p, 10.0));
        let grazing = [1.0f64, 0.0, -0.1];
        assert!(!is_penetrated(&m, i, 0.5, &grazing, &p, 10.0));
    }

    #[test]
    fn upper_bound_running_min_and_skip() {
        let s = GridSpec::new(0.1, 5, 5, [0.0; 2]).unwrap();
        let mut m = ElevationMap::new(s);
        let c = CellIndex::new(2, 2);
        update_upper_bound(&mut m, &[RayCell { index: c, ray_height: 0.8 }]);
        update_upper_bound(&mut m, &[RayCell { index: c, ray_height: 0.6 }]);
        update_upper_bound(&mut m, &[RayCell { index: c, ray_height: 0.7 }]);
        assert_eq!(m.upper_bound[s.flat(c)], 0.6);
        let v = CellIndex::new(1, 1);
        m.set_estimate(s.flat(v), 0.2, 0.01, 0.0);
        update_upper_bound(&mut m, &[RayCell { index: v, ray_height: 0.1 }]);
        assert_eq!(m.upper_bound[s.flat(v)], 0.2);
    }

    proptest! {
        #[test]
        fn reversal_symmetry(
            a in prop::array::uniform3(-6.0f64..6.0),
            b in prop::array::uniform3(-6.0f64..6.0),
        ) {
            let s = spec();
            let fwd: Vec<_> = traverse_cells_inclusive(&a, &b, &s).iter().map(|c| c.index).collect();
            let mut back: Vec<_> = traverse_cells_inclusive(&b, &a, &s).iter().map(|c| c.index).collect();
            back.reverse();
            prop_assert_eq!(fwd, back);
        }

        #[test]
        fn chain_is_connected(
            a in prop::array::uniform3(-4.9f64..4.9),
            b in prop::array::uniform3(-4.9f64..4.9),
        ) {
            let s = spec();
            let cells = traverse_cells_inclusive(&a, &b, &s);
            for w in cells.windows(2) {
                let dr = (w[0].index.row as i64 - w[1].index.row as i64).abs();
                let dc = (w[0].index.col as i64 - w[1].index.col as i64).abs();
                prop_assert!(dr <= 1 && dc <= 1 && dr + dc >= 1);
            }
            prop_assert_eq!(cells.first().unwrap().index, s.world_to_index(a[0], a[1]).unwrap());
            prop_assert_eq!(cells.last().unwrap().index, s.world_to_index(b[0], b[1]).unwrap());
        }
    }
}
