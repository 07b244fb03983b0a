//! Plane fitting, region growing and boundary polygons.

use std::collections::{HashMap, VecDeque};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::grid::{ElevationMap, GridSpec};

/// `normal · p = offset` for points `p` on the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    /// Signed point-to-plane distance.
    pub fn distance(&self, p: &[f64; 3]) -> f64 {
        dot(&self.normal, p) - self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFit {
    pub plane: Plane,
    /// Root mean square point-to-plane distance.
    pub rms: f64,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Total least squares plane through `points`; the normal points up.
pub fn fit_plane(points: &[[f64; 3]]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::DegeneratePlane("fewer than three cells"));
    }
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::new(p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        cov += d * d.transpose();
    }
    cov /= n;

    // Cells of a height map are collinear as soon as their xy footprint is.
    let (sxx, syy, sxy) = (cov[(0, 0)], cov[(1, 1)], cov[(0, 1)]);
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    if tr <= 0.0 || det <= 1e-12 * tr * tr {
        return Err(Error::DegeneratePlane("collinear cells"));
    }

    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(k);
    let mut normal = [v[0], v[1], v[2]];
    let len = dot(&normal, &normal).sqrt();
    normal.iter_mut().for_each(|c| *c /= len);
    if normal[2] < 0.0 {
        normal.iter_mut().for_each(|c| *c = -*c);
    }
    if normal[2] <= 0.0 {
        return Err(Error::DegeneratePlane("vertical plane"));
    }
    let plane = Plane {
        normal,
        offset: dot(&normal, &mean),
    };
    let ss: f64 = points.iter().map(|p| plane.distance(p).powi(2)).sum();
    Ok(PlaneFit {
        plane,
        rms: (ss / n).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneSegParams {
    /// Radians between a cell normal and the region normal.
    pub normal_angle_max: f64,
    /// Meters from the region plane.
    pub dist_max: f64,
    pub min_region_cells: usize,
    /// Douglas–Peucker tolerance in meters; `0` keeps every corner.
    pub polygon_simplify_tol: f64,
}

impl Default for PlaneSegParams {
    fn default() -> Self {
        Self {
            normal_angle_max: 10f64.to_radians(),
            dist_max: 0.03,
            min_region_cells: 10,
            polygon_simplify_tol: 0.02,
        }
    }
}

impl PlaneSegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.normal_angle_max > 0.0 && self.dist_max > 0.0 && self.min_region_cells >= 1)
            || !(self.polygon_simplify_tol >= 0.0)
        {
            return Err(Error::InvalidParam(format!("bad segmentation params {self:?}")));
        }
        Ok(())
    }
}

/// Ordered world xy vertices, implicitly closed.
pub type Polygon = Vec<[f64; 2]>;

/// Signed shoelace area; positive for counterclockwise loops.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarRegion {
    pub plane: Plane,
    /// Counterclockwise.
    pub outer: Polygon,
    /// Clockwise.
    pub holes: Vec<Polygon>,
    pub cell_count: usize,
    /// Flat indices of member cells, ascending.
    pub cells: Vec<usize>,
    pub rms: f64,
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

/// Largest 4-connected subset of `cells`; ties go to the component found first.
fn largest_component(cells: &[usize], w: usize, h: usize) -> Vec<usize> {
    let inside: std::collections::HashSet<usize> = cells.iter().copied().collect();
    let mut seen = std::collections::HashSet::new();
    let mut best: Vec<usize> = Vec::new();
    for &s in cells {
        if !seen.insert(s) {
            continue;
        }
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            for j in neighbors4(i, w, h) {
                if inside.contains(&j) && seen.insert(j) {
                    comp.push(j);
                    queue.push_back(j);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Greedy region growing over cells with a normal.
///
/// Seeds are taken by descending `n_z` (row-major on ties). A 4-neighbor
/// joins when its normal is within the angle limit of the region normal and
/// its center is within `dist_max` of the region plane; the plane is refit
/// after every round. Once growth stops, members that violate the final plane
/// are dropped and the plane refit until every member passes, keeping the
/// largest connected part.
pub fn segment_planes(map: &ElevationMap, params: &PlaneSegParams) -> Result<Vec<PlanarRegion>> {
    params.validate()?;
    let spec = *map.spec();
    let (w, h) = (spec.width, spec.height);
    let n = spec.len();
    let candidate = |i: usize| map.valid[i] && map.normal_valid[i];
    let point = |i: usize| -> [f64; 3] {
        let [x, y] = spec.index_to_world(spec.unflat(i));
        [x, y, map.elevation[i]]
    };
    let cos_max = params.normal_angle_max.cos();
    let accepts = |plane: &Plane, i: usize| {
        dot(&map.normal[i], &plane.normal) >= cos_max && plane.distance(&point(i)).abs() <= params.dist_max
    };
    let fit = |cells: &[usize]| fit_plane(&cells.iter().map(|&i| point(i)).collect::<Vec<_>>());

    let mut seeds: Vec<usize> = (0..n).filter(|&i| candidate(i)).collect();
    seeds.sort_by(|&a, &b| map.normal[b][2].total_cmp(&map.normal[a][2]).then(a.cmp(&b)));

    let mut owned = vec![false; n];
    let mut seeded = vec![false; n];
    // Region id + 1 of the region currently touching a cell, to avoid double visits.
    let mut mark = vec![0usize; n];
    let mut regions = Vec::new();

    for (round_id, &s) in seeds.iter().enumerate() {
        if owned[s] || seeded[s] {
            continue;
        }
        seeded[s] = true;
        let stamp = round_id + 1;
        let ns = map.normal[s];
        let mut plane = Plane {
            normal: ns,
            offset: dot(&ns, &point(s)),
        };
        mark[s] = stamp;
        let mut members = vec![s];
        let mut last_added = vec![s];
        let mut pending: Vec<usize> = Vec::new();
        loop {
            for &i in &last_added {
                for j in neighbors4(i, w, h) {
                    if mark[j] != stamp && !owned[j] && candidate(j) {
                        mark[j] = stamp;
                        pending.push(j);
                    }
                }
            }
            let (added, rejected): (Vec<usize>, Vec<usize>) = pending.iter().partition(|&&j| accepts(&plane, j));
            if added.is_empty() {
                break;
            }
            pending = rejected;
            members.extend_from_slice(&added);
            last_added = added;
            if let Ok(f) = fit(&members) {
                plane = f.plane;
            }
        }

        let mut result = None;
        while members.len() >= params.min_region_cells {
            let Ok(f) = fit(&members) else { break };
            let keep: Vec<usize> = members.iter().copied().filter(|&i| accepts(&f.plane, i)).collect();
            if keep.len() == members.len() {
                result = Some(f);
                break;
            }
            members = largest_component(&keep, w, h);
        }
        let Some(f) = result else { continue };
        members.sort_unstable();
        for &i in &members {
            owned[i] = true;
        }
        let (outer, holes) = region_polygons(&members, &spec, params.polygon_simplify_tol);
        regions.push(PlanarRegion {
            plane: f.plane,
            outer,
            holes,
            cell_count: members.len(),
            cells: members,
            rms: f.rms,
        });
    }
    Ok(regions)
}

type Corner = (i64, i64);

/// Closed loops of cell-corner coordinates `(col, row)` around a cell set,
/// with the set on the left of every edge. Counterclockwise loops are outer
/// boundaries, clockwise loops are holes.
pub(crate) fn trace_boundaries(cells: &[usize], width: usize) -> Vec<Vec<Corner>> {
    let inside: std::collections::HashSet<(i64, i64)> = cells
        .iter()
        .map(|&i| ((i / width) as i64, (i % width) as i64))
        .collect();
    let has = |r: i64, c: i64| inside.contains(&(r, c));
    let mut edges: Vec<(Corner, Corner)> = Vec::new();
    for &i in cells {
        let (r, c) = ((i / width) as i64, (i % width) as i64);
        if !has(r - 1, c) {
            edges.push(((c, r), (c + 1, r)));
        }
        if !has(r, c + 1) {
            edges.push(((c + 1, r), (c + 1, r + 1)));
        }
        if !has(r + 1, c) {
            edges.push(((c + 1, r + 1), (c, r + 1)));
        }
        if !has(r, c - 1) {
            edges.push(((c, r + 1), (c, r)));
        }
    }
    let mut outgoing: HashMap<Corner, Vec<usize>> = HashMap::new();
    for (k, e) in edges.iter().enumerate() {
        outgoing.entry(e.0).or_default().push(k);
    }
    let dir = |e: &(Corner, Corner)| (e.1 .0 - e.0 .0, e.1 .1 - e.0 .1);
    // At a corner shared by two diagonal cells the left turn keeps them apart.
    let next = |k: usize| -> usize {
        let outs = &outgoing[&edges[k].1];
        if outs.len() == 1 {
            return outs[0];
        }
        let (dx, dy) = dir(&edges[k]);
        let left = (-dy, dx);
        *outs
            .iter()
            .find(|&&o| dir(&edges[o]) == left)
            .expect("saddle corner has a left turn")
    };
    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut k = start;
        loop {
            used[k] = true;
            let nk = next(k);
            // Only corners where the direction changes are kept.
            if dir(&edges[k]) != dir(&edges[nk]) {
                lp.push(edges[k].1);
            }
            k = nk;
            if k == start {
                break;
            }
        }
        loops.push(lp);
    }
    loops
}

fn corner_area2(lp: &[Corner]) -> i64 {
    let n = lp.len();
    (0..n)
        .map(|i| {
            let (a, b) = (lp[i], lp[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum()
}

fn region_polygons(cells: &[usize], spec: &GridSpec, tol: f64) -> (Polygon, Vec<Polygon>) {
    let [ox, oy] = spec.origin();
    let res = spec.resolution;
    let to_world = |lp: &[Corner]| -> Polygon {
        lp.iter()
            .map(|&(c, r)| [ox + c as f64 * res, oy + r as f64 * res])
            .collect()
    };
    let mut outer = Polygon::new();
    let mut holes = Vec::new();
    for lp in trace_boundaries(cells, spec.width) {
        let poly = simplify_closed(&to_world(&lp), tol);
        if corner_area2(&lp) > 0 {
            outer = poly;
        } else {
            holes.push(poly);
        }
    }
    (outer, holes)
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn douglas_peucker(pts: &[[f64; 2]], tol: f64, keep: &mut [bool]) {
    if pts.len() < 3 {
        return;
    }
    let (a, b) = (pts[0], pts[pts.len() - 1]);
    let (k, d) = (1..pts.len() - 1)
        .map(|k| (k, seg_dist(pts[k], a, b)))
        .fold((0, -1.0), |best, x| if x.1 > best.1 { x } else { best });
    if d > tol {
        keep[k] = true;
        douglas_peucker(&pts[..=k], tol, &mut keep[..=k]);
        douglas_peucker(&pts[k..], tol, &mut keep[k..]);
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn has_proper_crossing(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            let (d1, d2) = (cross(a, b, c), cross(a, b, d));
            let (d3, d4) = (cross(c, d, a), cross(c, d, b));
            if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                return true;
            }
        }
    }
    false
}

/// Douglas–Peucker on a closed loop, split at vertex 0 and the vertex farthest
/// from it. Falls back to the input if the result would cross itself.
fn simplify_closed(poly: &[[f64; 2]], tol: f64) -> Polygon {
    if tol <= 0.0 || poly.len() <= 4 {
        return poly.to_vec();
    }
    let d0 = |p: &[f64; 2]| (p[0] - poly[0][0]).powi(2) + (p[1] - poly[0][1]).powi(2);
    let far = (1..poly.len()).fold(1, |best, k| if d0(&poly[k]) > d0(&poly[best]) { k } else { best });
    let mut closed = poly.to_vec();
    closed.push(poly[0]);
    let mut keep = vec![false; closed.len()];
    keep[0] = true;
    keep[far] = true;
    douglas_peucker(&closed[..=far], tol, &mut keep[..=far]);
    douglas_peucker(&closed[far..], tol, &mut keep[far..]);
    let out: Polygon = (0..poly.len()).filter(|&k| keep[k]).map(|k| poly[k]).collect();
    if out.len() < 3 || has_proper_crossing(&out) || polygon_area(&out).signum() != polygon_area(poly).signum() {
        return poly.to_vec();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::compute_normals;
    use crate::ExecMode;
    use proptest::prelude::*;

    #[test]
    fn fit_horizontal_plane() {
        let f = fit_plane(&[[0.0, 0.0, 0.1], [1.0, 0.0, 0.1], [0.0, 1.0, 0.1]]).unwrap();
        assert!((f.plane.normal[2] - 1.0).abs() < 1e-12);
        assert!((f.plane.offset - 0.1).abs() < 1e-12);
        assert!(f.rms < 1e-12);
    }

    #[test]
    fn fit_inclined_plane() {
        let pts: Vec<[f64; 3]> = (0..5)
            .flat_map(|i| (0..4).map(move |j| (i as f64 * 0.1, j as f64 * 0.1)))
            .map(|(x, y)| [x, y, 0.5 * x])
            .collect();
        let f = fit_plane(&pts).unwrap();
        let s = (1.25f64).sqrt();
        let want = [-0.5 / s, 0.0, 1.0 / s];
        for k in 0..3 {
            assert!((f.plane.normal[k] - want[k]).abs() < 1e-12);
        }
        assert!(f.rms < 1e-12);
    }

    #[test]
    fn collinear_is_degenerate() {
        let r = fit_plane(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.3], [2.0, 2.0, 0.1]]);
        assert!(matches!(r, Err(Error::DegeneratePlane(_))));
        assert!(fit_plane(&[[0.0; 3], [1.0, 0.0, 0.0]]).is_err());
    }

    fn map_from(w: usize, h: usize, res: f64, height: impl Fn(f64, f64) -> Option<f64>) -> ElevationMap {
        let spec = GridSpec::new(res, w, h, [0.0, 0.0]).unwrap();
        let mut m = ElevationMap::new(spec);
        for i in 0..m.len() {
            let [x, y] = spec.index_to_world(spec.unflat(i));
            if let Some(z) = height(x, y) {
                m.set_estimate(i, z, 1e-4, 0.0);
            }
        }
        compute_normals(&mut m, ExecMode::Deterministic);
        m
    }

    fn exact() -> PlaneSegParams {
        PlaneSegParams {
            polygon_simplify_tol: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn flat_map_is_one_rectangle() {
        let m = map_from(20, 16, 0.05, |_, _| Some(0.2));
        let regions = segment_planes(&m, &PlaneSegParams::default()).unwrap();
        assert_eq!(regions.len(), 1);
        let r = &regions[0];
        assert_eq!(r.cell_count, 320);
        assert!(r.holes.is_empty());
        assert_eq!(r.outer.len(), 4);
        let [ox, oy] = m.spec().origin();
        let want = [[ox + 1.0, oy], [ox + 1.0, oy + 0.8], [ox, oy + 0.8], [ox, oy]];
        for v in &want {
            assert!(r.outer.iter().any(|p| (p[0] - v[0]).abs() < 1e-12 && (p[1] - v[1]).abs() < 1e-12));
        }
        assert!(polygon_area(&r.outer) > 0.0);
    }

    #[test]
    fn staircase_gives_one_region_per_tread() {
        let heights = [0.0, 0.15, 0.30, 0.45];
        let m = map_from(60, 30, 0.04, |x, _| {
            let k = if x < 0.0 { 0 } else { ((x / 0.3).floor() as usize + 1).min(3) };
            Some(heights[k])
        });
        let regions = segment_planes(&m, &exact()).unwrap();
        assert_eq!(regions.len(), 4, "{:?}", regions.iter().map(|r| r.plane).collect::<Vec<_>>());
        let mut offsets: Vec<f64> = regions.iter().map(|r| r.plane.offset / r.plane.normal[2]).collect();
        offsets.sort_by(f64::total_cmp);
        for (o, h) in offsets.iter().zip(heights) {
            assert!((o - h).abs() < 1e-6, "{o} vs {h}");
        }
    }

    #[test]
    fn square_hole_is_traced() {
        let m = map_from(20, 20, 0.1, |x, y| {
            let inside = (-0.2..0.2).contains(&x) && (-0.2..0.2).contains(&y);
            (!inside).then_some(0.0)
        });
        let regions = segment_planes(&m, &exact()).unwrap();
        assert_eq!(regions.len(), 1);
        let r = &regions[0];
        assert_eq!(r.holes.len(), 1);
        let hole = &r.holes[0];
        assert_eq!(hole.len(), 4);
        assert!(polygon_area(hole) < 0.0);
        assert!((polygon_area(hole) + 0.16).abs() < 1e-12);
        for v in hole {
            assert!((v[0].abs() - 0.2).abs() < 1e-12 && (v[1].abs() - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_cells_stay_apart() {
        // Two cells touching at one corner: 4-connectivity gives two loops.
        let loops = trace_boundaries(&[0, 4], 3);
        assert_eq!(loops.len(), 2);
        assert!(loops.iter().all(|l| l.len() == 4 && corner_area2(l) == 2));
    }

    #[test]
    fn simplification_keeps_rectangle_and_drops_jaggies() {
        let stair: Polygon = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.51, 1.0], [0.51, 1.01], [0.0, 1.01]];
        let s = simplify_closed(&stair, 0.02);
        assert_eq!(s.len(), 4);
        assert!((polygon_area(&s) - polygon_area(&stair)).abs() < 0.02);
    }

    fn random_mask() -> impl Strategy<Value = (usize, usize, Vec<bool>)> {
        (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::bool::weighted(0.55), w * h).prop_map(move |m| (w, h, m))
        })
    }

    proptest! {
        #[test]
        fn traced_area_matches_cell_count((w, _h, mask) in random_mask()) {
            let cells: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            let loops = trace_boundaries(&cells, w);
            let area: i64 = loops.iter().map(|l| corner_area2(l)).sum();
            prop_assert_eq!(area, 2 * cells.len() as i64);
        }

        #[test]
        fn regions_are_disjoint_and_audited(seed in 0u64..40) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tilt = rng.random_range(-0.3..0.3);
            let step = rng.random_range(0.05..0.3);
            let m = map_from(30, 24, 0.05, |x, y| {
                let base = if x > 0.1 { step } else { 0.0 };
                let hole = (x - 0.4).abs() < 0.1 && y.abs() < 0.1;
                (!hole).then_some(base + tilt * y + 0.002 * (x * 37.0).sin())
            });
            let p = exact();
            let regions = segment_planes(&m, &p).unwrap();
            let spec = *m.spec();
            let mut owner = vec![false; m.len()];
            for r in &regions {
                let area = polygon_area(&r.outer) + r.holes.iter().map(|h| polygon_area(h)).sum::<f64>();
                prop_assert!((area - r.cell_count as f64 * 0.0025).abs() < 1e-9);
                for &i in &r.cells {
                    prop_assert!(!owner[i] && m.valid[i]);
                    owner[i] = true;
                    let [x, y] = spec.index_to_world(spec.unflat(i));
                    prop_assert!(r.plane.distance(&[x, y, m.elevation[i]]).abs() <= p.dist_max);
                    prop_assert!(dot(&m.normal[i], &r.plane.normal) >= p.normal_angle_max.cos());
                }
                let nn = dot(&r.plane.normal, &r.plane.normal);
                prop_assert!((nn - 1.0).abs() < 1e-12 && r.plane.normal[2] > 0.0);
            }
        }
    }
}
