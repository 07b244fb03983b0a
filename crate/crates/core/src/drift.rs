//! Vertical drift compensation.
//!
//! The mean height error of incoming points over flat, traversable cells is
//! taken as the pose's vertical drift, and the map is moved to match the new
//! measurements.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ElevationMap;
use crate::sensing::Point;
use crate::ExecMode;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftParams {
    /// Cells must have traversability strictly above this to vote.
    pub traversability_threshold: f64,
    pub min_points: usize,
    /// Meters; larger estimates are clamped.
    pub max_offset_per_scan: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            traversability_threshold: 0.7,
            min_points: 10,
            max_offset_per_scan: 0.10,
        }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_points < 1 || !(self.max_offset_per_scan >= 0.0) {
            return Err(Error::InvalidParam(format!("bad drift params {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DriftEstimate {
    /// Mean of `p_z − h`; meaningless when `n == 0`.
    pub mean_error: f64,
    pub n: usize,
}

/// Mean signed error between point heights and the map over valid cells whose
/// traversability exceeds the threshold.
pub fn compute_drift_error(
    map: &ElevationMap,
    points: &[Point],
    params: &DriftParams,
    mode: ExecMode,
) -> DriftEstimate {
    let spec = map.spec();
    let error_of = |p: &Point| -> Option<f64> {
        let i = spec.flat_at(p[0], p[1])?;
        (map.valid[i] && map.traversability[i] > params.traversability_threshold)
            .then(|| p[2] - map.elevation[i])
    };
    let (sum, n) = match mode {
        ExecMode::Deterministic => points
            .iter()
            .filter_map(error_of)
            .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1)),
        ExecMode::Parallel => {
            // Fixed-size chunks summed in order keep the result independent of scheduling.
            let partials: Vec<(f64, usize)> = points
                .par_chunks(4096)
                .map(|chunk| {
                    chunk
                        .iter()
                        .filter_map(error_of)
                        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1))
                })
                .collect();
            partials
                .into_iter()
                .fold((0.0, 0), |(s, n), (ps, pn)| (s + ps, n + pn))
        }
    };
    DriftEstimate {
        mean_error: if n > 0 { sum / n as f64 } else { 0.0 },
        n,
    }
}

/// Offset actually applied to the map.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AppliedOffset {
    pub offset: f64,
    pub clamped: bool,
}

/// Shifts elevation and upper bound of every valid cell by `offset`, clamped
/// to `±max_offset_per_scan`.
pub fn apply_height_offset(map: &mut ElevationMap, offset: f64, params: &DriftParams) -> AppliedOffset {
    let limit = params.max_offset_per_scan;
    let applied = offset.clamp(-limit, limit);
    map.shift_heights(applied);
    AppliedOffset {
        offset: applied,
        clamped: applied != offset,
    }
}

/// Estimates and applies the drift offset when enough points voted.
pub fn compensate(
    map: &mut ElevationMap,
    points: &[Point],
    params: &DriftParams,
    mode: ExecMode,
) -> (DriftEstimate, AppliedOffset) {
    let est = compute_drift_error(map, points, params, mode);
    if est.n < params.min_points {
        return (est, AppliedOffset::default());
    }
    let applied = apply_height_offset(map, est.mean_error, params);
    (est, applied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use proptest::prelude::*;

    fn flat_map() -> ElevationMap {
        let spec = GridSpec::new(0.1, 10, 10, [0.0; 2]).unwrap();
        let mut m = ElevationMap::new(spec);
        for i in 0..m.len() {
            m.set_estimate(i, 0.0, 0.01, 0.0);
            m.traversability[i] = 1.0;
        }
        m
    }

    #[test]
    fn single_point_error() {
        let m = flat_map();
        let e = compute_drift_error(&m, &[[0.0, 0.0, 0.05]], &DriftParams::default(), ExecMode::Deterministic);
        assert_eq!(e, DriftEstimate { mean_error: 0.05, n: 1 });
    }

    #[test]
    fn only_traversable_valid_cells_vote() {
        let mut m = flat_map();
        let spec = *m.spec();
        let a = spec.flat_at(0.05, 0.05).unwrap();
        let b = spec.flat_at(-0.25, 0.05).unwrap();
        m.invalidate(a);
        m.traversability[b] = 0.1;
        let pts = [[0.05, 0.05, 0.3], [-0.25, 0.05, 0.3], [9.0, 9.0, 0.3]];
        let e = compute_drift_error(&m, &pts, &DriftParams::default(), ExecMode::Deterministic);
        assert_eq!(e.n, 0);
    }

    #[test]
    fn offset_examples() {
        let p = DriftParams::default();
        let mut m = flat_map();
        let before = m.elevation.clone();
        assert_eq!(apply_height_offset(&mut m, 0.0, &p), AppliedOffset { offset: 0.0, clamped: false });
        assert_eq!(m.elevation, before);

        let r = apply_height_offset(&mut m, 0.05, &p);
        assert!(!r.clamped);
        assert!(m.elevation.iter().all(|h| *h == 0.05));
        assert!(m.upper_bound.iter().all(|h| *h == 0.05));
        assert!(m.variance.iter().all(|v| *v == 0.01));

        let r = apply_height_offset(&mut m, 1.0, &p);
        assert_eq!(r, AppliedOffset { offset: 0.1, clamped: true });
    }

    #[test]
    fn too_few_points_applies_nothing() {
        let mut m = flat_map();
        let pts = vec![[0.0, 0.0, 0.05]; 9];
        let (_, applied) = compensate(&mut m, &pts, &DriftParams::default(), ExecMode::Deterministic);
        assert_eq!(applied.offset, 0.0);
        let pts = vec![[0.0, 0.0, 0.05]; 10];
        let (_, applied) = compensate(&mut m, &pts, &DriftParams::default(), ExecMode::Deterministic);
        assert!((applied.offset - 0.05).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn offset_round_trip_is_exact_on_dyadic_values(x in -102i64..102, h0 in -1024i64..1024) {
            // Heights and offsets on a 2⁻¹⁰ m lattice add without rounding.
            let p = DriftParams::default();
            let (x, h0) = (x as f64 / 1024.0, h0 as f64 / 1024.0);
            let mut m = flat_map();
            m.shift_heights(h0);
            let before: Vec<u64> = m.elevation.iter().map(|h| h.to_bits()).collect();
            apply_height_offset(&mut m, x, &p);
            apply_height_offset(&mut m, -x, &p);
            let after: Vec<u64> = m.elevation.iter().map(|h| h.to_bits()).collect();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn offset_round_trip_within_rounding(x in -0.1f64..0.1, h0 in -1.0f64..1.0) {
            let p = DriftParams::default();
            let mut m = flat_map();
            m.shift_heights(h0);
            apply_height_offset(&mut m, x, &p);
            apply_height_offset(&mut m, -x, &p);
            prop_assert!(m.elevation.iter().all(|h| (h - h0).abs() <= 4.0 * f64::EPSILON));
        }

        #[test]
        fn parallel_sum_matches_deterministic_within_rounding(n in 0usize..20000) {
            let m = flat_map();
            let pts: Vec<Point> = (0..n).map(|i| [((i % 97) as f64) * 0.01 - 0.45, ((i % 89) as f64) * 0.01 - 0.45, (i as f64 * 0.001).sin()]).collect();
            let d = compute_drift_error(&m, &pts, &DriftParams::default(), ExecMode::Deterministic);
            let p = compute_drift_error(&m, &pts, &DriftParams::default(), ExecMode::Parallel);
            prop_assert_eq!(d.n, p.n);
            prop_assert!((d.mean_error - p.mean_error).abs() < 1e-12);
        }
    }
}
