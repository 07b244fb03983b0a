//! Analytic terrain primitives built from convex solids.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Layer};
use crate::sensing::Point;

/// Intersection of half-spaces `n · x ≤ d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexSolid {
    pub planes: Vec<([f64; 3], f64)>,
}

impl ConvexSolid {
    /// Entry distance of the ray `origin + t·dir`, `t ≥ 0`. Rays starting
    /// inside the solid report no hit.
    pub fn entry(&self, origin: &Point, dir: &Point) -> Option<f64> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for (n, d) in &self.planes {
            let num = d - (n[0] * origin[0] + n[1] * origin[1] + n[2] * origin[2]);
            let den = n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2];
            if den == 0.0 {
                if num < 0.0 {
                    return None;
                }
            } else if den < 0.0 {
                t0 = t0.max(num / den);
            } else {
                t1 = t1.min(num / den);
            }
            if t0 > t1 {
                return None;
            }
        }
        (t0 >= 0.0 && t0.is_finite()).then_some(t0)
    }

    /// Highest point of the solid on the vertical line through `(x, y)`.
    pub fn top_at(&self, x: f64, y: f64) -> Option<f64> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (n, d) in &self.planes {
            let rest = d - n[0] * x - n[1] * y;
            if n[2] > 0.0 {
                hi = hi.min(rest / n[2]);
            } else if n[2] < 0.0 {
                lo = lo.max(rest / n[2]);
            } else if rest < 0.0 {
                return None;
            }
        }
        (lo <= hi && hi.is_finite()).then_some(hi)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.planes
            .iter()
            .all(|(n, d)| n[0] * p[0] + n[1] * p[1] + n[2] * p[2] <= *d)
    }

    /// Box with half extents `half` around `center`, rotated by `yaw` about z.
    pub fn oriented_box(center: [f64; 3], half: [f64; 3], yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let (u, v) = ([c, s, 0.0], [-s, c, 0.0]);
        let dotc = |n: [f64; 3]| n[0] * center[0] + n[1] * center[1] + n[2] * center[2];
        let neg = |n: [f64; 3]| [-n[0], -n[1], -n[2]];
        let z = [0.0, 0.0, 1.0];
        Self {
            planes: vec![
                (u, dotc(u) + half[0]),
                (neg(u), -dotc(u) + half[0]),
                (v, dotc(v) + half[1]),
                (neg(v), -dotc(v) + half[1]),
                (z, center[2] + half[2]),
                (neg(z), -center[2] + half[2]),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    Static,
    /// Present only for `t_start ≤ t ≤ t_end`, moving from its nominal
    /// center with `velocity` from `t_start` on.
    Moving { velocity: [f64; 3], t_start: f64, t_end: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// Everything below `z`.
    Ground { z: f64 },
    /// Wedge rising from `origin` along heading `yaw` with rise/run `slope`.
    Ramp { origin: [f64; 3], yaw: f64, slope: f64, length: f64, width: f64 },
    /// Step `i` (from 0) has its tread at `origin.z + (i+1)·step_height`.
    Stairs { origin: [f64; 3], yaw: f64, step_height: f64, step_depth: f64, count: usize, width: f64 },
    Box { center: [f64; 3], size: [f64; 3], yaw: f64, motion: Motion },
    /// Vertical wall along the segment `a → b` standing on `base`.
    Wall { a: [f64; 2], b: [f64; 2], base: f64, height: f64, thickness: f64 },
    /// Non-walkable slab with its underside at `z`; footprint `[x0, y0, x1, y1]`.
    SlabOverhang { footprint: [f64; 4], z: f64, thickness: f64 },
    /// Walkable upper floor with its top at `z`, optionally reached by the
    /// stairs primitive at index `stairs`.
    Floor2 { footprint: [f64; 4], z: f64, thickness: f64, stairs: Option<usize> },
}

fn rect_solid(fp: [f64; 4], z0: f64, z1: f64) -> ConvexSolid {
    let center = [(fp[0] + fp[2]) / 2.0, (fp[1] + fp[3]) / 2.0, (z0 + z1) / 2.0];
    let half = [(fp[2] - fp[0]) / 2.0, (fp[3] - fp[1]) / 2.0, (z1 - z0) / 2.0];
    ConvexSolid::oriented_box(center, half, 0.0)
}

impl Primitive {
    pub fn walkable(&self) -> bool {
        !matches!(self, Primitive::SlabOverhang { .. })
    }

    /// Solids making up the primitive at time `t`; empty when inactive.
    pub fn solids(&self, t: f64) -> Vec<ConvexSolid> {
        match *self {
            Primitive::Ground { z } => vec![ConvexSolid {
                planes: vec![([0.0, 0.0, 1.0], z)],
            }],
            Primitive::Ramp { origin, yaw, slope, length, width } => {
                let (s, c) = yaw.sin_cos();
                let (u, v) = ([c, s, 0.0], [-s, c, 0.0]);
                let du = u[0] * origin[0] + u[1] * origin[1];
                let dv = v[0] * origin[0] + v[1] * origin[1];
                // Top face: z − slope·(u·x − du) ≤ origin.z
                let top = [-slope * u[0], -slope * u[1], 1.0];
                vec![ConvexSolid {
                    planes: vec![
                        ([-u[0], -u[1], 0.0], -du),
                        (u, du + length),
                        (v, dv + width / 2.0),
                        ([-v[0], -v[1], 0.0], -dv + width / 2.0),
                        ([0.0, 0.0, -1.0], -origin[2]),
                        (top, origin[2] - slope * du),
                    ],
                }]
            }
            Primitive::Stairs { origin, yaw, step_height, step_depth, count, width } => {
                let (s, c) = yaw.sin_cos();
                (0..count)
                    .map(|i| {
                        let along = (i as f64 + 0.5) * step_depth;
                        let top = (i + 1) as f64 * step_height;
                        ConvexSolid::oriented_box(
                            [origin[0] + c * along, origin[1] + s * along, origin[2] + top / 2.0],
                            [step_depth / 2.0, width / 2.0, top / 2.0],
                            yaw,
                        )
                    })
                    .collect()
            }
            Primitive::Box { center, size, yaw, motion } => {
                let center = match motion {
                    Motion::Static => center,
                    Motion::Moving { velocity, t_start, t_end } => {
                        if !(t_start..=t_end).contains(&t) {
                            return Vec::new();
                        }
                        let dt = t - t_start;
                        [center[0] + velocity[0] * dt, center[1] + velocity[1] * dt, center[2] + velocity[2] * dt]
                    }
                };
                vec![ConvexSolid::oriented_box(center, [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0], yaw)]
            }
            Primitive::Wall { a, b, base, height, thickness } => {
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let len = (dx * dx + dy * dy).sqrt();
                vec![ConvexSolid::oriented_box(
                    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, base + height / 2.0],
                    [len / 2.0, thickness / 2.0, height / 2.0],
                    dy.atan2(dx),
                )]
            }
            Primitive::SlabOverhang { footprint, z, thickness } => vec![rect_solid(footprint, z, z + thickness)],
            Primitive::Floor2 { footprint, z, thickness, .. } => vec![rect_solid(footprint, z - thickness, z)],
        }
    }

    fn numbers(&self) -> Vec<f64> {
        match *self {
            Primitive::Ground { z } => vec![z],
            Primitive::Ramp { origin, yaw, slope, length, width } => {
                vec![origin[0], origin[1], origin[2], yaw, slope, length, width]
            }
            Primitive::Stairs { origin, yaw, step_height, step_depth, width, .. } => {
                vec![origin[0], origin[1], origin[2], yaw, step_height, step_depth, width]
            }
            Primitive::Box { center, size, yaw, motion } => {
                let mut v = vec![center[0], center[1], center[2], size[0], size[1], size[2], yaw];
                if let Motion::Moving { velocity, t_start, t_end } = motion {
                    v.extend(velocity);
                    v.extend([t_start, t_end]);
                }
                v
            }
            Primitive::Wall { a, b, base, height, thickness } => vec![a[0], a[1], b[0], b[1], base, height, thickness],
            Primitive::SlabOverhang { footprint, z, thickness } | Primitive::Floor2 { footprint, z, thickness, .. } => {
                let mut v = footprint.to_vec();
                v.extend([z, thickness]);
                v
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.primitives.iter().any(Primitive::walkable) {
            return Err(Error::InvalidParam("scene has no walkable primitive".into()));
        }
        for (k, p) in self.primitives.iter().enumerate() {
            if p.numbers().iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParam(format!("primitive {k}: non-finite value")));
            }
            let ok = match *p {
                Primitive::Ramp { length, width, .. } => length > 0.0 && width > 0.0,
                Primitive::Stairs { step_height, step_depth, count, width, .. } => {
                    step_height > 0.0 && step_depth > 0.0 && count > 0 && width > 0.0
                }
                Primitive::Box { size, motion, .. } => {
                    size.iter().all(|s| *s > 0.0)
                        && !matches!(motion, Motion::Moving { t_start, t_end, .. } if t_end < t_start)
                }
                Primitive::Wall { height, thickness, .. } => height > 0.0 && thickness > 0.0,
                Primitive::SlabOverhang { footprint, thickness, .. } => {
                    footprint[2] > footprint[0] && footprint[3] > footprint[1] && thickness > 0.0
                }
                Primitive::Floor2 { footprint, thickness, stairs, .. } => {
                    footprint[2] > footprint[0]
                        && footprint[3] > footprint[1]
                        && thickness > 0.0
                        && stairs.is_none_or(|s| matches!(self.primitives.get(s), Some(Primitive::Stairs { .. })))
                }
                Primitive::Ground { .. } => true,
            };
            if !ok {
                return Err(Error::InvalidParam(format!("primitive {k}: bad geometry {p:?}")));
            }
        }
        Ok(())
    }

    /// Nearest intersection distance of a world ray with anything present at `t`.
    pub fn raycast(&self, origin: &Point, dir: &Point, t: f64) -> Option<f64> {
        self.primitives
            .iter()
            .flat_map(|p| p.solids(t))
            .filter_map(|s| s.entry(origin, dir))
            .min_by(f64::total_cmp)
    }

    /// Top walkable surface height under `(x, y)` at time `t`.
    pub fn surface_height(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        self.primitives
            .iter()
            .filter(|p| p.walkable())
            .flat_map(|p| p.solids(t))
            .filter_map(|s| s.top_at(x, y))
            .max_by(f64::total_cmp)
    }
}

/// Walkable surface height at every cell center; the mask marks covered cells.
pub fn ground_truth_heightmap(scene: &SceneSpec, spec: &GridSpec, t: f64) -> Layer {
    let (values, valid): (Vec<f64>, Vec<bool>) = (0..spec.len())
        .map(|i| {
            let [x, y] = spec.index_to_world(spec.unflat(i));
            match scene.surface_height(x, y, t) {
                Some(h) => (h, true),
                None => (f64::NAN, false),
            }
        })
        .unzip();
    Layer::new(spec.width, spec.height, values, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ground() -> Primitive {
        Primitive::Ground { z: 0.0 }
    }

    #[test]
    fn straight_down_hits_ground() {
        let s = SceneSpec { primitives: vec![ground()] };
        assert_eq!(s.raycast(&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0], 0.0), Some(1.0));
        assert_eq!(s.raycast(&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.1], 0.0), None);
    }

    #[test]
    fn stairs_truth_is_step_heights() {
        let s = SceneSpec {
            primitives: vec![
                ground(),
                Primitive::Stairs {
                    origin: [0.0, -1.0, 0.0],
                    yaw: 0.0,
                    step_height: 0.2,
                    step_depth: 0.3,
                    count: 3,
                    width: 2.0,
                },
            ],
        };
        let spec = GridSpec::new(0.05, 40, 20, [0.5, -1.0]).unwrap();
        let t = ground_truth_heightmap(&s, &spec, 0.0);
        for (i, &h) in t.values.iter().enumerate() {
            assert!(t.valid[i]);
            assert!([0.0, 0.2, 0.4, 0.6].iter().any(|v| (h - v).abs() < 1e-12), "{h}");
        }
        assert_eq!(s.surface_height(0.15, -1.0, 0.0), Some(0.2));
        assert!((s.surface_height(0.85, -1.0, 0.0).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn overhang_is_not_ground_truth() {
        let s = SceneSpec {
            primitives: vec![
                ground(),
                Primitive::SlabOverhang {
                    footprint: [-1.0, -1.0, 1.0, 1.0],
                    z: 1.0,
                    thickness: 0.1,
                },
            ],
        };
        assert_eq!(s.surface_height(0.0, 0.0, 0.0), Some(0.0));
        // But rays do hit it.
        let d = s.raycast(&[0.0, 0.0, 0.5], &[0.0, 0.0, 1.0], 0.0).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn moving_box_respects_window() {
        let s = SceneSpec {
            primitives: vec![
                ground(),
                Primitive::Box {
                    center: [0.0, 0.0, 0.25],
                    size: [0.5, 0.5, 0.5],
                    yaw: 0.0,
                    motion: Motion::Moving {
                        velocity: [1.0, 0.0, 0.0],
                        t_start: 1.0,
                        t_end: 2.0,
                    },
                },
            ],
        };
        assert_eq!(s.surface_height(0.0, 0.0, 0.5), Some(0.0));
        assert!((s.surface_height(0.0, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((s.surface_height(1.0, 0.0, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(s.surface_height(0.0, 0.0, 2.0), Some(0.0));
        assert_eq!(s.surface_height(1.0, 0.0, 2.5), Some(0.0));
    }

    #[test]
    fn ramp_surface_is_linear() {
        let s = SceneSpec {
            primitives: vec![
                ground(),
                Primitive::Ramp {
                    origin: [1.0, 0.0, 0.0],
                    yaw: std::f64::consts::FRAC_PI_2,
                    slope: 0.5,
                    length: 2.0,
                    width: 1.0,
                },
            ],
        };
        let h = s.surface_height(1.0, 1.2, 0.0).unwrap();
        assert!((h - 0.6).abs() < 1e-12);
        assert_eq!(s.surface_height(1.6, 1.2, 0.0), Some(0.0));
        assert_eq!(s.surface_height(1.0, -0.1, 0.0), Some(0.0));
    }

    #[test]
    fn box_shadow_matches_projection() {
        // Sensor at height 1 looking along +x over a 0.5 m box whose near face is at x = 1.
        let s = SceneSpec {
            primitives: vec![
                ground(),
                Primitive::Box {
                    center: [1.25, 0.0, 0.25],
                    size: [0.5, 4.0, 0.5],
                    yaw: 0.0,
                    motion: Motion::Static,
                },
            ],
        };
        let o = [0.0, 0.0, 1.0];
        // The back top edge (1.5, 0.5) projects to x = 1.5 / (1 − 0.5) = 3 on the ground.
        for x in [1.6, 2.0, 2.9] {
            let d = [x, 0.0, -1.0];
            let n = (x * x + 1.0f64).sqrt();
            let hit = s.raycast(&o, &[d[0] / n, 0.0, d[2] / n], 0.0).unwrap();
            assert!(hit < n - 1e-9, "x={x} should be shadowed");
        }
        let x = 3.1f64;
        let n = (x * x + 1.0).sqrt();
        let hit = s.raycast(&o, &[x / n, 0.0, -1.0 / n], 0.0).unwrap();
        assert!((hit - n).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let only_slab = SceneSpec {
            primitives: vec![Primitive::SlabOverhang {
                footprint: [0.0, 0.0, 1.0, 1.0],
                z: 1.0,
                thickness: 0.1,
            }],
        };
        assert!(only_slab.validate().is_err());
        let bad_link = SceneSpec {
            primitives: vec![
                ground(),
                Primitive::Floor2 {
                    footprint: [0.0, 0.0, 1.0, 1.0],
                    z: 2.0,
                    thickness: 0.1,
                    stairs: Some(0),
                },
            ],
        };
        assert!(bad_link.validate().is_err());
        assert!(SceneSpec { primitives: vec![Primitive::Ground { z: f64::NAN }] }.validate().is_err());
    }
}
