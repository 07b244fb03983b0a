//! Virtual depth sensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::sensing::{Point, PointCloud, RigidTransform};
use crate::sim::scene::SceneSpec;
use crate::{cell_map, ExecMode};

#[derive(Clone, Debug, PartialEq)]
pub enum RayPattern {
    /// Rectangular pattern centered on azimuth 0 and elevation `pitch`.
    Grid { h_fov: f64, v_fov: f64, cols: usize, rows: usize, pitch: f64 },
    /// Full 360° rings at the given elevations.
    Rings { elevations: Vec<f64>, azimuth_steps: usize },
    /// Golden-angle spiral with exactly `count` rays between two elevations.
    Spiral { count: usize, min_elevation: f64, max_elevation: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorSpec {
    pub pattern: RayPattern,
    pub max_range: f64,
    /// Range noise has standard deviation `√alpha_d · distance`.
    pub alpha_d: f64,
    /// Scans per second.
    pub rate: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            pattern: RayPattern::Rings {
                elevations: (0..16).map(|k| (-60.0 + 4.0 * k as f64).to_radians()).collect(),
                azimuth_steps: 360,
            },
            max_range: 10.0,
            alpha_d: 1e-4,
            rate: 10.0,
        }
    }
}

fn spread(k: usize, n: usize, width: f64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -width / 2.0 + width * k as f64 / (n - 1) as f64
    }
}

fn direction(azimuth: f64, elevation: f64) -> Point {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    [ce * ca, ce * sa, se]
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        let nonempty = match &self.pattern {
            RayPattern::Grid { cols, rows, .. } => cols * rows > 0,
            RayPattern::Rings { elevations, azimuth_steps } => !elevations.is_empty() && *azimuth_steps > 0,
            RayPattern::Spiral { count, .. } => *count > 0,
        };
        if !nonempty || !(self.max_range > 0.0) || !(self.alpha_d >= 0.0) || !(self.rate > 0.0) {
            return Err(Error::InvalidParam(format!("bad sensor spec {self:?}")));
        }
        Ok(())
    }

    /// Unit ray directions in the sensor frame.
    pub fn directions(&self) -> Vec<Point> {
        match &self.pattern {
            RayPattern::Grid { h_fov, v_fov, cols, rows, pitch } => (0..*rows)
                .flat_map(|r| {
                    (0..*cols).map(move |c| direction(spread(c, *cols, *h_fov), pitch + spread(r, *rows, *v_fov)))
                })
                .collect(),
            RayPattern::Rings { elevations, azimuth_steps } => elevations
                .iter()
                .flat_map(|&e| {
                    (0..*azimuth_steps)
                        .map(move |k| direction(std::f64::consts::TAU * k as f64 / *azimuth_steps as f64, e))
                })
                .collect(),
            RayPattern::Spiral { count, min_elevation, max_elevation } => {
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                (0..*count)
                    .map(|k| {
                        let f = if *count > 1 { k as f64 / (*count - 1) as f64 } else { 0.5 };
                        direction(golden * k as f64, min_elevation + f * (max_elevation - min_elevation))
                    })
                    .collect()
            }
        }
    }

    pub fn ray_count(&self) -> usize {
        match &self.pattern {
            RayPattern::Grid { cols, rows, .. } => cols * rows,
            RayPattern::Rings { elevations, azimuth_steps } => elevations.len() * azimuth_steps,
            RayPattern::Spiral { count, .. } => *count,
        }
    }
}

/// Key of the noise stream for one scan.
fn scan_seed(seed: u64, scan: u64) -> u64 {
    // SplitMix64 finalizer on the pair.
    let mut z = seed ^ scan.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise generator of one ray; independent of evaluation order.
pub fn ray_rng(seed: u64, scan: u64, ray: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(scan_seed(seed, scan));
    rng.set_stream(ray as u64);
    rng
}

/// Simulates one scan from `pose` at time `time`. Points are in the sensor
/// frame; rays with no hit within range produce nothing.
pub fn render_scan(
    scene: &SceneSpec,
    pose: &RigidTransform,
    sensor: &SensorSpec,
    time: f64,
    seed: u64,
    scan: u64,
    mode: ExecMode,
) -> PointCloud {
    let dirs = sensor.directions();
    let origin = pose.origin();
    let hits: Vec<Option<Point>> = cell_map(dirs.len(), mode, |k| {
        let d = dirs[k];
        let range = scene.raycast(&origin, &pose.rotate(&d), time)?;
        if range > sensor.max_range {
            return None;
        }
        let mut r = range;
        if sensor.alpha_d > 0.0 {
            let std = sensor.alpha_d.sqrt() * range;
            let noise = Normal::new(0.0, std).expect("finite std");
            r += noise.sample(&mut ray_rng(seed, scan, k));
            if !(r > 0.0 && r <= sensor.max_range) {
                return None;
            }
        }
        Some([d[0] * r, d[1] * r, d[2] * r])
    });
    PointCloud::new(hits.into_iter().flatten().collect(), time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{Motion, Primitive};

    fn ground() -> SceneSpec {
        SceneSpec {
            primitives: vec![Primitive::Ground { z: 0.0 }],
        }
    }

    fn down_ray() -> SensorSpec {
        SensorSpec {
            pattern: RayPattern::Grid {
                h_fov: 0.0,
                v_fov: 0.0,
                cols: 1,
                rows: 1,
                pitch: -std::f64::consts::FRAC_PI_2,
            },
            max_range: 5.0,
            alpha_d: 0.0,
            rate: 10.0,
        }
    }

    #[test]
    fn straight_down_point() {
        let pose = RigidTransform::from_translation(0.0, 0.0, 1.0);
        let c = render_scan(&ground(), &pose, &down_ray(), 0.0, 1, 0, ExecMode::Deterministic);
        assert_eq!(c.len(), 1);
        let p = c.points[0];
        assert!(p[0].abs() < 1e-15 && p[1].abs() < 1e-15 && (p[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rays_above_horizon_miss() {
        let s = SensorSpec {
            pattern: RayPattern::Rings {
                elevations: vec![0.05, 0.3],
                azimuth_steps: 36,
            },
            ..down_ray()
        };
        let pose = RigidTransform::from_translation(0.0, 0.0, 1.0);
        assert!(render_scan(&ground(), &pose, &s, 0.0, 1, 0, ExecMode::Deterministic).is_empty());
    }

    #[test]
    fn count_and_range_bounds() {
        let s = SensorSpec {
            alpha_d: 1e-3,
            max_range: 3.0,
            ..SensorSpec::default()
        };
        let pose = RigidTransform::from_translation(0.0, 0.0, 0.8);
        let c = render_scan(&ground(), &pose, &s, 0.0, 3, 2, ExecMode::Deterministic);
        assert!(c.len() <= s.ray_count());
        assert!(!c.is_empty());
        for p in &c.points {
            assert!((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() <= 3.0);
        }
    }

    #[test]
    fn parallel_render_is_identical() {
        let scene = SceneSpec {
            primitives: vec![
                Primitive::Ground { z: 0.0 },
                Primitive::Box {
                    center: [1.0, 0.0, 0.2],
                    size: [0.4, 0.4, 0.4],
                    yaw: 0.3,
                    motion: Motion::Static,
                },
            ],
        };
        let s = SensorSpec {
            alpha_d: 0.01,
            ..SensorSpec::default()
        };
        let pose = RigidTransform::from_xyz_ypr([0.1, 0.2, 0.7], 0.4, 0.0, 0.0);
        let a = render_scan(&scene, &pose, &s, 0.0, 9, 4, ExecMode::Deterministic);
        let b = render_scan(&scene, &pose, &s, 0.0, 9, 4, ExecMode::Parallel);
        assert_eq!(a, b);
        let c = render_scan(&scene, &pose, &s, 0.0, 9, 5, ExecMode::Parallel);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_std_regression() {
        // 10⁴ independent draws of one downward ray at d = 1.5.
        let alpha = 0.01;
        let s = SensorSpec {
            alpha_d: alpha,
            ..down_ray()
        };
        let pose = RigidTransform::from_translation(0.0, 0.0, 1.5);
        let ranges: Vec<f64> = (0..10_000)
            .map(|scan| -render_scan(&ground(), &pose, &s, 0.0, 42, scan, ExecMode::Deterministic).points[0][2])
            .collect();
        let n = ranges.len() as f64;
        let mean = ranges.iter().sum::<f64>() / n;
        let std = (ranges.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let want = alpha.sqrt() * 1.5;
        assert!((std / want - 1.0).abs() < 0.05, "std {std} vs {want}");
    }

    #[test]
    fn spiral_has_exact_count() {
        let s = SensorSpec {
            pattern: RayPattern::Spiral {
                count: 43017,
                min_elevation: -1.2,
                max_elevation: -0.1,
            },
            ..SensorSpec::default()
        };
        assert_eq!(s.directions().len(), 43017);
        let pose = RigidTransform::from_translation(0.0, 0.0, 1.0);
        let c = render_scan(&ground(), &pose, &s, 0.0, 0, 0, ExecMode::Parallel);
        assert!(c.len() > 40_000);
    }
}
