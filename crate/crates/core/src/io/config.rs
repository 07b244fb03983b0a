//! Run configuration: flat `key = value` lines with dotted sections.
//!
//! `#` starts a comment. Angles accept a `deg` suffix (`theta_a = 10deg`),
//! otherwise they are radians. `scene.primitive` and `trajectory.waypoint`
//! may repeat; every other key may appear once. Unknown keys are errors.
//!
//! ```text
//! grid.resolution = 0.04
//! grid.width = 200
//! grid.height = 200
//! scene.primitive = ground 0.0
//! scene.primitive = box 2.0 0.0 0.25 0.5 0.5 0.5 0deg 0 0 0 0.0 3.0
//! trajectory.waypoint = 0.0 0.0 0.0 0.6 0deg
//! run.mode = par
//! ```
//!
//! Primitive lines (angles may carry `deg`):
//!
//! | kind       | values                                                    |
//! |------------|-----------------------------------------------------------|
//! | `ground`   | `z`                                                       |
//! | `ramp`     | `x y z yaw slope length width`                            |
//! | `stairs`   | `x y z yaw step_height step_depth count width`            |
//! | `box`      | `cx cy cz sx sy sz yaw [vx vy vz t_start t_end]`          |
//! | `wall`     | `ax ay bx by base height thickness`                       |
//! | `overhang` | `x0 y0 x1 y1 z thickness`                                 |
//! | `floor2`   | `x0 y0 x1 y1 z thickness [stairs_index]`                  |

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::analysis::{ConvNetSpec, TraversabilityFilter, TraversabilityParams};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::integration::PipelineParams;
use crate::io::read_text;
use crate::postprocess::{FilterChainSpec, FilterStep, PlaneSegParams};
use crate::sim::{Motion, Primitive, RayPattern, SceneSpec, SensorSpec, TrajectorySpec, Waypoint};
use crate::ExecMode;

#[derive(Clone, Debug, PartialEq)]
pub struct RunParams {
    /// Number of scans; by default every sensor period within the trajectory.
    pub scans: Option<usize>,
    /// A snapshot is written after every `publish_every` scans.
    pub publish_every: usize,
    pub seed: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            scans: None,
            publish_every: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchParams {
    pub point_counts: Vec<usize>,
    pub repetitions: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            point_counts: vec![4_000, 10_000, 43_017, 100_000, 400_000],
            repetitions: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub pipeline: PipelineParams,
    pub scene: SceneSpec,
    pub sensor: SensorSpec,
    pub trajectory: TrajectorySpec,
    pub run: RunParams,
    pub bench: BenchParams,
    pub segment: PlaneSegParams,
    pub filters: FilterChainSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::new(0.04, 200, 200, [0.0, 0.0]).expect("valid default grid"),
            pipeline: PipelineParams::default(),
            scene: SceneSpec {
                primitives: vec![Primitive::Ground { z: 0.0 }],
            },
            sensor: SensorSpec::default(),
            trajectory: TrajectorySpec {
                waypoints: vec![Waypoint::new(0.0, [0.0, 0.0, 0.6], 0.0)],
                drift_rate: 0.0,
                drift_start: 0.0,
            },
            run: RunParams::default(),
            bench: BenchParams::default(),
            segment: PlaneSegParams::default(),
            filters: FilterChainSpec::default(),
        }
    }
}

fn number(v: &str) -> std::result::Result<f64, String> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("bad number `{v}`"))
}

fn angle(v: &str) -> std::result::Result<f64, String> {
    match v.strip_suffix("deg") {
        Some(d) => number(d.trim()).map(f64::to_radians),
        None => number(v),
    }
}

fn integer<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("bad integer `{v}`"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("bad boolean `{v}`")),
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(f)
        .collect()
}

fn parse_primitive(v: &str) -> std::result::Result<Primitive, String> {
    let mut toks = v.split_whitespace();
    let kind = toks.next().ok_or("empty primitive")?;
    let args: Vec<&str> = toks.collect();
    let want = |n: &[usize]| -> std::result::Result<(), String> {
        if n.contains(&args.len()) {
            Ok(())
        } else {
            Err(format!("`{kind}` takes {n:?} values, found {}", args.len()))
        }
    };
    let f = |k: usize| number(args[k]);
    let a = |k: usize| angle(args[k]);
    Ok(match kind {
        "ground" => {
            want(&[1])?;
            Primitive::Ground { z: f(0)? }
        }
        "ramp" => {
            want(&[7])?;
            Primitive::Ramp {
                origin: [f(0)?, f(1)?, f(2)?],
                yaw: a(3)?,
                slope: f(4)?,
                length: f(5)?,
                width: f(6)?,
            }
        }
        "stairs" => {
            want(&[8])?;
            Primitive::Stairs {
                origin: [f(0)?, f(1)?, f(2)?],
                yaw: a(3)?,
                step_height: f(4)?,
                step_depth: f(5)?,
                count: integer(args[6])?,
                width: f(7)?,
            }
        }
        "box" => {
            want(&[7, 12])?;
            let motion = if args.len() == 12 {
                Motion::Moving {
                    velocity: [f(7)?, f(8)?, f(9)?],
                    t_start: f(10)?,
                    t_end: f(11)?,
                }
            } else {
                Motion::Static
            };
            Primitive::Box {
                center: [f(0)?, f(1)?, f(2)?],
                size: [f(3)?, f(4)?, f(5)?],
                yaw: a(6)?,
                motion,
            }
        }
        "wall" => {
            want(&[7])?;
            Primitive::Wall {
                a: [f(0)?, f(1)?],
                b: [f(2)?, f(3)?],
                base: f(4)?,
                height: f(5)?,
                thickness: f(6)?,
            }
        }
        "overhang" => {
            want(&[6])?;
            Primitive::SlabOverhang {
                footprint: [f(0)?, f(1)?, f(2)?, f(3)?],
                z: f(4)?,
                thickness: f(5)?,
            }
        }
        "floor2" => {
            want(&[6, 7])?;
            Primitive::Floor2 {
                footprint: [f(0)?, f(1)?, f(2)?, f(3)?],
                z: f(4)?,
                thickness: f(5)?,
                stairs: args.get(6).map(|s| integer(s)).transpose()?,
            }
        }
        other => return Err(format!("unknown primitive `{other}`")),
    })
}

fn parse_waypoint(v: &str) -> std::result::Result<Waypoint, String> {
    let t: Vec<&str> = v.split_whitespace().collect();
    if t.len() != 5 && t.len() != 7 {
        return Err(format!("waypoint takes `t x y z yaw [pitch roll]`, found {} values", t.len()));
    }
    let mut w = Waypoint::new(number(t[0])?, [number(t[1])?, number(t[2])?, number(t[3])?], angle(t[4])?);
    if t.len() == 7 {
        w.pitch = angle(t[5])?;
        w.roll = angle(t[6])?;
    }
    Ok(w)
}

fn parse_filter_chain(v: &str) -> std::result::Result<FilterChainSpec, String> {
    let mut steps = Vec::new();
    for step in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t: Vec<&str> = step.split_whitespace().collect();
        steps.push(match t.as_slice() {
            ["gaussian", s, r] => FilterStep::Gaussian {
                sigma: number(s)?,
                radius: integer(r)?,
            },
            ["box", r] => FilterStep::Box { radius: integer(r)? },
            ["median", r] => FilterStep::Median { radius: integer(r)? },
            ["min_inpaint"] => FilterStep::MinInpaint,
            _ => return Err(format!("bad filter step `{step}`")),
        });
    }
    Ok(FilterChainSpec { steps })
}

/// Values collected while parsing that are assembled into typed parts at the end.
struct Pending {
    resolution: f64,
    width: usize,
    height: usize,
    center: [f64; 2],
    trav: TraversabilityParams,
    trav_kind: String,
    model: Option<PathBuf>,
    pattern: String,
    grid_pattern: (f64, f64, usize, usize, f64),
    rings: (Vec<f64>, usize),
    spiral: (usize, f64, f64),
}

const REPEATABLE: [&str; 2] = ["scene.primitive", "trajectory.waypoint"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&read_text(path)?, &path.display().to_string(), base)
    }

    /// `base` resolves relative model paths.
    pub fn parse(text: &str, source: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let d = &cfg;
        let mut p = Pending {
            resolution: d.grid.resolution,
            width: d.grid.width,
            height: d.grid.height,
            center: d.grid.center,
            trav: TraversabilityParams::default(),
            trav_kind: "geometric".into(),
            model: None,
            pattern: "rings".into(),
            grid_pattern: (90f64.to_radians(), 60f64.to_radians(), 128, 64, -35f64.to_radians()),
            rings: match &d.sensor.pattern {
                RayPattern::Rings { elevations, azimuth_steps } => (elevations.clone(), *azimuth_steps),
                _ => (Vec::new(), 0),
            },
            spiral: (43_017, -80f64.to_radians(), -10f64.to_radians()),
        };
        let mut seen = HashSet::new();
        let mut primitives = Vec::new();
        let mut waypoints = Vec::new();

        for (k, raw) in text.lines().enumerate() {
            let n = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(a, b)| (a.trim(), b.trim()))
                .ok_or_else(|| Error::parse(source, n, format!("expected `key = value`, found `{line}`")))?;
            if !REPEATABLE.contains(&key) && !seen.insert(key.to_string()) {
                return Err(Error::parse(source, n, format!("duplicate key `{key}`")));
            }
            let c = &mut cfg;
            let pl = &mut c.pipeline;
            let r: std::result::Result<(), String> = (|| {
                match key {
                    "grid.resolution" => p.resolution = number(value)?,
                    "grid.width" => p.width = integer(value)?,
                    "grid.height" => p.height = integer(value)?,
                    "grid.center_x" => p.center[0] = number(value)?,
                    "grid.center_y" => p.center[1] = number(value)?,

                    "update.mahalanobis_threshold" => pl.update.mahalanobis_threshold = number(value)?,
                    "update.outlier_variance" => pl.update.outlier_variance = number(value)?,
                    "update.wall_count_threshold" => pl.update.wall_count_threshold = integer(value)?,
                    "update.time_variance" => pl.update.time_variance = number(value)?,
                    "update.max_variance" => pl.update.max_variance = number(value)?,
                    "update.initial_variance" => pl.update.initial_variance = number(value)?,
                    "update.nominal_period" => pl.update.nominal_period = number(value)?,
                    "update.max_range" => pl.update.max_range = number(value)?,
                    "update.drift_enabled" => pl.update.drift_enabled = boolean(value)?,
                    "update.overlap_enabled" => pl.update.overlap_enabled = boolean(value)?,
                    "noise.alpha_d" => pl.update.noise.alpha_d = number(value)?,
                    "noise.min_variance" => pl.update.noise.min_variance = number(value)?,
                    "exclusion.theta_a" => pl.update.exclusion.theta_a = angle(value)?,
                    "exclusion.b" => pl.update.exclusion.b = number(value)?,
                    "exclusion.c" => pl.update.exclusion.c = number(value)?,
                    "exclusion.d_max" => pl.update.exclusion.d_max = number(value)?,
                    "exclusion.enabled" => pl.update.exclusion.enabled = boolean(value)?,

                    "drift.traversability_threshold" => pl.drift.traversability_threshold = number(value)?,
                    "drift.min_points" => pl.drift.min_points = integer(value)?,
                    "drift.max_offset_per_scan" => pl.drift.max_offset_per_scan = number(value)?,

                    "cleanup.alpha_n" => pl.cleanup.alpha_n = number(value)?,
                    "cleanup.t_free" => pl.cleanup.t_free = number(value)?,
                    "cleanup.enabled" => pl.cleanup.cleanup_enabled = boolean(value)?,
                    "cleanup.upper_bound_enabled" => pl.cleanup.upper_bound_enabled = boolean(value)?,

                    "overlap.radius" => pl.overlap.radius = number(value)?,
                    "overlap.height_threshold" => pl.overlap.height_threshold = number(value)?,

                    "traversability.filter" => match value {
                        "geometric" | "convnet" => p.trav_kind = value.to_string(),
                        _ => return Err(format!("unknown filter `{value}` (geometric|convnet)")),
                    },
                    "traversability.model" => p.model = Some(base.join(value)),
                    "traversability.slope_max" => p.trav.slope_max = angle(value)?,
                    "traversability.step_max" => p.trav.step_max = number(value)?,
                    "traversability.roughness_max" => p.trav.roughness_max = number(value)?,
                    "traversability.window" => p.trav.window = integer(value)?,
                    "traversability.weights" => {
                        let w = list(value, number)?;
                        p.trav.weights = w.try_into().map_err(|_| "weights take 3 values".to_string())?;
                    }

                    "segment.normal_angle_max" => c.segment.normal_angle_max = angle(value)?,
                    "segment.dist_max" => c.segment.dist_max = number(value)?,
                    "segment.min_region_cells" => c.segment.min_region_cells = integer(value)?,
                    "segment.simplify_tol" => c.segment.polygon_simplify_tol = number(value)?,
                    "filter.chain" => c.filters = parse_filter_chain(value)?,

                    "sensor.pattern" => match value {
                        "grid" | "rings" | "spiral" => p.pattern = value.to_string(),
                        _ => return Err(format!("unknown pattern `{value}` (grid|rings|spiral)")),
                    },
                    "sensor.h_fov" => p.grid_pattern.0 = angle(value)?,
                    "sensor.v_fov" => p.grid_pattern.1 = angle(value)?,
                    "sensor.cols" => p.grid_pattern.2 = integer(value)?,
                    "sensor.rows" => p.grid_pattern.3 = integer(value)?,
                    "sensor.pitch" => p.grid_pattern.4 = angle(value)?,
                    "sensor.elevations" => p.rings.0 = list(value, angle)?,
                    "sensor.azimuth_steps" => p.rings.1 = integer(value)?,
                    "sensor.count" => p.spiral.0 = integer(value)?,
                    "sensor.min_elevation" => p.spiral.1 = angle(value)?,
                    "sensor.max_elevation" => p.spiral.2 = angle(value)?,
                    "sensor.max_range" => c.sensor.max_range = number(value)?,
                    "sensor.alpha_d" => c.sensor.alpha_d = number(value)?,
                    "sensor.rate" => c.sensor.rate = number(value)?,

                    "scene.primitive" => primitives.push(parse_primitive(value)?),
                    "trajectory.waypoint" => waypoints.push(parse_waypoint(value)?),
                    "trajectory.drift_rate" => c.trajectory.drift_rate = number(value)?,
                    "trajectory.drift_start" => c.trajectory.drift_start = number(value)?,

                    "run.scans" => c.run.scans = Some(integer(value)?),
                    "run.publish_every" => c.run.publish_every = integer(value)?,
                    "run.seed" => c.run.seed = integer(value)?,
                    "run.mode" => pl.mode = value.parse().map_err(|e: Error| e.to_string())?,

                    "bench.point_counts" => c.bench.point_counts = list(value, integer)?,
                    "bench.repetitions" => c.bench.repetitions = integer(value)?,

                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            })();
            r.map_err(|msg| Error::parse(source, n, msg))?;
        }

        cfg.grid = GridSpec::new(p.resolution, p.width, p.height, p.center)?;
        if !primitives.is_empty() {
            cfg.scene.primitives = primitives;
        }
        if !waypoints.is_empty() {
            cfg.trajectory.waypoints = waypoints;
        }
        cfg.sensor.pattern = match p.pattern.as_str() {
            "grid" => {
                let (h_fov, v_fov, cols, rows, pitch) = p.grid_pattern;
                RayPattern::Grid { h_fov, v_fov, cols, rows, pitch }
            }
            "spiral" => {
                let (count, min_elevation, max_elevation) = p.spiral;
                RayPattern::Spiral { count, min_elevation, max_elevation }
            }
            _ => RayPattern::Rings {
                elevations: p.rings.0,
                azimuth_steps: p.rings.1,
            },
        };
        cfg.pipeline.traversability = match (p.trav_kind.as_str(), p.model) {
            ("convnet", Some(path)) => TraversabilityFilter::ConvNet(ConvNetSpec::load(&path)?),
            ("convnet", None) => {
                return Err(Error::InvalidParam("traversability.filter = convnet needs traversability.model".into()))
            }
            _ => TraversabilityFilter::Geometric(p.trav),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.scene.validate()?;
        self.sensor.validate()?;
        self.trajectory.validate()?;
        self.segment.validate()?;
        self.filters.validate()?;
        if self.run.publish_every == 0 || self.bench.repetitions == 0 || self.run.scans == Some(0) {
            return Err(Error::InvalidParam(
                "run.publish_every, run.scans and bench.repetitions must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Stamps of the scans to simulate.
    pub fn scan_times(&self) -> Vec<f64> {
        let (start, end) = self.trajectory.span();
        let period = 1.0 / self.sensor.rate;
        let n = self
            .run
            .scans
            .unwrap_or_else(|| ((end - start) * self.sensor.rate + 1e-9).floor() as usize + 1);
        (0..n).map(|k| start + k as f64 * period).filter(|t| *t <= end + 1e-9).map(|t| t.min(end)).collect()
    }

    pub fn mode(&self) -> ExecMode {
        self.pipeline.mode
    }
}
