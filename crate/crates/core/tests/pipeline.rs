//! End-to-end runs through [`Simulation`] on small scenes.

use std::path::Path;

use reliefmap::io::RunConfig;
use reliefmap::runner::Simulation;
use reliefmap::{ExecMode, ScanStats};

const SCENE: &str = "\
grid.resolution = 0.05
grid.width = 80
grid.height = 80
scene.primitive = ground 0.0
scene.primitive = box 1.2 0.3 0.2 0.5 0.4 0.4 20deg
scene.primitive = stairs -1.0 -0.5 0.0 180deg 0.15 0.3 3 1.0
trajectory.waypoint = 0.0 0.0 0.0 0.6 0deg
trajectory.waypoint = 1.5 0.4 0.2 0.6 30deg
sensor.pattern = rings
sensor.elevations = -8deg -12deg -16deg -20deg -25deg -30deg -40deg -55deg
sensor.azimuth_steps = 360
";

fn config(extra: &str) -> RunConfig {
    RunConfig::parse(&format!("{SCENE}{extra}"), "test", Path::new(".")).unwrap()
}

fn run(cfg: RunConfig) -> (Vec<ScanStats>, Simulation) {
    let mut sim = Simulation::new(cfg).unwrap();
    let mut stats = Vec::new();
    while let Some(step) = sim.step().unwrap() {
        stats.push(step.stats);
    }
    (stats, sim)
}

#[test]
fn every_point_is_accounted_for() {
    let (stats, _) = run(config(""));
    assert!(stats.len() > 10);
    for (i, s) in stats.iter().enumerate() {
        assert!(s.is_conserved(), "scan {i}: {s:?}");
        assert!(s.points_fused > 0);
    }
}

#[test]
fn parallel_matches_deterministic() {
    let mut det = config("");
    det.pipeline.mode = ExecMode::Deterministic;
    let mut par = det.clone();
    par.pipeline.mode = ExecMode::Parallel;
    let (sd, a) = run(det);
    let (sp, b) = run(par);

    for (x, y) in sd.iter().zip(&sp) {
        assert_eq!(x.points_fused, y.points_fused);
        assert_eq!(x.points_rejected_outlier, y.points_rejected_outlier);
        assert_eq!(x.cells_removed_by_cleanup, y.cells_removed_by_cleanup);
        assert_eq!(x.upper_bounds_lowered, y.upper_bounds_lowered);
        assert!((x.drift_offset_applied - y.drift_offset_applied).abs() < 1e-12);
    }
    let (ea, eb) = (a.map.elevation_layer(), b.map.elevation_layer());
    assert_eq!(ea.valid, eb.valid);
    for i in 0..ea.len() {
        if ea.valid[i] {
            assert!((ea.values[i] - eb.values[i]).abs() < 1e-9, "cell {i}");
        }
    }
}

#[test]
fn compensation_flattens_ground_under_drift() {
    // Compensation keeps the map consistent with the drifting estimate, not
    // with the world, so compare the spread of ground heights.
    let ground_spread = |enabled: bool| {
        let mut cfg = config("trajectory.drift_rate = 0.2\n");
        cfg.sensor.alpha_d = 1e-6;
        cfg.pipeline.update.drift_enabled = enabled;
        let (_, sim) = run(cfg);
        let map = &sim.map;
        let e = map.elevation_layer();
        let mut heights = Vec::new();
        for k in 0..12 {
            for y in [-1.4, -1.2, 1.3] {
                let x = -0.2 + 0.1 * k as f64;
                if let Some(i) = map.spec().flat_at(x, y) {
                    if e.valid[i] {
                        heights.push(e.values[i]);
                    }
                }
            }
        }
        assert!(heights.len() > 10, "too few observed ground cells ({})", heights.len());
        let (lo, hi) = heights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        hi - lo
    };
    let (on, off) = (ground_spread(true), ground_spread(false));
    assert!(on < 0.5 * off, "with compensation {on:.4}, without {off:.4}");
}
