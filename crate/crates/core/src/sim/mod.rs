//! Analytic scene simulator: terrain primitives, a virtual depth sensor and
//! trajectories with injected drift.

pub mod scene;
pub mod sensor;
pub mod trajectory;

pub use scene::{ground_truth_heightmap, ConvexSolid, Motion, Primitive, SceneSpec};
pub use sensor::{render_scan, RayPattern, SensorSpec};
pub use trajectory::{TrajectorySpec, Waypoint};
