//! Piecewise-linear robot trajectories with an injected vertical drift.

use crate::error::{Error, Result};
use crate::sensing::RigidTransform;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Waypoint {
    pub time: f64,
    pub position: [f64; 3],
    /// Radians; interpolated linearly without wrapping.
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Waypoint {
    pub fn new(time: f64, position: [f64; 3], yaw: f64) -> Self {
        Self {
            time,
            position,
            yaw,
            pitch: 0.0,
            roll: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Waypoint>,
    /// Meters per second added to the estimated z.
    pub drift_rate: f64,
    pub drift_start: f64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::InvalidParam("trajectory has no waypoints".into()));
        }
        if self.waypoints.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::InvalidParam("waypoint times must increase strictly".into()));
        }
        if !self.drift_rate.is_finite() || !self.drift_start.is_finite() {
            return Err(Error::InvalidParam("non-finite drift".into()));
        }
        Ok(())
    }

    pub fn span(&self) -> (f64, f64) {
        let first = self.waypoints.first().map_or(0.0, |w| w.time);
        let last = self.waypoints.last().map_or(0.0, |w| w.time);
        (first, last)
    }

    /// True and estimated pose at `time`.
    pub fn pose_at(&self, time: f64) -> Result<(RigidTransform, RigidTransform)> {
        let (start, end) = self.span();
        if self.waypoints.is_empty() || !(time >= start && time <= end) {
            return Err(Error::OutOfTrajectory { time, start, end });
        }
        let k = self.waypoints.partition_point(|w| w.time <= time);
        let wp = if k >= self.waypoints.len() {
            *self.waypoints.last().expect("nonempty")
        } else {
            let (a, b) = (self.waypoints[k - 1], self.waypoints[k]);
            let f = (time - a.time) / (b.time - a.time);
            let lerp = |x: f64, y: f64| x + f * (y - x);
            Waypoint {
                time,
                position: [
                    lerp(a.position[0], b.position[0]),
                    lerp(a.position[1], b.position[1]),
                    lerp(a.position[2], b.position[2]),
                ],
                yaw: lerp(a.yaw, b.yaw),
                pitch: lerp(a.pitch, b.pitch),
                roll: lerp(a.roll, b.roll),
            }
        };
        let truth = RigidTransform::from_xyz_ypr(wp.position, wp.yaw, wp.pitch, wp.roll);
        let mut estimate = truth;
        estimate.translation.z += self.drift_rate * (time - self.drift_start).max(0.0);
        Ok((truth, estimate))
    }
}
