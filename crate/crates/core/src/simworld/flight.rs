use nalgebra::{Matrix3, Vector3};

use super::SimError;
use crate::geom::SE3Pose;

/// Constant-speed survey flight along a polyline of waypoints.
#[derive(Clone, Debug, PartialEq)]
pub struct FlightPlan {
    /// World positions; `z` is the altitude.
    pub waypoints: Vec<Vector3<f64>>,
    /// Meters per second.
    pub speed: f64,
    /// Hz.
    pub frame_rate: f64,
    /// Forward tilt of the optical axis away from nadir, radians.
    pub camera_pitch: f64,
    /// Path length over which the heading is blended at interior waypoints, meters.
    /// Zero turns instantly.
    pub turn_blend: f64,
}

impl FlightPlan {
    /// Survey defaults: 0.5 m/s, 15 Hz, nadir camera.
    pub fn new(waypoints: Vec<Vector3<f64>>) -> Self {
        Self {
            waypoints,
            speed: 0.5,
            frame_rate: 15.0,
            camera_pitch: 0.0,
            turn_blend: 1.5,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.waypoints.len() < 2 {
            return Err(SimError::EmptyPlan);
        }
        if !(self.speed > 0.0) {
            return Err(SimError::InvalidPlan("speed must be positive"));
        }
        if !(self.frame_rate > 0.0) {
            return Err(SimError::InvalidPlan("frame rate must be positive"));
        }
        if self.waypoints.iter().any(|w| !(w.z > 0.0)) {
            return Err(SimError::InvalidPlan("waypoint altitude must be positive"));
        }
        if !(self.turn_blend >= 0.0) {
            return Err(SimError::InvalidPlan("turn blend must be non-negative"));
        }
        Ok(())
    }

    pub fn path_length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Seconds needed to fly the whole path.
    pub fn duration(&self) -> f64 {
        self.path_length() / self.speed
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r > std::f64::consts::PI {
        r -= two_pi;
    } else if r < -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

/// World-from-camera rotation for a camera looking straight down with the
/// top of the image pointing along heading `yaw`, then pitched forward.
pub fn nadir_rotation(yaw: f64, pitch: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    let x_cam = Vector3::new(s, -c, 0.0);
    let y_cam = Vector3::new(-c, -s, 0.0);
    let z_cam = Vector3::new(0.0, 0.0, -1.0);
    let nadir = Matrix3::from_columns(&[x_cam, y_cam, z_cam]);
    let (sp, cp) = pitch.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
    nadir * rx
}

struct Segment {
    start: Vector3<f64>,
    dir: Vector3<f64>,
    length: f64,
    s0: f64,
    yaw: f64,
}

/// Samples the flight at `1 / frame_rate` intervals for `duration_s` seconds.
///
/// Returns `floor(duration_s * frame_rate) + 1` timestamped world-from-camera
/// poses. Past the end of the path the vehicle hovers at the last waypoint.
pub fn plan_trajectory(plan: &FlightPlan, duration_s: f64) -> Result<Vec<(f64, SE3Pose<f64>)>, SimError> {
    plan.validate()?;
    if !(duration_s >= 0.0) {
        return Err(SimError::InvalidPlan("duration must be non-negative"));
    }
    let mut segments = Vec::new();
    let mut s0 = 0.0;
    for w in plan.waypoints.windows(2) {
        let d = w[1] - w[0];
        let length = d.norm();
        if length <= 0.0 {
            continue;
        }
        let dir = d / length;
        segments.push(Segment {
            start: w[0],
            dir,
            length,
            s0,
            yaw: dir.y.atan2(dir.x),
        });
        s0 += length;
    }
    if segments.is_empty() {
        return Err(SimError::InvalidPlan("waypoints do not span any distance"));
    }
    let total = s0;
    let n = (duration_s * plan.frame_rate + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / plan.frame_rate;
        let s = (plan.speed * t).min(total);
        let idx = segments
            .iter()
            .rposition(|seg| seg.s0 <= s)
            .unwrap_or(0);
        let seg = &segments[idx];
        let position = seg.start + seg.dir * (s - seg.s0).min(seg.length);
        let yaw = blended_yaw(&segments, idx, s, plan.turn_blend);
        let rotation = nadir_rotation(yaw, plan.camera_pitch);
        out.push((t, SE3Pose::new(rotation, position)));
    }
    Ok(out)
}

fn blended_yaw(segments: &[Segment], idx: usize, s: f64, blend: f64) -> f64 {
    let seg = &segments[idx];
    if blend <= 0.0 {
        return seg.yaw;
    }
    // Blend towards the previous segment near this segment's start...
    if idx > 0 {
        let prev = &segments[idx - 1];
        let half = 0.5 * blend.min(seg.length).min(prev.length);
        let into = s - seg.s0;
        if into < half {
            let delta = wrap_angle(seg.yaw - prev.yaw);
            let f = 0.5 + 0.5 * into / half;
            return prev.yaw + delta * f;
        }
    }
    // ...and towards the next one near its end.
    if idx + 1 < segments.len() {
        let next = &segments[idx + 1];
        let half = 0.5 * blend.min(seg.length).min(next.length);
        let remaining = seg.s0 + seg.length - s;
        if remaining < half {
            let delta = wrap_angle(next.yaw - seg.yaw);
            let f = 0.5 - 0.5 * remaining / half;
            return seg.yaw + delta * f;
        }
    }
    seg.yaw
}
