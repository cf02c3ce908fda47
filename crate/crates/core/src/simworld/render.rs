use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scene::Terrain;
use super::SimError;
use crate::geom::{CameraIntrinsics, SE3Pose};
use crate::raster::{DepthImage, Raster, RgbImage};

/// Ray-march step along each ray, meters.
pub const MARCH_STEP: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation of the depth error as a fraction of the depth.
    pub depth_sigma_rel: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub dropout_prob: f64,
    /// Gray levels.
    pub pixel_intensity_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            depth_sigma_rel: 0.01,
            depth_min: 0.5,
            depth_max: 5.0,
            dropout_prob: 0.02,
            pixel_intensity_sigma: 2.0,
        }
    }
}

impl NoiseModel {
    /// Exact depth and intensity within the sensing range.
    pub fn noiseless() -> Self {
        Self {
            depth_sigma_rel: 0.0,
            dropout_prob: 0.0,
            pixel_intensity_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(SimError::InvalidNoise("dropout probability outside [0, 1]"));
        }
        if !(self.depth_min > 0.0 && self.depth_min < self.depth_max) {
            return Err(SimError::InvalidNoise("need 0 < depth_min < depth_max"));
        }
        if !(self.depth_sigma_rel >= 0.0 && self.pixel_intensity_sigma >= 0.0) {
            return Err(SimError::InvalidNoise("noise levels must be non-negative"));
        }
        Ok(())
    }
}

/// One RGB-D sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub rgb: RgbImage,
    pub depth: DepthImage,
    /// World-from-camera.
    pub gt_pose: Option<SE3Pose<f64>>,
}

/// Distance along the unit ray `dir` from `origin` to the surface, if it is hit
/// before `max_s`.
pub fn cast_ray(terrain: &Terrain, origin: &Vector3<f64>, dir: &Vector3<f64>, max_s: f64) -> Option<f64> {
    let horizontal = (dir.x * dir.x + dir.y * dir.y).sqrt();
    let tile = terrain.tile_size();
    let top = terrain.max_height();
    let mut s = 0.0;
    if origin.z > top {
        if dir.z >= 0.0 {
            return None;
        }
        // Nothing to hit above the highest point of the surface.
        s = (origin.z - top) / -dir.z;
        if s > max_s {
            return None;
        }
    }
    let mut s_prev = s;
    loop {
        let p = origin + dir * s;
        let h = terrain.height(p.x, p.y);
        if p.z <= h {
            if s == s_prev {
                return Some(s);
            }
            return Some(refine(terrain, origin, dir, s_prev, s));
        }
        if s >= max_s {
            return None;
        }
        let mut step = MARCH_STEP;
        let bound = terrain.local_max(p.x, p.y);
        if dir.z < 0.0 && p.z > bound {
            // Stay above the local bound without leaving the neighbouring tiles.
            let mut skip = (p.z - bound) / -dir.z;
            if horizontal > 0.0 {
                skip = skip.min(tile / horizontal);
            }
            step = step.max(skip);
        }
        s_prev = s;
        s = (s + step).min(max_s);
    }
}

/// Root of `z(s) - h(s)` inside `[lo, hi]` by the Illinois variant of regula
/// falsi, which converges in a few steps on the piecewise-bilinear surface.
fn refine(terrain: &Terrain, origin: &Vector3<f64>, dir: &Vector3<f64>, mut lo: f64, mut hi: f64) -> f64 {
    let gap = |s: f64| {
        let q = origin + dir * s;
        q.z - terrain.height(q.x, q.y)
    };
    let mut f_lo = gap(lo);
    let mut f_hi = gap(hi);
    let mut side = 0;
    for _ in 0..60 {
        if hi - lo < 1e-7 {
            break;
        }
        let denom = f_lo - f_hi;
        let mut mid = if denom > 0.0 { lo + (hi - lo) * f_lo / denom } else { 0.5 * (lo + hi) };
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let f = gap(mid);
        if f.abs() < 1e-9 {
            return mid;
        }
        if f > 0.0 {
            lo = mid;
            f_lo = f;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = mid;
            f_hi = f;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
    }
    0.5 * (lo + hi)
}

/// Renders one frame by ray casting the terrain.
///
/// Depths outside `[depth_min, depth_max]` (after noise) are stored as 0.
/// Identical arguments give bit-identical output.
pub fn render_frame(
    terrain: &Terrain,
    k: &CameraIntrinsics,
    pose: &SE3Pose<f64>,
    noise: &NoiseModel,
    rng_seed: u64,
    timestamp: f64,
) -> Result<FrameRecord, SimError> {
    noise.validate()?;
    k.validate().map_err(|e| SimError::InvalidScene(e.to_string()))?;
    let origin = pose.translation;
    if origin.z < terrain.height(origin.x, origin.y) {
        return Err(SimError::CameraUnderground);
    }
    let (w, h) = (k.width, k.height);
    let mut rgb: RgbImage = Raster::new(w, h);
    let mut depth: DepthImage = Raster::new(w, h);
    let max_units = u16::MAX as f64;
    for v in 0..h {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(v as u64);
        for u in 0..w {
            let ray_cam = k.backproject(u as f64, v as f64, 1.0);
            let len = ray_cam.norm();
            let dir = pose.rotation * (ray_cam / len);
            // z-depth per unit of ray length
            let cos = 1.0 / len;
            let max_s = noise.depth_max / cos + MARCH_STEP;
            let hit = cast_ray(terrain, &origin, &dir, max_s);

            let (gray, d_units) = match hit {
                Some(s) => {
                    let p = origin + dir * s;
                    let z = s * cos;
                    let mut g = terrain.texture(p.x, p.y);
                    if noise.pixel_intensity_sigma > 0.0 {
                        let n: f64 = rng.sample(StandardNormal);
                        g += n * noise.pixel_intensity_sigma;
                    }
                    let mut d = z;
                    if noise.depth_sigma_rel > 0.0 {
                        let n: f64 = rng.sample(StandardNormal);
                        d += n * noise.depth_sigma_rel * z;
                    }
                    let dropped = noise.dropout_prob > 0.0 && rng.random::<f64>() < noise.dropout_prob;
                    let valid_range = z >= noise.depth_min && z <= noise.depth_max;
                    let units = (d / k.depth_scale).round();
                    let stored = units * k.depth_scale;
                    let ok = valid_range
                        && !dropped
                        && units >= 1.0
                        && units <= max_units
                        && stored >= noise.depth_min
                        && stored <= noise.depth_max;
                    (g, if ok { units as u16 } else { 0 })
                }
                None => {
                    let mut g = 0.0;
                    if noise.pixel_intensity_sigma > 0.0 {
                        let n: f64 = rng.sample(StandardNormal);
                        g += n.abs() * noise.pixel_intensity_sigma;
                    }
                    (g, 0)
                }
            };
            let g8 = gray.round().clamp(0.0, 255.0) as u8;
            rgb.set(u, v, [g8, g8, g8]);
            depth.set(u, v, d_units);
        }
    }
    Ok(FrameRecord {
        timestamp,
        rgb,
        depth,
        gt_pose: Some(*pose),
    })
}
