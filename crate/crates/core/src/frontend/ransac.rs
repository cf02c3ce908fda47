use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matching::Match;
use crate::geom::{rigid_align, SE3Pose};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    /// Inlier distance, meters.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: 0.10,
            confidence: 0.99,
            max_iterations: 500,
            min_inliers: 20,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackingStatus {
    Ok,
    Lost,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdometryEstimate {
    /// Maps points of the second frame into the first (first-camera-from-second-camera).
    pub relative_pose: SE3Pose<f64>,
    pub inliers: usize,
    /// Over the inliers, meters.
    pub rmse: f64,
    pub status: TrackingStatus,
    /// Matches with 3-d points on both sides.
    pub matches: usize,
}

impl OdometryEstimate {
    pub fn lost(matches: usize) -> Self {
        Self {
            relative_pose: SE3Pose::identity(),
            inliers: 0,
            rmse: 0.0,
            status: TrackingStatus::Lost,
            matches,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == TrackingStatus::Ok
    }
}

fn inlier_set(t: &SE3Pose<f64>, a: &[Vector3<f64>], b: &[Vector3<f64>], tau2: f64) -> Vec<usize> {
    (0..a.len())
        .filter(|&i| (t.transform_point(&b[i]) - a[i]).norm_squared() < tau2)
        .collect()
}

/// Three-point RANSAC on 3-d correspondences followed by a least-squares refit
/// on the consensus set. Deterministic: the generator is reseeded on every call.
pub fn estimate_relative_pose(
    matches: &[Match],
    pts_a: &[Option<Vector3<f64>>],
    pts_b: &[Option<Vector3<f64>>],
    params: &RansacParams,
) -> OdometryEstimate {
    let mut a = Vec::with_capacity(matches.len());
    let mut b = Vec::with_capacity(matches.len());
    for m in matches {
        if let (Some(Some(pa)), Some(Some(pb))) = (pts_a.get(m.a), pts_b.get(m.b)) {
            a.push(*pa);
            b.push(*pb);
        }
    }
    let n = a.len();
    if n < 3 || n < params.min_inliers {
        return OdometryEstimate::lost(n);
    }
    let tau2 = params.threshold * params.threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Vec<usize> = Vec::new();
    let mut needed = params.max_iterations;
    let mut it = 0;
    while it < needed.min(params.max_iterations) {
        it += 1;
        let i0 = rng.random_range(0..n);
        let mut i1 = rng.random_range(0..n - 1);
        if i1 >= i0 {
            i1 += 1;
        }
        let mut i2 = rng.random_range(0..n - 2);
        for lo in [i0.min(i1), i0.max(i1)] {
            if i2 >= lo {
                i2 += 1;
            }
        }
        let Ok(t) = rigid_align(&[b[i0], b[i1], b[i2]], &[a[i0], a[i1], a[i2]]) else {
            continue;
        };
        let inl = inlier_set(&t, &a, &b, tau2);
        if inl.len() > best.len() {
            best = inl;
            let w = best.len() as f64 / n as f64;
            let p_fail = 1.0 - w * w * w;
            needed = if p_fail <= 0.0 {
                0
            } else if p_fail >= 1.0 {
                params.max_iterations
            } else {
                ((1.0 - params.confidence).ln() / p_fail.ln()).ceil() as usize
            };
        }
    }
    if best.len() < 3 {
        return OdometryEstimate::lost(n);
    }
    let mut pose = SE3Pose::identity();
    for _ in 0..3 {
        let sa: Vec<_> = best.iter().map(|&i| a[i]).collect();
        let sb: Vec<_> = best.iter().map(|&i| b[i]).collect();
        match rigid_align(&sb, &sa) {
            Ok(t) => pose = t,
            Err(_) => return OdometryEstimate::lost(n),
        }
        let next = inlier_set(&pose, &a, &b, tau2);
        if next == best {
            break;
        }
        if next.len() < 3 {
            return OdometryEstimate::lost(n);
        }
        best = next;
    }
    let sse: f64 = best
        .iter()
        .map(|&i| (pose.transform_point(&b[i]) - a[i]).norm_squared())
        .sum();
    let rmse = (sse / best.len() as f64).sqrt();
    let status = if best.len() >= params.min_inliers {
        TrackingStatus::Ok
    } else {
        TrackingStatus::Lost
    };
    OdometryEstimate {
        relative_pose: pose,
        inliers: best.len(),
        rmse,
        status,
        matches: n,
    }
}
