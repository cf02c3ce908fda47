//! Per-frame features, matching and 3-d/3-d visual odometry with keyframe selection.

pub mod brief;
pub mod harris;
pub mod matching;
pub mod ransac;

use nalgebra::Vector3;

pub use brief::{compute_descriptors, BinaryDescriptor, DESCRIPTOR_BORDER};
pub use harris::{detect_features, detect_features_with, DetectorParams, Keypoint};
pub use matching::{match_descriptors, Match};
pub use ransac::{estimate_relative_pose, OdometryEstimate, RansacParams, TrackingStatus};

use crate::geom::{CameraIntrinsics, SE3Pose};
use crate::loopmem::BowHistogram;
use crate::raster::{DepthImage, GrayImage, RgbImage};
use crate::simworld::FrameRecord;

/// Observations of one frame. The three lists are parallel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<BinaryDescriptor>,
    /// Camera-frame point, where the depth around the keypoint is valid.
    pub points_cam: Vec<Option<Vector3<f64>>>,
}

impl FrameFeatures {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeNode {
    pub id: u64,
    pub session: u32,
    /// World-from-camera.
    pub pose_est: SE3Pose<f64>,
    pub features: FrameFeatures,
    pub bow: BowHistogram,
    pub weight: u32,
    pub timestamp: f64,
    /// Kept when the map should later be turned into a point cloud.
    pub rgb: Option<RgbImage>,
    pub depth: Option<DepthImage>,
}

impl KeyframeNode {
    /// Keyframe with its bag of words computed and no retained images.
    pub fn new(id: u64, session: u32, pose_est: SE3Pose<f64>, features: FrameFeatures, timestamp: f64) -> Self {
        Self {
            id,
            session,
            pose_est,
            bow: BowHistogram::from_descriptors(&features.descriptors),
            features,
            weight: 0,
            timestamp,
            rgb: None,
            depth: None,
        }
    }
}

/// Median of the valid depths in the 3x3 window around a pixel, in meters.
pub fn keypoint_depth(depth: &DepthImage, u: f64, v: f64, depth_scale: f64) -> Option<f64> {
    let x = u.round() as i64;
    let y = v.round() as i64;
    let mut vals = [0u16; 9];
    let mut n = 0;
    for yy in y - 1..=y + 1 {
        for xx in x - 1..=x + 1 {
            if depth.in_bounds(xx, yy) {
                let d = depth.get(xx as u32, yy as u32);
                if d != 0 {
                    vals[n] = d;
                    n += 1;
                }
            }
        }
    }
    if n < 3 {
        return None;
    }
    let vals = &mut vals[..n];
    vals.sort_unstable();
    let m = if n % 2 == 1 {
        vals[n / 2] as f64
    } else {
        0.5 * (vals[n / 2 - 1] as f64 + vals[n / 2] as f64)
    };
    Some(m * depth_scale)
}

/// Detects, describes and lifts the keypoints of one frame.
pub fn extract_features(gray: &GrayImage, depth: &DepthImage, k: &CameraIntrinsics, params: &DetectorParams) -> FrameFeatures {
    let det = DetectorParams {
        border: params.border.max(DESCRIPTOR_BORDER),
        ..*params
    };
    let kps = detect_features_with(gray, &det);
    let (keypoints, descriptors) = compute_descriptors(gray, &kps);
    let points_cam = keypoints
        .iter()
        .map(|kp| keypoint_depth(depth, kp.u, kp.v, k.depth_scale).map(|d| k.backproject(kp.u, kp.v, d)))
        .collect();
    FrameFeatures {
        keypoints,
        descriptors,
        points_cam,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerParams {
    pub detector: DetectorParams,
    pub max_hamming: u32,
    pub ratio: f64,
    pub ransac: RansacParams,
    /// Meters.
    pub keyframe_translation: f64,
    /// Radians.
    pub keyframe_rotation: f64,
    pub keep_rasters: bool,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            detector: DetectorParams::default(),
            max_hamming: 64,
            ratio: 0.8,
            ransac: RansacParams::default(),
            keyframe_translation: 0.3,
            keyframe_rotation: 10f64.to_radians(),
            keep_rasters: true,
        }
    }
}

/// Matches two feature sets and estimates `a_from_b`.
pub fn relative_motion(a: &FrameFeatures, b: &FrameFeatures, params: &TrackerParams) -> (Vec<Match>, OdometryEstimate) {
    let matches = match_descriptors(&a.descriptors, &b.descriptors, params.max_hamming, params.ratio);
    let est = estimate_relative_pose(&matches, &a.points_cam, &b.points_cam, &params.ransac);
    (matches, est)
}

#[derive(Clone, Debug)]
struct Reference {
    id: u64,
    pose: SE3Pose<f64>,
    features: FrameFeatures,
}

/// Single-owner tracking state.
#[derive(Clone, Debug)]
pub struct TrackerState {
    pub params: TrackerParams,
    pub session: u32,
    next_id: u64,
    reference: Option<Reference>,
    pose: SE3Pose<f64>,
    lost_streak: usize,
}

impl TrackerState {
    /// The first tracked frame becomes keyframe `first_id` at `initial_pose`.
    pub fn new(params: TrackerParams, session: u32, first_id: u64, initial_pose: SE3Pose<f64>) -> Self {
        Self {
            params,
            session,
            next_id: first_id,
            reference: None,
            pose: initial_pose,
            lost_streak: 0,
        }
    }

    /// Current world-from-camera estimate.
    pub fn pose(&self) -> SE3Pose<f64> {
        self.pose
    }

    pub fn lost_streak(&self) -> usize {
        self.lost_streak
    }

    /// Keyframe the next estimate is relative to.
    pub fn reference_id(&self) -> Option<u64> {
        self.reference.as_ref().map(|r| r.id)
    }

    pub fn reference_pose(&self) -> Option<SE3Pose<f64>> {
        self.reference.as_ref().map(|r| r.pose)
    }

    /// Moves the reference keyframe (after graph optimization) and carries the
    /// current estimate along with it.
    pub fn set_reference_pose(&mut self, pose: SE3Pose<f64>) {
        if let Some(r) = &mut self.reference {
            let rel = r.pose.inverse() * self.pose;
            r.pose = pose;
            self.pose = pose * rel;
        }
    }

    pub fn track(&mut self, frame: &FrameRecord, k: &CameraIntrinsics) -> (OdometryEstimate, Option<KeyframeNode>) {
        let gray = frame.rgb.to_gray();
        let features = extract_features(&gray, &frame.depth, k, &self.params.detector);
        self.track_features(features, frame)
    }

    /// Tracking with features extracted elsewhere (for example on a worker thread).
    pub fn track_features(&mut self, features: FrameFeatures, frame: &FrameRecord) -> (OdometryEstimate, Option<KeyframeNode>) {
        let Some(reference) = &self.reference else {
            let n = features.points_cam.iter().filter(|p| p.is_some()).count();
            let est = OdometryEstimate {
                relative_pose: SE3Pose::identity(),
                inliers: n,
                rmse: 0.0,
                status: TrackingStatus::Ok,
                matches: n,
            };
            let kf = self.make_keyframe(features, frame, self.pose);
            return (est, Some(kf));
        };
        let (_, est) = relative_motion(&reference.features, &features, &self.params);
        if !est.is_ok() {
            self.lost_streak += 1;
            return (est, None);
        }
        self.lost_streak = 0;
        self.pose = reference.pose * est.relative_pose;
        let rel = &est.relative_pose;
        let weak = (est.inliers as f64) < 1.5 * self.params.ransac.min_inliers as f64;
        let new_kf = rel.translation.norm() > self.params.keyframe_translation
            || rel.rotation_angle() > self.params.keyframe_rotation
            || weak;
        let kf = new_kf.then(|| self.make_keyframe(features, frame, self.pose));
        (est, kf)
    }

    fn make_keyframe(&mut self, features: FrameFeatures, frame: &FrameRecord, pose: SE3Pose<f64>) -> KeyframeNode {
        let id = self.next_id;
        self.next_id += 1;
        self.reference = Some(Reference {
            id,
            pose,
            features: features.clone(),
        });
        let mut kf = KeyframeNode::new(id, self.session, pose, features, frame.timestamp);
        if self.params.keep_rasters {
            kf.rgb = Some(frame.rgb.clone());
            kf.depth = Some(frame.depth.clone());
        }
        kf
    }
}

pub fn track(state: &mut TrackerState, frame: &FrameRecord, k: &CameraIntrinsics) -> (OdometryEstimate, Option<KeyframeNode>) {
    state.track(frame, k)
}
