//! Point-cloud assembly and the site analytics built on it: cloud-to-cloud
//! distance, DEM cut/fill volumes, reference-distance accuracy, ICP overlay,
//! progress classification and trajectory error.

mod accuracy;
mod dem;
pub mod kdtree;
mod icp;
mod ply;
mod progress;

use std::collections::{BTreeMap, HashMap};
use std::io;

use nalgebra::Vector3;
use thiserror::Error;

use crate::frontend::KeyframeNode;
use crate::geom::{CameraIntrinsics, SE3Pose};

pub use accuracy::{
    accuracy_report, associate, ate_rmse, locate_marker, render_comparison, segment_lengths, AccuracyReport,
    ComparisonRow, ReferenceMarker, Segment, SegmentError,
};
pub use dem::{rasterize_common, rasterize_dem, resample_onto, volume_change, volume_change_resampled, write_ascii_grid, Dem, VolumeReport};
pub use icp::{icp_align, IcpParams, IcpResult};
pub use kdtree::KdTree;
pub use ply::{read_ply, read_ply_file, write_ply, write_ply_file};
pub use progress::{progress_classify, ElementProgress, ProgressParams, ProgressReport, ProgressState};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("reference cloud is empty")]
    EmptyReference,
    #[error("cloud is empty")]
    EmptyCloud,
    #[error("cell size must be positive")]
    InvalidCell,
    #[error("grids differ in origin, cell size or dimensions")]
    GridMismatch,
    #[error("marker labels do not match: {0}")]
    LabelMismatch(String),
    #[error("at least two markers are needed")]
    TooFewMarkers,
    #[error("no correspondences within the distance limit")]
    NoCorrespondences,
    #[error("trajectories share no timestamps")]
    NoOverlap,
    #[error("no pose for keyframe {0}")]
    MissingPose(u64),
    #[error("ply: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    pub rgb: [u8; 3],
    pub source_keyframe: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uncolored points with source 0.
    pub fn from_positions(positions: impl IntoIterator<Item = Vector3<f64>>) -> Self {
        Self {
            points: positions
                .into_iter()
                .map(|position| CloudPoint {
                    position,
                    rgb: [255, 255, 255],
                    source_keyframe: 0,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn transformed(&self, pose: &SE3Pose<f64>) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| CloudPoint {
                    position: pose.transform_point(&p.position),
                    ..*p
                })
                .collect(),
        }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    /// Axis-aligned bounds, `None` when empty.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.points.first()?.position;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(&p.position), hi.sup(&p.position))))
    }
}

/// Centroid per occupied voxel with the mean color; voxels are emitted in
/// index order and keep the smallest source keyframe id.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> PointCloud {
    if !(voxel > 0.0) {
        return cloud.clone();
    }
    struct Acc {
        sum: Vector3<f64>,
        rgb: [u64; 3],
        n: u64,
        source: u64,
    }
    let inv = 1.0 / voxel;
    let mut cells: BTreeMap<(i64, i64, i64), Acc> = BTreeMap::new();
    for p in &cloud.points {
        let key = (
            (p.position.x * inv).floor() as i64,
            (p.position.y * inv).floor() as i64,
            (p.position.z * inv).floor() as i64,
        );
        let acc = cells.entry(key).or_insert(Acc {
            sum: Vector3::zeros(),
            rgb: [0; 3],
            n: 0,
            source: p.source_keyframe,
        });
        acc.sum += p.position;
        for c in 0..3 {
            acc.rgb[c] += p.rgb[c] as u64;
        }
        acc.n += 1;
        acc.source = acc.source.min(p.source_keyframe);
    }
    PointCloud {
        points: cells
            .into_values()
            .map(|a| CloudPoint {
                position: a.sum / a.n as f64,
                rgb: a.rgb.map(|c| ((c + a.n / 2) / a.n) as u8),
                source_keyframe: a.source,
            })
            .collect(),
    }
}

/// Backprojects every `stride`-th valid depth pixel of each keyframe into the
/// world with its pose, then voxel-downsamples (`voxel <= 0` keeps all points).
/// Keyframes without retained images contribute nothing.
pub fn assemble_cloud(
    keyframes: &[KeyframeNode],
    poses: &HashMap<u64, SE3Pose<f64>>,
    k: &CameraIntrinsics,
    stride: u32,
    voxel: f64,
) -> Result<PointCloud, CloudError> {
    let stride = stride.max(1);
    let mut cloud = PointCloud::new();
    for kf in keyframes {
        let pose = poses.get(&kf.id).ok_or(CloudError::MissingPose(kf.id))?;
        let (Some(rgb), Some(depth)) = (&kf.rgb, &kf.depth) else {
            continue;
        };
        for v in (0..depth.height).step_by(stride as usize) {
            for u in (0..depth.width).step_by(stride as usize) {
                let d = depth.get(u, v);
                if d == 0 {
                    continue;
                }
                let p = k.backproject(u as f64, v as f64, d as f64 * k.depth_scale);
                cloud.points.push(CloudPoint {
                    position: pose.transform_point(&p),
                    rgb: rgb.get(u, v),
                    source_keyframe: kf.id,
                });
            }
        }
    }
    Ok(voxel_downsample(&cloud, voxel))
}

#[derive(Clone, Debug, PartialEq)]
pub struct C2CResult {
    pub distances: Vec<f64>,
    /// Index of the nearest reference point for each query point.
    pub nearest: Vec<usize>,
    pub mean: f64,
    pub rms: f64,
    pub max: f64,
    pub color_map: Vec<[u8; 3]>,
}

/// Nearest-rank percentile of an unsorted list.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Blue at 0 to red at `top`.
pub fn ramp_color(d: f64, top: f64) -> [u8; 3] {
    let t = if top > 0.0 { (d / top).clamp(0.0, 1.0) } else { 0.0 };
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

/// Distance from every point of `a` to its nearest neighbor in `b`.
pub fn c2c_distance(a: &PointCloud, b: &PointCloud) -> Result<C2CResult, CloudError> {
    if b.is_empty() {
        return Err(CloudError::EmptyReference);
    }
    let tree = KdTree::new(b.positions());
    let mut distances = Vec::with_capacity(a.len());
    let mut nearest = Vec::with_capacity(a.len());
    for p in &a.points {
        let (i, d) = tree.nearest(&p.position).expect("reference is non-empty");
        distances.push(d);
        nearest.push(i);
    }
    let n = distances.len().max(1) as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let rms = (distances.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let max = distances.iter().copied().fold(0.0, f64::max);
    let top = percentile(&distances, 95.0);
    let color_map = distances.iter().map(|d| ramp_color(*d, top)).collect();
    Ok(C2CResult {
        distances,
        nearest,
        mean,
        rms,
        max,
        color_map,
    })
}
