use nalgebra::Vector3;

use crate::cloudops::{associate, locate_marker};
use crate::frontend::KeyframeNode;
use crate::geom::{CameraIntrinsics, SE3Pose};

/// A marker as measured in the map.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkerView {
    pub label: String,
    /// `None` when no keyframe shows the marker with valid depth.
    pub position: Option<Vector3<f64>>,
    pub views: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Measures markers in the keyframe images.
///
/// The pixel of a marker in a keyframe is where it appears in that image,
/// found by projecting its true position with the true camera pose (this
/// stands in for an operator clicking the marker). The 3-d position comes
/// from the keyframe depth and the estimated keyframe pose. Each marker takes
/// the per-axis median over the `max_views` views nearest the image center.
pub fn measure_markers(
    keyframes: &[KeyframeNode],
    ground_truth: &[(f64, SE3Pose<f64>)],
    k: &CameraIntrinsics,
    markers: &[(String, Vector3<f64>)],
    max_views: usize,
    radius: i64,
) -> Vec<MarkerView> {
    let stamped: Vec<(f64, SE3Pose<f64>)> = keyframes.iter().map(|kf| (kf.timestamp, kf.pose_est)).collect();
    let pairs = associate(&stamped, ground_truth, 1e-6);
    let (cx, cy) = (k.width as f64 / 2.0, k.height as f64 / 2.0);
    let margin = (radius + 1) as f64;
    markers
        .iter()
        .map(|(label, truth)| {
            let mut views: Vec<(f64, Vector3<f64>)> = Vec::new();
            for &(i, j) in &pairs {
                let kf = &keyframes[i];
                let Some(depth) = &kf.depth else { continue };
                let cam = ground_truth[j].1.inverse().transform_point(truth);
                let Ok((u, v)) = k.project(&cam) else { continue };
                if u < margin || v < margin || u > k.width as f64 - 1.0 - margin || v > k.height as f64 - 1.0 - margin {
                    continue;
                }
                if let Some(p) = locate_marker(depth, &kf.pose_est, k, u, v, radius) {
                    views.push(((u - cx).hypot(v - cy), p));
                }
            }
            views.sort_by(|a, b| a.0.total_cmp(&b.0));
            views.truncate(max_views.max(1));
            let position = (!views.is_empty()).then(|| {
                Vector3::new(
                    median(views.iter().map(|v| v.1.x).collect()),
                    median(views.iter().map(|v| v.1.y).collect()),
                    median(views.iter().map(|v| v.1.z).collect()),
                )
            });
            MarkerView {
                label: label.clone(),
                position,
                views: views.len(),
            }
        })
        .collect()
}
