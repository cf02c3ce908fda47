use std::fmt::Write as _;

use nalgebra::Vector3;

use super::CloudError;
use crate::geom::{kabsch, CameraIntrinsics, SE3Pose};
use crate::raster::DepthImage;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMarker {
    pub label: String,
    pub position: Vector3<f64>,
}

impl ReferenceMarker {
    pub fn new(label: impl Into<String>, position: Vector3<f64>) -> Self {
        Self {
            label: label.into(),
            position,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub from: String,
    pub to: String,
    pub length: f64,
}

/// Distances between consecutive markers; `closed` adds the last-to-first wrap.
pub fn segment_lengths(markers: &[ReferenceMarker], closed: bool) -> Result<Vec<Segment>, CloudError> {
    if markers.len() < 2 {
        return Err(CloudError::TooFewMarkers);
    }
    for (i, m) in markers.iter().enumerate() {
        if markers[..i].iter().any(|o| o.label == m.label) {
            return Err(CloudError::LabelMismatch(format!("duplicate label {}", m.label)));
        }
    }
    let n = markers.len();
    let count = if closed { n } else { n - 1 };
    Ok((0..count)
        .map(|i| {
            let a = &markers[i];
            let b = &markers[(i + 1) % n];
            Segment {
                from: a.label.clone(),
                to: b.label.clone(),
                length: (b.position - a.position).norm(),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentError {
    pub from: String,
    pub to: String,
    pub measured: f64,
    pub truth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub segments: Vec<SegmentError>,
    /// Mean of |measured - truth|, meters.
    pub mean_abs_error: f64,
    /// Size of the evaluated cloud.
    pub point_count: usize,
}

/// Compares boundary segment lengths of measured markers against the truth;
/// both lists must carry the same labels in the same order.
pub fn accuracy_report(
    measured: &[ReferenceMarker],
    truth: &[ReferenceMarker],
    closed: bool,
    point_count: usize,
) -> Result<AccuracyReport, CloudError> {
    if measured.len() != truth.len() {
        return Err(CloudError::LabelMismatch(format!(
            "{} measured markers, {} true markers",
            measured.len(),
            truth.len()
        )));
    }
    for (m, t) in measured.iter().zip(truth) {
        if m.label != t.label {
            return Err(CloudError::LabelMismatch(format!("{} vs {}", m.label, t.label)));
        }
    }
    let ms = segment_lengths(measured, closed)?;
    let ts = segment_lengths(truth, closed)?;
    let segments: Vec<SegmentError> = ms
        .into_iter()
        .zip(ts)
        .map(|(m, t)| SegmentError {
            from: m.from,
            to: m.to,
            measured: m.length,
            truth: t.length,
        })
        .collect();
    let mean_abs_error = segments.iter().map(|s| (s.measured - s.truth).abs()).sum::<f64>() / segments.len() as f64;
    Ok(AccuracyReport {
        segments,
        mean_abs_error,
        point_count,
    })
}

impl AccuracyReport {
    /// Per-segment table followed by a key=value block.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "segment    measured_m  truth_m  error_m");
        for seg in &self.segments {
            let _ = writeln!(
                s,
                "{:<10} {:>10.4} {:>8.4} {:>8.4}",
                format!("{}-{}", seg.from, seg.to),
                seg.measured,
                seg.truth,
                seg.measured - seg.truth
            );
        }
        let _ = writeln!(s, "segments={}", self.segments.len());
        let _ = writeln!(s, "mean_abs_error_m={:.6}", self.mean_abs_error);
        let _ = writeln!(s, "point_count={}", self.point_count);
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub point_count: usize,
    /// `None` for the method used as the reference.
    pub mean_abs_error: Option<f64>,
}

/// Side-by-side table of methods, point counts and errors.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>10} {:>16}", "method", "points", "mean_abs_error");
    for r in rows {
        let err = match r.mean_abs_error {
            Some(e) => format!("{:.1} cm", e * 100.0),
            None => "reference".to_string(),
        };
        let _ = writeln!(s, "{:<16} {:>10} {:>16}", r.method, r.point_count, err);
    }
    s
}

/// World position of the surface seen at pixel `(u, v)`, using the median of
/// the valid depths in a `(2 * radius + 1)` square window.
pub fn locate_marker(
    depth: &DepthImage,
    pose: &SE3Pose<f64>,
    k: &CameraIntrinsics,
    u: f64,
    v: f64,
    radius: i64,
) -> Option<Vector3<f64>> {
    let x = u.round() as i64;
    let y = v.round() as i64;
    let mut vals = Vec::new();
    for yy in y - radius..=y + radius {
        for xx in x - radius..=x + radius {
            if depth.in_bounds(xx, yy) {
                let d = depth.get(xx as u32, yy as u32);
                if d != 0 {
                    vals.push(d);
                }
            }
        }
    }
    if vals.len() * 2 < ((2 * radius + 1) * (2 * radius + 1)) as usize {
        return None;
    }
    vals.sort_unstable();
    let n = vals.len();
    let m = if n % 2 == 1 {
        vals[n / 2] as f64
    } else {
        0.5 * (vals[n / 2 - 1] as f64 + vals[n / 2] as f64)
    };
    Some(pose.transform_point(&k.backproject(u, v, m * k.depth_scale)))
}

/// Pairs each estimated sample with the nearest ground-truth timestamp within
/// `max_dt`. Ground truth must be sorted by time.
pub fn associate(
    estimated: &[(f64, SE3Pose<f64>)],
    ground_truth: &[(f64, SE3Pose<f64>)],
    max_dt: f64,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, (t, _)) in estimated.iter().enumerate() {
        let j = ground_truth.partition_point(|(g, _)| *g < *t);
        let mut best: Option<(usize, f64)> = None;
        for c in [j.wrapping_sub(1), j] {
            if let Some((g, _)) = ground_truth.get(c) {
                let dt = (g - t).abs();
                if dt <= max_dt && best.is_none_or(|(_, b)| dt < b) {
                    best = Some((c, dt));
                }
            }
        }
        if let Some((c, _)) = best {
            out.push((i, c));
        }
    }
    out
}

/// Absolute trajectory error: rigidly align the associated positions, then
/// take the RMSE of the residuals.
pub fn ate_rmse(
    estimated: &[(f64, SE3Pose<f64>)],
    ground_truth: &[(f64, SE3Pose<f64>)],
    max_dt: f64,
) -> Result<f64, CloudError> {
    let pairs = associate(estimated, ground_truth, max_dt);
    if pairs.is_empty() {
        return Err(CloudError::NoOverlap);
    }
    let est: Vec<Vector3<f64>> = pairs.iter().map(|(i, _)| estimated[*i].1.translation).collect();
    let gt: Vec<Vector3<f64>> = pairs.iter().map(|(_, j)| ground_truth[*j].1.translation).collect();
    let (align, _) = kabsch(&est, &gt);
    let sum: f64 = est
        .iter()
        .zip(&gt)
        .map(|(e, g)| (align.transform_point(e) - g).norm_squared())
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}
