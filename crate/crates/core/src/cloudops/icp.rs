use nalgebra::{Vector3, Vector6};

use super::{CloudError, KdTree, PointCloud};
use crate::geom::{kabsch, SE3Pose, Twist};

/// Step doublings tried per iteration.
const MAX_EXTENSIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Stop once the rmse improves by less than this, meters.
    pub tol: f64,
    /// Pairs farther apart than this are ignored, meters.
    pub max_corr: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            max_corr: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps `src` into the frame of `dst`.
    pub pose: SE3Pose<f64>,
    pub rmse: f64,
    pub iterations: usize,
    /// Correspondence rmse per iteration; non-increasing.
    pub rmse_history: Vec<f64>,
}

fn correspondences(
    src: &[Vector3<f64>],
    tree: &KdTree,
    pose: &SE3Pose<f64>,
    max_corr: f64,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, f64) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut sum = 0.0;
    for p in src {
        let q = pose.transform_point(p);
        let (i, d) = tree.nearest(&q).expect("non-empty tree");
        if d <= max_corr {
            a.push(*p);
            b.push(tree.points()[i]);
            sum += d * d;
        }
    }
    let rmse = if a.is_empty() { f64::INFINITY } else { (sum / a.len() as f64).sqrt() };
    (a, b, rmse)
}

/// Point-to-point ICP. Each iteration pairs every transformed source point
/// with its nearest destination point, drops pairs beyond `max_corr` and
/// re-solves the rigid transform. A step that would raise the rmse is undone.
pub fn icp_align(
    src: &PointCloud,
    dst: &PointCloud,
    params: &IcpParams,
    initial: Option<SE3Pose<f64>>,
) -> Result<IcpResult, CloudError> {
    if dst.is_empty() {
        return Err(CloudError::EmptyReference);
    }
    if src.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let tree = KdTree::new(dst.positions());
    let src_pts = src.positions();
    let mut pose = initial.unwrap_or_else(SE3Pose::identity);
    let (mut a, mut b, mut rmse) = correspondences(&src_pts, &tree, &pose, params.max_corr);
    if a.len() < 3 {
        return Err(CloudError::NoCorrespondences);
    }
    let mut history = vec![rmse];
    let mut iterations = 0;
    let mut prev_step: Option<Vector6<f64>> = None;
    while iterations < params.max_iters && rmse > 0.0 {
        let (mut candidate, _) = kabsch(&a, &b);
        let (mut na, mut nb, mut nr) = correspondences(&src_pts, &tree, &candidate, params.max_corr);
        if na.len() < 3 || !(nr <= rmse) {
            break;
        }
        // Point-to-point ICP creeps along flat regions. When consecutive steps
        // agree in direction, try extending the step, keeping it only while
        // the error keeps dropping.
        let step = (candidate * pose.inverse()).log_robust().to_vector();
        if let Some(prev) = prev_step {
            let cos = step.dot(&prev) / (step.norm() * prev.norm()).max(f64::MIN_POSITIVE);
            if cos > 0.98 {
                let mut factor = 1.0;
                for _ in 0..MAX_EXTENSIONS {
                    factor *= 2.0;
                    let trial = SE3Pose::exp(&Twist::from_vector(&(step * (factor - 1.0)))) * candidate;
                    let (ta, tb, tr) = correspondences(&src_pts, &tree, &trial, params.max_corr);
                    if ta.len() < 3 || !(tr < nr) {
                        break;
                    }
                    (candidate, na, nb, nr) = (trial, ta, tb, tr);
                }
            }
        }
        iterations += 1;
        let gain = rmse - nr;
        prev_step = Some((candidate * pose.inverse()).log_robust().to_vector());
        pose = candidate;
        a = na;
        b = nb;
        rmse = nr;
        history.push(rmse);
        if gain < params.tol {
            break;
        }
    }
    Ok(IcpResult {
        pose,
        rmse,
        iterations,
        rmse_history: history,
    })
}
