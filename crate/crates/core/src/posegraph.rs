//! Pose-graph optimization on SE(3) with Levenberg-Marquardt.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use thiserror::Error;

use crate::geom::{se3_right_jacobian_inverse, GeomError, SE3Pose, Twist};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Odometry,
    Loop,
    InterSession,
}

impl EdgeKind {
    pub fn code(self) -> u8 {
        match self {
            EdgeKind::Odometry => 0,
            EdgeKind::Loop => 1,
            EdgeKind::InterSession => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(EdgeKind::Odometry),
            1 => Some(EdgeKind::Loop),
            2 => Some(EdgeKind::InterSession),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge<T: Real> {
    pub from_id: u64,
    pub to_id: u64,
    /// from-frame-from-to-frame.
    pub measurement: SE3Pose<T>,
    /// Ordered like the twist: translation first, then rotation.
    pub information: Matrix6<T>,
    pub kind: EdgeKind,
}

/// diag(100, 100, 100, 400, 400, 400): 0.1 m and 0.05 rad standard deviations.
pub fn default_information<T: Real>() -> Matrix6<T> {
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        m[(i, i)] = T::lit(100.0);
        m[(i + 3, i + 3)] = T::lit(400.0);
    }
    m
}

impl<T: Real> GraphEdge<T> {
    pub fn new(from_id: u64, to_id: u64, measurement: SE3Pose<T>, kind: EdgeKind) -> Self {
        Self {
            from_id,
            to_id,
            measurement,
            information: default_information(),
            kind,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node {0} does not exist")]
    UnknownNode(u64),
    #[error("edge connects node {0} to itself")]
    SelfEdge(u64),
    #[error("information matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("graph has no edges")]
    NoEdges,
    #[error("some nodes are not connected to a fixed node")]
    DisconnectedGraph,
    #[error("normal equations are not positive definite even with maximal damping")]
    SolverFailure,
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraph<T: Real> {
    pub nodes: BTreeMap<u64, SE3Pose<T>>,
    pub edges: Vec<GraphEdge<T>>,
    /// Gauge-fixed nodes. When empty, the smallest id is fixed.
    pub fixed: BTreeSet<u64>,
}

fn is_spd<T: Real>(m: &Matrix6<T>) -> bool {
    let sym = (m - m.transpose()).abs().max() <= T::lit(1e-9) * (T::one() + m.abs().max());
    sym && m.cholesky().is_some()
}

impl<T: Real> PoseGraph<T> {
    pub fn new() -> Self {
        Self {
            nodes: BTreeMap::new(),
            edges: Vec::new(),
            fixed: BTreeSet::new(),
        }
    }

    pub fn add_node(&mut self, id: u64, pose: SE3Pose<T>) {
        self.nodes.insert(id, pose);
    }

    pub fn add_edge(&mut self, edge: GraphEdge<T>) -> Result<(), GraphError> {
        if edge.from_id == edge.to_id {
            return Err(GraphError::SelfEdge(edge.from_id));
        }
        for id in [edge.from_id, edge.to_id] {
            if !self.nodes.contains_key(&id) {
                return Err(GraphError::UnknownNode(id));
            }
        }
        if !is_spd(&edge.information) {
            return Err(GraphError::NotPositiveDefinite);
        }
        self.edges.push(edge);
        Ok(())
    }

    /// Fixed set used by the optimizer.
    pub fn gauge(&self) -> BTreeSet<u64> {
        if self.fixed.is_empty() {
            self.nodes.keys().next().copied().into_iter().collect()
        } else {
            self.fixed.clone()
        }
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Applies `f` to every node pose and every measurement.
    pub fn map_poses(&mut self, mut f: impl FnMut(&SE3Pose<T>) -> SE3Pose<T>) {
        for p in self.nodes.values_mut() {
            *p = f(p);
        }
    }

    fn pose(&self, id: u64) -> Result<&SE3Pose<T>, GraphError> {
        self.nodes.get(&id).ok_or(GraphError::UnknownNode(id))
    }

    /// Debug dump: `NODE id tx ty tz qx qy qz qw` and
    /// `EDGE from to tx ty tz qx qy qz qw` followed by the 21 upper-triangle
    /// information entries.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let pose_fields = |p: &SE3Pose<T>| {
            let q = p.quaternion();
            let t = p.translation;
            [t.x, t.y, t.z, q[0], q[1], q[2], q[3]]
                .iter()
                .map(|v| format!("{:.17e}", v.to_f64_lossy()))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for (id, p) in &self.nodes {
            let _ = writeln!(s, "NODE {} {}", id, pose_fields(p));
        }
        for e in &self.edges {
            let _ = write!(s, "EDGE {} {} {}", e.from_id, e.to_id, pose_fields(&e.measurement));
            for r in 0..6 {
                for c in r..6 {
                    let _ = write!(s, " {:.17e}", e.information[(r, c)].to_f64_lossy());
                }
            }
            s.push('\n');
        }
        s
    }
}

/// `log(Z^-1 T_from^-1 T_to)`.
pub fn residual<T: Real>(edge: &GraphEdge<T>, from: &SE3Pose<T>, to: &SE3Pose<T>) -> Result<Twist<T>, GeomError> {
    (edge.measurement.inverse() * from.inverse() * *to).log()
}

pub fn edge_residual<T: Real>(edge: &GraphEdge<T>, graph: &PoseGraph<T>) -> Result<Twist<T>, GraphError> {
    Ok(residual(edge, graph.pose(edge.from_id)?, graph.pose(edge.to_id)?)?)
}

/// `r^T Omega r` summed over the edges.
pub fn chi2<T: Real>(graph: &PoseGraph<T>) -> Result<T, GraphError> {
    let mut total = T::zero();
    for e in &graph.edges {
        let r = edge_residual(e, graph)?.to_vector();
        total += (r.transpose() * e.information * r)[(0, 0)];
    }
    Ok(total)
}

/// Jacobians of the residual with respect to right perturbations
/// `T <- T exp(delta)` of the two endpoints.
pub type EdgeJacobians<T> = (Matrix6<T>, Matrix6<T>);

pub fn analytic_jacobians<T: Real>(edge: &GraphEdge<T>, from: &SE3Pose<T>, to: &SE3Pose<T>) -> Result<EdgeJacobians<T>, GeomError> {
    let r = residual(edge, from, to)?;
    let jr_inv = se3_right_jacobian_inverse(&r);
    let j_to = jr_inv;
    let j_from = -(jr_inv * (to.inverse() * *from).adjoint());
    Ok((j_from, j_to))
}

pub fn numeric_jacobians<T: Real>(
    edge: &GraphEdge<T>,
    from: &SE3Pose<T>,
    to: &SE3Pose<T>,
    step: T,
) -> Result<EdgeJacobians<T>, GeomError> {
    let mut j_from = Matrix6::zeros();
    let mut j_to = Matrix6::zeros();
    let two_h = step + step;
    for k in 0..6 {
        let mut d = Vector6::zeros();
        d[k] = step;
        let plus = SE3Pose::exp(&Twist::from_vector(&d));
        let minus = SE3Pose::exp(&Twist::from_vector(&-d));
        let rp = residual(edge, &(*from * plus), to)?.to_vector();
        let rm = residual(edge, &(*from * minus), to)?.to_vector();
        j_from.set_column(k, &((rp - rm) / two_h));
        let rp = residual(edge, from, &(*to * plus))?.to_vector();
        let rm = residual(edge, from, &(*to * minus))?.to_vector();
        j_to.set_column(k, &((rp - rm) / two_h));
    }
    Ok((j_from, j_to))
}

/// Largest deviation between analytic and central-difference Jacobians,
/// relative to the magnitude of the finite-difference Jacobian (at least 1).
pub fn jacobian_check<T: Real>(edge: &GraphEdge<T>, from: &SE3Pose<T>, to: &SE3Pose<T>) -> Result<T, GeomError> {
    jacobian_check_with(edge, from, to, analytic_jacobians)
}

/// Like [`jacobian_check`] with a caller-supplied analytic Jacobian.
pub fn jacobian_check_with<T: Real, F>(edge: &GraphEdge<T>, from: &SE3Pose<T>, to: &SE3Pose<T>, analytic: F) -> Result<T, GeomError>
where
    F: Fn(&GraphEdge<T>, &SE3Pose<T>, &SE3Pose<T>) -> Result<EdgeJacobians<T>, GeomError>,
{
    let (af, at) = analytic(edge, from, to)?;
    let (nf, nt) = numeric_jacobians(edge, from, to, T::lit(1e-6))?;
    let scale = nf.abs().max().max(nt.abs().max()).max(T::one());
    let dev = (af - nf).abs().max().max((at - nt).abs().max());
    Ok(dev / scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmParams {
    pub max_iters: usize,
    pub lambda0: f64,
    pub tol_dchi2: f64,
    pub lambda_max: f64,
    pub jacobians: JacobianMode,
    pub fd_step: f64,
    /// Huber kernel on loop and inter-session edges.
    pub robust_loops: bool,
    pub huber_delta: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            lambda0: 1e-4,
            tol_dchi2: 1e-9,
            lambda_max: 1e6,
            jacobians: JacobianMode::FiniteDifference,
            fd_step: 1e-6,
            robust_loops: false,
            huber_delta: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationReport {
    /// Accepted steps.
    pub iterations: usize,
    pub chi2_initial: f64,
    pub chi2_final: f64,
    pub converged: bool,
    pub lambda_final: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub chi2_history: Vec<f64>,
}

fn robust_weight<T: Real>(kind: EdgeKind, s: T, params: &LmParams) -> (T, T) {
    if params.robust_loops && kind != EdgeKind::Odometry {
        let d = T::lit(params.huber_delta);
        if s > d * d {
            let root = s.sqrt();
            return ((d + d) * root - d * d, d / root);
        }
    }
    (s, T::one())
}

fn cost<T: Real>(graph: &PoseGraph<T>, params: &LmParams) -> Result<T, GraphError> {
    let mut total = T::zero();
    for e in &graph.edges {
        let r = edge_residual(e, graph)?.to_vector();
        let s = (r.transpose() * e.information * r)[(0, 0)];
        total += robust_weight(e.kind, s, params).0;
    }
    Ok(total)
}

fn check_connected<T: Real>(graph: &PoseGraph<T>, fixed: &BTreeSet<u64>) -> Result<(), GraphError> {
    let mut adj: HashMap<u64, Vec<u64>> = HashMap::new();
    for e in &graph.edges {
        adj.entry(e.from_id).or_default().push(e.to_id);
        adj.entry(e.to_id).or_default().push(e.from_id);
    }
    let mut seen: BTreeSet<u64> = fixed.iter().copied().filter(|id| graph.nodes.contains_key(id)).collect();
    if seen.is_empty() {
        return Err(GraphError::DisconnectedGraph);
    }
    let mut queue: VecDeque<u64> = seen.iter().copied().collect();
    while let Some(id) = queue.pop_front() {
        for &n in adj.get(&id).map(|v| v.as_slice()).unwrap_or(&[]) {
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    if seen.len() != graph.nodes.len() {
        return Err(GraphError::DisconnectedGraph);
    }
    Ok(())
}

/// Levenberg-Marquardt over all non-fixed nodes, updating `T <- T exp(delta)`.
/// The cost never increases across accepted steps.
pub fn optimize<T: Real>(graph: &mut PoseGraph<T>, params: &LmParams) -> Result<OptimizationReport, GraphError> {
    if graph.edges.is_empty() {
        return Err(GraphError::NoEdges);
    }
    for e in &graph.edges {
        graph.pose(e.from_id)?;
        graph.pose(e.to_id)?;
    }
    let fixed = graph.gauge();
    check_connected(graph, &fixed)?;

    let free: Vec<u64> = graph.nodes.keys().copied().filter(|id| !fixed.contains(id)).collect();
    let slot: HashMap<u64, usize> = free.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let dim = 6 * free.len();

    let mut current = cost(graph, params)?;
    let chi2_initial = current.to_f64_lossy();
    let mut history = vec![chi2_initial];
    let mut lambda = params.lambda0;
    let mut iterations = 0;
    let mut converged = current == T::zero() || dim == 0;
    let mut attempts = 0;

    while !converged && iterations < params.max_iters && attempts < params.max_iters * 20 {
        attempts += 1;
        let mut h = DMatrix::<T>::zeros(dim, dim);
        let mut b = DVector::<T>::zeros(dim);
        for e in &graph.edges {
            let from = graph.nodes[&e.from_id];
            let to = graph.nodes[&e.to_id];
            let r = residual(e, &from, &to)?.to_vector();
            let (jf, jt) = match params.jacobians {
                JacobianMode::Analytic => analytic_jacobians(e, &from, &to)?,
                JacobianMode::FiniteDifference => numeric_jacobians(e, &from, &to, T::lit(params.fd_step))?,
            };
            let s = (r.transpose() * e.information * r)[(0, 0)];
            let w = robust_weight(e.kind, s, params).1;
            let omega = e.information * w;
            let blocks = [(slot.get(&e.from_id), jf), (slot.get(&e.to_id), jt)];
            for (ia, ja) in &blocks {
                let Some(&ia) = ia else { continue };
                let jt_omega = ja.transpose() * omega;
                let g = jt_omega * r;
                for k in 0..6 {
                    b[6 * ia + k] += g[k];
                }
                for (ib, jb) in &blocks {
                    let Some(&ib) = ib else { continue };
                    let blk = jt_omega * jb;
                    for rr in 0..6 {
                        for cc in 0..6 {
                            h[(6 * ia + rr, 6 * ib + cc)] += blk[(rr, cc)];
                        }
                    }
                }
            }
        }

        // Increase damping until the step is accepted or damping is exhausted.
        loop {
            let mut damped = h.clone();
            let l = T::lit(lambda);
            for i in 0..dim {
                damped[(i, i)] += l;
            }
            let Some(chol) = damped.cholesky() else {
                if lambda >= params.lambda_max {
                    return Err(GraphError::SolverFailure);
                }
                lambda = (lambda * 10.0).min(params.lambda_max);
                continue;
            };
            let delta = chol.solve(&(-&b));
            let backup = graph.nodes.clone();
            for (id, i) in &slot {
                let d = Vector6::from_iterator(delta.rows(6 * i, 6).iter().copied());
                let p = graph.nodes.get_mut(id).expect("free node");
                *p = *p * SE3Pose::exp(&Twist::from_vector(&d));
            }
            let trial = cost(graph, params).ok().filter(|c| c.is_finite());
            match trial {
                Some(c) if c <= current => {
                    let dchi2 = current - c;
                    current = c;
                    iterations += 1;
                    history.push(c.to_f64_lossy());
                    lambda = (lambda / 10.0).max(1e-12);
                    if dchi2.to_f64_lossy() < params.tol_dchi2 || c == T::zero() {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    graph.nodes = backup;
                    if lambda >= params.lambda_max {
                        // No descent direction left at maximal damping: a minimum.
                        converged = true;
                        break;
                    }
                    lambda = (lambda * 10.0).min(params.lambda_max);
                }
            }
        }
    }
    Ok(OptimizationReport {
        iterations,
        chi2_initial,
        chi2_final: current.to_f64_lossy(),
        converged,
        lambda_final: lambda,
        chi2_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn pose(x: f64, y: f64, yaw: f64) -> SE3Pose<f64> {
        SE3Pose::rot_z(yaw, Vector3::new(x, y, 0.0))
    }

    #[test]
    fn consistent_edge_has_zero_residual() {
        let a = pose(1.0, 2.0, 0.3);
        let b = pose(-1.0, 0.5, -0.2);
        let e = GraphEdge::new(0, 1, a.inverse() * b, EdgeKind::Odometry);
        assert!(residual(&e, &a, &b).unwrap().to_vector().norm() < 1e-12);
    }

    #[test]
    fn pure_translation_error() {
        let e = GraphEdge::new(0, 1, SE3Pose::identity(), EdgeKind::Odometry);
        let r = residual(&e, &SE3Pose::identity(), &SE3Pose::from_translation(Vector3::new(0.1, 0.0, 0.0))).unwrap();
        assert!((r.to_vector() - Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn chi2_of_single_edge_with_identity_information() {
        let mut g = PoseGraph::new();
        g.add_node(0, SE3Pose::identity());
        g.add_node(1, SE3Pose::from_translation(Vector3::new(0.1, 0.0, 0.0)));
        let mut e = GraphEdge::new(0, 1, SE3Pose::identity(), EdgeKind::Odometry);
        e.information = Matrix6::identity();
        g.add_edge(e).unwrap();
        let c: f64 = chi2(&g).unwrap();
        assert!((c - 0.01).abs() < 1e-15);
    }

    #[test]
    fn edge_validation() {
        let mut g = PoseGraph::<f64>::new();
        g.add_node(0, SE3Pose::identity());
        g.add_node(1, SE3Pose::identity());
        assert_eq!(g.add_edge(GraphEdge::new(0, 0, SE3Pose::identity(), EdgeKind::Loop)), Err(GraphError::SelfEdge(0)));
        assert_eq!(g.add_edge(GraphEdge::new(0, 5, SE3Pose::identity(), EdgeKind::Loop)), Err(GraphError::UnknownNode(5)));
        let mut e = GraphEdge::new(0, 1, SE3Pose::identity(), EdgeKind::Loop);
        e.information[(0, 0)] = -1.0;
        assert_eq!(g.add_edge(e), Err(GraphError::NotPositiveDefinite));
    }

    #[test]
    fn disconnected_and_empty_graphs_are_rejected() {
        let mut g = PoseGraph::<f64>::new();
        g.add_node(0, SE3Pose::identity());
        g.add_node(1, SE3Pose::identity());
        assert_eq!(optimize(&mut g, &LmParams::default()), Err(GraphError::NoEdges));
        g.add_node(2, SE3Pose::identity());
        g.add_edge(GraphEdge::new(0, 1, SE3Pose::identity(), EdgeKind::Odometry)).unwrap();
        assert_eq!(optimize(&mut g, &LmParams::default()), Err(GraphError::DisconnectedGraph));
    }

    #[test]
    fn exact_initialization_takes_no_steps() {
        let mut g = PoseGraph::new();
        g.add_node(0, pose(0.0, 0.0, 0.0));
        g.add_node(1, pose(1.0, 0.0, 0.5));
        g.add_edge(GraphEdge::new(0, 1, pose(1.0, 0.0, 0.5), EdgeKind::Odometry)).unwrap();
        let rep = optimize(&mut g, &LmParams::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.chi2_final, 0.0);
        assert!(rep.converged);
    }

    #[test]
    fn identity_configuration_jacobians_agree() {
        let e: GraphEdge<f64> = GraphEdge::new(0, 1, SE3Pose::identity(), EdgeKind::Odometry);
        let dev = jacobian_check(&e, &SE3Pose::identity(), &SE3Pose::identity()).unwrap();
        assert!(dev < 1e-7, "{dev}");
    }

    #[test]
    fn dump_lists_nodes_and_edges() {
        let mut g = PoseGraph::new();
        g.add_node(3, pose(1.0, 2.0, 0.0));
        g.add_node(4, pose(1.0, 3.0, 0.0));
        g.add_edge(GraphEdge::new(3, 4, pose(0.0, 1.0, 0.0), EdgeKind::Odometry)).unwrap();
        let d = g.dump();
        let lines: Vec<&str> = d.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("NODE 3 "));
        assert_eq!(lines[2].split_whitespace().count(), 3 + 7 + 21);
    }

    #[test]
    fn huber_weight_only_on_loops() {
        let p = LmParams {
            robust_loops: true,
            ..LmParams::default()
        };
        assert_eq!(robust_weight(EdgeKind::Odometry, 9.0, &p), (9.0, 1.0));
        let (rho, w): (f64, f64) = robust_weight(EdgeKind::Loop, 9.0, &p);
        assert!((rho - 5.0).abs() < 1e-12 && (w - 1.0 / 3.0).abs() < 1e-12);
    }
}
