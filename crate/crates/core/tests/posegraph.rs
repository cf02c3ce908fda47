use nalgebra::{Matrix6, Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use siteslam::geom::{SE3Pose, Twist};
use siteslam::posegraph::{
    analytic_jacobians, chi2, edge_residual, jacobian_check, jacobian_check_with, optimize, EdgeJacobians, EdgeKind,
    GraphEdge, GraphError, JacobianMode, LmParams, PoseGraph,
};

fn random_pose(rng: &mut ChaCha8Rng, t_scale: f64, r_scale: f64) -> SE3Pose<f64> {
    let mut v = Vector6::zeros();
    for i in 0..6 {
        let s = if i < 3 { t_scale } else { r_scale };
        v[i] = rng.random_range(-s..s);
    }
    SE3Pose::exp(&Twist::from_vector(&v))
}

/// Perturbation of at most 0.2 m translation and 10 degrees rotation.
fn bounded_perturbation(rng: &mut ChaCha8Rng) -> SE3Pose<f64> {
    let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let t = t.normalize() * rng.random_range(0.05..0.2);
    let a = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let a = a.normalize() * rng.random_range(2.0f64..10.0).to_radians();
    SE3Pose::from_axis_angle(a, t)
}

fn graph_from_truth(truth: &[SE3Pose<f64>], pairs: &[(u64, u64)]) -> PoseGraph<f64> {
    let mut g = PoseGraph::new();
    for (i, p) in truth.iter().enumerate() {
        g.add_node(i as u64, *p);
    }
    for &(a, b) in pairs {
        let z = truth[a as usize].inverse() * truth[b as usize];
        let kind = if b == a + 1 { EdgeKind::Odometry } else { EdgeKind::Loop };
        g.add_edge(GraphEdge::new(a, b, z, kind)).unwrap();
    }
    g
}

fn perturb_all_but_first(g: &mut PoseGraph<f64>, rng: &mut ChaCha8Rng) {
    for (id, p) in g.nodes.iter_mut() {
        if *id != 0 {
            *p = *p * bounded_perturbation(rng);
        }
    }
}

fn max_pose_error(g: &PoseGraph<f64>, truth: &[SE3Pose<f64>]) -> f64 {
    g.nodes
        .iter()
        .map(|(id, p)| p.max_abs_diff(&truth[*id as usize]))
        .fold(0.0, f64::max)
}

fn assert_monotone(history: &[f64]) {
    for w in history.windows(2) {
        assert!(w[1] <= w[0], "chi2 increased: {:?}", history);
    }
}

fn square_truth() -> Vec<SE3Pose<f64>> {
    let half = std::f64::consts::FRAC_PI_2;
    vec![
        SE3Pose::rot_z(0.0, Vector3::new(0.0, 0.0, 4.0)),
        SE3Pose::rot_z(half, Vector3::new(2.0, 0.0, 4.0)),
        SE3Pose::rot_z(2.0 * half, Vector3::new(2.0, 2.0, 4.0)),
        SE3Pose::rot_z(3.0 * half, Vector3::new(0.0, 2.0, 4.0)),
    ]
}

fn chain_truth(n: usize, rng: &mut ChaCha8Rng) -> Vec<SE3Pose<f64>> {
    let mut poses = vec![SE3Pose::identity()];
    for _ in 1..n {
        let step = SE3Pose::rot_z(rng.random_range(-0.15..0.15), Vector3::new(0.3, rng.random_range(-0.05..0.05), 0.0));
        poses.push(*poses.last().unwrap() * step);
    }
    poses
}

#[test]
fn square_loop_recovers_ground_truth() {
    let truth = square_truth();
    for mode in [JacobianMode::FiniteDifference, JacobianMode::Analytic] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = graph_from_truth(&truth, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        perturb_all_but_first(&mut g, &mut rng);
        let params = LmParams { jacobians: mode, ..LmParams::default() };
        let rep = optimize(&mut g, &params).unwrap();
        assert!(rep.chi2_final <= rep.chi2_initial);
        assert_monotone(&rep.chi2_history);
        let err = max_pose_error(&g, &truth);
        assert!(err < 1e-6, "{mode:?}: {err}");
    }
}

#[test]
fn noiseless_chain_with_loop_recovers_ground_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = chain_truth(50, &mut rng);
    let mut pairs: Vec<(u64, u64)> = (0..49).map(|i| (i, i + 1)).collect();
    pairs.push((49, 0));
    let mut g = graph_from_truth(&truth, &pairs);
    perturb_all_but_first(&mut g, &mut rng);
    let rep = optimize(&mut g, &LmParams::default()).unwrap();
    assert_monotone(&rep.chi2_history);
    let err = max_pose_error(&g, &truth);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn noisy_chain_loop_edge_reduces_endpoint_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = chain_truth(50, &mut rng);
    let mut g = PoseGraph::new();
    g.add_node(0, truth[0]);
    let mut dead_reckoned = truth[0];
    for i in 0..49u64 {
        let exact = truth[i as usize].inverse() * truth[i as usize + 1];
        let noise = Vector3::new(
            0.01 * rng.sample::<f64, _>(StandardNormal),
            0.01 * rng.sample::<f64, _>(StandardNormal),
            0.01 * rng.sample::<f64, _>(StandardNormal),
        );
        let z = exact * SE3Pose::from_translation(noise);
        dead_reckoned = dead_reckoned * z;
        g.add_node(i + 1, dead_reckoned);
        g.add_edge(GraphEdge::new(i, i + 1, z, EdgeKind::Odometry)).unwrap();
    }
    g.add_edge(GraphEdge::new(49, 0, truth[49].inverse() * truth[0], EdgeKind::Loop)).unwrap();
    let before = (g.nodes[&49].translation - truth[49].translation).norm();
    let rep = optimize(&mut g, &LmParams::default()).unwrap();
    let after = (g.nodes[&49].translation - truth[49].translation).norm();
    assert!(rep.chi2_final < rep.chi2_initial);
    assert_monotone(&rep.chi2_history);
    assert!(after < before, "{after} vs {before}");
}

#[test]
fn analytic_jacobians_match_finite_differences_on_random_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let a = random_pose(&mut rng, 3.0, 1.5);
        let b = random_pose(&mut rng, 3.0, 1.5);
        let noise = random_pose(&mut rng, 0.3, 0.3);
        let e = GraphEdge::new(0, 1, a.inverse() * b * noise, EdgeKind::Loop);
        let dev = jacobian_check(&e, &a, &b).unwrap();
        assert!(dev < 1e-5, "{dev}");
    }
}

#[test]
fn corrupted_jacobian_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_pose(&mut rng, 1.0, 0.5);
    let b = random_pose(&mut rng, 1.0, 0.5);
    let e = GraphEdge::new(0, 1, a.inverse() * b, EdgeKind::Odometry);
    let corrupted = |e: &GraphEdge<f64>, f: &SE3Pose<f64>, t: &SE3Pose<f64>| -> Result<EdgeJacobians<f64>, _> {
        let (jf, mut jt) = analytic_jacobians(e, f, t)?;
        jt[(0, 4)] += 0.5;
        Ok((jf, jt))
    };
    let dev = jacobian_check_with(&e, &a, &b, corrupted).unwrap();
    assert!(dev > 1e-2, "{dev}");
}

#[test]
fn first_order_residual_matches_applied_perturbation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let a = random_pose(&mut rng, 2.0, 1.0);
        let b = random_pose(&mut rng, 2.0, 1.0);
        let e = GraphEdge::new(0, 1, a.inverse() * b, EdgeKind::Odometry);
        let mut xi = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        xi *= 1e-3 / xi.norm();
        let moved = b * SE3Pose::exp(&Twist::from_vector(&xi));
        let r = siteslam::posegraph::residual(&e, &a, &moved).unwrap().to_vector();
        assert!((r - xi).norm() < 0.01 * xi.norm());
    }
}

fn naive_chi2(g: &PoseGraph<f64>) -> f64 {
    let mut total = 0.0;
    for e in &g.edges {
        let from = g.nodes[&e.from_id];
        let to = g.nodes[&e.to_id];
        let err = e.measurement.inverse() * from.inverse() * to;
        let r = err.log().unwrap().to_vector();
        for i in 0..6 {
            for j in 0..6 {
                total += r[i] * e.information[(i, j)] * r[j];
            }
        }
    }
    total
}

fn random_graph(rng: &mut ChaCha8Rng, n: u64) -> PoseGraph<f64> {
    let mut g = PoseGraph::new();
    for i in 0..n {
        g.add_node(i, random_pose(rng, 5.0, 1.0));
    }
    for i in 1..n {
        let j = rng.random_range(0..i);
        let mut e = GraphEdge::new(j, i, random_pose(rng, 2.0, 0.8), EdgeKind::Odometry);
        let m = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        e.information = m * m.transpose() + Matrix6::identity();
        g.add_edge(e).unwrap();
    }
    g
}

#[test]
fn chi2_matches_naive_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let g = random_graph(&mut rng, 12);
        let fast = chi2(&g).unwrap();
        let slow = naive_chi2(&g);
        assert!((fast - slow).abs() <= 1e-9 * slow.max(1.0));
    }
}

#[test]
fn zero_residual_means_zero_contribution() {
    let truth = square_truth();
    let g = graph_from_truth(&truth, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
    for e in &g.edges {
        assert!(edge_residual(e, &g).unwrap().to_vector().norm() < 1e-12);
    }
    assert!(chi2(&g).unwrap() < 1e-20);
}

#[test]
fn missing_fixed_node_is_disconnected() {
    let mut g = PoseGraph::<f64>::new();
    g.add_node(0, SE3Pose::identity());
    g.add_node(1, SE3Pose::identity());
    g.fixed.insert(7);
    g.add_edge(GraphEdge::new(0, 1, SE3Pose::identity(), EdgeKind::Odometry)).unwrap();
    assert_eq!(optimize(&mut g, &LmParams::default()), Err(GraphError::DisconnectedGraph));
}

#[test]
fn single_precision_graph_optimizes() {
    let truth = square_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = graph_from_truth(&truth, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
    perturb_all_but_first(&mut g, &mut rng);
    let mut g32 = PoseGraph::<f32>::new();
    for (id, p) in &g.nodes {
        g32.add_node(*id, p.cast());
    }
    for e in &g.edges {
        g32.add_edge(GraphEdge::new(e.from_id, e.to_id, e.measurement.cast(), e.kind)).unwrap();
    }
    let params = LmParams { jacobians: JacobianMode::Analytic, ..LmParams::default() };
    let rep = optimize(&mut g32, &params).unwrap();
    assert!(rep.chi2_final < rep.chi2_initial);
    let err = g32
        .nodes
        .iter()
        .map(|(id, p)| p.cast::<f64>().max_abs_diff(&truth[*id as usize]))
        .fold(0.0, f64::max);
    assert!(err < 1e-3, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chi2_is_gauge_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 8);
        let t = random_pose(&mut rng, 10.0, 3.0);
        let mut moved = g.clone();
        moved.map_poses(|p| t * *p);
        let a = chi2(&g).unwrap();
        let b = chi2(&moved).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn accepted_steps_never_increase_chi2(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = random_graph(&mut rng, 6);
        g.add_edge(GraphEdge::new(5, 0, random_pose(&mut rng, 1.0, 0.3), EdgeKind::Loop)).unwrap();
        let params = LmParams { jacobians: JacobianMode::Analytic, max_iters: 20, ..LmParams::default() };
        let rep = optimize(&mut g, &params).unwrap();
        for w in rep.chi2_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(rep.chi2_final <= rep.chi2_initial);
    }

    #[test]
    fn noiseless_graphs_recover_from_bounded_perturbations(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = chain_truth(8, &mut rng);
        let mut g = graph_from_truth(&truth, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 0), (2, 6)]);
        perturb_all_but_first(&mut g, &mut rng);
        let params = LmParams { jacobians: JacobianMode::Analytic, ..LmParams::default() };
        optimize(&mut g, &params).unwrap();
        prop_assert!(max_pose_error(&g, &truth) < 1e-6);
    }
}
