use super::archive::{session_color, MapArchive, SessionInfo};
use super::localize::{localize_indexed, LocalizeParams, MapIndex};
use super::SessionError;
use crate::frontend::KeyframeNode;
use crate::posegraph::{optimize, EdgeKind, GraphEdge, JacobianMode, LmParams, OptimizationReport};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeParams {
    pub localize: LocalizeParams,
    pub lm: LmParams,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            localize: LocalizeParams::default(),
            lm: LmParams {
                jacobians: JacobianMode::Analytic,
                ..LmParams::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeReport {
    pub session: u32,
    pub added_keyframes: usize,
    /// New keyframes that localized against the base map.
    pub localized: usize,
    pub inter_session_edges: usize,
    pub optimization: Option<OptimizationReport>,
}

/// Appends a session recorded in its own coordinates to a base map.
///
/// Every new keyframe is localized against the base map; the best
/// localization anchors the session, each success becomes an inter-session
/// edge, consecutive new keyframes are tied by odometry edges, and the whole
/// graph is re-optimized. New keyframes get fresh ids and a new session tag.
pub fn merge_sessions(
    base: &MapArchive,
    new_keyframes: &[KeyframeNode],
    label: &str,
    params: &MergeParams,
) -> Result<(MapArchive, MergeReport), SessionError> {
    let session = base.next_session();
    if new_keyframes.is_empty() {
        let report = MergeReport {
            session,
            added_keyframes: 0,
            localized: 0,
            inter_session_edges: 0,
            optimization: None,
        };
        return Ok((base.clone(), report));
    }
    let index = MapIndex::new(base);
    let hits: Vec<_> = new_keyframes
        .iter()
        .enumerate()
        .filter_map(|(i, kf)| localize_indexed(&kf.features, base, &index, &params.localize).map(|l| (i, l)))
        .collect();
    let (anchor_i, anchor_loc) = hits
        .iter()
        .max_by(|a, b| a.1.inliers.cmp(&b.1.inliers).then(b.0.cmp(&a.0)))
        .ok_or(SessionError::NeverLocalized)?;
    let map_from_local = anchor_loc.pose * new_keyframes[*anchor_i].pose_est.inverse();

    let mut merged = base.clone();
    let first_id = base.next_id();
    let new_id = |i: usize| first_id + i as u64;
    for (i, kf) in new_keyframes.iter().enumerate() {
        let mut k = kf.clone();
        k.id = new_id(i);
        k.session = session;
        k.pose_est = map_from_local * kf.pose_est;
        merged.graph.add_node(k.id, k.pose_est);
        merged.keyframes.push(k);
    }
    for i in 1..new_keyframes.len() {
        let z = new_keyframes[i - 1].pose_est.inverse() * new_keyframes[i].pose_est;
        merged.graph.add_edge(GraphEdge::new(new_id(i - 1), new_id(i), z, EdgeKind::Odometry))?;
    }
    // Keep the base gauge explicit before pinning anything else.
    if merged.graph.fixed.is_empty() {
        if let Some(first) = base.graph.nodes.keys().next() {
            merged.graph.fixed.insert(*first);
        }
    }
    for (i, loc) in &hits {
        if !merged.graph.nodes.contains_key(&loc.keyframe_id) {
            // Base keyframe outside the graph: pin it where the map has it.
            let kf = base.keyframe(loc.keyframe_id).expect("localized against the base map");
            merged.graph.add_node(kf.id, kf.pose_est);
            merged.graph.fixed.insert(kf.id);
        }
        merged
            .graph
            .add_edge(GraphEdge::new(loc.keyframe_id, new_id(*i), loc.relative_pose, EdgeKind::InterSession))?;
    }
    let optimization = optimize(&mut merged.graph, &params.lm)?;
    merged
        .sessions
        .insert(session, SessionInfo::new(label, session_color(session)));
    merged.refresh_trajectories();
    let report = MergeReport {
        session,
        added_keyframes: new_keyframes.len(),
        localized: hits.len(),
        inter_session_edges: hits.len(),
        optimization: Some(optimization),
    };
    Ok((merged, report))
}
