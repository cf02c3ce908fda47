use super::archive::MapArchive;
use crate::frontend::{relative_motion, FrameFeatures, TrackerParams};
use crate::geom::SE3Pose;
use crate::loopmem::{similarity, BowHistogram, DocFrequency};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizeParams {
    /// Candidates verified geometrically, best BoW score first.
    pub top_k: usize,
    pub matcher: TrackerParams,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        Self {
            top_k: 5,
            matcher: TrackerParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Localization {
    /// World-from-camera in map coordinates.
    pub pose: SE3Pose<f64>,
    /// Inliers over matches of the accepted candidate.
    pub confidence: f64,
    pub keyframe_id: u64,
    /// Camera-from-query relative to the matched keyframe.
    pub relative_pose: SE3Pose<f64>,
    pub inliers: usize,
    pub matches: usize,
}

/// Document frequencies over every keyframe of a map.
#[derive(Clone, Debug)]
pub struct MapIndex {
    df: DocFrequency,
}

impl MapIndex {
    pub fn new(map: &MapArchive) -> Self {
        let mut df = DocFrequency::default();
        for kf in &map.keyframes {
            df.add(&kf.bow);
        }
        Self { df }
    }

    /// The `k` best-scoring keyframe ids with positive score; ties go to the lower id.
    pub fn rank(&self, map: &MapArchive, bow: &BowHistogram, k: usize) -> Vec<(u64, f64)> {
        let n = self.df.docs();
        let mut scored: Vec<(u64, f64)> = map
            .keyframes
            .iter()
            .map(|kf| (kf.id, similarity(bow, &kf.bow, &self.df, n)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

/// Single-shot localization: BoW ranking over the whole map, then geometric
/// verification of the top candidates. The verified candidate with the most
/// inliers wins; ties go to the better-ranked one.
pub fn localize(query: &FrameFeatures, map: &MapArchive, params: &LocalizeParams) -> Option<Localization> {
    localize_indexed(query, map, &MapIndex::new(map), params)
}

pub fn localize_indexed(
    query: &FrameFeatures,
    map: &MapArchive,
    index: &MapIndex,
    params: &LocalizeParams,
) -> Option<Localization> {
    let bow = BowHistogram::from_descriptors(&query.descriptors);
    let mut best: Option<Localization> = None;
    for (id, _) in index.rank(map, &bow, params.top_k) {
        let kf = map.keyframe(id).expect("ranked ids come from the map");
        let (_, est) = relative_motion(&kf.features, query, &params.matcher);
        if !est.is_ok() {
            continue;
        }
        if best.as_ref().is_some_and(|b| b.inliers >= est.inliers) {
            continue;
        }
        best = Some(Localization {
            pose: map.pose_of(kf) * est.relative_pose,
            confidence: est.inliers as f64 / est.matches.max(1) as f64,
            keyframe_id: id,
            relative_pose: est.relative_pose,
            inliers: est.inliers,
            matches: est.matches,
        });
    }
    best
}
