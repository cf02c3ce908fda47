//! Bag-of-words loop detection with a discrete Bayes filter and the
//! short-term / working / long-term memory tiers that bound resident state.

pub mod bayes;
pub mod bow;
pub mod ltm;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io;

use thiserror::Error;

pub use bayes::{initial_belief, likelihoods_from_scores, update_bayes, LoopHypothesis, Transition, NEW_PLACE};
pub use bow::{quantize, similarity, BowHistogram, DocFrequency};
pub use ltm::LtmStore;

use crate::frontend::{relative_motion, KeyframeNode, TrackerParams};
use crate::geom::SE3Pose;
use crate::session::codec::{decode_keyframe, encode_keyframe, CodecError};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("keyframe {0} is not in long-term memory")]
    UnknownId(u64),
    #[error("keyframe {0} is not in working memory")]
    NotInWorkingMemory(u64),
    #[error("keyframe {0} is already in memory")]
    DuplicateId(u64),
    #[error("corrupt long-term record: {0}")]
    Codec(#[from] CodecError),
}

/// Verified constraint between a new keyframe and an older one.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopClosure {
    pub from_id: u64,
    pub to_id: u64,
    /// from-camera-from-to-camera.
    pub relative_pose: SE3Pose<f64>,
    pub inliers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tier {
    Stm,
    Wm,
    Ltm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryParams {
    pub stm_capacity: usize,
    pub wm_capacity: usize,
    /// Posterior a candidate needs before it is verified.
    pub loop_threshold: f64,
    /// Graph distance of the neighbours brought back from LTM after a closure.
    pub retrieve_radius: usize,
    pub transition: Transition,
    pub matcher: TrackerParams,
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            stm_capacity: 10,
            wm_capacity: 100,
            loop_threshold: 0.15,
            retrieve_radius: 2,
            transition: Transition::default(),
            matcher: TrackerParams::default(),
        }
    }
}

/// Geometric check of a loop candidate: descriptor matching plus RANSAC.
pub fn verify_candidate(a: &KeyframeNode, b: &KeyframeNode, params: &TrackerParams) -> Option<LoopClosure> {
    let (_, est) = relative_motion(&a.features, &b.features, params);
    est.is_ok().then(|| LoopClosure {
        from_id: a.id,
        to_id: b.id,
        relative_pose: est.relative_pose,
        inliers: est.inliers,
    })
}

#[derive(Debug)]
pub struct MemoryState {
    pub params: MemoryParams,
    stm: VecDeque<u64>,
    wm: BTreeSet<u64>,
    resident: HashMap<u64, KeyframeNode>,
    ltm: LtmStore,
    ltm_ids: BTreeSet<u64>,
    df: DocFrequency,
    recency: HashMap<u64, u64>,
    clock: u64,
    adjacency: HashMap<u64, BTreeSet<u64>>,
    belief: Vec<LoopHypothesis>,
    last_id: Option<u64>,
    peak_resident: usize,
}

impl MemoryState {
    /// Memory with its long-term tier in an anonymous temporary file.
    pub fn new(params: MemoryParams) -> Result<Self, LoopError> {
        Ok(Self::with_store(params, LtmStore::temporary()?))
    }

    pub fn with_store(params: MemoryParams, ltm: LtmStore) -> Self {
        Self {
            params,
            stm: VecDeque::new(),
            wm: BTreeSet::new(),
            resident: HashMap::new(),
            ltm,
            ltm_ids: BTreeSet::new(),
            df: DocFrequency::default(),
            recency: HashMap::new(),
            clock: 0,
            adjacency: HashMap::new(),
            belief: initial_belief(),
            last_id: None,
            peak_resident: 0,
        }
    }

    pub fn stm(&self) -> impl Iterator<Item = u64> + '_ {
        self.stm.iter().copied()
    }

    pub fn wm(&self) -> impl Iterator<Item = u64> + '_ {
        self.wm.iter().copied()
    }

    pub fn ltm_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.ltm_ids.iter().copied()
    }

    pub fn tier(&self, id: u64) -> Option<Tier> {
        if self.wm.contains(&id) {
            Some(Tier::Wm)
        } else if self.ltm_ids.contains(&id) {
            Some(Tier::Ltm)
        } else if self.resident.contains_key(&id) {
            Some(Tier::Stm)
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.resident.len() + self.ltm_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resident_count(&self) -> usize {
        self.resident.len()
    }

    pub fn peak_resident(&self) -> usize {
        self.peak_resident
    }

    pub fn belief(&self) -> &[LoopHypothesis] {
        &self.belief
    }

    pub fn resident(&self, id: u64) -> Option<&KeyframeNode> {
        self.resident.get(&id)
    }

    /// All keyframe ids in every tier, ascending.
    pub fn ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.resident.keys().chain(self.ltm_ids.iter()).copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Copy of a keyframe from whichever tier holds it; tiers are not changed.
    pub fn get(&mut self, id: u64) -> Result<KeyframeNode, LoopError> {
        if let Some(kf) = self.resident.get(&id) {
            return Ok(kf.clone());
        }
        let bytes = self.ltm.get(id)?.ok_or(LoopError::UnknownId(id))?;
        Ok(decode_keyframe(&bytes)?)
    }

    /// Updates the pose of a resident keyframe. Long-term records keep the
    /// pose they were stored with; the pose graph is authoritative.
    pub fn set_pose(&mut self, id: u64, pose: SE3Pose<f64>) {
        if let Some(kf) = self.resident.get_mut(&id) {
            kf.pose_est = pose;
        }
    }

    /// Records that two keyframes are neighbours in the map graph.
    pub fn link(&mut self, a: u64, b: u64) {
        if a != b {
            self.adjacency.entry(a).or_default().insert(b);
            self.adjacency.entry(b).or_default().insert(a);
        }
    }

    fn touch(&mut self, id: u64) {
        self.recency.insert(id, self.clock);
    }

    fn note_peak(&mut self) {
        self.peak_resident = self.peak_resident.max(self.resident.len());
    }

    /// Scores, filters, verifies and files one new keyframe.
    pub fn process_keyframe(&mut self, mut kf: KeyframeNode) -> Result<Vec<LoopClosure>, LoopError> {
        if self.tier(kf.id).is_some() {
            return Err(LoopError::DuplicateId(kf.id));
        }
        self.clock += 1;
        let n_docs = self.df.docs();
        let scores: Vec<(u64, f64)> = self
            .wm
            .iter()
            .map(|id| (*id, similarity(&kf.bow, &self.resident[id].bow, &self.df, n_docs)))
            .collect();
        let likelihoods = likelihoods_from_scores(&scores);
        self.belief = update_bayes(&self.belief, &likelihoods, &self.params.transition);

        let mut closures = Vec::new();
        let top = self
            .belief
            .iter()
            .filter(|h| h.candidate_id != NEW_PLACE)
            .fold(None::<LoopHypothesis>, |best, h| match best {
                Some(b) if b.posterior >= h.posterior => Some(b),
                _ => Some(*h),
            });
        if let Some(top) = top {
            if top.posterior > self.params.loop_threshold && top.candidate_id != kf.id {
                let cand = &self.resident[&top.candidate_id];
                if let Some(closure) = verify_candidate(&kf, cand, &self.params.matcher) {
                    let to = closure.to_id;
                    kf.weight += 1;
                    if let Some(c) = self.resident.get_mut(&to) {
                        c.weight += 1;
                    }
                    self.touch(to);
                    self.link(kf.id, to);
                    closures.push(closure);
                    self.retrieve_neighbours(to)?;
                }
            }
        }

        let id = kf.id;
        if let Some(prev) = self.last_id {
            self.link(prev, id);
        }
        self.last_id = Some(id);
        self.df.add(&kf.bow);
        self.resident.insert(id, kf);
        self.touch(id);
        self.stm.push_back(id);
        while self.stm.len() > self.params.stm_capacity {
            let old = self.stm.pop_front().expect("non-empty");
            self.wm.insert(old);
        }
        while self.wm.len() > self.params.wm_capacity {
            self.evict(&BTreeSet::new())?;
        }
        self.note_peak();
        Ok(closures)
    }

    fn retrieve_neighbours(&mut self, center: u64) -> Result<(), LoopError> {
        let mut seen = BTreeSet::from([center]);
        let mut frontier = vec![center];
        for _ in 0..self.params.retrieve_radius {
            let mut next = Vec::new();
            for id in frontier {
                if let Some(nb) = self.adjacency.get(&id) {
                    for &n in nb {
                        if seen.insert(n) {
                            next.push(n);
                        }
                    }
                }
            }
            frontier = next;
        }
        for id in seen.iter().copied().collect::<Vec<_>>() {
            if self.ltm_ids.contains(&id) {
                if self.wm.len() >= self.params.wm_capacity && !self.evict(&seen)? {
                    break;
                }
                self.retrieve_from_ltm(id)?;
            }
        }
        Ok(())
    }

    /// Moves the working-memory keyframe with the lowest (weight, recency)
    /// outside `protect` to LTM. Returns false when nothing could be moved.
    fn evict(&mut self, protect: &BTreeSet<u64>) -> Result<bool, LoopError> {
        let victim = self
            .wm
            .iter()
            .filter(|id| !protect.contains(id))
            .min_by_key(|id| (self.resident[id].weight, self.recency.get(id).copied().unwrap_or(0), **id))
            .copied();
        match victim {
            Some(id) => {
                self.transfer_to_ltm(id)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn transfer_to_ltm(&mut self, id: u64) -> Result<(), LoopError> {
        if !self.wm.contains(&id) {
            return Err(LoopError::NotInWorkingMemory(id));
        }
        let kf = &self.resident[&id];
        self.ltm.put(id, &encode_keyframe(kf))?;
        let kf = self.resident.remove(&id).expect("resident");
        self.df.remove(&kf.bow);
        self.wm.remove(&id);
        self.ltm_ids.insert(id);
        Ok(())
    }

    /// Loads a keyframe back into working memory. Capacity is restored on the
    /// next [`MemoryState::process_keyframe`].
    pub fn retrieve_from_ltm(&mut self, id: u64) -> Result<(), LoopError> {
        if !self.ltm_ids.contains(&id) {
            return Err(LoopError::UnknownId(id));
        }
        let bytes = self.ltm.get(id)?.ok_or(LoopError::UnknownId(id))?;
        let kf = decode_keyframe(&bytes)?;
        self.ltm_ids.remove(&id);
        self.df.add(&kf.bow);
        self.resident.insert(id, kf);
        self.wm.insert(id);
        self.touch(id);
        self.note_peak();
        Ok(())
    }

    /// Encoded payload as stored in (or as it would be stored in) LTM.
    pub fn payload(&mut self, id: u64) -> Result<Vec<u8>, LoopError> {
        if let Some(kf) = self.resident.get(&id) {
            return Ok(encode_keyframe(kf));
        }
        self.ltm.get(id)?.ok_or(LoopError::UnknownId(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{BinaryDescriptor, FrameFeatures, Keypoint};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Keyframe with random descriptors and a random 3-d point per feature.
    /// Words come from a small vocabulary so unrelated keyframes still share some.
    fn synthetic(id: u64, rng: &mut ChaCha8Rng) -> KeyframeNode {
        let n = 40;
        let features = FrameFeatures {
            keypoints: (0..n)
                .map(|i| Keypoint {
                    u: i as f64,
                    v: 0.0,
                    response: 1.0,
                })
                .collect(),
            descriptors: (0..n)
                .map(|_| {
                    let mut w: [u64; 4] = rng.random();
                    w[0] = (w[0] & !0xFFFF) | rng.random_range(0..500u64);
                    BinaryDescriptor(w)
                })
                .collect(),
            points_cam: (0..n)
                .map(|_| Some(Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 4.0 + rng.random_range(-0.5..0.5))))
                .collect(),
        };
        KeyframeNode {
            id,
            session: 0,
            pose_est: SE3Pose::identity(),
            bow: BowHistogram::from_descriptors(&features.descriptors),
            features,
            weight: 0,
            timestamp: id as f64,
            rgb: None,
            depth: None,
        }
    }

    fn check_partition(m: &MemoryState) {
        let stm: BTreeSet<u64> = m.stm().collect();
        let wm: BTreeSet<u64> = m.wm().collect();
        let ltm: BTreeSet<u64> = m.ltm_ids().collect();
        assert!(stm.is_disjoint(&wm) && stm.is_disjoint(&ltm) && wm.is_disjoint(&ltm));
        assert_eq!(stm.len() + wm.len() + ltm.len(), m.len());
        assert!(stm.len() <= m.params.stm_capacity);
        assert!(wm.len() <= m.params.wm_capacity);
    }

    #[test]
    fn first_keyframe_goes_to_stm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MemoryState::new(MemoryParams::default()).unwrap();
        assert!(m.process_keyframe(synthetic(0, &mut rng)).unwrap().is_empty());
        assert_eq!(m.stm().collect::<Vec<_>>(), vec![0]);
        assert_eq!(m.belief(), initial_belief().as_slice());
    }

    #[test]
    fn capacities_hold_for_a_long_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = MemoryState::new(MemoryParams::default()).unwrap();
        for id in 0..150 {
            m.process_keyframe(synthetic(id, &mut rng)).unwrap();
            check_partition(&m);
            let total: f64 = m.belief().iter().map(|h| h.posterior).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        assert_eq!(m.ltm_ids().count(), 40);
        assert!(m.peak_resident() <= 110);
    }

    #[test]
    fn revisit_closes_to_the_old_keyframe_not_stm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = MemoryState::new(MemoryParams::default()).unwrap();
        let first = synthetic(0, &mut rng);
        m.process_keyframe(first.clone()).unwrap();
        for id in 1..30 {
            m.process_keyframe(synthetic(id, &mut rng)).unwrap();
        }
        let mut again = first.clone();
        again.id = 30;
        let mut closures = Vec::new();
        for _ in 0..3 {
            closures = m.process_keyframe(again.clone()).unwrap();
            if !closures.is_empty() {
                break;
            }
            again.id += 1;
        }
        assert_eq!(closures.len(), 1);
        let c = &closures[0];
        assert_eq!(c.to_id, 0);
        assert!(c.relative_pose.max_abs_diff(&SE3Pose::identity()) < 1e-9);
        assert_eq!(m.resident(0).unwrap().weight, 1);
    }

    #[test]
    fn ltm_roundtrip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = MemoryState::new(MemoryParams {
            stm_capacity: 1,
            ..MemoryParams::default()
        })
        .unwrap();
        m.process_keyframe(synthetic(0, &mut rng)).unwrap();
        m.process_keyframe(synthetic(1, &mut rng)).unwrap();
        assert_eq!(m.tier(0), Some(Tier::Wm));
        let before = m.payload(0).unwrap();
        m.transfer_to_ltm(0).unwrap();
        assert_eq!(m.tier(0), Some(Tier::Ltm));
        assert_eq!(m.payload(0).unwrap(), before);
        m.retrieve_from_ltm(0).unwrap();
        assert_eq!(m.tier(0), Some(Tier::Wm));
        assert_eq!(m.payload(0).unwrap(), before);
        assert!(matches!(m.retrieve_from_ltm(7), Err(LoopError::UnknownId(7))));
        assert!(matches!(m.transfer_to_ltm(1), Err(LoopError::NotInWorkingMemory(1))));
    }

    #[test]
    fn verify_self_is_identity_with_all_inliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kf = synthetic(0, &mut rng);
        let c = verify_candidate(&kf, &kf, &TrackerParams::default()).unwrap();
        assert_eq!(c.inliers, 40);
        assert!(c.relative_pose.max_abs_diff(&SE3Pose::identity()) < 1e-12);
    }
}
