//! The SLAM conductor: odometry, loop detection, pose-graph optimization and
//! map assembly, one frame at a time.

pub mod config;
pub mod eval;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

pub use config::{ConfigError, RunMode, SlamConfig};
pub use eval::{measure_markers, MarkerView};

use crate::cloudops::{assemble_cloud, write_ply_file, CloudError, PointCloud};
use crate::frontend::{extract_features, KeyframeNode, TrackerState};
use crate::geom::{CameraIntrinsics, SE3Pose};
use crate::loopmem::{LoopError, MemoryState};
use crate::posegraph::{optimize, EdgeKind, GraphEdge, GraphError, PoseGraph};
use crate::session::{localize_indexed, save_map_file, session_color, MapArchive, MapIndex, SessionError, SessionInfo};
use crate::simworld::{DatasetReader, FrameRecord, SimError};
use crate::trajectory::{write_tum, Trajectory};

#[derive(Debug, Error)]
pub enum SlamError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Memory(#[from] LoopError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("localization mode needs a base map")]
    MissingBaseMap,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub enum SlamEvent {
    KeyframeCreated(u64),
    LoopClosed { from_id: u64, to_id: u64, inliers: usize },
    Optimized { iterations: usize, chi2_initial: f64, chi2_final: f64 },
    /// Tracking failed for more than the configured number of frames; the
    /// pose stays frozen until tracking recovers.
    OdometryLost { streak: usize },
    /// Localization mode: a keyframe was placed in the base map.
    Localized { keyframe_id: u64, map_keyframe_id: u64 },
}

/// Accumulated wall time of one stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTime {
    pub total_ms: f64,
    pub calls: usize,
}

impl StageTime {
    fn add(&mut self, since: Instant) {
        self.total_ms += since.elapsed().as_secs_f64() * 1e3;
        self.calls += 1;
    }

    pub fn mean_ms(&self) -> f64 {
        if self.calls == 0 {
            0.0
        } else {
            self.total_ms / self.calls as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlamStats {
    pub frames: usize,
    pub keyframes: usize,
    pub closures: usize,
    pub optimizations: usize,
    pub lost_frames: usize,
    pub localized: usize,
    pub extract: StageTime,
    pub track: StageTime,
    pub loop_detect: StageTime,
    pub optimize: StageTime,
    pub frame: StageTime,
    pub peak_resident_keyframes: usize,
}

impl SlamStats {
    pub fn fps(&self) -> f64 {
        if self.frame.total_ms > 0.0 {
            self.frames as f64 * 1e3 / self.frame.total_ms
        } else {
            0.0
        }
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("frames", self.frames.to_string());
        kv("keyframes", self.keyframes.to_string());
        kv("closures", self.closures.to_string());
        kv("optimizations", self.optimizations.to_string());
        kv("lost_frames", self.lost_frames.to_string());
        kv("localized", self.localized.to_string());
        kv("mean_ms_extract", format!("{:.3}", self.extract.mean_ms()));
        kv("mean_ms_track", format!("{:.3}", self.track.mean_ms()));
        kv("mean_ms_loop", format!("{:.3}", self.loop_detect.mean_ms()));
        kv("mean_ms_optimize", format!("{:.3}", self.optimize.mean_ms()));
        kv("mean_ms_frame", format!("{:.3}", self.frame.mean_ms()));
        kv("fps", format!("{:.2}", self.fps()));
        kv("peak_resident_keyframes", self.peak_resident_keyframes.to_string());
        s
    }
}

struct BaseMap {
    map: MapArchive,
    index: MapIndex,
    /// map-from-local, once the first keyframe localized.
    anchor: Option<SE3Pose<f64>>,
}

/// Single-owner state of one mapping or localization run.
pub struct SlamState {
    pub config: SlamConfig,
    pub intrinsics: CameraIntrinsics,
    tracker: TrackerState,
    memory: MemoryState,
    graph: PoseGraph<f64>,
    keyframe_times: BTreeMap<u64, f64>,
    /// Keyframe poses from odometry alone.
    odometry_poses: BTreeMap<u64, SE3Pose<f64>>,
    base: Option<BaseMap>,
    lost_reported: bool,
    stats: SlamStats,
}

impl SlamState {
    /// Mapping run starting at the identity pose.
    pub fn new(config: SlamConfig, intrinsics: CameraIntrinsics) -> Result<Self, SlamError> {
        config.validate()?;
        intrinsics.validate().map_err(|e| SimError::InvalidScene(e.to_string()))?;
        let tracker_params = config.tracker;
        Ok(Self {
            tracker: TrackerState::new(tracker_params, 0, 0, SE3Pose::identity()),
            memory: MemoryState::new(config.memory_params())?,
            graph: PoseGraph::new(),
            keyframe_times: BTreeMap::new(),
            odometry_poses: BTreeMap::new(),
            base: None,
            lost_reported: false,
            stats: SlamStats::default(),
            config,
            intrinsics,
        })
    }

    /// Localization run against a fixed map; the map is never modified.
    pub fn with_base_map(config: SlamConfig, intrinsics: CameraIntrinsics, map: MapArchive) -> Result<Self, SlamError> {
        let mut s = Self::new(config, intrinsics)?;
        let session = map.next_session();
        let first_id = map.next_id();
        s.tracker = TrackerState::new(config.tracker, session, first_id, SE3Pose::identity());
        s.base = Some(BaseMap {
            index: MapIndex::new(&map),
            map,
            anchor: None,
        });
        Ok(s)
    }

    pub fn stats(&self) -> &SlamStats {
        &self.stats
    }

    pub fn graph(&self) -> &PoseGraph<f64> {
        &self.graph
    }

    pub fn pose(&self) -> SE3Pose<f64> {
        self.tracker.pose()
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }

    /// Processes one frame.
    pub fn step(&mut self, frame: &FrameRecord) -> Result<Vec<SlamEvent>, SlamError> {
        let start = Instant::now();
        let mut events = Vec::new();
        self.stats.frames += 1;

        let t = Instant::now();
        let gray = frame.rgb.to_gray();
        let features = extract_features(&gray, &frame.depth, &self.intrinsics, &self.config.tracker.detector);
        self.stats.extract.add(t);

        let t = Instant::now();
        let reference = self.tracker.reference_id();
        let (est, kf) = self.tracker.track_features(features, frame);
        self.stats.track.add(t);

        if !est.is_ok() {
            self.stats.lost_frames += 1;
        }
        let streak = self.tracker.lost_streak();
        if streak == 0 {
            self.lost_reported = false;
        } else if streak > self.config.lost_limit && !self.lost_reported {
            self.lost_reported = true;
            events.push(SlamEvent::OdometryLost { streak });
        }

        if let Some(kf) = kf {
            let odo = match reference.and_then(|r| self.odometry_poses.get(&r)) {
                Some(p) => *p * est.relative_pose,
                None => kf.pose_est,
            };
            self.odometry_poses.insert(kf.id, odo);
            self.keyframe_times.insert(kf.id, kf.timestamp);
            self.graph.add_node(kf.id, kf.pose_est);
            if let Some(r) = reference {
                self.graph
                    .add_edge(GraphEdge::new(r, kf.id, est.relative_pose, EdgeKind::Odometry))?;
            }
            self.stats.keyframes += 1;
            events.push(SlamEvent::KeyframeCreated(kf.id));
            if self.base.is_some() {
                self.localize_keyframe(&kf, &mut events);
            } else {
                self.map_keyframe(kf, &mut events)?;
            }
        }
        self.stats.peak_resident_keyframes = self.memory.peak_resident();
        self.stats.frame.add(start);
        Ok(events)
    }

    fn map_keyframe(&mut self, kf: KeyframeNode, events: &mut Vec<SlamEvent>) -> Result<(), SlamError> {
        let id = kf.id;
        let t = Instant::now();
        let closures = self.memory.process_keyframe(kf)?;
        self.stats.loop_detect.add(t);
        if closures.is_empty() {
            return Ok(());
        }
        for c in &closures {
            self.graph
                .add_edge(GraphEdge::new(c.from_id, c.to_id, c.relative_pose, EdgeKind::Loop))?;
            self.stats.closures += 1;
            events.push(SlamEvent::LoopClosed {
                from_id: c.from_id,
                to_id: c.to_id,
                inliers: c.inliers,
            });
        }
        events.push(self.optimize_graph()?);
        if let Some(p) = self.graph.nodes.get(&id) {
            self.tracker.set_reference_pose(*p);
        }
        Ok(())
    }

    fn optimize_graph(&mut self) -> Result<SlamEvent, SlamError> {
        let t = Instant::now();
        let report = optimize(&mut self.graph, &self.config.lm)?;
        self.stats.optimize.add(t);
        self.stats.optimizations += 1;
        for (id, p) in &self.graph.nodes {
            self.memory.set_pose(*id, *p);
        }
        Ok(SlamEvent::Optimized {
            iterations: report.iterations,
            chi2_initial: report.chi2_initial,
            chi2_final: report.chi2_final,
        })
    }

    fn localize_keyframe(&mut self, kf: &KeyframeNode, events: &mut Vec<SlamEvent>) {
        let base = self.base.as_mut().expect("localization mode");
        let t = Instant::now();
        let loc = localize_indexed(&kf.features, &base.map, &base.index, &self.config.localize_params());
        self.stats.loop_detect.add(t);
        let Some(loc) = loc else {
            return;
        };
        self.stats.localized += 1;
        let local = self.graph.nodes[&kf.id];
        if base.anchor.is_none() {
            let anchor = loc.pose * local.inverse();
            for p in self.graph.nodes.values_mut() {
                *p = anchor * *p;
            }
            base.anchor = Some(anchor);
        }
        self.graph.nodes.insert(kf.id, loc.pose);
        self.tracker.set_reference_pose(loc.pose);
        events.push(SlamEvent::Localized {
            keyframe_id: kf.id,
            map_keyframe_id: loc.keyframe_id,
        });
    }

    /// Final global optimization (mapping mode, when there is anything to solve).
    pub fn finish(&mut self) -> Result<Option<SlamEvent>, SlamError> {
        if self.base.is_some() || self.graph.edges.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.optimize_graph()?))
    }

    /// Keyframe timestamps with their current graph poses, in id order.
    pub fn trajectory(&self) -> Trajectory {
        self.keyframe_times
            .iter()
            .map(|(id, t)| (*t, self.graph.nodes[id]))
            .collect()
    }

    /// Keyframe trajectory integrated from odometry alone, without loop closures.
    pub fn odometry_trajectory(&self) -> Trajectory {
        self.keyframe_times
            .iter()
            .map(|(id, t)| (*t, self.odometry_poses[id]))
            .collect()
    }

    /// Every keyframe, from whichever memory tier holds it, with graph poses.
    pub fn keyframes(&mut self) -> Result<Vec<KeyframeNode>, SlamError> {
        let ids: Vec<u64> = self.keyframe_times.keys().copied().collect();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let mut kf = match self.memory.get(id) {
                Ok(kf) => kf,
                Err(LoopError::UnknownId(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            kf.pose_est = self.graph.nodes[&id];
            out.push(kf);
        }
        Ok(out)
    }

    /// The map of this run. Images are dropped unless configured otherwise.
    pub fn archive(&mut self, label: &str) -> Result<MapArchive, SlamError> {
        let mut keyframes = self.keyframes()?;
        if !self.config.archive_rasters {
            for kf in &mut keyframes {
                kf.rgb = None;
                kf.depth = None;
            }
        }
        let mut map = MapArchive {
            keyframes,
            graph: self.graph.clone(),
            ..MapArchive::default()
        };
        map.sessions.insert(0, SessionInfo::new(label, session_color(0)));
        map.refresh_trajectories();
        Ok(map)
    }

    pub fn cloud(&mut self) -> Result<PointCloud, SlamError> {
        let keyframes = self.keyframes()?;
        let poses: HashMap<u64, SE3Pose<f64>> = self.graph.nodes.iter().map(|(k, v)| (*k, *v)).collect();
        Ok(assemble_cloud(
            &keyframes,
            &poses,
            &self.intrinsics,
            self.config.cloud_stride,
            self.config.voxel_size,
        )?)
    }
}

/// Everything a run produces.
pub struct RunOutput {
    /// `None` in localization mode.
    pub archive: Option<MapArchive>,
    pub cloud: PointCloud,
    pub trajectory: Trajectory,
    pub odometry_trajectory: Trajectory,
    pub ground_truth: Option<Trajectory>,
    pub stats: SlamStats,
    pub events: Vec<SlamEvent>,
}

/// Runs over an in-memory or streamed sequence of frames.
pub fn run_frames<I>(
    frames: I,
    intrinsics: &CameraIntrinsics,
    config: &SlamConfig,
    base_map: Option<MapArchive>,
) -> Result<RunOutput, SlamError>
where
    I: IntoIterator<Item = Result<FrameRecord, SimError>>,
{
    let mut state = match (config.mode, base_map) {
        (RunMode::Mapping, _) => SlamState::new(*config, *intrinsics)?,
        (RunMode::LocalizationOnly, Some(map)) => SlamState::with_base_map(*config, *intrinsics, map)?,
        (RunMode::LocalizationOnly, None) => return Err(SlamError::MissingBaseMap),
    };
    let mut events = Vec::new();
    let mut ground_truth = Vec::new();
    for frame in frames {
        let frame = frame?;
        if let Some(p) = frame.gt_pose {
            ground_truth.push((frame.timestamp, p));
        }
        events.extend(state.step(&frame)?);
    }
    if state.stats.frames == 0 {
        return Err(SimError::MalformedDataset("dataset has no frames".into()).into());
    }
    events.extend(state.finish()?);
    let archive = match config.mode {
        RunMode::Mapping => Some(state.archive("map")?),
        RunMode::LocalizationOnly => None,
    };
    let cloud = state.cloud()?;
    Ok(RunOutput {
        archive,
        cloud,
        trajectory: state.trajectory(),
        odometry_trajectory: state.odometry_trajectory(),
        ground_truth: (!ground_truth.is_empty()).then_some(ground_truth),
        stats: state.stats.clone(),
        events,
    })
}

/// Runs over a dataset directory and writes `trajectory.txt`, `map.sitemap`
/// (mapping mode), `cloud.ply` and `stats.txt` into `out_dir`.
pub fn run(
    dataset_dir: &Path,
    out_dir: &Path,
    config: &SlamConfig,
    base_map: Option<MapArchive>,
) -> Result<RunOutput, SlamError> {
    let reader = DatasetReader::open(dataset_dir)?;
    if reader.is_empty() {
        return Err(SimError::MalformedDataset("dataset has no frames".into()).into());
    }
    let frames = (0..reader.len()).map(|i| reader.frame(i));
    let out = run_frames(frames, &reader.intrinsics, config, base_map)?;
    write_outputs(out_dir, &out)?;
    Ok(out)
}

pub fn write_outputs(out_dir: &Path, out: &RunOutput) -> Result<(), SlamError> {
    fs::create_dir_all(out_dir)?;
    let mut w = BufWriter::new(File::create(out_dir.join("trajectory.txt"))?);
    write_tum(&mut w, &out.trajectory)?;
    w.flush()?;
    if let Some(map) = &out.archive {
        save_map_file(&out_dir.join("map.sitemap"), map)?;
    }
    write_ply_file(&out_dir.join("cloud.ply"), &out.cloud)?;
    fs::write(out_dir.join("stats.txt"), out.stats.to_key_values())?;
    Ok(())
}
