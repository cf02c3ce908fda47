use std::collections::BTreeMap;

use nalgebra::Matrix6;

use super::codec::{decode_keyframe, encode_keyframe, ByteReader, ByteWriter, CodecError};
use super::SessionError;
use crate::frontend::KeyframeNode;
use crate::geom::SE3Pose;
use crate::posegraph::{EdgeKind, GraphEdge, PoseGraph};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"SMAP";
pub const ARCHIVE_VERSION: u32 = 1;
/// Bits of each descriptor used as its visual word.
pub const WORD_BITS: u32 = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SessionInfo {
    pub label: String,
    pub color: [u8; 3],
    /// Keyframe poses in map coordinates.
    pub trajectory: Vec<(f64, SE3Pose<f64>)>,
}

impl SessionInfo {
    pub fn new(label: impl Into<String>, color: [u8; 3]) -> Self {
        Self {
            label: label.into(),
            color,
            trajectory: Vec::new(),
        }
    }
}

/// Distinct trajectory colors for session ids.
pub fn session_color(session: u32) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 6] = [[230, 25, 75], [60, 180, 75], [0, 130, 200], [245, 130, 48], [145, 30, 180], [70, 240, 240]];
    PALETTE[session as usize % PALETTE.len()]
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapArchive {
    pub version: u32,
    pub word_bits: u32,
    /// All keyframes regardless of memory tier, in id order.
    pub keyframes: Vec<KeyframeNode>,
    pub graph: PoseGraph<f64>,
    pub sessions: BTreeMap<u32, SessionInfo>,
}

impl Default for MapArchive {
    fn default() -> Self {
        Self {
            version: ARCHIVE_VERSION,
            word_bits: WORD_BITS,
            keyframes: Vec::new(),
            graph: PoseGraph::new(),
            sessions: BTreeMap::new(),
        }
    }
}

impl MapArchive {
    pub fn keyframe(&self, id: u64) -> Option<&KeyframeNode> {
        self.keyframes
            .binary_search_by_key(&id, |k| k.id)
            .ok()
            .map(|i| &self.keyframes[i])
    }

    /// Optimized pose when the keyframe is in the graph, else its own estimate.
    pub fn pose_of(&self, kf: &KeyframeNode) -> SE3Pose<f64> {
        self.graph.nodes.get(&kf.id).copied().unwrap_or(kf.pose_est)
    }

    /// Smallest id above every keyframe id.
    pub fn next_id(&self) -> u64 {
        self.keyframes.last().map_or(0, |k| k.id + 1)
    }

    pub fn next_session(&self) -> u32 {
        let from_kf = self.keyframes.iter().map(|k| k.session + 1).max().unwrap_or(0);
        let from_table = self.sessions.keys().next_back().map_or(0, |s| s + 1);
        from_kf.max(from_table)
    }

    pub fn session_keyframes(&self, session: u32) -> impl Iterator<Item = &KeyframeNode> {
        self.keyframes.iter().filter(move |k| k.session == session)
    }

    /// Keyframes sorted by id with unique ids and graph nodes among them.
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.version != ARCHIVE_VERSION {
            return Err(SessionError::VersionMismatch(self.version));
        }
        if self.keyframes.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(SessionError::CorruptArchive("keyframes not in strictly increasing id order".into()));
        }
        if let Some(id) = self.graph.nodes.keys().find(|id| self.keyframe(**id).is_none()) {
            return Err(SessionError::CorruptArchive(format!("graph node {id} has no keyframe")));
        }
        Ok(())
    }

    /// Rewrites the session trajectories from the current graph poses.
    pub fn refresh_trajectories(&mut self) {
        for (sid, info) in self.sessions.iter_mut() {
            info.trajectory = self
                .keyframes
                .iter()
                .filter(|k| k.session == *sid)
                .map(|k| (k.timestamp, self.graph.nodes.get(&k.id).copied().unwrap_or(k.pose_est)))
                .collect();
        }
    }
}

fn write_graph(w: &mut ByteWriter, g: &PoseGraph<f64>) {
    w.u32(g.nodes.len() as u32);
    for (id, p) in &g.nodes {
        w.u64(*id);
        w.pose(p);
    }
    w.u32(g.fixed.len() as u32);
    for id in &g.fixed {
        w.u64(*id);
    }
    w.u32(g.edges.len() as u32);
    for e in &g.edges {
        w.u64(e.from_id);
        w.u64(e.to_id);
        w.u8(e.kind.code());
        w.pose(&e.measurement);
        for v in e.information.iter() {
            w.f64(*v);
        }
    }
}

fn read_graph(r: &mut ByteReader) -> Result<PoseGraph<f64>, CodecError> {
    let mut g = PoseGraph::new();
    let n = r.count(8 + 96)?;
    for _ in 0..n {
        let id = r.u64()?;
        let p = r.pose()?;
        if g.nodes.insert(id, p).is_some() {
            return Err(CodecError::Invalid("duplicate graph node"));
        }
    }
    let n = r.count(8)?;
    for _ in 0..n {
        g.fixed.insert(r.u64()?);
    }
    let n = r.count(16 + 1 + 96 + 288)?;
    for _ in 0..n {
        let from_id = r.u64()?;
        let to_id = r.u64()?;
        let kind = EdgeKind::from_code(r.u8()?).ok_or(CodecError::Invalid("edge kind"))?;
        let measurement = r.pose()?;
        let mut information = Matrix6::zeros();
        for v in information.iter_mut() {
            *v = r.f64()?;
        }
        g.add_edge(GraphEdge {
            from_id,
            to_id,
            measurement,
            information,
            kind,
        })
        .map_err(|_| CodecError::Invalid("graph edge"))?;
    }
    Ok(g)
}

/// `SMAP`, u32 version, body, then the CRC32 of everything before it.
pub fn save_map(map: &MapArchive) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(ARCHIVE_MAGIC);
    w.u32(map.version);
    w.u32(map.word_bits);
    w.u32(map.keyframes.len() as u32);
    for kf in &map.keyframes {
        w.len_prefixed(&encode_keyframe(kf));
    }
    write_graph(&mut w, &map.graph);
    w.u32(map.sessions.len() as u32);
    for (id, s) in &map.sessions {
        w.u32(*id);
        w.str(&s.label);
        w.bytes(&s.color);
        w.u32(s.trajectory.len() as u32);
        for (t, p) in &s.trajectory {
            w.f64(*t);
            w.pose(p);
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn load_map(bytes: &[u8]) -> Result<MapArchive, SessionError> {
    let corrupt = |m: String| SessionError::CorruptArchive(m);
    if bytes.len() < 12 || &bytes[..4] != ARCHIVE_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch".into()));
    }
    let mut r = ByteReader::new(&body[4..]);
    let version = r.u32().map_err(|e| corrupt(e.to_string()))?;
    if version != ARCHIVE_VERSION {
        return Err(SessionError::VersionMismatch(version));
    }
    let parse = |r: &mut ByteReader| -> Result<MapArchive, CodecError> {
        let word_bits = r.u32()?;
        if word_bits != WORD_BITS {
            return Err(CodecError::Invalid("unsupported vocabulary"));
        }
        let n = r.count(4)?;
        let mut keyframes = Vec::with_capacity(n);
        for _ in 0..n {
            keyframes.push(decode_keyframe(r.len_prefixed()?)?);
        }
        let graph = read_graph(r)?;
        let mut sessions = BTreeMap::new();
        let n = r.count(4 + 4 + 3 + 4)?;
        for _ in 0..n {
            let id = r.u32()?;
            let label = r.str()?;
            let color = [r.u8()?, r.u8()?, r.u8()?];
            let m = r.count(8 + 96)?;
            let mut trajectory = Vec::with_capacity(m);
            for _ in 0..m {
                let t = r.f64()?;
                trajectory.push((t, r.pose()?));
            }
            sessions.insert(id, SessionInfo { label, color, trajectory });
        }
        r.finish()?;
        Ok(MapArchive {
            version,
            word_bits,
            keyframes,
            graph,
            sessions,
        })
    };
    let map = parse(&mut r).map_err(|e| corrupt(e.to_string()))?;
    map.validate()?;
    Ok(map)
}

pub fn save_map_file(path: &std::path::Path, map: &MapArchive) -> Result<(), SessionError> {
    std::fs::write(path, save_map(map))?;
    Ok(())
}

pub fn load_map_file(path: &std::path::Path) -> Result<MapArchive, SessionError> {
    load_map(&std::fs::read(path)?)
}
