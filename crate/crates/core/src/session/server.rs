use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};

use super::archive::{save_map, session_color, MapArchive, SessionInfo};
use super::codec::{decode_features, decode_keyframe};
use super::localize::{localize_indexed, LocalizeParams, MapIndex};
use super::wire::{
    error_code, kind, pose_to_wire, read_frame, write_message, FrameError, Message, MAP_CHUNK_SIZE, PROTOCOL_VERSION,
};
use crate::frontend::KeyframeNode;
use crate::geom::SE3Pose;
use crate::posegraph::{optimize, EdgeKind, GraphEdge, JacobianMode, LmParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServerParams {
    pub localize: LocalizeParams,
    /// Pending extensions that trigger a re-optimization.
    pub extend_batch: usize,
    /// Age of the oldest pending extension that triggers one.
    pub extend_interval: Duration,
    pub lm: LmParams,
}

impl Default for ServerParams {
    fn default() -> Self {
        Self {
            localize: LocalizeParams::default(),
            extend_batch: 10,
            extend_interval: Duration::from_secs(5),
            lm: LmParams {
                jacobians: JacobianMode::Analytic,
                ..LmParams::default()
            },
        }
    }
}

/// Immutable view of the shared map that readers work against.
#[derive(Debug)]
pub struct MapSnapshot {
    pub map: MapArchive,
    pub index: MapIndex,
    /// Serialized archive for GET_MAP.
    pub archive: Vec<u8>,
}

impl MapSnapshot {
    pub fn new(map: MapArchive) -> Self {
        Self {
            index: MapIndex::new(&map),
            archive: save_map(&map),
            map,
        }
    }
}

#[derive(Default)]
struct Pending {
    keyframes: Vec<(u64, KeyframeNode)>,
    since: Option<Instant>,
    /// Connection id to session id.
    sessions: HashMap<u64, u32>,
    /// Last extension per session: map id and the pose the client sent.
    last: HashMap<u32, (u64, SE3Pose<f64>)>,
}

struct Shared {
    snapshot: RwLock<Option<Arc<MapSnapshot>>>,
    pending: Mutex<Pending>,
    params: ServerParams,
    shutdown: AtomicBool,
    next_conn: AtomicU64,
}

impl Shared {
    fn current(&self) -> Option<Arc<MapSnapshot>> {
        self.snapshot.read().clone()
    }

    /// Applies all pending extensions and publishes a new snapshot.
    fn flush(&self) {
        let mut pending = self.pending.lock();
        if pending.keyframes.is_empty() {
            return;
        }
        let Some(current) = self.current() else {
            return;
        };
        let mut map = current.map.clone();
        let batch = std::mem::take(&mut pending.keyframes);
        pending.since = None;
        let mut edges_added = false;
        for (conn, mut kf) in batch {
            let session = match pending.sessions.get(&conn) {
                Some(s) => *s,
                None => {
                    let used = pending.sessions.values().map(|s| s + 1).max().unwrap_or(0);
                    let s = map.next_session().max(used);
                    pending.sessions.insert(conn, s);
                    s
                }
            };
            map.sessions
                .entry(session)
                .or_insert_with(|| SessionInfo::new(format!("agent-{conn}"), session_color(session)));
            let id = map.next_id();
            kf.id = id;
            kf.session = session;
            kf.rgb = None;
            kf.depth = None;
            let mut edges = Vec::new();
            if let Some((prev_id, prev_pose)) = pending.last.get(&session) {
                if map.graph.nodes.contains_key(prev_id) {
                    let z = prev_pose.inverse() * kf.pose_est;
                    edges.push(GraphEdge::new(*prev_id, id, z, EdgeKind::Odometry));
                }
            }
            if let Some(loc) = localize_indexed(&kf.features, &current.map, &current.index, &self.params.localize) {
                if map.graph.nodes.contains_key(&loc.keyframe_id) {
                    edges.push(GraphEdge::new(loc.keyframe_id, id, loc.relative_pose, EdgeKind::InterSession));
                }
            }
            pending.last.insert(session, (id, kf.pose_est));
            if !edges.is_empty() {
                map.graph.add_node(id, kf.pose_est);
                for e in edges {
                    if map.graph.add_edge(e).is_ok() {
                        edges_added = true;
                    }
                }
            }
            map.keyframes.push(kf);
        }
        if edges_added {
            let before = map.graph.clone();
            if optimize(&mut map.graph, &self.params.lm).is_err() {
                map.graph = before;
            }
        }
        map.refresh_trajectories();
        *self.snapshot.write() = Some(Arc::new(MapSnapshot::new(map)));
    }
}

/// Running map-sharing service.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn snapshot(&self) -> Option<Arc<MapSnapshot>> {
        self.shared.current()
    }

    /// Applies pending extensions now instead of waiting for the batch trigger.
    pub fn flush_extensions(&self) {
        self.shared.flush();
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until another thread requests shutdown; used by long-running servers.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` and serves the map on background threads: one accept loop,
/// one thread per connection and one timer that flushes stale extensions.
pub fn start_server(map: Option<MapArchive>, addr: impl ToSocketAddrs, params: ServerParams) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        snapshot: RwLock::new(map.map(|m| Arc::new(MapSnapshot::new(m)))),
        pending: Mutex::new(Pending::default()),
        params,
        shutdown: AtomicBool::new(false),
        next_conn: AtomicU64::new(1),
    });
    let accept_shared = shared.clone();
    let accept = thread::spawn(move || {
        while !accept_shared.shutdown.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let s = accept_shared.clone();
                    let conn = s.next_conn.fetch_add(1, Ordering::SeqCst);
                    thread::spawn(move || {
                        let _ = serve_connection(&s, stream, conn);
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(_) => thread::sleep(Duration::from_millis(10)),
            }
        }
    });
    let timer_shared = shared.clone();
    let timer = thread::spawn(move || {
        while !timer_shared.shutdown.load(Ordering::SeqCst) {
            let due = {
                let p = timer_shared.pending.lock();
                p.since.is_some_and(|t| t.elapsed() >= timer_shared.params.extend_interval)
            };
            if due {
                timer_shared.flush();
            }
            thread::sleep(Duration::from_millis(50));
        }
    });
    Ok(ServerHandle {
        addr,
        shared,
        threads: vec![accept, timer],
    })
}

fn serve_connection(shared: &Shared, stream: TcpStream, conn: u64) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let (k, payload) = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(FrameError::TooLarge(n)) => {
                // The oversized body is not consumed, so the stream cannot be resynchronized.
                let text = format!("payload of {n} bytes exceeds the limit");
                write_message(&mut writer, &Message::error(error_code::TOO_LARGE, text))?;
                return Ok(());
            }
            Err(FrameError::Closed) => return Ok(()),
            Err(FrameError::Io(e)) => return Err(e),
        };
        let reply = respond(shared, conn, k, &payload);
        for m in reply {
            write_message(&mut writer, &m)?;
        }
    }
}

fn respond(shared: &Shared, conn: u64, k: u8, payload: &[u8]) -> Vec<Message> {
    let malformed = |t: &str| vec![Message::error(error_code::MALFORMED, t)];
    let unavailable = || vec![Message::error(error_code::MAP_UNAVAILABLE, "no map loaded")];
    let Some(msg) = Message::parse(k, payload) else {
        return malformed(&format!("malformed frame of kind {k}"));
    };
    match msg {
        Message::Hello { version } if version == PROTOCOL_VERSION => vec![Message::Hello {
            version: PROTOCOL_VERSION,
        }],
        Message::Hello { version } => vec![Message::error(
            error_code::VERSION_MISMATCH,
            format!("server speaks version {PROTOCOL_VERSION}, client sent {version}"),
        )],
        Message::GetMap => {
            let Some(snap) = shared.current() else {
                return unavailable();
            };
            let chunks: Vec<&[u8]> = snap.archive.chunks(MAP_CHUNK_SIZE).collect();
            let total = chunks.len() as u32;
            chunks
                .into_iter()
                .enumerate()
                .map(|(i, c)| Message::MapChunk {
                    index: i as u32,
                    total,
                    bytes: c.to_vec(),
                })
                .collect()
        }
        Message::Localize { features } => {
            let Some(snap) = shared.current() else {
                return unavailable();
            };
            let Ok(f) = decode_features(&features) else {
                return malformed("LOCALIZE payload is not a feature set");
            };
            vec![localize_reply(&snap, &f, &shared.params.localize)]
        }
        Message::Extend { keyframe } => {
            if shared.current().is_none() {
                return unavailable();
            }
            let Ok(kf) = decode_keyframe(&keyframe) else {
                return malformed("EXTEND payload is not a keyframe");
            };
            let flush_now = {
                let mut p = shared.pending.lock();
                p.keyframes.push((conn, kf));
                p.since.get_or_insert_with(Instant::now);
                p.keyframes.len() >= shared.params.extend_batch
            };
            if flush_now {
                shared.flush();
            }
            vec![Message::Ack]
        }
        _ if k == kind::ERROR => Vec::new(),
        _ => malformed("message kind is not a request"),
    }
}

/// Reply the server sends for a LOCALIZE of `features`.
pub fn localize_reply(snap: &MapSnapshot, features: &crate::frontend::FrameFeatures, params: &LocalizeParams) -> Message {
    match localize_indexed(features, &snap.map, &snap.index, params) {
        Some(loc) => Message::Localized {
            pose: pose_to_wire(&loc.pose),
            confidence: loc.confidence as f32,
        },
        None => Message::NotLocalized,
    }
}
