use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};

use super::archive::{load_map, MapArchive};
use super::codec::{encode_features, encode_keyframe};
use super::wire::{pose_from_wire, read_frame, write_message, FrameError, Message, PROTOCOL_VERSION};
use super::SessionError;
use crate::frontend::{FrameFeatures, KeyframeNode, TrackerParams, TrackerState};
use crate::geom::{CameraIntrinsics, SE3Pose};
use crate::simworld::{FrameRecord, SimError};

/// Blocking request/response connection to a map server.
pub struct MapClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl MapClient {
    /// Connects and performs the HELLO handshake.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, SessionError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut c = Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        };
        match c.request(&Message::Hello {
            version: PROTOCOL_VERSION,
        })? {
            Message::Hello { version } if version == PROTOCOL_VERSION => Ok(c),
            other => Err(unexpected(other)),
        }
    }

    pub fn send(&mut self, m: &Message) -> Result<(), SessionError> {
        write_message(&mut self.writer, m)?;
        Ok(())
    }

    /// Writes bytes as-is, for exercising the server with broken frames.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), SessionError> {
        self.writer.write_all(bytes)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn receive(&mut self) -> Result<Message, SessionError> {
        let (k, p) = match read_frame(&mut self.reader) {
            Ok(f) => f,
            Err(FrameError::Closed) => return Err(SessionError::Protocol("connection closed".into())),
            Err(FrameError::TooLarge(n)) => return Err(SessionError::Protocol(format!("reply of {n} bytes"))),
            Err(FrameError::Io(e)) => return Err(e.into()),
        };
        Message::parse(k, &p).ok_or_else(|| SessionError::Protocol(format!("malformed reply of kind {k}")))
    }

    pub fn request(&mut self, m: &Message) -> Result<Message, SessionError> {
        self.send(m)?;
        self.receive()
    }

    pub fn get_map(&mut self) -> Result<MapArchive, SessionError> {
        self.send(&Message::GetMap)?;
        let mut bytes = Vec::new();
        let mut expected = 0;
        loop {
            match self.receive()? {
                Message::MapChunk { index, total, bytes: b } if index == expected => {
                    bytes.extend_from_slice(&b);
                    expected += 1;
                    if expected == total {
                        break;
                    }
                }
                other => return Err(unexpected(other)),
            }
        }
        load_map(&bytes)
    }

    /// Raw reply: pose as `tx ty tz qx qy qz qw` and confidence.
    pub fn localize_raw(&mut self, features: &FrameFeatures) -> Result<Option<([f64; 7], f32)>, SessionError> {
        match self.request(&Message::Localize {
            features: encode_features(features),
        })? {
            Message::Localized { pose, confidence } => Ok(Some((pose, confidence))),
            Message::NotLocalized => Ok(None),
            other => Err(unexpected(other)),
        }
    }

    pub fn localize(&mut self, features: &FrameFeatures) -> Result<Option<(SE3Pose<f64>, f32)>, SessionError> {
        Ok(self.localize_raw(features)?.map(|(p, c)| (pose_from_wire(&p), c)))
    }

    pub fn extend(&mut self, kf: &KeyframeNode) -> Result<(), SessionError> {
        match self.request(&Message::Extend {
            keyframe: encode_keyframe(kf),
        })? {
            Message::Ack => Ok(()),
            other => Err(unexpected(other)),
        }
    }
}

fn unexpected(m: Message) -> SessionError {
    match m {
        Message::Error { code, text } => SessionError::Remote { code, text },
        other => SessionError::Protocol(format!("unexpected reply of kind {}", other.kind())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackSession {
    pub session_id: u32,
    pub label: String,
    /// Per frame; in map coordinates once localized, else in the agent's own frame.
    pub trajectory: Vec<(f64, SE3Pose<f64>)>,
    pub localized: bool,
    pub localize_attempts: usize,
    pub localize_successes: usize,
    pub extended: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackParams {
    pub tracker: TrackerParams,
    pub session_id: u32,
    /// Send localized keyframes to the server with EXTEND.
    pub extend: bool,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            tracker: TrackerParams {
                keep_rasters: false,
                ..TrackerParams::default()
            },
            session_id: 1,
            extend: false,
        }
    }
}

/// Tracks an agent with local visual odometry, asking the server to localize
/// every new keyframe. Each success re-anchors the local frame in the map;
/// frames before the first success are mapped with the first anchor.
pub fn track_client<I>(
    addr: impl ToSocketAddrs,
    frames: I,
    k: &CameraIntrinsics,
    label: &str,
    params: &TrackParams,
) -> Result<TrackSession, SessionError>
where
    I: IntoIterator<Item = Result<FrameRecord, SimError>>,
{
    let mut client = MapClient::connect(addr)?;
    let mut tracker = TrackerState::new(params.tracker, params.session_id, 0, SE3Pose::identity());
    let mut anchor: Option<SE3Pose<f64>> = None;
    let mut first_anchor: Option<SE3Pose<f64>> = None;
    let mut local: Vec<(f64, SE3Pose<f64>, Option<SE3Pose<f64>>)> = Vec::new();
    let mut session = TrackSession {
        session_id: params.session_id,
        label: label.to_string(),
        trajectory: Vec::new(),
        localized: false,
        localize_attempts: 0,
        localize_successes: 0,
        extended: 0,
    };
    for frame in frames {
        let frame = frame?;
        let (_, kf) = tracker.track(&frame, k);
        if let Some(mut kf) = kf {
            session.localize_attempts += 1;
            if let Some((map_pose, _)) = client.localize(&kf.features)? {
                session.localize_successes += 1;
                let a = map_pose * kf.pose_est.inverse();
                anchor = Some(a);
                first_anchor.get_or_insert(a);
            }
            if let (true, Some(a)) = (params.extend, anchor) {
                kf.pose_est = a * kf.pose_est;
                client.extend(&kf)?;
                session.extended += 1;
            }
        }
        local.push((frame.timestamp, tracker.pose(), anchor));
    }
    session.localized = first_anchor.is_some();
    session.trajectory = local
        .into_iter()
        .map(|(t, p, a)| match a.or(first_anchor) {
            Some(a) => (t, a * p),
            None => (t, p),
        })
        .collect();
    Ok(session)
}
