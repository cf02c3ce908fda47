//! Length-prefixed request/response framing:
//! `[u32 big-endian payload length][u8 kind][payload]`.

use std::io::{self, Read, Write};

use nalgebra::Vector3;

use crate::geom::SE3Pose;

pub const PROTOCOL_VERSION: u16 = 1;
/// Largest payload accepted, bytes.
pub const MAX_PAYLOAD: usize = 64 << 20;
/// Map archives are sent in chunks of at most this many bytes.
pub const MAP_CHUNK_SIZE: usize = 1 << 20;

pub mod kind {
    pub const HELLO: u8 = 0;
    pub const GET_MAP: u8 = 1;
    pub const MAP_CHUNK: u8 = 2;
    pub const LOCALIZE: u8 = 3;
    pub const LOCALIZED: u8 = 4;
    pub const NOT_LOCALIZED: u8 = 5;
    pub const EXTEND: u8 = 6;
    pub const ACK: u8 = 7;
    pub const ERROR: u8 = 255;
}

pub mod error_code {
    pub const MALFORMED: u8 = 1;
    pub const VERSION_MISMATCH: u8 = 2;
    pub const MAP_UNAVAILABLE: u8 = 3;
    pub const TOO_LARGE: u8 = 4;
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello { version: u16 },
    GetMap,
    MapChunk { index: u32, total: u32, bytes: Vec<u8> },
    /// Encoded feature set.
    Localize { features: Vec<u8> },
    Localized { pose: [f64; 7], confidence: f32 },
    NotLocalized,
    /// Encoded keyframe.
    Extend { keyframe: Vec<u8> },
    Ack,
    Error { code: u8, text: String },
}

/// Pose as `tx ty tz qx qy qz qw`.
pub fn pose_to_wire(p: &SE3Pose<f64>) -> [f64; 7] {
    let q = p.quaternion();
    let t = p.translation;
    [t.x, t.y, t.z, q[0], q[1], q[2], q[3]]
}

pub fn pose_from_wire(v: &[f64; 7]) -> SE3Pose<f64> {
    SE3Pose::from_quaternion(Vector3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]])
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::Hello { .. } => kind::HELLO,
            Message::GetMap => kind::GET_MAP,
            Message::MapChunk { .. } => kind::MAP_CHUNK,
            Message::Localize { .. } => kind::LOCALIZE,
            Message::Localized { .. } => kind::LOCALIZED,
            Message::NotLocalized => kind::NOT_LOCALIZED,
            Message::Extend { .. } => kind::EXTEND,
            Message::Ack => kind::ACK,
            Message::Error { .. } => kind::ERROR,
        }
    }

    pub fn error(code: u8, text: impl Into<String>) -> Self {
        Message::Error { code, text: text.into() }
    }

    /// Payload bytes (big-endian numbers), without the frame header.
    pub fn payload(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Message::Hello { version } => b.extend_from_slice(&version.to_be_bytes()),
            Message::MapChunk { index, total, bytes } => {
                b.extend_from_slice(&index.to_be_bytes());
                b.extend_from_slice(&total.to_be_bytes());
                b.extend_from_slice(bytes);
            }
            Message::Localize { features } => b.extend_from_slice(features),
            Message::Localized { pose, confidence } => {
                for v in pose {
                    b.extend_from_slice(&v.to_be_bytes());
                }
                b.extend_from_slice(&confidence.to_be_bytes());
            }
            Message::Extend { keyframe } => b.extend_from_slice(keyframe),
            Message::Error { code, text } => {
                b.push(*code);
                b.extend_from_slice(text.as_bytes());
            }
            Message::GetMap | Message::NotLocalized | Message::Ack => {}
        }
        b
    }

    /// Parses a payload of the given kind; `None` when the kind is unknown or
    /// the payload does not fit it.
    pub fn parse(kind: u8, p: &[u8]) -> Option<Self> {
        let be_u32 = |s: &[u8]| u32::from_be_bytes(s.try_into().unwrap());
        Some(match kind {
            kind::HELLO if p.len() == 2 => Message::Hello {
                version: u16::from_be_bytes([p[0], p[1]]),
            },
            kind::GET_MAP if p.is_empty() => Message::GetMap,
            kind::MAP_CHUNK if p.len() >= 8 => Message::MapChunk {
                index: be_u32(&p[0..4]),
                total: be_u32(&p[4..8]),
                bytes: p[8..].to_vec(),
            },
            kind::LOCALIZE => Message::Localize { features: p.to_vec() },
            kind::LOCALIZED if p.len() == 60 => {
                let mut pose = [0.0; 7];
                for (i, v) in pose.iter_mut().enumerate() {
                    *v = f64::from_be_bytes(p[8 * i..8 * i + 8].try_into().unwrap());
                }
                Message::Localized {
                    pose,
                    confidence: f32::from_be_bytes(p[56..60].try_into().unwrap()),
                }
            }
            kind::NOT_LOCALIZED if p.is_empty() => Message::NotLocalized,
            kind::EXTEND => Message::Extend { keyframe: p.to_vec() },
            kind::ACK if p.is_empty() => Message::Ack,
            kind::ERROR if !p.is_empty() => Message::Error {
                code: p[0],
                text: String::from_utf8_lossy(&p[1..]).into_owned(),
            },
            _ => return None,
        })
    }

    pub fn to_frame(&self) -> Vec<u8> {
        frame_bytes(self.kind(), &self.payload())
    }
}

pub fn frame_bytes(kind: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.push(kind);
    out.extend_from_slice(payload);
    out
}

#[derive(Debug)]
pub enum FrameError {
    /// Clean end of stream before a new frame.
    Closed,
    /// Declared payload length above [`MAX_PAYLOAD`].
    TooLarge(usize),
    Io(io::Error),
}

impl From<io::Error> for FrameError {
    fn from(e: io::Error) -> Self {
        FrameError::Io(e)
    }
}

/// Reads one raw frame as `(kind, payload)`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<(u8, Vec<u8>), FrameError> {
    let mut header = [0u8; 5];
    let mut got = 0;
    while got < header.len() {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header[..4].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok((header[4], payload))
}

pub fn write_message<W: Write>(w: &mut W, m: &Message) -> io::Result<()> {
    w.write_all(&m.to_frame())?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn messages_roundtrip_through_frames() {
        let msgs = vec![
            Message::Hello { version: 1 },
            Message::GetMap,
            Message::MapChunk { index: 2, total: 3, bytes: vec![9, 8, 7] },
            Message::Localize { features: vec![1, 2] },
            Message::Localized { pose: [1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 1.0], confidence: 0.75 },
            Message::NotLocalized,
            Message::Extend { keyframe: vec![5; 10] },
            Message::Ack,
            Message::error(error_code::MALFORMED, "bad"),
        ];
        let mut stream = Vec::new();
        for m in &msgs {
            write_message(&mut stream, m).unwrap();
        }
        let mut r = Cursor::new(stream);
        for m in &msgs {
            let (k, p) = read_frame(&mut r).unwrap();
            assert_eq!(Message::parse(k, &p).as_ref(), Some(m));
        }
        assert!(matches!(read_frame(&mut r), Err(FrameError::Closed)));
    }

    #[test]
    fn frame_header_is_big_endian() {
        let f = Message::Hello { version: 1 }.to_frame();
        assert_eq!(f, vec![0, 0, 0, 2, 0, 0, 1]);
    }

    #[test]
    fn oversized_and_unknown_frames() {
        let mut big = ((MAX_PAYLOAD + 1) as u32).to_be_bytes().to_vec();
        big.push(kind::EXTEND);
        assert!(matches!(read_frame(&mut Cursor::new(big)), Err(FrameError::TooLarge(_))));
        assert_eq!(Message::parse(42, &[]), None);
        assert_eq!(Message::parse(kind::HELLO, &[1]), None);
    }

    #[test]
    fn wire_pose_roundtrip() {
        let p = SE3Pose::from_axis_angle(Vector3::new(0.3, -0.2, 1.0), Vector3::new(1.0, 2.0, 3.0));
        assert!(pose_from_wire(&pose_to_wire(&p)).max_abs_diff(&p) < 1e-12);
    }
}
