//! Little-endian binary layout of keyframes and feature sets.

use nalgebra::{Matrix3, Vector3};

use crate::frontend::{BinaryDescriptor, FrameFeatures, KeyframeNode, Keypoint};
use crate::geom::SE3Pose;
use crate::loopmem::BowHistogram;
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("payload truncated")]
    Truncated,
    #[error("invalid payload: {0}")]
    Invalid(&'static str),
}

#[derive(Default)]
pub struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn len_prefixed(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }
    pub fn str(&mut self, s: &str) {
        self.len_prefixed(s.as_bytes());
    }
    /// Rotation row-major, then translation: twelve doubles, bit-exact.
    pub fn pose(&mut self, p: &SE3Pose<f64>) {
        for r in 0..3 {
            for c in 0..3 {
                self.f64(p.rotation[(r, c)]);
            }
        }
        for i in 0..3 {
            self.f64(p.translation[i]);
        }
    }
}

pub struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }
    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.arr()?))
    }
    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
    pub fn len_prefixed(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    pub fn str(&mut self) -> Result<String, CodecError> {
        String::from_utf8(self.len_prefixed()?.to_vec()).map_err(|_| CodecError::Invalid("text is not utf-8"))
    }
    pub fn pose(&mut self) -> Result<SE3Pose<f64>, CodecError> {
        let mut m = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = self.f64()?;
            }
        }
        let t = Vector3::new(self.f64()?, self.f64()?, self.f64()?);
        Ok(SE3Pose::new(m, t))
    }
    /// Reads a count and rejects it if the remaining bytes cannot hold that many items.
    pub fn count(&mut self, min_item_size: usize) -> Result<usize, CodecError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_size) > self.remaining() {
            return Err(CodecError::Truncated);
        }
        Ok(n)
    }
    pub fn finish(&self) -> Result<(), CodecError> {
        if self.remaining() != 0 {
            return Err(CodecError::Invalid("trailing bytes"));
        }
        Ok(())
    }
}

pub fn write_features(w: &mut ByteWriter, f: &FrameFeatures) {
    w.u32(f.keypoints.len() as u32);
    for i in 0..f.keypoints.len() {
        let kp = &f.keypoints[i];
        w.f64(kp.u);
        w.f64(kp.v);
        w.f64(kp.response);
        w.bytes(&f.descriptors[i].to_le_bytes());
        match &f.points_cam[i] {
            Some(p) => {
                w.u8(1);
                w.f64(p.x);
                w.f64(p.y);
                w.f64(p.z);
            }
            None => w.u8(0),
        }
    }
}

pub fn read_features(r: &mut ByteReader) -> Result<FrameFeatures, CodecError> {
    let n = r.count(24 + 32 + 1)?;
    let mut f = FrameFeatures::default();
    for _ in 0..n {
        let u = r.f64()?;
        let v = r.f64()?;
        let response = r.f64()?;
        f.keypoints.push(Keypoint { u, v, response });
        let d: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        f.descriptors.push(BinaryDescriptor::from_le_bytes(&d));
        f.points_cam.push(match r.u8()? {
            0 => None,
            1 => Some(Vector3::new(r.f64()?, r.f64()?, r.f64()?)),
            _ => return Err(CodecError::Invalid("point flag")),
        });
    }
    Ok(f)
}

pub fn encode_features(f: &FrameFeatures) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_features(&mut w, f);
    w.buf
}

pub fn decode_features(bytes: &[u8]) -> Result<FrameFeatures, CodecError> {
    let mut r = ByteReader::new(bytes);
    let f = read_features(&mut r)?;
    r.finish()?;
    Ok(f)
}

pub fn encode_keyframe(kf: &KeyframeNode) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u64(kf.id);
    w.u32(kf.session);
    w.pose(&kf.pose_est);
    w.f64(kf.timestamp);
    w.u32(kf.weight);
    write_features(&mut w, &kf.features);
    let bow = kf.bow.entries();
    w.u32(bow.len() as u32);
    for &(word, count) in bow {
        w.u16(word);
        w.u32(count);
    }
    match &kf.rgb {
        Some(img) => {
            w.u8(1);
            w.u32(img.width);
            w.u32(img.height);
            for p in &img.data {
                w.bytes(p);
            }
        }
        None => w.u8(0),
    }
    match &kf.depth {
        Some(img) => {
            w.u8(1);
            w.u32(img.width);
            w.u32(img.height);
            for &d in &img.data {
                w.u16(d);
            }
        }
        None => w.u8(0),
    }
    w.buf
}

fn raster_dims(r: &mut ByteReader, bytes_per_pixel: usize) -> Result<(u32, u32, usize), CodecError> {
    let width = r.u32()?;
    let height = r.u32()?;
    let n = (width as usize)
        .checked_mul(height as usize)
        .ok_or(CodecError::Invalid("raster size"))?;
    if n.saturating_mul(bytes_per_pixel) > r.remaining() {
        return Err(CodecError::Truncated);
    }
    Ok((width, height, n))
}

pub fn decode_keyframe(bytes: &[u8]) -> Result<KeyframeNode, CodecError> {
    let mut r = ByteReader::new(bytes);
    let id = r.u64()?;
    let session = r.u32()?;
    let pose_est = r.pose()?;
    let timestamp = r.f64()?;
    let weight = r.u32()?;
    let features = read_features(&mut r)?;
    let nb = r.count(6)?;
    let mut words = Vec::with_capacity(nb);
    for _ in 0..nb {
        words.push((r.u16()?, r.u32()?));
    }
    let bow = BowHistogram::from_sorted(words).ok_or(CodecError::Invalid("histogram order"))?;
    let rgb = match r.u8()? {
        0 => None,
        1 => {
            let (width, height, n) = raster_dims(&mut r, 3)?;
            let raw = r.take(n * 3)?;
            Some(Raster {
                width,
                height,
                data: raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            })
        }
        _ => return Err(CodecError::Invalid("rgb flag")),
    };
    let depth = match r.u8()? {
        0 => None,
        1 => {
            let (width, height, n) = raster_dims(&mut r, 2)?;
            let raw = r.take(n * 2)?;
            Some(Raster {
                width,
                height,
                data: raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
            })
        }
        _ => return Err(CodecError::Invalid("depth flag")),
    };
    r.finish()?;
    Ok(KeyframeNode {
        id,
        session,
        pose_est,
        features,
        bow,
        weight,
        timestamp,
        rgb,
        depth,
    })
}

/// Small keyframe for codec and storage tests.
#[cfg(test)]
pub(crate) fn sample_keyframe(id: u64, with_rasters: bool) -> KeyframeNode {
    let descriptors: Vec<_> = (0..7u64).map(|i| BinaryDescriptor([i * 977 + id, i, !i, 42])).collect();
    let features = FrameFeatures {
        keypoints: (0..7)
            .map(|i| Keypoint {
                u: 20.0 + i as f64 * 1.25,
                v: 30.5 - i as f64 / 3.0,
                response: 1e5 + i as f64,
            })
            .collect(),
        points_cam: (0..7)
            .map(|i| (i % 3 != 0).then(|| Vector3::new(0.1 * i as f64, -0.2, 4.0 + 1e-3 * i as f64)))
            .collect(),
        descriptors,
    };
    KeyframeNode {
        id,
        session: 2,
        pose_est: SE3Pose::from_axis_angle(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, -2.0, 4.0)),
        bow: BowHistogram::from_descriptors(&features.descriptors),
        features,
        weight: 3,
        timestamp: 12.345,
        rgb: with_rasters.then(|| Raster::from_fn(5, 4, |x, y| [x as u8, y as u8, 7])),
        depth: with_rasters.then(|| Raster::from_fn(5, 4, |x, y| (x * 1000 + y) as u16)),
    }
}
