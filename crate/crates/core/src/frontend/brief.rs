use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::harris::Keypoint;
use crate::raster::GrayImage;

pub const DESCRIPTOR_BITS: usize = 256;
/// Test points lie within this many pixels of the keypoint.
pub const PATCH_RADIUS: i32 = 15;
/// Keypoints closer than this to the border get no descriptor.
pub const DESCRIPTOR_BORDER: u32 = 16;
const PATTERN_SEED: u64 = 42;
const SMOOTH_RADIUS: i64 = 2;

/// 256-bit binary descriptor; bit `i` is stored in word `i / 64` at position `i % 64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl BinaryDescriptor {
    #[inline]
    pub fn hamming(&self, other: &Self) -> u32 {
        (0..4).map(|i| (self.0[i] ^ other.0[i]).count_ones()).sum()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, value: bool) {
        if value {
            self.0[i / 64] |= 1 << (i % 64);
        } else {
            self.0[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn to_le_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (i, w) in self.0.iter().enumerate() {
            out[i * 8..i * 8 + 8].copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(b: &[u8; 32]) -> Self {
        let mut words = [0u64; 4];
        for (i, w) in words.iter_mut().enumerate() {
            *w = u64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        }
        Self(words)
    }
}

type Pair = ([i32; 2], [i32; 2]);

/// Sampling pattern, identical in every process.
pub fn pattern() -> &'static [Pair] {
    static PATTERN: OnceLock<Vec<Pair>> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
        let pt = |rng: &mut ChaCha8Rng| {
            [
                rng.random_range(-PATCH_RADIUS..=PATCH_RADIUS),
                rng.random_range(-PATCH_RADIUS..=PATCH_RADIUS),
            ]
        };
        (0..DESCRIPTOR_BITS)
            .map(|_| loop {
                let a = pt(&mut rng);
                let b = pt(&mut rng);
                if a != b {
                    break (a, b);
                }
            })
            .collect()
    })
}

/// 5x5 box sums with the window clipped at the border.
fn box_smooth(gray: &GrayImage) -> Vec<u32> {
    let w = gray.width as usize;
    let h = gray.height as usize;
    let mut integral = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += gray.data[y * w + x] as u32;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0u32; w * h];
    for y in 0..h as i64 {
        let y0 = (y - SMOOTH_RADIUS).max(0) as usize;
        let y1 = (y + SMOOTH_RADIUS + 1).min(h as i64) as usize;
        for x in 0..w as i64 {
            let x0 = (x - SMOOTH_RADIUS).max(0) as usize;
            let x1 = (x + SMOOTH_RADIUS + 1).min(w as i64) as usize;
            out[y as usize * w + x as usize] = integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0];
        }
    }
    out
}

/// Descriptors for the keypoints far enough from the border; returns the kept
/// keypoints alongside their descriptors.
pub fn compute_descriptors(gray: &GrayImage, kps: &[Keypoint]) -> (Vec<Keypoint>, Vec<BinaryDescriptor>) {
    let w = gray.width as i64;
    let h = gray.height as i64;
    let b = DESCRIPTOR_BORDER as i64;
    let smooth = box_smooth(gray);
    let pairs = pattern();
    let mut kept = Vec::with_capacity(kps.len());
    let mut descs = Vec::with_capacity(kps.len());
    for kp in kps {
        let x = kp.u.round() as i64;
        let y = kp.v.round() as i64;
        if x < b || y < b || x >= w - b || y >= h - b {
            continue;
        }
        let at = |o: [i32; 2]| smooth[((y + o[1] as i64) * w + x + o[0] as i64) as usize];
        let mut d = BinaryDescriptor::default();
        for (i, (p, q)) in pairs.iter().enumerate() {
            if at(*p) < at(*q) {
                d.0[i / 64] |= 1 << (i % 64);
            }
        }
        kept.push(*kp);
        descs.push(d);
    }
    (kept, descs)
}
