//! Seeded 2-d value noise.

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform lattice value in `[0, 1)`.
#[inline]
pub fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64((ix as u64).wrapping_mul(0x1656_67B1) ^ splitmix64(iy as u64)));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smoothly interpolated value noise in `[0, 1)` with unit lattice spacing.
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (ix, iy) = (x0 as i64, y0 as i64);
    let tx = fade(x - x0);
    let ty = fade(y - y0);
    let v00 = lattice(seed, ix, iy);
    let v10 = lattice(seed, ix + 1, iy);
    let v01 = lattice(seed, ix, iy + 1);
    let v11 = lattice(seed, ix + 1, iy + 1);
    let a = v00 + (v10 - v00) * tx;
    let b = v01 + (v11 - v01) * tx;
    a + (b - a) * ty
}

/// Weighted sum of value-noise octaves, normalized to `[0, 1)`.
pub fn layered(seed: u64, x: f64, y: f64, octaves: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    let mut total = 0.0;
    for (i, &(wavelength, weight)) in octaves.iter().enumerate() {
        let s = seed.wrapping_add((i as u64).wrapping_mul(0x51_7CC1_B727_220A));
        sum += weight * value_noise(s, x / wavelength, y / wavelength);
        total += weight;
    }
    if total > 0.0 {
        sum / total
    } else {
        0.0
    }
}
