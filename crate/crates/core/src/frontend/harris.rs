use crate::raster::GrayImage;

/// Corner with sub-pixel position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub response: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorParams {
    pub max_features: usize,
    pub min_distance: f64,
    pub harris_k: f64,
    /// Keypoints closer than this to the image border are not reported.
    pub border: u32,
    /// Responses below `quality * max_response` are ignored.
    pub quality: f64,
    pub grid_cols: u32,
    pub grid_rows: u32,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            max_features: 500,
            min_distance: 5.0,
            harris_k: 0.04,
            border: 2,
            quality: 1e-3,
            grid_cols: 8,
            grid_rows: 6,
        }
    }
}

/// Harris response map; zero where undefined (two pixels from the border).
pub fn harris_response(gray: &GrayImage, k: f64) -> Vec<f32> {
    let w = gray.width as usize;
    let h = gray.height as usize;
    let img: Vec<f32> = gray.data.iter().map(|&p| p as f32).collect();
    let mut ixx = vec![0f32; w * h];
    let mut iyy = vec![0f32; w * h];
    let mut ixy = vec![0f32; w * h];
    for y in 1..h.saturating_sub(1) {
        let r0 = (y - 1) * w;
        let r1 = y * w;
        let r2 = (y + 1) * w;
        for x in 1..w - 1 {
            let gx = (img[r0 + x + 1] + 2.0 * img[r1 + x + 1] + img[r2 + x + 1]
                - img[r0 + x - 1]
                - 2.0 * img[r1 + x - 1]
                - img[r2 + x - 1])
                * 0.125;
            let gy = (img[r2 + x - 1] + 2.0 * img[r2 + x] + img[r2 + x + 1]
                - img[r0 + x - 1]
                - 2.0 * img[r0 + x]
                - img[r0 + x + 1])
                * 0.125;
            ixx[r1 + x] = gx * gx;
            iyy[r1 + x] = gy * gy;
            ixy[r1 + x] = gx * gy;
        }
    }
    let k = k as f32;
    let mut response = vec![0f32; w * h];
    let box3 = |m: &[f32], x: usize, y: usize| {
        let mut s = 0.0;
        for yy in y - 1..=y + 1 {
            let row = &m[yy * w + x - 1..yy * w + x + 2];
            s += row[0] + row[1] + row[2];
        }
        s
    };
    for y in 2..h.saturating_sub(2) {
        for x in 2..w - 2 {
            let a = box3(&ixx, x, y);
            let b = box3(&iyy, x, y);
            let c = box3(&ixy, x, y);
            response[y * w + x] = a * b - c * c - k * (a + b) * (a + b);
        }
    }
    response
}

fn subpixel_offset(rm: f32, r0: f32, rp: f32) -> f64 {
    let denom = rm - 2.0 * r0 + rp;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (rm - rp) / denom).clamp(-0.5, 0.5) as f64
}

/// Harris corners, strongest first.
pub fn detect_features(gray: &GrayImage, max_n: usize, min_distance_px: f64) -> Vec<Keypoint> {
    detect_features_with(
        gray,
        &DetectorParams {
            max_features: max_n,
            min_distance: min_distance_px,
            ..DetectorParams::default()
        },
    )
}

pub fn detect_features_with(gray: &GrayImage, params: &DetectorParams) -> Vec<Keypoint> {
    let w = gray.width as usize;
    let h = gray.height as usize;
    if w < 5 || h < 5 || params.max_features == 0 {
        return Vec::new();
    }
    let r = harris_response(gray, params.harris_k);
    let max_r = r.iter().cloned().fold(0f32, f32::max);
    if !(max_r > 0.0) {
        return Vec::new();
    }
    let threshold = (max_r as f64 * params.quality).max(1e-3) as f32;
    let margin = (params.border as usize).max(2);
    if w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }

    // Local maxima; ties go to the first pixel in raster order.
    let mut candidates: Vec<(f32, usize, usize)> = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let c = r[y * w + x];
            if c <= threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in 0..3 {
                for dx in 0..3 {
                    if dx == 1 && dy == 1 {
                        continue;
                    }
                    let n = r[(y + dy - 1) * w + x + dx - 1];
                    let before = dy == 0 || (dy == 1 && dx == 0);
                    if n > c || (before && n == c) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((c, x, y));
            }
        }
    }
    let by_strength = |a: &(f32, usize, usize), b: &(f32, usize, usize)| {
        b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1))
    };

    // Cap each grid bucket so a few strong regions cannot take every slot.
    let cols = params.grid_cols.max(1) as usize;
    let rows = params.grid_rows.max(1) as usize;
    let per_bucket = (2 * params.max_features).div_ceil(cols * rows).max(1);
    let mut buckets: Vec<Vec<(f32, usize, usize)>> = vec![Vec::new(); cols * rows];
    for c in candidates {
        let bx = (c.1 * cols / w).min(cols - 1);
        let by = (c.2 * rows / h).min(rows - 1);
        buckets[by * cols + bx].push(c);
    }
    let mut pool = Vec::new();
    for mut b in buckets {
        b.sort_by(by_strength);
        b.truncate(per_bucket);
        pool.extend(b);
    }
    pool.sort_by(by_strength);

    let min_d2 = params.min_distance * params.min_distance;
    let cell = params.min_distance.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut occupancy: Vec<Vec<(f64, f64)>> = vec![Vec::new(); gw * gh];
    let mut out = Vec::new();
    for (c, x, y) in pool {
        if out.len() >= params.max_features {
            break;
        }
        let u = x as f64 + subpixel_offset(r[y * w + x - 1], c, r[y * w + x + 1]);
        let v = y as f64 + subpixel_offset(r[(y - 1) * w + x], c, r[(y + 1) * w + x]);
        let gx = (u / cell) as usize;
        let gy = (v / cell) as usize;
        let mut clear = true;
        'grid: for yy in gy.saturating_sub(1)..=(gy + 1).min(gh - 1) {
            for xx in gx.saturating_sub(1)..=(gx + 1).min(gw - 1) {
                for &(pu, pv) in &occupancy[yy * gw + xx] {
                    let d2 = (pu - u).powi(2) + (pv - v).powi(2);
                    if d2 < min_d2 {
                        clear = false;
                        break 'grid;
                    }
                }
            }
        }
        if clear {
            occupancy[gy * gw + gx].push((u, v));
            out.push(Keypoint {
                u,
                v,
                response: c as f64,
            });
        }
    }
    out
}
