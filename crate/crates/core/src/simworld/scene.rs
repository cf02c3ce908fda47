use super::noise;
use super::SimError;

/// Axis-aligned rectangle in world xy, meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Extent {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn depth(&self) -> f64 {
        self.max[1] - self.min[1]
    }
}

/// Procedural height field: value noise scaled to `[-amplitude, amplitude]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TerrainNoise {
    pub amplitude: f64,
    /// Wavelength of the coarsest octave, meters. Larger is smoother.
    pub wavelength: f64,
    pub octaves: u32,
    pub seed: u64,
}

impl TerrainNoise {
    pub fn flat() -> Self {
        Self {
            amplitude: 0.0,
            wavelength: 4.0,
            octaves: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectKind {
    Box,
    TrenchPolygon,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub kind: ObjectKind,
    /// Simple polygon, counter-clockwise or clockwise, at least three vertices.
    pub footprint: Vec<[f64; 2]>,
    /// Added to the base terrain inside the footprint; negative for excavations.
    pub height_delta: f64,
    pub label: String,
}

impl SceneObject {
    pub fn axis_box(label: &str, min: [f64; 2], max: [f64; 2], height: f64) -> Self {
        Self {
            kind: ObjectKind::Box,
            footprint: vec![min, [max[0], min[1]], max, [min[0], max[1]]],
            height_delta: height,
            label: label.to_string(),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        point_in_polygon(&self.footprint, x, y)
    }

    fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.footprint {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

/// Description of a synthetic jobsite.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub extent: Extent,
    pub base_heightfield: TerrainNoise,
    pub texture_seed: u64,
    pub objects: Vec<SceneObject>,
    /// Spacing of the sampled height grid, meters.
    pub grid_resolution: f64,
}

impl SceneSpec {
    pub fn new(extent: Extent, base_heightfield: TerrainNoise, texture_seed: u64) -> Self {
        Self {
            extent,
            base_heightfield,
            texture_seed,
            objects: Vec::new(),
            grid_resolution: 0.02,
        }
    }

    pub fn with_object(mut self, object: SceneObject) -> Self {
        self.objects.push(object);
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.extent.width() > 0.0 && self.extent.depth() > 0.0) {
            return Err(SimError::InvalidScene("extent must be positive".into()));
        }
        if !(self.base_heightfield.amplitude >= 0.0) {
            return Err(SimError::InvalidScene("amplitude must be non-negative".into()));
        }
        if !(self.base_heightfield.wavelength > 0.0) {
            return Err(SimError::InvalidScene("wavelength must be positive".into()));
        }
        if !(self.grid_resolution > 0.0) {
            return Err(SimError::InvalidScene("grid resolution must be positive".into()));
        }
        for obj in &self.objects {
            if obj.footprint.len() < 3 {
                return Err(SimError::InvalidScene(format!(
                    "object {} needs at least three vertices",
                    obj.label
                )));
            }
            if !is_simple_polygon(&obj.footprint) {
                return Err(SimError::InvalidScene(format!(
                    "object {} footprint self-intersects",
                    obj.label
                )));
            }
        }
        Ok(())
    }

    /// Height of the continuous (un-gridded) scene description.
    pub fn analytic_height(&self, x: f64, y: f64) -> f64 {
        let base = &self.base_heightfield;
        let mut h = 0.0;
        if base.amplitude > 0.0 {
            let octaves: Vec<(f64, f64)> = (0..base.octaves.max(1))
                .map(|i| (base.wavelength / (1 << i) as f64, 0.5f64.powi(i as i32)))
                .collect();
            h = base.amplitude * (2.0 * noise::layered(base.seed, x, y, &octaves) - 1.0);
        }
        for obj in &self.objects {
            if obj.contains(x, y) {
                h += obj.height_delta;
            }
        }
        h
    }

    /// Surface intensity in gray levels; fine-grained noise so corners are plentiful.
    pub fn texture(&self, x: f64, y: f64) -> f64 {
        const OCTAVES: [(f64, f64); 3] = [(0.06, 0.45), (0.15, 0.35), (0.5, 0.2)];
        let n = noise::layered(self.texture_seed, x, y, &OCTAVES);
        // Layered noise concentrates around 0.5; stretch it to use the gray range.
        let mut v = 128.0 + (n - 0.5) * 520.0;
        for obj in &self.objects {
            if obj.contains(x, y) {
                v += if obj.height_delta < 0.0 { -25.0 } else { 20.0 };
            }
        }
        v.clamp(10.0, 245.0)
    }
}

const TILE_CELLS: usize = 16;

/// Scene compiled to a bilinearly interpolated height grid. This is the
/// surface the renderer intersects and the reference for geometric checks.
#[derive(Clone, Debug)]
pub struct Terrain {
    spec: SceneSpec,
    nx: usize,
    ny: usize,
    heights: Vec<f64>,
    tiles_x: usize,
    tiles_y: usize,
    /// Max height over each tile and its 8 neighbours.
    tile_max: Vec<f64>,
    global_max: f64,
    inv_res: f64,
    inv_tile: f64,
}

impl Terrain {
    pub fn new(spec: &SceneSpec) -> Result<Self, SimError> {
        spec.validate()?;
        let res = spec.grid_resolution;
        let nx = (spec.extent.width() / res).ceil() as usize + 1;
        let ny = (spec.extent.depth() / res).ceil() as usize + 1;
        let mut heights = Vec::with_capacity(nx * ny);
        let base_only = SceneSpec {
            objects: Vec::new(),
            ..spec.clone()
        };
        for j in 0..ny {
            let y = spec.extent.min[1] + j as f64 * res;
            for i in 0..nx {
                let x = spec.extent.min[0] + i as f64 * res;
                heights.push(base_only.analytic_height(x, y));
            }
        }
        for obj in &spec.objects {
            let (lo, hi) = obj.bounds();
            let i0 = (((lo[0] - spec.extent.min[0]) / res).floor().max(0.0)) as usize;
            let j0 = (((lo[1] - spec.extent.min[1]) / res).floor().max(0.0)) as usize;
            let i1 = ((((hi[0] - spec.extent.min[0]) / res).ceil()) as usize).min(nx - 1);
            let j1 = ((((hi[1] - spec.extent.min[1]) / res).ceil()) as usize).min(ny - 1);
            for j in j0..=j1 {
                let y = spec.extent.min[1] + j as f64 * res;
                for i in i0..=i1 {
                    let x = spec.extent.min[0] + i as f64 * res;
                    if obj.contains(x, y) {
                        heights[j * nx + i] += obj.height_delta;
                    }
                }
            }
        }

        let tiles_x = (nx - 1).div_ceil(TILE_CELLS).max(1);
        let tiles_y = (ny - 1).div_ceil(TILE_CELLS).max(1);
        let mut raw = vec![f64::NEG_INFINITY; tiles_x * tiles_y];
        for j in 0..ny {
            let tj = (j / TILE_CELLS).min(tiles_y - 1);
            let tj_prev = if j % TILE_CELLS == 0 && j > 0 { Some(tj - 1) } else { None };
            for i in 0..nx {
                let ti = (i / TILE_CELLS).min(tiles_x - 1);
                let ti_prev = if i % TILE_CELLS == 0 && i > 0 { Some(ti - 1) } else { None };
                let h = heights[j * nx + i];
                // Nodes on tile borders belong to both adjacent tiles.
                for tjj in std::iter::once(tj).chain(tj_prev) {
                    for tii in std::iter::once(ti).chain(ti_prev) {
                        let slot = &mut raw[tjj * tiles_x + tii];
                        *slot = slot.max(h);
                    }
                }
            }
        }
        let mut tile_max = vec![f64::NEG_INFINITY; tiles_x * tiles_y];
        for tj in 0..tiles_y {
            for ti in 0..tiles_x {
                let mut m = f64::NEG_INFINITY;
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let a = ti as i64 + di;
                        let b = tj as i64 + dj;
                        if a >= 0 && b >= 0 && (a as usize) < tiles_x && (b as usize) < tiles_y {
                            m = m.max(raw[b as usize * tiles_x + a as usize]);
                        }
                    }
                }
                tile_max[tj * tiles_x + ti] = m;
            }
        }
        let global_max = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            spec: spec.clone(),
            nx,
            ny,
            heights,
            tiles_x,
            tiles_y,
            tile_max,
            global_max,
            inv_res: 1.0 / res,
            inv_tile: 1.0 / (TILE_CELLS as f64 * res),
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn max_height(&self) -> f64 {
        self.global_max
    }

    /// Side length of an acceleration tile, meters.
    pub fn tile_size(&self) -> f64 {
        TILE_CELLS as f64 * self.spec.grid_resolution
    }

    /// Bilinear height; coordinates outside the extent clamp to its border.
    #[inline]
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.spec.extent.min[0]) * self.inv_res).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.spec.extent.min[1]) * self.inv_res).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx as usize).min(self.nx - 2);
        let j = (fy as usize).min(self.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let row = j * self.nx + i;
        let h00 = self.heights[row];
        let h10 = self.heights[row + 1];
        let h01 = self.heights[row + self.nx];
        let h11 = self.heights[row + self.nx + 1];
        let a = h00 + (h10 - h00) * tx;
        let b = h01 + (h11 - h01) * tx;
        a + (b - a) * ty
    }

    /// Upper bound of the surface within one tile of `(x, y)`.
    #[inline]
    pub fn local_max(&self, x: f64, y: f64) -> f64 {
        let fx = (x - self.spec.extent.min[0]) * self.inv_tile;
        let fy = (y - self.spec.extent.min[1]) * self.inv_tile;
        if !(fx >= 0.0 && fy >= 0.0 && fx < self.tiles_x as f64 && fy < self.tiles_y as f64) {
            // Outside the grid the clamped height is bounded by the global max.
            return self.global_max;
        }
        self.tile_max[fy as usize * self.tiles_x + fx as usize]
    }

    pub fn texture(&self, x: f64, y: f64) -> f64 {
        self.spec.texture(x, y)
    }
}

pub fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0)) && d1 != 0.0 && d2 != 0.0
}

pub fn is_simple_polygon(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        for j in (i + 1)..n {
            // Adjacent edges share a vertex and are allowed to touch.
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            if segments_cross(a, b, poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Shoelace area (absolute), square meters.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s.abs()
}
