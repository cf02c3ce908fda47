use std::io::{self, Write};

use super::{CloudError, PointCloud};

/// Height raster. Cell `(ix, iy)` covers
/// `[origin.0 + ix * cell, origin.0 + (ix + 1) * cell)` in x and likewise in y;
/// storage is row-major with `iy` as the row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dem {
    pub origin: (f64, f64),
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    pub height: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Dem {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        let i = self.index(ix, iy);
        self.mask[i].then(|| self.height[i])
    }

    /// Cell containing a world position.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin.0) / self.cell).floor();
        let fy = ((y - self.origin.1) / self.cell).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.cell,
            self.origin.1 + (iy as f64 + 0.5) * self.cell,
        )
    }

    pub fn valid_cells(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn same_grid(&self, other: &Dem) -> bool {
        self.origin == other.origin && self.cell == other.cell && self.nx == other.nx && self.ny == other.ny
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median height per cell over the cloud's xy bounding box; empty cells are
/// masked out rather than interpolated.
pub fn rasterize_dem(cloud: &PointCloud, cell: f64) -> Result<Dem, CloudError> {
    if !(cell > 0.0) {
        return Err(CloudError::InvalidCell);
    }
    let (lo, hi) = cloud.bounds().ok_or(CloudError::EmptyCloud)?;
    let nx = ((hi.x - lo.x) / cell).floor() as usize + 1;
    let ny = ((hi.y - lo.y) / cell).floor() as usize + 1;
    Ok(rasterize_on(cloud, (lo.x, lo.y), cell, nx, ny))
}

/// Rasterizes both clouds over the union of their xy bounds so that the two
/// DEMs can be compared cell by cell.
pub fn rasterize_common(a: &PointCloud, b: &PointCloud, cell: f64) -> Result<(Dem, Dem), CloudError> {
    if !(cell > 0.0) {
        return Err(CloudError::InvalidCell);
    }
    let (alo, ahi) = a.bounds().ok_or(CloudError::EmptyCloud)?;
    let (blo, bhi) = b.bounds().ok_or(CloudError::EmptyCloud)?;
    let lo = alo.inf(&blo);
    let hi = ahi.sup(&bhi);
    let nx = ((hi.x - lo.x) / cell).floor() as usize + 1;
    let ny = ((hi.y - lo.y) / cell).floor() as usize + 1;
    Ok((
        rasterize_on(a, (lo.x, lo.y), cell, nx, ny),
        rasterize_on(b, (lo.x, lo.y), cell, nx, ny),
    ))
}

fn rasterize_on(cloud: &PointCloud, origin: (f64, f64), cell: f64, nx: usize, ny: usize) -> Dem {
    let mut dem = Dem {
        origin,
        cell,
        nx,
        ny,
        height: vec![0.0; nx * ny],
        mask: vec![false; nx * ny],
    };
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); nx * ny];
    for p in &cloud.points {
        let fx = ((p.position.x - origin.0) / cell).floor();
        let fy = ((p.position.y - origin.1) / cell).floor();
        if fx < 0.0 || fy < 0.0 {
            continue;
        }
        // The far bound lands exactly on the last edge; fold it into the last cell.
        let ix = (fx as usize).min(nx - 1);
        let iy = (fy as usize).min(ny - 1);
        buckets[iy * nx + ix].push(p.position.z);
    }
    for (i, b) in buckets.iter_mut().enumerate() {
        if !b.is_empty() {
            dem.height[i] = median(b);
            dem.mask[i] = true;
        }
    }
    dem
}

/// Nearest-cell resampling of `src` onto the grid of `target`.
pub fn resample_onto(src: &Dem, target: &Dem) -> Dem {
    let mut out = Dem {
        origin: target.origin,
        cell: target.cell,
        nx: target.nx,
        ny: target.ny,
        height: vec![0.0; target.nx * target.ny],
        mask: vec![false; target.nx * target.ny],
    };
    for iy in 0..target.ny {
        for ix in 0..target.nx {
            let (x, y) = target.cell_center(ix, iy);
            if let Some((sx, sy)) = src.cell_of(x, y) {
                if let Some(h) = src.get(sx, sy) {
                    let i = out.index(ix, iy);
                    out.height[i] = h;
                    out.mask[i] = true;
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeReport {
    /// m³ removed.
    pub cut: f64,
    /// m³ added.
    pub fill: f64,
    /// fill - cut.
    pub net: f64,
    pub compared_cells: usize,
    /// Cells valid in exactly one epoch.
    pub excluded_cells: usize,
}

impl VolumeReport {
    pub fn to_key_values(&self) -> String {
        format!(
            "cut={:.6}\nfill={:.6}\nnet={:.6}\ncompared_cells={}\nexcluded_cells={}\n",
            self.cut, self.fill, self.net, self.compared_cells, self.excluded_cells
        )
    }
}

/// Cut and fill over cells valid in both epochs, which must share one grid.
pub fn volume_change(before: &Dem, after: &Dem) -> Result<VolumeReport, CloudError> {
    if !before.same_grid(after) {
        return Err(CloudError::GridMismatch);
    }
    let area = before.cell * before.cell;
    let (mut cut, mut fill) = (0.0, 0.0);
    let (mut compared, mut excluded) = (0, 0);
    for i in 0..before.height.len() {
        match (before.mask[i], after.mask[i]) {
            (true, true) => {
                compared += 1;
                let d = after.height[i] - before.height[i];
                if d > 0.0 {
                    fill += area * d;
                } else if d < 0.0 {
                    cut += area * -d;
                }
            }
            (false, false) => {}
            _ => excluded += 1,
        }
    }
    Ok(VolumeReport {
        cut,
        fill,
        net: fill - cut,
        compared_cells: compared,
        excluded_cells: excluded,
    })
}

/// [`volume_change`] after resampling `after` onto the grid of `before`.
pub fn volume_change_resampled(before: &Dem, after: &Dem) -> Result<VolumeReport, CloudError> {
    if before.same_grid(after) {
        return volume_change(before, after);
    }
    volume_change(before, &resample_onto(after, before))
}

/// ASCII grid export, northernmost row first; masked cells get `NODATA_value`.
pub fn write_ascii_grid<W: Write>(w: &mut W, dem: &Dem) -> io::Result<()> {
    const NODATA: f64 = -9999.0;
    writeln!(w, "ncols {}", dem.nx)?;
    writeln!(w, "nrows {}", dem.ny)?;
    writeln!(w, "xllcorner {}", dem.origin.0)?;
    writeln!(w, "yllcorner {}", dem.origin.1)?;
    writeln!(w, "cellsize {}", dem.cell)?;
    writeln!(w, "NODATA_value {}", NODATA)?;
    for iy in (0..dem.ny).rev() {
        let row: Vec<String> = (0..dem.nx)
            .map(|ix| format!("{:.4}", dem.get(ix, iy).unwrap_or(NODATA)))
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}
