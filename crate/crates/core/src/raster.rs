//! Row-major image rasters and their binary PNM encodings.

use std::io::{self, BufRead, Write};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster<P> {
    pub width: u32,
    pub height: u32,
    pub data: Vec<P>,
}

pub type GrayImage = Raster<u8>;
pub type RgbImage = Raster<[u8; 3]>;
/// Depth in units of the camera's `depth_scale`; 0 marks an invalid pixel.
pub type DepthImage = Raster<u16>;

impl<P: Copy + Default> Raster<P> {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, P::default())
    }

    pub fn filled(width: u32, height: u32, value: P) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> P) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> P {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: P) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }
}

impl RgbImage {
    /// Luma by integer channel average.
    pub fn to_gray(&self) -> GrayImage {
        Raster {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| ((p[0] as u16 + p[1] as u16 + p[2] as u16 + 1) / 3) as u8)
                .collect(),
        }
    }
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn read_token<R: BufRead>(r: &mut R) -> io::Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut line = Vec::new();
            r.read_until(b'\n', &mut line)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c as char);
    }
    if tok.is_empty() {
        Err(invalid("unexpected end of PNM header"))
    } else {
        Ok(tok)
    }
}

fn read_header<R: BufRead>(r: &mut R, magic: &str) -> io::Result<(u32, u32, u32)> {
    let m = read_token(r)?;
    if m != magic {
        return Err(invalid(&format!("expected {magic}, found {m}")));
    }
    let parse = |s: String| s.parse::<u32>().map_err(|_| invalid("bad PNM header number"));
    let w = parse(read_token(r)?)?;
    let h = parse(read_token(r)?)?;
    let maxval = parse(read_token(r)?)?;
    Ok((w, h, maxval))
}

/// Binary P6 with maxval 255.
pub fn write_ppm<W: Write>(w: &mut W, img: &RgbImage) -> io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let mut buf = Vec::with_capacity(img.data.len() * 3);
    for p in &img.data {
        buf.extend_from_slice(p);
    }
    w.write_all(&buf)
}

pub fn read_ppm<R: BufRead>(r: &mut R) -> io::Result<RgbImage> {
    let (width, height, maxval) = read_header(r, "P6")?;
    if maxval != 255 {
        return Err(invalid("only 8-bit PPM is supported"));
    }
    let mut buf = vec![0u8; width as usize * height as usize * 3];
    r.read_exact(&mut buf)?;
    Ok(Raster {
        width,
        height,
        data: buf.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

/// Binary P5 with maxval 65535; samples are big-endian.
pub fn write_pgm16<W: Write>(w: &mut W, img: &DepthImage) -> io::Result<()> {
    write!(w, "P5\n{} {}\n65535\n", img.width, img.height)?;
    let mut buf = Vec::with_capacity(img.data.len() * 2);
    for v in &img.data {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&buf)
}

pub fn read_pgm16<R: BufRead>(r: &mut R) -> io::Result<DepthImage> {
    let (width, height, maxval) = read_header(r, "P5")?;
    if maxval < 256 {
        return Err(invalid("expected a 16-bit PGM"));
    }
    let mut buf = vec![0u8; width as usize * height as usize * 2];
    r.read_exact(&mut buf)?;
    Ok(Raster {
        width,
        height,
        data: buf
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
    })
}
