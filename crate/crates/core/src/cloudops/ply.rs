use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{CloudError, CloudPoint, PointCloud};

/// Binary little-endian PLY with float32 x, y, z and uchar red, green, blue.
pub fn write_ply<W: Write>(w: &mut W, cloud: &PointCloud) -> Result<(), CloudError> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )?;
    let mut buf = Vec::with_capacity(cloud.len() * 15);
    for p in &cloud.points {
        for c in [p.position.x, p.position.y, p.position.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        buf.extend_from_slice(&p.rgb);
    }
    w.write_all(&buf)?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Prop {
    F32,
    F64,
    U8,
}

impl Prop {
    fn size(self) -> usize {
        match self {
            Prop::F32 => 4,
            Prop::F64 => 8,
            Prop::U8 => 1,
        }
    }
}

/// Reads binary little-endian vertex clouds. Needs x, y, z (float or double);
/// red, green, blue (uchar) are optional and other uchar/float/double vertex
/// properties are skipped. Source keyframes read back as 0.
pub fn read_ply<R: BufRead>(r: &mut R) -> Result<PointCloud, CloudError> {
    let bad = |m: &str| CloudError::Ply(m.to_string());
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String, CloudError> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(CloudError::Ply("unexpected end of header".into()));
        }
        Ok(line.trim().to_string())
    };
    if next_line(r)? != "ply" {
        return Err(bad("missing magic"));
    }
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, Prop)> = Vec::new();
    let mut format_ok = false;
    loop {
        let l = next_line(r)?;
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", ..] => return Err(bad("only binary_little_endian is supported")),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| bad("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", _, n] => {
                if n.parse::<usize>().map_err(|_| bad("bad element count"))? != 0 && count.is_some() {
                    return Err(bad("elements after vertex are not supported"));
                }
                in_vertex = false;
            }
            ["property", ty, name] if in_vertex => {
                let p = match *ty {
                    "float" | "float32" => Prop::F32,
                    "double" | "float64" => Prop::F64,
                    "uchar" | "uint8" => Prop::U8,
                    _ => return Err(bad("unsupported property type")),
                };
                props.push((name.to_string(), p));
            }
            ["property", ..] => {}
            _ => return Err(bad("unrecognized header line")),
        }
    }
    if !format_ok {
        return Err(bad("missing format line"));
    }
    let n = count.ok_or_else(|| bad("no vertex element"))?;
    let find = |name: &str| props.iter().position(|(p, _)| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex lacks x, y, z")),
    };
    let color = [find("red"), find("green"), find("blue")];
    let mut offsets = Vec::with_capacity(props.len());
    let mut stride = 0;
    for (_, p) in &props {
        offsets.push(stride);
        stride += p.size();
    }
    let total = n.checked_mul(stride).ok_or_else(|| bad("vertex count overflows"))?;
    let mut data = Vec::new();
    r.take(total as u64).read_to_end(&mut data)?;
    if data.len() != total {
        return Err(bad("truncated vertex data"));
    }
    let read_f = |rec: &[u8], i: usize| -> f64 {
        let o = offsets[i];
        match props[i].1 {
            Prop::F32 => f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64,
            Prop::F64 => f64::from_le_bytes(rec[o..o + 8].try_into().unwrap()),
            Prop::U8 => rec[o] as f64,
        }
    };
    let mut cloud = PointCloud::new();
    cloud.points.reserve(n);
    for rec in data.chunks_exact(stride.max(1)).take(n) {
        let position = Vector3::new(read_f(rec, ix), read_f(rec, iy), read_f(rec, iz));
        if !(position.x.is_finite() && position.y.is_finite() && position.z.is_finite()) {
            return Err(bad("non-finite coordinate"));
        }
        let mut rgb = [255u8; 3];
        for (c, slot) in color.iter().enumerate() {
            if let Some(i) = slot {
                rgb[c] = read_f(rec, *i) as u8;
            }
        }
        cloud.points.push(CloudPoint {
            position,
            rgb,
            source_keyframe: 0,
        });
    }
    Ok(cloud)
}

pub fn write_ply_file(path: &Path, cloud: &PointCloud) -> Result<(), CloudError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(&mut w, cloud)?;
    w.flush()?;
    Ok(())
}

pub fn read_ply_file(path: &Path) -> Result<PointCloud, CloudError> {
    read_ply(&mut BufReader::new(File::open(path)?))
}
