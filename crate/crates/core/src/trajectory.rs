//! TUM-style trajectory text: `timestamp tx ty tz qx qy qz qw` per line.

use std::io::{self, BufRead, Write};

use nalgebra::Vector3;

use crate::geom::SE3Pose;

pub type Trajectory = Vec<(f64, SE3Pose<f64>)>;

pub fn format_tum_line(t: f64, pose: &SE3Pose<f64>) -> String {
    let q = pose.quaternion();
    let p = pose.translation;
    format!(
        "{:.9} {:.9} {:.9} {:.9} {:.12} {:.12} {:.12} {:.12}",
        t, p.x, p.y, p.z, q[0], q[1], q[2], q[3]
    )
}

pub fn write_tum<W: Write>(w: &mut W, traj: &[(f64, SE3Pose<f64>)]) -> io::Result<()> {
    for (t, pose) in traj {
        writeln!(w, "{}", format_tum_line(*t, pose))?;
    }
    Ok(())
}

pub fn parse_tum_line(line: &str) -> Option<(f64, SE3Pose<f64>)> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .ok()?;
    if vals.len() != 8 {
        return None;
    }
    let pose = SE3Pose::from_quaternion(
        Vector3::new(vals[1], vals[2], vals[3]),
        [vals[4], vals[5], vals[6], vals[7]],
    );
    Some((vals[0], pose))
}

/// Reads a trajectory, skipping blank lines and `#` comments.
pub fn read_tum<R: BufRead>(r: R) -> io::Result<Trajectory> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let entry = parse_tum_line(trimmed).ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line {}: expected 8 numbers", n + 1),
            )
        })?;
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn roundtrip_within_print_precision() {
        let traj = vec![
            (0.0, SE3Pose::identity()),
            (
                0.066666667,
                SE3Pose::from_axis_angle(Vector3::new(0.1, -0.2, 1.0), Vector3::new(1.0, 2.0, 4.0)),
            ),
        ];
        let mut buf = Vec::new();
        write_tum(&mut buf, &traj).unwrap();
        let back = read_tum(Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in traj.iter().zip(&back) {
            assert!((a.0 - b.0).abs() < 1e-9);
            assert!(a.1.max_abs_diff(&b.1) < 1e-9);
        }
    }

    #[test]
    fn rejects_short_lines() {
        assert!(read_tum(Cursor::new("# header\n1 2 3\n")).is_err());
    }
}
