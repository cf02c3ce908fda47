//! On-disk dataset layout:
//!
//! ```text
//! calib.txt         fx fy cx cy width height depth_scale
//! profile.txt       name=value per line
//! timestamps.txt    index seconds
//! rgb/NNNNNN.ppm    binary P6
//! depth/NNNNNN.pgm  binary P5, 16-bit big-endian
//! groundtruth.txt   optional, timestamp tx ty tz qx qy qz qw (world-from-camera)
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::render::FrameRecord;
use super::SimError;
use crate::geom::{CameraIntrinsics, SE3Pose};
use crate::raster::{read_pgm16, read_ppm, write_pgm16, write_ppm};
use crate::trajectory::{format_tum_line, parse_tum_line};

/// Named sensor parameters carried as dataset metadata; not interpreted by the pipeline.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SensorProfile {
    entries: Vec<(String, f64)>,
}

impl SensorProfile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Outdoor configuration of the RGB-D camera used for the field surveys.
    pub fn outdoor_rgbd() -> Self {
        let mut p = Self::new();
        for (name, value) in [
            ("Color_backlight_compensation", 0.0),
            ("Color_enabled_auto_white_balance", 0.0),
            ("R200_lr_auto_exposure_enabled", 1.0),
            ("R200_lr_exposure", 23.0),
            ("R200_lr_gain", 100.0),
            ("R200_emitter_enabled", 1.0),
        ] {
            p.insert(name, value).expect("unique names");
        }
        p
    }

    pub fn insert(&mut self, name: &str, value: f64) -> Result<(), SimError> {
        if name.is_empty() || name.contains('=') || name.contains(char::is_whitespace) {
            return Err(SimError::MalformedDataset(format!("invalid profile name {name:?}")));
        }
        if self.get(name).is_some() {
            return Err(SimError::MalformedDataset(format!("duplicate profile entry {name}")));
        }
        self.entries.push((name.to_string(), value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }
}

fn malformed(msg: impl Into<String>) -> SimError {
    SimError::MalformedDataset(msg.into())
}

fn frame_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

pub fn write_calib(path: &Path, k: &CameraIntrinsics) -> Result<(), SimError> {
    fs::write(
        path,
        format!(
            "{} {} {} {} {} {} {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height, k.depth_scale
        ),
    )?;
    Ok(())
}

pub fn read_calib(path: &Path) -> Result<CameraIntrinsics, SimError> {
    let text = fs::read_to_string(path)
        .map_err(|_| malformed(format!("missing or unreadable {}", path.display())))?;
    let vals: Vec<&str> = text.split_whitespace().collect();
    if vals.len() != 7 {
        return Err(malformed("calib.txt must hold 7 values"));
    }
    let f = |i: usize| {
        vals[i]
            .parse::<f64>()
            .map_err(|_| malformed(format!("calib.txt value {} is not a number", i + 1)))
    };
    let u = |i: usize| {
        vals[i]
            .parse::<u32>()
            .map_err(|_| malformed(format!("calib.txt value {} is not an integer", i + 1)))
    };
    CameraIntrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, u(4)?, u(5)?, f(6)?)
        .map_err(|e| malformed(e.to_string()))
}

fn write_profile(path: &Path, profile: &SensorProfile) -> Result<(), SimError> {
    let mut out = String::new();
    for (name, value) in profile.entries() {
        out.push_str(&format!("{name}={value}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_profile(path: &Path) -> Result<SensorProfile, SimError> {
    let mut profile = SensorProfile::new();
    if !path.exists() {
        return Ok(profile);
    }
    for (n, line) in fs::read_to_string(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, value) = line
            .split_once('=')
            .ok_or_else(|| malformed(format!("profile.txt line {}: expected name=value", n + 1)))?;
        let value = value
            .trim()
            .parse::<f64>()
            .map_err(|_| malformed(format!("profile.txt line {}: bad value", n + 1)))?;
        profile.insert(name.trim(), value)?;
    }
    Ok(profile)
}

/// Streaming writer; frames are appended in timestamp order.
pub struct DatasetWriter {
    dir: PathBuf,
    k: CameraIntrinsics,
    timestamps: BufWriter<File>,
    groundtruth: Vec<String>,
    all_have_gt: bool,
    count: usize,
    last_timestamp: f64,
}

impl DatasetWriter {
    pub fn create(dir: &Path, k: &CameraIntrinsics, profile: &SensorProfile) -> Result<Self, SimError> {
        fs::create_dir_all(dir.join("rgb"))?;
        fs::create_dir_all(dir.join("depth"))?;
        write_calib(&dir.join("calib.txt"), k)?;
        write_profile(&dir.join("profile.txt"), profile)?;
        let timestamps = BufWriter::new(File::create(dir.join("timestamps.txt"))?);
        Ok(Self {
            dir: dir.to_path_buf(),
            k: *k,
            timestamps,
            groundtruth: Vec::new(),
            all_have_gt: true,
            count: 0,
            last_timestamp: f64::NEG_INFINITY,
        })
    }

    pub fn append(&mut self, frame: &FrameRecord) -> Result<(), SimError> {
        if frame.rgb.width != self.k.width
            || frame.rgb.height != self.k.height
            || frame.depth.width != self.k.width
            || frame.depth.height != self.k.height
        {
            return Err(malformed("frame size does not match calibration"));
        }
        if !(frame.timestamp > self.last_timestamp) {
            return Err(malformed("timestamps must increase"));
        }
        let i = self.count;
        let mut rgb = BufWriter::new(File::create(self.dir.join("rgb").join(frame_name(i, "ppm")))?);
        write_ppm(&mut rgb, &frame.rgb)?;
        rgb.flush()?;
        let mut depth = BufWriter::new(File::create(self.dir.join("depth").join(frame_name(i, "pgm")))?);
        write_pgm16(&mut depth, &frame.depth)?;
        depth.flush()?;
        writeln!(self.timestamps, "{} {:.9}", i, frame.timestamp)?;
        match &frame.gt_pose {
            Some(p) => self.groundtruth.push(format_tum_line(frame.timestamp, p)),
            None => self.all_have_gt = false,
        }
        self.last_timestamp = frame.timestamp;
        self.count += 1;
        Ok(())
    }

    /// Flushes the index files; ground truth is written only if every frame carried it.
    pub fn finish(mut self) -> Result<usize, SimError> {
        self.timestamps.flush()?;
        let gt_path = self.dir.join("groundtruth.txt");
        if self.all_have_gt && self.count > 0 {
            let mut text = self.groundtruth.join("\n");
            text.push('\n');
            fs::write(gt_path, text)?;
        } else if gt_path.exists() {
            fs::remove_file(gt_path)?;
        }
        Ok(self.count)
    }
}

pub fn write_dataset(
    frames: &[FrameRecord],
    k: &CameraIntrinsics,
    profile: &SensorProfile,
    dir: &Path,
) -> Result<(), SimError> {
    let mut w = DatasetWriter::create(dir, k, profile)?;
    for f in frames {
        w.append(f)?;
    }
    w.finish()?;
    Ok(())
}

/// Lazily loads frames of a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetReader {
    dir: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub profile: SensorProfile,
    pub timestamps: Vec<f64>,
    pub groundtruth: Option<Vec<SE3Pose<f64>>>,
}

impl DatasetReader {
    pub fn open(dir: &Path) -> Result<Self, SimError> {
        if !dir.is_dir() {
            return Err(malformed(format!("{} is not a directory", dir.display())));
        }
        let intrinsics = read_calib(&dir.join("calib.txt"))?;
        let profile = read_profile(&dir.join("profile.txt"))?;
        let ts_file = File::open(dir.join("timestamps.txt"))
            .map_err(|_| malformed("missing timestamps.txt"))?;
        let mut timestamps = Vec::new();
        for (n, line) in BufReader::new(ts_file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let idx = it.next().and_then(|s| s.parse::<usize>().ok());
            let t = it.next().and_then(|s| s.parse::<f64>().ok());
            match (idx, t) {
                (Some(i), Some(t)) if i == timestamps.len() => timestamps.push(t),
                _ => return Err(malformed(format!("timestamps.txt line {} is malformed", n + 1))),
            }
        }
        let count_files = |sub: &str, ext: &str| -> Result<usize, SimError> {
            let d = dir.join(sub);
            if !d.is_dir() {
                return Ok(0);
            }
            let mut n = 0;
            for e in fs::read_dir(d)? {
                let p = e?.path();
                if p.extension().and_then(|s| s.to_str()) == Some(ext) {
                    n += 1;
                }
            }
            Ok(n)
        };
        let n_rgb = count_files("rgb", "ppm")?;
        let n_depth = count_files("depth", "pgm")?;
        if n_rgb != timestamps.len() || n_depth != timestamps.len() {
            return Err(malformed(format!(
                "frame count mismatch: {} timestamps, {} rgb, {} depth",
                timestamps.len(),
                n_rgb,
                n_depth
            )));
        }
        let gt_path = dir.join("groundtruth.txt");
        let groundtruth = if gt_path.exists() {
            let mut poses = Vec::new();
            for line in fs::read_to_string(&gt_path)?.lines() {
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let (_, p) = parse_tum_line(line).ok_or_else(|| malformed("bad groundtruth.txt line"))?;
                poses.push(p);
            }
            if poses.len() != timestamps.len() {
                return Err(malformed("groundtruth.txt does not cover every frame"));
            }
            Some(poses)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            intrinsics,
            profile,
            timestamps,
            groundtruth,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn frame(&self, i: usize) -> Result<FrameRecord, SimError> {
        if i >= self.len() {
            return Err(malformed(format!("frame {i} out of range")));
        }
        let mut rgb_r = BufReader::new(File::open(self.dir.join("rgb").join(frame_name(i, "ppm")))?);
        let rgb = read_ppm(&mut rgb_r)?;
        let mut d_r = BufReader::new(File::open(self.dir.join("depth").join(frame_name(i, "pgm")))?);
        let depth = read_pgm16(&mut d_r)?;
        if rgb.width != self.intrinsics.width
            || rgb.height != self.intrinsics.height
            || depth.width != rgb.width
            || depth.height != rgb.height
        {
            return Err(malformed(format!("frame {i} size does not match calibration")));
        }
        Ok(FrameRecord {
            timestamp: self.timestamps[i],
            rgb,
            depth,
            gt_pose: self.groundtruth.as_ref().map(|g| g[i]),
        })
    }

    pub fn ground_truth_trajectory(&self) -> Option<Vec<(f64, SE3Pose<f64>)>> {
        self.groundtruth
            .as_ref()
            .map(|g| self.timestamps.iter().cloned().zip(g.iter().cloned()).collect())
    }
}

/// Loads every frame. Prefer [`DatasetReader`] for long sequences.
pub fn read_dataset(dir: &Path) -> Result<(Vec<FrameRecord>, CameraIntrinsics, SensorProfile), SimError> {
    let reader = DatasetReader::open(dir)?;
    let frames = (0..reader.len()).map(|i| reader.frame(i)).collect::<Result<Vec<_>, _>>()?;
    Ok((frames, reader.intrinsics, reader.profile))
}
