use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use siteslam::cloudops::{
    accuracy_report, ate_rmse, c2c_distance, percentile, progress_classify, rasterize_common, read_ply_file,
    volume_change, write_ascii_grid, write_ply_file, PointCloud, ProgressParams, ReferenceMarker,
};
use siteslam::frontend::{FrameFeatures, KeyframeNode};
use siteslam::geom::{CameraIntrinsics, SE3Pose};
use siteslam::pipeline::{self, measure_markers, RunMode, SlamConfig};
use siteslam::session::{
    load_map_file, merge_sessions, save_map_file, start_server, track_client, MergeParams, ServerParams, TrackParams,
};
use siteslam::simworld::{
    flight_preset, frame_seed, plan_trajectory, render_frame, scene_preset, trench_markers, DatasetReader,
    DatasetWriter, FlightPlan, NoiseModel, SensorProfile, Terrain,
};
use siteslam::trajectory::{read_tum, write_tum, Trajectory};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "siteslam", version, about = "RGB-D SLAM and analytics for simulated construction-site surveys")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic survey dataset.
    Simulate(SimulateArgs),
    /// Map a dataset (or localize it in an existing map).
    Slam(SlamArgs),
    /// Cloud-to-cloud distances.
    C2c(C2cArgs),
    /// Cut and fill between two epochs.
    Volume(VolumeArgs),
    /// Boundary-segment accuracy of marker positions measured in a SLAM run.
    Accuracy(AccuracyArgs),
    /// Classify design elements as complete, partial or missing against a scan.
    Progress(ProgressArgs),
    /// Absolute trajectory error against ground truth.
    Eval(EvalArgs),
    /// Merge a second session into a base map.
    Merge(MergeArgs),
    /// Serve a map over TCP.
    Serve(ServeArgs),
    /// Track a dataset against a map server.
    Track(TrackArgs),
}

fn parse_resolution(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: u32 = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: u32 = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w < 16 || h < 16 {
        return Err("resolution must be at least 16x16".into());
    }
    Ok((w, h))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene preset: flat, trench, box or site.
    #[arg(long, default_value = "trench")]
    scene: String,
    /// Flight preset (loop, strip, cross) or waypoints as `x,y;x,y;...`.
    #[arg(long, default_value = "loop", allow_hyphen_values = true)]
    flight: String,
    #[arg(long, default_value_t = 4.0)]
    altitude: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "320x240", value_parser = parse_resolution)]
    resolution: (u32, u32),
    /// Relative depth noise; 0 renders exact depth and intensity.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Added to every timestamp, seconds.
    #[arg(long, default_value_t = 0.0)]
    time_offset: f64,
    /// Also write the cloud assembled with the true poses.
    #[arg(long)]
    reference_cloud: Option<PathBuf>,
    /// Frames between views used for the reference cloud.
    #[arg(long, default_value_t = 5)]
    reference_every: usize,
    #[arg(long, default_value_t = 0.02)]
    voxel: f64,
}

#[derive(Debug, Args)]
pub struct SlamArgs {
    #[arg(long, required_unless_present = "dump_config")]
    dataset: Option<PathBuf>,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the RANSAC seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Base map for `mode=localization`.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Debug, Args)]
pub struct C2cArgs {
    /// Cloud measured against.
    #[arg(long)]
    reference: PathBuf,
    /// Cloud whose points get a distance.
    #[arg(long)]
    compared: PathBuf,
    /// Compared cloud colored by distance.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VolumeArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    /// DEM cell size, meters.
    #[arg(long, default_value_t = 0.05)]
    cell: f64,
    /// Directory for the two DEMs as ASCII grids.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AccuracyArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory of a `slam` run.
    #[arg(long)]
    run: PathBuf,
    /// Marker clearance outside the trench corners, meters.
    #[arg(long, default_value_t = 0.3)]
    offset: f64,
    /// Views per marker.
    #[arg(long, default_value_t = 5)]
    views: usize,
    /// Half size of the depth window around a marker pixel.
    #[arg(long, default_value_t = 2)]
    radius: i64,
}

#[derive(Debug, Args)]
pub struct ProgressArgs {
    #[arg(long)]
    scan: PathBuf,
    /// `label=path.ply`, repeatable.
    #[arg(long = "element", required = true)]
    elements: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    /// Element points colored by state.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    trajectory: PathBuf,
    /// Ground-truth trajectory file.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    groundtruth: Option<PathBuf>,
    /// Take the ground truth from a dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    max_dt: f64,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    base: PathBuf,
    /// Map of the session to add, in its own coordinates.
    #[arg(long)]
    session: PathBuf,
    #[arg(long, default_value = "session")]
    label: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: SocketAddr,
    /// Pending extensions that trigger a re-optimization.
    #[arg(long, default_value_t = 10)]
    batch: usize,
    /// Seconds after which pending extensions are merged anyway.
    #[arg(long, default_value_t = 5.0)]
    interval: f64,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    connect: SocketAddr,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "agent")]
    label: String,
    /// Trajectory output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Send localized keyframes to the server.
    #[arg(long)]
    extend: bool,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Slam(a) => slam(a),
        Command::C2c(a) => c2c(a),
        Command::Volume(a) => volume(a),
        Command::Accuracy(a) => accuracy(a),
        Command::Progress(a) => progress(a),
        Command::Eval(a) => eval(a),
        Command::Merge(a) => merge(a),
        Command::Serve(a) => serve(a),
        Command::Track(a) => track(a),
    }
}

fn print_block(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn flight_plan(spec: &str, altitude: f64) -> Result<FlightPlan, CliError> {
    if !spec.contains(',') {
        return flight_preset(spec, altitude).map_err(|e| CliError::Usage(format!("--flight {spec}: {e}")));
    }
    let mut waypoints = Vec::new();
    for p in spec.split(';').filter(|p| !p.trim().is_empty()) {
        let xy: Vec<f64> = p
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Usage(format!("--flight: bad waypoint {p:?}")))?;
        if xy.len() != 2 {
            return Err(CliError::Usage(format!("--flight: waypoint {p:?} needs x,y")));
        }
        waypoints.push(Vector3::new(xy[0], xy[1], altitude));
    }
    let plan = FlightPlan::new(waypoints);
    plan.validate().map_err(|e| CliError::Usage(format!("--flight: {e}")))?;
    Ok(plan)
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let spec = scene_preset(&a.scene).map_err(|e| CliError::Usage(format!("--scene {}: {e}", a.scene)))?;
    let plan = flight_plan(&a.flight, a.altitude)?;
    if !(a.noise >= 0.0) {
        return Err(CliError::Usage("--noise must be non-negative".into()));
    }
    let noise = if a.noise == 0.0 {
        NoiseModel::noiseless()
    } else {
        NoiseModel {
            depth_sigma_rel: a.noise,
            ..NoiseModel::default()
        }
    };
    let terrain = Terrain::new(&spec)?;
    let k = CameraIntrinsics::vga().scaled(a.resolution.0, a.resolution.1);
    let trajectory = plan_trajectory(&plan, plan.duration())?;
    let mut writer = DatasetWriter::create(&a.out, &k, &SensorProfile::outdoor_rgbd())?;
    let mut views = Vec::new();
    let every = a.reference_every.max(1);
    for (i, (t, pose)) in trajectory.iter().enumerate() {
        let frame = render_frame(&terrain, &k, pose, &noise, frame_seed(a.seed, i), a.time_offset + t)?;
        writer.append(&frame)?;
        if a.reference_cloud.is_some() && i % every == 0 {
            let mut kf = KeyframeNode::new(i as u64, 0, *pose, FrameFeatures::default(), frame.timestamp);
            kf.rgb = Some(frame.rgb);
            kf.depth = Some(frame.depth);
            views.push(kf);
        }
    }
    let frames = writer.finish()?;
    let mut kv = format!(
        "frames={frames}\npath_length={:.3}\nduration={:.3}\ndataset={}\n",
        plan.path_length(),
        plan.duration(),
        a.out.display()
    );
    if let Some(path) = &a.reference_cloud {
        let poses: HashMap<u64, SE3Pose<f64>> = views.iter().map(|v| (v.id, v.pose_est)).collect();
        let cloud = siteslam::cloudops::assemble_cloud(&views, &poses, &k, 1, a.voxel)?;
        write_ply_file(path, &cloud)?;
        kv.push_str(&format!("reference_points={}\nreference_cloud={}\n", cloud.len(), path.display()));
    }
    print_block(&kv)
}

fn slam(a: SlamArgs) -> Result<(), CliError> {
    let mut config = match &a.config {
        Some(p) => SlamConfig::load(p)?,
        None => SlamConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.tracker.ransac.seed = seed;
    }
    if a.dump_config {
        return print_block(&config.to_string());
    }
    let (dataset, out) = (a.dataset.expect("required"), a.out.expect("required"));
    let base = match (config.mode, &a.map) {
        (RunMode::LocalizationOnly, Some(p)) => Some(load_map_file(p)?),
        (RunMode::LocalizationOnly, None) => {
            return Err(CliError::Usage("mode=localization needs --map".into()));
        }
        (RunMode::Mapping, Some(_)) => {
            return Err(CliError::Usage("--map is only used with mode=localization".into()));
        }
        (RunMode::Mapping, None) => None,
    };
    let start = Instant::now();
    let result = pipeline::run(&dataset, &out, &config, base)?;
    let mut kv = result.stats.to_key_values();
    kv.push_str(&format!("wall_s={:.3}\n", start.elapsed().as_secs_f64()));
    if let Some(gt) = &result.ground_truth {
        if let Ok(pre) = ate_rmse(&result.odometry_trajectory, gt, 1e-6) {
            kv.push_str(&format!("ate_odometry={pre:.6}\n"));
        }
        if let Ok(post) = ate_rmse(&result.trajectory, gt, 1e-6) {
            kv.push_str(&format!("ate={post:.6}\n"));
        }
    }
    kv.push_str(&format!("cloud_points={}\nout={}\n", result.cloud.len(), out.display()));
    print_block(&kv)
}

fn c2c(a: C2cArgs) -> Result<(), CliError> {
    let reference = read_ply_file(&a.reference)?;
    let compared = read_ply_file(&a.compared)?;
    let r = c2c_distance(&compared, &reference)?;
    if let Some(path) = &a.out {
        let mut colored = compared.clone();
        for (p, c) in colored.points.iter_mut().zip(&r.color_map) {
            p.rgb = *c;
        }
        write_ply_file(path, &colored)?;
    }
    print_block(&format!(
        "points={}\nmean={:.6}\nrms={:.6}\nmax={:.6}\np95={:.6}\n",
        r.distances.len(),
        r.mean,
        r.rms,
        r.max,
        percentile(&r.distances, 95.0)
    ))
}

fn volume(a: VolumeArgs) -> Result<(), CliError> {
    if !(a.cell > 0.0) {
        return Err(CliError::Usage("--cell must be positive".into()));
    }
    let before = read_ply_file(&a.before)?;
    let after = read_ply_file(&a.after)?;
    let (db, da) = rasterize_common(&before, &after, a.cell)?;
    let report = volume_change(&db, &da)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        for (name, dem) in [("before.asc", &db), ("after.asc", &da)] {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            write_ascii_grid(&mut w, dem)?;
            w.flush()?;
        }
    }
    print_block(&report.to_key_values())
}

fn find_frame(timestamps: &[f64], t: f64) -> Option<usize> {
    let i = timestamps.partition_point(|x| *x < t - 1e-6);
    timestamps.get(i).filter(|x| (**x - t).abs() <= 1e-6).map(|_| i)
}

fn accuracy(a: AccuracyArgs) -> Result<(), CliError> {
    let reader = DatasetReader::open(&a.dataset)?;
    let gt_world = reader
        .ground_truth_trajectory()
        .ok_or_else(|| CliError::Data("dataset has no ground truth".into()))?;
    let estimated = read_tum(BufReader::new(File::open(a.run.join("trajectory.txt"))?))?;
    let point_count = read_ply_file(&a.run.join("cloud.ply")).map(|c| c.len()).unwrap_or(0);
    let k = reader.intrinsics;
    // The map frame is the first camera.
    let world_to_map = gt_world
        .first()
        .map(|(_, p)| p.inverse())
        .ok_or_else(|| CliError::Data("dataset has no frames".into()))?;
    let gt: Trajectory = gt_world.iter().map(|(t, p)| (*t, world_to_map * *p)).collect();
    let mut views = Vec::new();
    for (i, (t, pose)) in estimated.iter().enumerate() {
        let Some(idx) = find_frame(&reader.timestamps, *t) else {
            return Err(CliError::Data(format!("trajectory time {t} is not a dataset frame")));
        };
        let frame = reader.frame(idx)?;
        let mut kf = KeyframeNode::new(i as u64, 0, *pose, FrameFeatures::default(), *t);
        kf.depth = Some(frame.depth);
        views.push(kf);
    }
    let markers: Vec<(String, Vector3<f64>)> = trench_markers(a.offset)
        .into_iter()
        .map(|(l, p)| (l, world_to_map.transform_point(&p)))
        .collect();
    let seen = measure_markers(&views, &gt, &k, &markers, a.views, a.radius);
    let mut measured = Vec::new();
    for m in &seen {
        let p = m
            .position
            .ok_or_else(|| CliError::Data(format!("marker {} is not visible in any keyframe", m.label)))?;
        measured.push(ReferenceMarker::new(m.label.clone(), p));
    }
    let truth: Vec<ReferenceMarker> = markers.iter().map(|(l, p)| ReferenceMarker::new(l.clone(), *p)).collect();
    let report = accuracy_report(&measured, &truth, true, point_count)?;
    let mut kv = String::new();
    for s in &report.segments {
        kv.push_str(&format!(
            "segment.{}-{}.measured={:.6}\nsegment.{}-{}.truth={:.6}\n",
            s.from, s.to, s.measured, s.from, s.to, s.truth
        ));
    }
    kv.push_str(&format!("mean_abs_error={:.6}\npoint_count={}\n", report.mean_abs_error, report.point_count));
    print_block(&kv)
}

fn progress(a: ProgressArgs) -> Result<(), CliError> {
    let scan = read_ply_file(&a.scan)?;
    let mut elements = Vec::new();
    for e in &a.elements {
        let (label, path) = e
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--element expects label=path, got {e:?}")))?;
        elements.push((label.to_string(), read_ply_file(Path::new(path))?));
    }
    let params = ProgressParams {
        tau: a.tau,
        ..ProgressParams::default()
    };
    let report = progress_classify(&elements, &scan, &params);
    if let Some(path) = &a.out {
        let mut colored = PointCloud::new();
        for ((_, cloud), e) in elements.iter().zip(&report.elements) {
            let mut c = cloud.clone();
            c.points.iter_mut().for_each(|p| p.rgb = e.state.color());
            colored.extend(&c);
        }
        write_ply_file(path, &colored)?;
    }
    print_block(&report.to_key_values())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let estimated = read_tum(BufReader::new(File::open(&a.trajectory)?))?;
    let gt = match (&a.groundtruth, &a.dataset) {
        (Some(p), _) => read_tum(BufReader::new(File::open(p)?))?,
        (None, Some(d)) => DatasetReader::open(d)?
            .ground_truth_trajectory()
            .ok_or_else(|| CliError::Data("dataset has no ground truth".into()))?,
        (None, None) => return Err(CliError::Usage("need --groundtruth or --dataset".into())),
    };
    let pairs = siteslam::cloudops::associate(&estimated, &gt, a.max_dt).len();
    let ate = ate_rmse(&estimated, &gt, a.max_dt)?;
    print_block(&format!("pairs={pairs}\nate_rmse={ate:.6}\n"))
}

fn merge(a: MergeArgs) -> Result<(), CliError> {
    let base = load_map_file(&a.base)?;
    let session = load_map_file(&a.session)?;
    // The session's own optimized poses are its local coordinates.
    let keyframes: Vec<KeyframeNode> = session
        .keyframes
        .iter()
        .map(|kf| KeyframeNode {
            pose_est: session.pose_of(kf),
            ..kf.clone()
        })
        .collect();
    let (merged, report) = merge_sessions(&base, &keyframes, &a.label, &MergeParams::default())?;
    save_map_file(&a.out, &merged)?;
    print_block(&format!(
        "session={}\nadded_keyframes={}\nlocalized={}\ninter_session_edges={}\nnodes={}\nedges={}\n",
        report.session,
        report.added_keyframes,
        report.localized,
        report.inter_session_edges,
        merged.graph.nodes.len(),
        merged.graph.edges.len()
    ))
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let map = a.map.as_deref().map(load_map_file).transpose()?;
    if !(a.interval > 0.0) || a.batch == 0 {
        return Err(CliError::Usage("--batch and --interval must be positive".into()));
    }
    let params = ServerParams {
        extend_batch: a.batch,
        extend_interval: Duration::from_secs_f64(a.interval),
        ..ServerParams::default()
    };
    let handle = start_server(map, a.listen, params)?;
    print_block(&format!("listening={}\n", handle.local_addr()))?;
    handle.wait();
    Ok(())
}

fn track(a: TrackArgs) -> Result<(), CliError> {
    let reader = DatasetReader::open(&a.dataset)?;
    let frames = (0..reader.len()).map(|i| reader.frame(i));
    let params = TrackParams {
        extend: a.extend,
        ..TrackParams::default()
    };
    let session = track_client(a.connect, frames, &reader.intrinsics, &a.label, &params)?;
    if let Some(path) = &a.out {
        let mut w = BufWriter::new(File::create(path)?);
        write_tum(&mut w, &session.trajectory)?;
        w.flush()?;
    }
    let mut kv = format!(
        "frames={}\nlocalized={}\nlocalize_attempts={}\nlocalize_successes={}\nextended={}\n",
        session.trajectory.len(),
        session.localized,
        session.localize_attempts,
        session.localize_successes,
        session.extended
    );
    if let Some(gt) = reader.ground_truth_trajectory() {
        if let Ok(ate) = ate_rmse(&session.trajectory, &gt, 1e-6) {
            kv.push_str(&format!("ate={ate:.6}\n"));
        }
    }
    print_block(&kv)
}
