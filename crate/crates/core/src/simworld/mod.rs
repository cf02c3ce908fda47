//! Synthetic construction site and UAV flight simulator.

pub mod dataset;
pub mod flight;
pub mod noise;
pub mod presets;
pub mod render;
pub mod scene;

use std::io;

use thiserror::Error;

pub use dataset::{read_dataset, write_dataset, DatasetReader, DatasetWriter, SensorProfile};
pub use flight::{nadir_rotation, plan_trajectory, FlightPlan};
pub use presets::{flight_preset, scene_preset, trench_markers, FLIGHT_PRESETS, SCENE_PRESETS};
pub use render::{render_frame, FrameRecord, NoiseModel};
pub use scene::{Extent, ObjectKind, SceneObject, SceneSpec, Terrain, TerrainNoise};

use crate::geom::{CameraIntrinsics, SE3Pose};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("flight plan needs at least two waypoints")]
    EmptyPlan,
    #[error("invalid flight plan: {0}")]
    InvalidPlan(&'static str),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(&'static str),
    #[error("camera is below the terrain")]
    CameraUnderground,
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-frame noise seed derived from a run seed.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Renders every pose of a trajectory and hands each frame to `sink` in order.
pub fn simulate<F>(
    terrain: &Terrain,
    k: &CameraIntrinsics,
    trajectory: &[(f64, SE3Pose<f64>)],
    noise: &NoiseModel,
    seed: u64,
    mut sink: F,
) -> Result<(), SimError>
where
    F: FnMut(FrameRecord) -> Result<(), SimError>,
{
    for (i, (t, pose)) in trajectory.iter().enumerate() {
        sink(render_frame(terrain, k, pose, noise, frame_seed(seed, i), *t)?)?;
    }
    Ok(())
}

/// Renders a whole flight plan into memory with timestamps starting at `t0`.
pub fn render_flight(
    terrain: &Terrain,
    k: &CameraIntrinsics,
    plan: &FlightPlan,
    noise: &NoiseModel,
    seed: u64,
    t0: f64,
) -> Result<Vec<FrameRecord>, SimError> {
    let trajectory: Vec<(f64, SE3Pose<f64>)> = plan_trajectory(plan, plan.duration())?
        .into_iter()
        .map(|(t, p)| (t0 + t, p))
        .collect();
    let mut frames = Vec::with_capacity(trajectory.len());
    simulate(terrain, k, &trajectory, noise, seed, |f| {
        frames.push(f);
        Ok(())
    })?;
    Ok(frames)
}
