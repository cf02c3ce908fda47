//! Named scenes and flights used by the command line and the test fixtures.

use nalgebra::Vector3;

use super::flight::FlightPlan;
use super::scene::{Extent, ObjectKind, SceneObject, SceneSpec, TerrainNoise};
use super::SimError;

pub const SCENE_PRESETS: &[&str] = &["flat", "trench", "box", "site"];
pub const FLIGHT_PRESETS: &[&str] = &["loop", "strip", "cross"];

/// Half side of the square loop, meters.
pub const LOOP_HALF_SIDE: f64 = 3.0;

const TEXTURE_SEED: u64 = 7;

fn extent() -> Extent {
    Extent::new([-8.0, -8.0], [8.0, 8.0])
}

/// U-shaped foundation trench with eight corners, 0.5 m deep, counter-clockwise.
pub fn trench_footprint() -> Vec<[f64; 2]> {
    vec![
        [-2.0, -1.5],
        [2.0, -1.5],
        [2.0, 1.5],
        [1.0, 1.5],
        [1.0, -0.5],
        [-1.0, -0.5],
        [-1.0, 1.5],
        [-2.0, 1.5],
    ]
}

/// Box dropped onto the site between two epochs: 2 x 2 m footprint, 0.5 m high.
pub fn fill_box() -> SceneObject {
    SceneObject::axis_box("fill", [-1.0, -1.0], [1.0, 1.0], 0.5)
}

pub fn scene_preset(name: &str) -> Result<SceneSpec, SimError> {
    let flat = SceneSpec::new(extent(), TerrainNoise::flat(), TEXTURE_SEED);
    let spec = match name {
        "flat" => flat,
        "trench" => flat.with_object(SceneObject {
            kind: ObjectKind::TrenchPolygon,
            footprint: trench_footprint(),
            height_delta: -0.5,
            label: "foundation".into(),
        }),
        "box" => flat.with_object(fill_box()),
        "site" => SceneSpec::new(
            extent(),
            TerrainNoise {
                amplitude: 0.15,
                wavelength: 6.0,
                octaves: 2,
                seed: 3,
            },
            TEXTURE_SEED,
        )
        .with_object(SceneObject {
            kind: ObjectKind::TrenchPolygon,
            footprint: trench_footprint(),
            height_delta: -0.5,
            label: "foundation".into(),
        })
        .with_object(SceneObject::axis_box("stockpile", [3.5, -3.5], [5.0, -2.0], 0.6)),
        other => return Err(SimError::InvalidScene(format!("unknown scene preset {other:?}"))),
    };
    Ok(spec)
}

/// Reference markers on the ground just outside each trench corner, offset
/// along the corner miter so that the local surface is flat.
pub fn trench_markers(offset: f64) -> Vec<(String, Vector3<f64>)> {
    let poly = trench_footprint();
    let n = poly.len();
    let normal = |a: [f64; 2], b: [f64; 2]| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        [dy / len, -dx / len]
    };
    (0..n)
        .map(|i| {
            let prev = poly[(i + n - 1) % n];
            let cur = poly[i];
            let next = poly[(i + 1) % n];
            let n1 = normal(prev, cur);
            let n2 = normal(cur, next);
            let m = [n1[0] + n2[0], n1[1] + n2[1]];
            // Miter length keeps `offset` clearance from both edges.
            let dot = m[0] * n1[0] + m[1] * n1[1];
            let s = offset / dot;
            (
                format!("M{i}"),
                Vector3::new(cur[0] + m[0] * s, cur[1] + m[1] * s, 0.0),
            )
        })
        .collect()
}

/// Flight presets at the given altitude.
///
/// `loop` flies a 6 m square around the scene center and repeats the first
/// side so the revisit is seen with the original heading (30 m, 900 frames at
/// the default speed and rate).
pub fn flight_preset(name: &str, altitude: f64) -> Result<FlightPlan, SimError> {
    let h = LOOP_HALF_SIDE;
    let p = |x: f64, y: f64| Vector3::new(x, y, altitude);
    let waypoints = match name {
        "loop" => vec![p(-h, -h), p(h, -h), p(h, h), p(-h, h), p(-h, -h), p(h, -h)],
        "strip" => vec![p(-4.0, -1.0), p(4.0, -1.0)],
        "cross" => vec![p(-1.0, -4.0), p(-1.0, 4.0)],
        other => {
            return Err(SimError::InvalidPlan(match other {
                "" => "empty flight preset name",
                _ => "unknown flight preset",
            }))
        }
    };
    let plan = FlightPlan::new(waypoints);
    plan.validate()?;
    Ok(plan)
}
