//! RGB-D visual SLAM for simulated UAV surveys of construction sites.

pub mod cloudops;
pub mod frontend;
pub mod geom;
pub mod loopmem;
pub mod pipeline;
pub mod posegraph;
pub mod raster;
pub mod scalar;
pub mod session;
pub mod simworld;
pub mod trajectory;

pub use scalar::Real;

pub type Pose = geom::SE3Pose<f64>;
pub type Twist = geom::Twist<f64>;
pub type PoseGraph = posegraph::PoseGraph<f64>;
pub type GraphEdge = posegraph::GraphEdge<f64>;
pub type Pose32 = geom::SE3Pose<f32>;
pub type PoseGraph32 = posegraph::PoseGraph<f32>;
