//! LiDAR extrinsic calibration with a photodetector target board.

pub mod afe;
pub mod beam_center;
pub mod correspondence;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod pipeline;
pub mod pose_solver;
pub mod preprocess;
pub mod scene_sim;

pub use error::{Error, Result};
pub use geometry::{CartesianPoint, Frame, PolarBeam, Pose6DOF, RigidTransform};
