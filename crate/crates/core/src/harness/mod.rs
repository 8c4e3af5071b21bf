//! Sweeps, file formats and reports around the calibration pipeline.

pub mod config;
pub mod frame_io;
pub mod report;
pub mod single;
pub mod sweep;
