//! Reference-point sweeps and their accuracy/precision statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose6DOF};
use crate::pipeline::{calibrate_batch, PipelineConfig};
use crate::scene_sim::{simulate_scan, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Yaw offset, degrees.
    Yaw,
    /// Offset along board `x`, millimeters.
    XPosition,
}

impl SweepParameter {
    pub fn label(&self) -> &'static str {
        match self {
            SweepParameter::Yaw => "yaw",
            SweepParameter::XPosition => "x_position",
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            SweepParameter::Yaw => "deg",
            SweepParameter::XPosition => "mm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    #[serde(default = "default_scans")]
    pub scans_per_point: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_scans() -> usize {
    50
}

impl SweepSpec {
    pub fn yaw() -> Self {
        Self {
            parameter: SweepParameter::Yaw,
            start: -3.0,
            stop: 3.0,
            step: 0.5,
            scans_per_point: 50,
            seed: 0,
        }
    }

    pub fn x_position() -> Self {
        Self {
            parameter: SweepParameter::XPosition,
            start: -30.0,
            stop: 30.0,
            step: 5.0,
            scans_per_point: 50,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.start.is_finite() || !self.stop.is_finite() || self.stop < self.start {
            return Err(Error::Config("sweep needs step > 0 and start <= stop".into()));
        }
        let n = (self.stop - self.start) / self.step;
        if (n - n.round()).abs() > 1e-9 {
            return Err(Error::Config("sweep range is not a whole number of steps".into()));
        }
        if self.scans_per_point == 0 {
            return Err(Error::Config("scans_per_point must be at least 1".into()));
        }
        Ok(())
    }

    /// Reference values, start to stop inclusive.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step).round() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }

    /// Ground-truth pose at reference `value`, offset from `base`.
    pub fn pose_at(&self, base: &Pose6DOF, value: f64) -> Pose6DOF {
        match self.parameter {
            SweepParameter::Yaw => Pose6DOF::new(base.yaw + value.to_radians(), base.tilt, base.roll, base.x, base.y, base.z),
            SweepParameter::XPosition => Pose6DOF::new(base.yaw, base.tilt, base.roll, base.x + value * 1e-3, base.y, base.z),
        }
    }
}

/// Axis order used in every statistics array: tilt, roll, yaw (degrees), then x, y, z (millimeters).
pub const AXES: [&str; 6] = ["tilt", "roll", "yaw", "x", "y", "z"];

/// Estimate minus truth in reporting units.
pub fn pose_error(estimate: &Pose6DOF, truth: &Pose6DOF) -> [f64; 6] {
    [
        wrap_angle(estimate.tilt - truth.tilt).to_degrees(),
        wrap_angle(estimate.roll - truth.roll).to_degrees(),
        wrap_angle(estimate.yaw - truth.yaw).to_degrees(),
        (estimate.x - truth.x) * 1e3,
        (estimate.y - truth.y) * 1e3,
        (estimate.z - truth.z) * 1e3,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub point: usize,
    pub reference: f64,
    pub scan_id: u64,
    pub correspondences: usize,
    pub estimate: Option<Pose6DOF>,
    pub error: Option<[f64; 6]>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub reference: f64,
    pub solved: usize,
    pub failed: usize,
    pub mean_error: [f64; 6],
    pub std_error: [f64; 6],
    /// Set when the whole point failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub parameter: SweepParameter,
    pub points: Vec<PointStats>,
    /// Mean over points of `|mean error|`, per axis.
    pub accuracy: [f64; 6],
    /// Mean over points of the per-point standard deviation, per axis.
    pub precision: [f64; 6],
}

impl SweepStats {
    pub fn from_points(parameter: SweepParameter, points: Vec<PointStats>) -> Result<Self> {
        let (accuracy, precision) = pooled(points.iter())?;
        Ok(Self {
            parameter,
            points,
            accuracy,
            precision,
        })
    }

    /// Largest per-point `|bias|` on one axis.
    pub fn max_abs_bias(&self, axis: usize) -> f64 {
        self.points
            .iter()
            .filter(|p| p.solved > 0)
            .map(|p| p.mean_error[axis].abs())
            .fold(0.0, f64::max)
    }
}

/// Accuracy and precision pooled over points that produced estimates.
pub fn pooled<'a>(points: impl Iterator<Item = &'a PointStats>) -> Result<([f64; 6], [f64; 6])> {
    let mut acc = [0.0; 6];
    let mut prec = [0.0; 6];
    let mut n = 0usize;
    for p in points.filter(|p| p.solved > 0) {
        for k in 0..6 {
            acc[k] += p.mean_error[k].abs();
            prec[k] += p.std_error[k];
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Analysis("no reference point produced an estimate".into()));
    }
    for k in 0..6 {
        acc[k] /= n as f64;
        prec[k] /= n as f64;
    }
    Ok((acc, prec))
}

fn point_stats(reference: f64, records: &[ScanRecord], failure: Option<String>) -> PointStats {
    let errs: Vec<[f64; 6]> = records.iter().filter_map(|r| r.error).collect();
    let n = errs.len();
    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    if n > 0 {
        for k in 0..6 {
            mean[k] = errs.iter().map(|e| e[k]).sum::<f64>() / n as f64;
            if n > 1 {
                std[k] = (errs.iter().map(|e| (e[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            }
        }
    }
    PointStats {
        reference,
        solved: n,
        failed: records.len() - n,
        mean_error: mean,
        std_error: std,
        failure,
    }
}

/// Seed for one reference point, decorrelated from its neighbours.
pub fn point_seed(seed: u64, point: usize) -> u64 {
    let mut z = seed ^ (point as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub records: Vec<ScanRecord>,
    pub stats: SweepStats,
}

fn run_point(spec: &SweepSpec, scene: &Scene, base: &Pose6DOF, cfg: &PipelineConfig, point: usize, reference: f64) -> (Vec<ScanRecord>, Option<String>) {
    let truth = spec.pose_at(base, reference);
    let seed = point_seed(spec.seed, point);
    let frames: std::result::Result<Vec<_>, _> = (0..spec.scans_per_point as u64).map(|k| simulate_scan(scene, &truth, k, seed)).collect();
    let failed = |why: String| {
        let recs = (0..spec.scans_per_point as u64)
            .map(|k| ScanRecord {
                point,
                reference,
                scan_id: k,
                correspondences: 0,
                estimate: None,
                error: None,
                failure: Some(why.clone()),
            })
            .collect();
        (recs, Some(why))
    };
    let frames = match frames {
        Ok(f) => f,
        Err(e) => return failed(e.at_stage("simulation").to_string()),
    };
    let batch = match calibrate_batch(&frames, &scene.board, &scene.lidar, cfg) {
        Ok(b) => b,
        Err(e) => return failed(e.to_string()),
    };
    let recs = batch
        .scans
        .iter()
        .map(|s| {
            let (estimate, failure) = match &s.result {
                Ok(r) => (Some(r.beta), None),
                Err(e) => (None, Some(e.clone())),
            };
            ScanRecord {
                point,
                reference,
                scan_id: s.scan_id,
                correspondences: s.correspondences,
                estimate,
                error: estimate.map(|e| pose_error(&e, &truth)),
                failure,
            }
        })
        .collect();
    (recs, None)
}

/// Run every reference point of `spec` (in parallel) and collect statistics.
///
/// A point whose pipeline fails is kept with a failure marker; the sweep
/// only errors when no point produced an estimate.
pub fn run_sweep(spec: &SweepSpec, scene: &Scene, base: &Pose6DOF, cfg: &PipelineConfig) -> Result<SweepResult> {
    spec.validate()?;
    scene.validate()?;
    let refs = spec.points();
    let per_point: Vec<(Vec<ScanRecord>, Option<String>)> = refs
        .par_iter()
        .enumerate()
        .map(|(i, &r)| run_point(spec, scene, base, cfg, i, r))
        .collect();
    let mut records = Vec::new();
    let mut points = Vec::new();
    for ((recs, failure), &r) in per_point.into_iter().zip(&refs) {
        points.push(point_stats(r, &recs, failure));
        records.extend(recs);
    }
    let stats = SweepStats::from_points(spec.parameter, points)?;
    Ok(SweepResult {
        spec: spec.clone(),
        records,
        stats,
    })
}
