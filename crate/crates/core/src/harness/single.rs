//! One calibration run over a batch of frames, simulated or loaded.

use std::fmt::Write as _;

use crate::error::Result;
use crate::geometry::Pose6DOF;
use crate::harness::sweep::{pose_error, AXES};
use crate::pipeline::{calibrate_batch, BatchResult, PipelineConfig};
use crate::scene_sim::{simulate_scan, Scene, ScanFrame};

/// `scans` frames of `scene` seen from `pose`, scan ids `0..scans`.
pub fn simulate_frames(scene: &Scene, pose: &Pose6DOF, scans: usize, seed: u64) -> Result<Vec<ScanFrame>> {
    (0..scans as u64).map(|k| simulate_scan(scene, pose, k, seed)).collect()
}

/// Run the full pipeline over `frames`. Ground truth, when the frames carry
/// it, is only used for reporting.
pub fn run_single(frames: &[ScanFrame], scene: &Scene, cfg: &PipelineConfig) -> Result<BatchResult> {
    calibrate_batch(frames, &scene.board, &scene.lidar, cfg)
}

fn rms_mm(r: &[nalgebra::Vector3<f64>]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    (r.iter().map(|v| v.norm_squared()).sum::<f64>() / r.len() as f64).sqrt() * 1e3
}

/// Plain-text summary: one line per scan, then the mean pose and, when the
/// frames carry ground truth, the mean error per axis.
pub fn single_report(frames: &[ScanFrame], batch: &BatchResult) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{} scans, {} observations, {} correspondences",
        frames.len(),
        batch.observations.len(),
        batch.correspondences.len()
    )
    .unwrap();
    let mut pds: Vec<_> = batch.models.iter().collect();
    pds.sort_by_key(|(id, _)| **id);
    for (id, m) in pds {
        writeln!(
            s,
            "PD {id}: mu {:.4} mm at alpha {:.4} deg, slope {:.4} mm/deg, {}/{} inliers, rms {:.4} mm",
            m.predict(m.alpha_ref),
            m.alpha_ref,
            m.tau,
            m.inlier_count(),
            m.inlier_mask.len(),
            m.fit_rms
        )
        .unwrap();
    }
    writeln!(s, "scan  n  yaw_deg  tilt_deg  roll_deg  x_m  y_m  z_m  rms_mm  iterations  converged").unwrap();
    let mut sum = [0.0; 6];
    let mut err_sum = [0.0; 6];
    let (mut solved, mut with_truth) = (0usize, 0usize);
    for scan in &batch.scans {
        match &scan.result {
            Ok(r) => {
                let b = r.beta;
                writeln!(
                    s,
                    "{}  {}  {:.6}  {:.6}  {:.6}  {:.6}  {:.6}  {:.6}  {:.4}  {}  {}",
                    scan.scan_id,
                    scan.correspondences,
                    b.yaw.to_degrees(),
                    b.tilt.to_degrees(),
                    b.roll.to_degrees(),
                    b.x,
                    b.y,
                    b.z,
                    rms_mm(&r.residuals),
                    r.iterations,
                    r.converged
                )
                .unwrap();
                for (k, v) in [b.yaw.to_degrees(), b.tilt.to_degrees(), b.roll.to_degrees(), b.x, b.y, b.z].iter().enumerate() {
                    sum[k] += v;
                }
                solved += 1;
                let truth = frames.iter().find(|f| f.scan_id == scan.scan_id).and_then(|f| f.ground_truth);
                if let Some(t) = truth {
                    pose_error(&b, &t).iter().enumerate().for_each(|(k, e)| err_sum[k] += e);
                    with_truth += 1;
                }
            }
            Err(e) => writeln!(s, "{}  {}  failed: {e}", scan.scan_id, scan.correspondences).unwrap(),
        }
    }
    if solved > 0 {
        let m = sum.map(|v| v / solved as f64);
        writeln!(
            s,
            "mean pose over {solved} scans: yaw {:.6} deg, tilt {:.6} deg, roll {:.6} deg, x {:.6} m, y {:.6} m, z {:.6} m",
            m[0], m[1], m[2], m[3], m[4], m[5]
        )
        .unwrap();
    }
    if with_truth > 0 {
        s.push_str("mean error vs ground truth:");
        for (k, a) in AXES.iter().enumerate() {
            let unit = if k < 3 { "deg" } else { "mm" };
            write!(s, " {a} {:.4} {unit}", err_sum[k] / with_truth as f64).unwrap();
        }
        s.push('\n');
    }
    s
}
