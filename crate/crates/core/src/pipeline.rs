//! End-to-end calibration of a batch of scans.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::correspondence::{
    beam_at_azimuth, build_azimuth_center_model, event_azimuth, find_pd_beam, make_correspondences, measure_pd,
    refine_crossing_azimuth, AzimuthCenterModel, Correspondence, DetectionConfig, PdObservation,
};
use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian, CartesianPoint, PolarBeam};
use crate::pose_solver::{solve_from_guess, SolveReport, SolverConfig};
use crate::preprocess::{coarse_board_axes, correct_ranges, fit_plane, segment_target, PlaneModel, PlaneScope, PreprocessConfig};
use crate::scene_sim::{BoardModel, LidarModel, PdOrientation, ScanFrame};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub detection: DetectionConfig,
    pub solver: SolverConfig,
}

/// What one scan contributes before the cross-scan models are built.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanObservations {
    pub scan_id: u64,
    pub plane: PlaneModel,
    pub roi_len: usize,
    pub observations: Vec<PdObservation>,
    /// PDs that produced no observation, with the reason.
    pub misses: Vec<(usize, String)>,
}

fn roi_points(frame: &ScanFrame, roi: &[usize]) -> Result<Vec<CartesianPoint>> {
    roi.iter().map(|&i| polar_to_cartesian(&frame.beams[i])).collect()
}

/// Segment, fit and clean the board, then detect every PD in one scan.
///
/// `shared_plane` replaces the per-scan plane fit when given.
pub fn observe_scan(frame: &ScanFrame, board: &BoardModel, lidar: &LidarModel, cfg: &PipelineConfig, shared_plane: Option<&PlaneModel>) -> Result<ScanObservations> {
    let roi = segment_target(frame, board.width, board.height, &cfg.preprocess).map_err(|e| e.at_stage("segmentation"))?;
    let plane = match shared_plane {
        Some(p) => *p,
        None => fit_plane(&roi_points(frame, &roi)?).map_err(|e| e.at_stage("plane fit"))?,
    };

    let roi_beams: Vec<PolarBeam> = roi.iter().map(|&i| frame.beams[i]).collect();
    let cleaned = correct_ranges(&roi_beams, &plane, cfg.preprocess.range_correction).map_err(|e| e.at_stage("projection"))?;
    let axes = coarse_board_axes(&cleaned, &plane).map_err(|e| e.at_stage("plane fit"))?;
    let local: Vec<usize> = (0..cleaned.len()).collect();

    let mut observations = Vec::new();
    let mut misses = Vec::new();
    for pd in &board.pds {
        let Some(record) = frame.pd_records.iter().find(|r| r.pd_id == pd.id) else {
            misses.push((pd.id, "no signal record".to_string()));
            continue;
        };
        let hit = find_pd_beam(&cleaned, &local, &axes, &plane, pd, &cfg.detection)
            .and_then(|b| measure_pd(record, pd, cfg.detection.fit_iterations).map(|m| (b, m)));
        let (b, m) = match hit {
            Ok(v) => v,
            Err(e) => {
                misses.push((pd.id, e.to_string()));
                continue;
            }
        };
        let (beam, mu_alpha) = match pd.orientation {
            PdOrientation::Horizontal => (cleaned[b], cleaned[b].alpha),
            PdOrientation::Vertical => {
                let alpha = refine_crossing_azimuth(&cleaned[b], &m.events, &cleaned, &plane, lidar, pd);
                let key = event_azimuth(&cleaned[b], &m.events[m.key_event], &cleaned, lidar).unwrap_or(cleaned[b].alpha);
                (beam_at_azimuth(&cleaned[b], alpha, &plane), key)
            }
        };
        observations.push(PdObservation {
            pd_id: pd.id,
            scan_id: frame.scan_id,
            beam,
            mu: m.mu,
            mu_alpha,
        });
    }
    Ok(ScanObservations {
        scan_id: frame.scan_id,
        plane,
        roi_len: roi.len(),
        observations,
        misses,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanEstimate {
    pub scan_id: u64,
    pub correspondences: usize,
    pub result: std::result::Result<SolveReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub models: HashMap<usize, AzimuthCenterModel>,
    pub observations: Vec<PdObservation>,
    pub correspondences: Vec<Correspondence>,
    pub scans: Vec<ScanEstimate>,
}

impl BatchResult {
    pub fn solved(&self) -> impl Iterator<Item = (u64, &SolveReport)> {
        self.scans.iter().filter_map(|s| s.result.as_ref().ok().map(|r| (s.scan_id, r)))
    }
}

/// Calibrate every scan of a batch taken from one static pose.
///
/// Azimuth/center models are built per PD across the batch; each scan then
/// gets its own pose from its correspondences.
pub fn calibrate_batch(frames: &[ScanFrame], board: &BoardModel, lidar: &LidarModel, cfg: &PipelineConfig) -> Result<BatchResult> {
    if frames.is_empty() {
        return Err(Error::Input("no frames".into()));
    }
    let shared = match cfg.preprocess.plane_scope {
        PlaneScope::Scan => None,
        PlaneScope::Batch => {
            let mut pts = Vec::new();
            for f in frames {
                match segment_target(f, board.width, board.height, &cfg.preprocess) {
                    Ok(roi) => pts.extend(roi_points(f, &roi)?),
                    Err(e) => warn!("scan {}: {e}", f.scan_id),
                }
            }
            Some(fit_plane(&pts).map_err(|e| e.at_stage("plane fit"))?)
        }
    };
    let mut observations = Vec::new();
    for f in frames {
        match observe_scan(f, board, lidar, cfg, shared.as_ref()) {
            Ok(o) => {
                for (pd, why) in &o.misses {
                    warn!("scan {} PD {pd}: {why}", f.scan_id);
                }
                observations.extend(o.observations);
            }
            Err(e) => warn!("scan {}: {e}", f.scan_id),
        }
    }

    let mut models = HashMap::new();
    let mut model_errors = Vec::new();
    for pd in &board.pds {
        let pairs: Vec<(f64, f64)> = observations.iter().filter(|o| o.pd_id == pd.id).map(|o| o.pair()).collect();
        let seed = cfg.detection.ransac_seed ^ (pd.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        match build_azimuth_center_model(&pairs, cfg.detection.ransac_threshold_mm, cfg.detection.ransac_iterations, seed) {
            Ok(m) => {
                models.insert(pd.id, m);
            }
            Err(e) => {
                warn!("PD {}: {e}", pd.id);
                model_errors.push(format!("PD {}: {e}", pd.id));
            }
        }
    }
    let correspondences = make_correspondences(&observations, &models, &board.pds);
    if correspondences.is_empty() {
        let why = if observations.is_empty() {
            "no PD was detected in any scan".to_string()
        } else {
            model_errors.join("; ")
        };
        return Err(Error::Model(why).at_stage("correspondence"));
    }

    let scans = frames
        .iter()
        .map(|f| {
            let cs: Vec<Correspondence> = correspondences.iter().filter(|c| c.scan_id == f.scan_id).cloned().collect();
            let result = solve_from_guess(&cs, &cfg.solver).map_err(|e| e.at_stage("pose solve").to_string());
            ScanEstimate {
                scan_id: f.scan_id,
                correspondences: cs.len(),
                result,
            }
        })
        .collect();
    Ok(BatchResult {
        models,
        observations,
        correspondences,
        scans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose6DOF;
    use crate::scene_sim::{simulate_scan, PdElectronics, PdLayout, Scene};

    fn setup(layout: PdLayout, noiseless: bool) -> (Scene, Pose6DOF) {
        let lidar = LidarModel::default();
        let pose = Pose6DOF::new(0.0, 0.0, 0.0, -0.7, -2.5, 0.0);
        let board = BoardModel::with_layout(1.0, 0.54, layout, &lidar, &pose).unwrap();
        let scene = Scene {
            board,
            lidar,
            electronics: PdElectronics::default(),
            background: None,
        };
        (if noiseless { scene.noiseless() } else { scene }, pose)
    }

    #[test]
    fn noiseless_batch_recovers_pose() {
        for layout in [PdLayout::Horizontal, PdLayout::Vertical] {
            let (scene, _) = setup(layout, true);
            let truth = Pose6DOF::new(1f64.to_radians(), 0.0, 0.0, -0.69, -2.5, 0.0);
            let frames: Vec<_> = (0..10).map(|k| simulate_scan(&scene, &truth, k, 3).unwrap()).collect();
            let out = calibrate_batch(&frames, &scene.board, &scene.lidar, &PipelineConfig::default()).unwrap();
            assert_eq!(out.correspondences.len(), 40);
            for (_, r) in out.solved() {
                let e = r.beta.params();
                let t = truth.params();
                assert!((e[0] - t[0]).abs().to_degrees() < 0.05, "{layout:?} yaw {}", (e[0] - t[0]).to_degrees());
                assert!((e[3] - t[3]).abs() < 2e-3, "{layout:?} x {}", e[3] - t[3]);
            }
        }
    }

    #[test]
    fn frames_without_pd_hits_fail_at_correspondence() {
        let (mut scene, pose) = setup(PdLayout::Horizontal, true);
        let frames: Vec<_> = (0..6).map(|k| simulate_scan(&scene, &pose, k, 3).unwrap()).collect();
        let stripped: Vec<_> = frames
            .into_iter()
            .map(|mut f| {
                f.beams.iter_mut().for_each(|b| b.reflectivity = scene.board.surround_reflectivity);
                f
            })
            .collect();
        scene.board.pds.truncate(4);
        match calibrate_batch(&stripped, &scene.board, &scene.lidar, &PipelineConfig::default()) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "correspondence"),
            other => panic!("{other:?}"),
        }
    }
}
