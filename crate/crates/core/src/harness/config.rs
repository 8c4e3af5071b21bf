//! Scene and sweep configuration files (TOML).
//!
//! Every section and field is optional; missing values take the defaults of
//! the bundled example scene. A scene file looks like:
//!
//! ```toml
//! seed = 7
//!
//! [board]
//! width = 1.0
//! height = 0.54
//! layout = "horizontal"    # horizontal | vertical | mixed
//!
//! [base_pose]
//! yaw_deg = 0.0
//! x = -0.7
//! y = -2.5
//!
//! [lidar]
//! range_noise_sigma = 0.010
//!
//! [pipeline.preprocess]
//! range_correction = "ray"  # none | normal | ray
//! ```
//!
//! Explicit `[[board.pds]]` entries replace the generated layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose6DOF;
use crate::harness::sweep::SweepSpec;
use crate::pipeline::PipelineConfig;
use crate::scene_sim::{BoardModel, LidarModel, PdElectronics, PdLayout, PdPlacement, Scene, Wall};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoardConfig {
    pub width: f64,
    pub height: f64,
    pub surround_reflectivity: u8,
    pub pd_reflectivity: u8,
    pub layout: PdLayout,
    pub pds: Vec<PdPlacement>,
}

impl Default for BoardConfig {
    fn default() -> Self {
        Self {
            width: 1.0,
            height: 0.54,
            surround_reflectivity: 8,
            pd_reflectivity: 60,
            layout: PdLayout::Horizontal,
            pds: Vec::new(),
        }
    }
}

/// Pose with angles in degrees, as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    pub yaw_deg: f64,
    pub tilt_deg: f64,
    pub roll_deg: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            yaw_deg: 0.0,
            tilt_deg: 0.0,
            roll_deg: 0.0,
            x: -0.7,
            y: -2.5,
            z: 0.0,
        }
    }
}

impl PoseConfig {
    pub fn pose(&self) -> Pose6DOF {
        Pose6DOF::new(
            self.yaw_deg.to_radians(),
            self.tilt_deg.to_radians(),
            self.roll_deg.to_radians(),
            self.x,
            self.y,
            self.z,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    /// Switch every noise source off.
    pub noiseless: bool,
    pub board: BoardConfig,
    /// Ground-truth LiDAR pose in the board frame.
    pub base_pose: PoseConfig,
    pub lidar: LidarModel,
    pub electronics: PdElectronics,
    pub background: Option<Wall>,
    pub pipeline: PipelineConfig,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        parse(text, "scene config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse(&read(path)?, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Build the simulated scene, optionally forcing a PD layout.
    ///
    /// A forced layout regenerates the PDs even when the file lists them.
    pub fn scene(&self, layout: Option<PdLayout>) -> Result<Scene> {
        let b = &self.board;
        let pose = self.base_pose.pose();
        let mut board = match (layout, b.pds.is_empty()) {
            (None, false) => BoardModel {
                pds: b.pds.clone(),
                ..BoardModel::bare(b.width, b.height)
            },
            (l, _) => BoardModel::with_layout(b.width, b.height, l.unwrap_or(b.layout), &self.lidar, &pose)?,
        };
        board.surround_reflectivity = b.surround_reflectivity;
        board.pd_reflectivity = b.pd_reflectivity;
        let scene = Scene {
            board,
            lidar: self.lidar.clone(),
            electronics: self.electronics.clone(),
            background: self.background.clone(),
        };
        let scene = if self.noiseless { scene.noiseless() } else { scene };
        scene.validate()?;
        Ok(scene)
    }
}

/// The sweeps to run, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sweeps: Vec<SweepSpec>,
}

impl Default for SweepConfig {
    /// The yaw and lateral-displacement sweeps of the reference experiment.
    fn default() -> Self {
        Self {
            sweeps: vec![SweepSpec::yaw(), SweepSpec::x_position()],
        }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = parse(text, "sweep config")?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = parse(&read(path)?, &path.display().to_string())?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps.is_empty() {
            return Err(Error::Config("sweep config lists no sweeps".into()));
        }
        self.sweeps.iter().try_for_each(SweepSpec::validate)
    }

    /// Same sweeps with every seed replaced.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sweeps.iter_mut().for_each(|s| s.seed = seed);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::sweep::SweepParameter;
    use crate::preprocess::RangeCorrection;
    use crate::scene_sim::PdOrientation;

    #[test]
    fn empty_file_is_the_default_scene() {
        let c = SceneConfig::from_toml("").unwrap();
        assert_eq!(c, SceneConfig::default());
        let scene = c.scene(None).unwrap();
        assert_eq!(scene.board.pds.len(), 4);
        assert!(scene.board.pds.iter().all(|p| p.orientation == PdOrientation::Horizontal));
        assert_eq!(c.base_pose.pose(), Pose6DOF::new(0.0, 0.0, 0.0, -0.7, -2.5, 0.0));
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = SceneConfig::from_toml(
            "seed = 3\n[lidar]\nrange_noise_sigma = 0.02\n[pipeline.preprocess]\nrange_correction = \"normal\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.lidar.range_noise_sigma, 0.02);
        assert_eq!(c.lidar.azimuth_step_deg, LidarModel::default().azimuth_step_deg);
        assert_eq!(c.pipeline.preprocess.range_correction, RangeCorrection::Normal);
    }

    #[test]
    fn layout_override_wins() {
        let c = SceneConfig::from_toml("[board]\nlayout = \"horizontal\"\n").unwrap();
        let s = c.scene(Some(PdLayout::Vertical)).unwrap();
        assert!(s.board.pds.iter().all(|p| p.orientation == PdOrientation::Vertical));
    }

    #[test]
    fn round_trip() {
        let mut c = SceneConfig::default();
        c.seed = 11;
        c.board.layout = PdLayout::Mixed;
        let back = SceneConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = SceneConfig::from_toml("[board]\nwidht = 1.0\n").unwrap_err().to_string();
        assert!(e.contains("widht"), "{e}");
    }

    #[test]
    fn sweep_file() {
        let c = SweepConfig::from_toml(
            "[[sweeps]]\nparameter = \"yaw\"\nstart = -1.0\nstop = 1.0\nstep = 0.5\nscans_per_point = 5\n",
        )
        .unwrap();
        assert_eq!(c.sweeps[0].parameter, SweepParameter::Yaw);
        assert_eq!(c.sweeps[0].points().len(), 5);
        assert!(SweepConfig::from_toml("sweeps = []\n").is_err());
        assert!(SweepConfig::from_toml("[[sweeps]]\nparameter = \"yaw\"\nstart = 0.0\nstop = 1.0\nstep = 0.3\n").is_err());
        assert!(SweepConfig::default().with_seed(9).sweeps.iter().all(|s| s.seed == 9));
    }
}
