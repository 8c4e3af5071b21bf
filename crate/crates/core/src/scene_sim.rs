//! Synthetic PD-target test bench.
//!
//! A spinning multi-channel LiDAR is ray-cast against a planar board carrying
//! 1-D photodetector arrays (and optionally a background wall). Each return
//! gets range noise, azimuth jitter and a reflectivity that rises with the
//! share of the laser spot landing on a PD. Every PD also records the TIA peak
//! voltages of the pulses that hit it.

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::afe::{currents_to_record, CaptureSettings, PdSignalRecord, PulseCurrents, TiaParams};
use crate::error::{Error, Result};
use crate::geometry::{unit_direction, wrap_positive, CartesianPoint, Frame, PolarBeam, Pose6DOF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdOrientation {
    /// Array axis along board `x`.
    Horizontal,
    /// Array axis along board `z`.
    Vertical,
}

/// One photodetector array mounted on the board.
///
/// The PD frame has its along-array origin at the center of the first element
/// and its lateral origin at the lower/left edge of the active strip, so the
/// strip centerline sits at `active_width / 2`. `origin_x`/`origin_z` give the
/// location of that origin on the board.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdPlacement {
    pub id: usize,
    pub orientation: PdOrientation,
    pub origin_x: f64,
    pub origin_z: f64,
    pub n_elements: usize,
    pub element_pitch: f64,
    pub active_width: f64,
    pub sampled_elements: Vec<usize>,
}

impl PdPlacement {
    /// A 16-element, 1 mm pitch, 1.45 mm wide array sampled at elements 0, 5, 10, 15.
    pub fn standard(id: usize, orientation: PdOrientation, origin_x: f64, origin_z: f64) -> Self {
        Self {
            id,
            orientation,
            origin_x,
            origin_z,
            n_elements: 16,
            element_pitch: 0.001,
            active_width: 0.00145,
            sampled_elements: vec![0, 5, 10, 15],
        }
    }

    /// Place a standard array so its active-area center sits at `(x, z)` on the board.
    pub fn centered_at(id: usize, orientation: PdOrientation, x: f64, z: f64) -> Self {
        let mut pd = Self::standard(id, orientation, 0.0, 0.0);
        let half_along = pd.center_along();
        let half_lat = pd.centerline();
        match orientation {
            PdOrientation::Horizontal => {
                pd.origin_x = x - half_along;
                pd.origin_z = z - half_lat;
            }
            PdOrientation::Vertical => {
                pd.origin_x = x - half_lat;
                pd.origin_z = z - half_along;
            }
        }
        pd
    }

    pub fn active_length(&self) -> f64 {
        self.n_elements as f64 * self.element_pitch
    }

    /// Along-array coordinate of the array center (7.5 mm for the standard part).
    pub fn center_along(&self) -> f64 {
        0.5 * (self.n_elements as f64 - 1.0) * self.element_pitch
    }

    /// Lateral coordinate of the strip centerline.
    pub fn centerline(&self) -> f64 {
        0.5 * self.active_width
    }

    pub fn element_position(&self, k: usize) -> f64 {
        k as f64 * self.element_pitch
    }

    /// Along-array extent of the active area, `[lo, hi]`.
    pub fn along_extent(&self) -> (f64, f64) {
        let half = 0.5 * self.element_pitch;
        (-half, self.element_position(self.n_elements - 1) + half)
    }

    /// `P_offset`: the board center seen from the PD origin, board axes `(x, z)`.
    pub fn p_offset(&self) -> (f64, f64) {
        (-self.origin_x, -self.origin_z)
    }

    /// PD coordinates `(along, lateral)` to board `(x, z)`: `O = D - P_offset`.
    pub fn pd_to_board(&self, along: f64, lateral: f64) -> (f64, f64) {
        let (ox, oz) = self.p_offset();
        match self.orientation {
            PdOrientation::Horizontal => (along - ox, lateral - oz),
            PdOrientation::Vertical => (lateral - ox, along - oz),
        }
    }

    /// Board `(x, z)` to PD coordinates `(along, lateral)`.
    pub fn board_to_pd(&self, x: f64, z: f64) -> (f64, f64) {
        let (dx, dz) = (x - self.origin_x, z - self.origin_z);
        match self.orientation {
            PdOrientation::Horizontal => (dx, dz),
            PdOrientation::Vertical => (dz, dx),
        }
    }

    /// Board coordinates of the active-area center.
    pub fn center_on_board(&self) -> (f64, f64) {
        self.pd_to_board(self.center_along(), self.centerline())
    }

    /// Board-frame bounding box `(x_min, x_max, z_min, z_max)` of the active area.
    pub fn board_bounds(&self) -> (f64, f64, f64, f64) {
        let (a0, a1) = self.along_extent();
        let (x0, z0) = self.pd_to_board(a0, 0.0);
        let (x1, z1) = self.pd_to_board(a1, self.active_width);
        (x0.min(x1), x0.max(x1), z0.min(z1), z0.max(z1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elements == 0 || !(self.element_pitch > 0.0) || !(self.active_width > 0.0) {
            return Err(Error::Config(format!("PD {}: bad array geometry", self.id)));
        }
        if self.sampled_elements.is_empty() {
            return Err(Error::Config(format!("PD {}: no sampled elements", self.id)));
        }
        if self.sampled_elements.windows(2).any(|w| w[0] >= w[1])
            || *self.sampled_elements.last().unwrap() >= self.n_elements
        {
            return Err(Error::Config(format!(
                "PD {}: sampled elements must be sorted, unique and < {}",
                self.id, self.n_elements
            )));
        }
        Ok(())
    }
}

/// Standard PD arrangements, PDs ordered top-left, top-right, bottom-left, bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdLayout {
    Horizontal,
    Vertical,
    /// Vertical at top-left and bottom-right, horizontal at the other corners.
    Mixed,
}

impl PdLayout {
    fn orientation(&self, corner: usize) -> PdOrientation {
        match self {
            PdLayout::Horizontal => PdOrientation::Horizontal,
            PdLayout::Vertical => PdOrientation::Vertical,
            PdLayout::Mixed if corner == 0 || corner == 3 => PdOrientation::Vertical,
            PdLayout::Mixed => PdOrientation::Horizontal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardModel {
    pub width: f64,
    pub height: f64,
    pub surround_reflectivity: u8,
    pub pd_reflectivity: u8,
    pub pds: Vec<PdPlacement>,
}

impl BoardModel {
    pub fn bare(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            surround_reflectivity: 8,
            pd_reflectivity: 60,
            pds: Vec::new(),
        }
    }

    /// Board with four PDs placed near the corners on the first and last
    /// scan rows that cross the board at `base_pose`.
    pub fn with_layout(width: f64, height: f64, layout: PdLayout, lidar: &LidarModel, base_pose: &Pose6DOF) -> Result<Self> {
        let mut board = Self::bare(width, height);
        let inset = 0.08;
        let xs = [-0.5 * width + inset, 0.5 * width - inset];
        let margin = 0.012;
        let mut corner = 0;
        for top in [true, false] {
            for &x in &xs {
                let z = edge_row_height(x, top, width, height, margin, lidar, base_pose).ok_or_else(|| {
                    Error::Simulation(format!("no scan row crosses the board at x = {x:.3}"))
                })?;
                board
                    .pds
                    .push(PdPlacement::centered_at(corner, layout.orientation(corner), x, z));
                corner += 1;
            }
        }
        board.validate()?;
        Ok(board)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Config("board dimensions must be positive".into()));
        }
        if self.pd_reflectivity <= self.surround_reflectivity {
            return Err(Error::Config("PD reflectivity must exceed the surround".into()));
        }
        for pd in &self.pds {
            pd.validate()?;
            let (x0, x1, z0, z1) = pd.board_bounds();
            if x0 < -0.5 * self.width || x1 > 0.5 * self.width || z0 < -0.5 * self.height || z1 > 0.5 * self.height {
                return Err(Error::Config(format!("PD {} extends beyond the board", pd.id)));
            }
        }
        let mut ids: Vec<_> = self.pds.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.pds.len() {
            return Err(Error::Config("duplicate PD ids".into()));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        x.abs() <= 0.5 * self.width && z.abs() <= 0.5 * self.height
    }
}

/// Height on the board where the top (or bottom) scan row crosses `x`,
/// keeping `margin` from the board edge.
fn edge_row_height(x: f64, top: bool, width: f64, height: f64, margin: f64, lidar: &LidarModel, pose: &Pose6DOF) -> Option<f64> {
    let m = pose.to_transform().inverse();
    let elevation = |z: f64| {
        let v = m.apply(&Vector3::new(x, 0.0, z));
        (v.z / v.norm()).asin()
    };
    let lo = -0.5 * height + margin;
    let hi = 0.5 * height - margin;
    if x.abs() > 0.5 * width {
        return None;
    }
    let (e_lo, e_hi) = (elevation(lo), elevation(hi));
    let mut rows: Vec<f64> = lidar
        .vertical_angles()
        .into_iter()
        .filter(|&w| w >= e_lo.min(e_hi) && w <= e_lo.max(e_hi))
        .collect();
    rows.sort_by(f64::total_cmp);
    let omega = if top { *rows.last()? } else { *rows.first()? };
    // Bisect for the height with the requested elevation; elevation grows with z.
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if elevation(mid) < omega {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarModel {
    pub vertical_angles_deg: Vec<f64>,
    pub azimuth_step_deg: f64,
    /// Range noise, meters (1 sigma).
    pub range_noise_sigma: f64,
    /// Azimuth jitter from rotation fluctuation, degrees (1 sigma).
    pub azimuth_jitter_sigma_deg: f64,
    /// Uniform reflectivity noise half-width, counts.
    pub reflectivity_noise: f64,
    /// Spot diameter at `spot_reference_range`, meters.
    pub spot_diameter: f64,
    pub spot_reference_range: f64,
    /// Time between firing groups, seconds.
    pub firing_period: f64,
    /// Time between channels inside a firing group, seconds.
    pub burst_period: f64,
}

impl Default for LidarModel {
    /// A VLP-16-class sensor.
    fn default() -> Self {
        Self {
            vertical_angles_deg: (0..16).map(|i| -15.0 + 2.0 * i as f64).collect(),
            azimuth_step_deg: 0.2,
            range_noise_sigma: 0.010,
            azimuth_jitter_sigma_deg: 0.02,
            reflectivity_noise: 2.0,
            spot_diameter: 0.0196,
            spot_reference_range: 2.5,
            firing_period: 55e-6,
            burst_period: 2.3e-6,
        }
    }
}

impl LidarModel {
    pub fn noiseless(mut self) -> Self {
        self.range_noise_sigma = 0.0;
        self.azimuth_jitter_sigma_deg = 0.0;
        self.reflectivity_noise = 0.0;
        self
    }

    pub fn n_channels(&self) -> usize {
        self.vertical_angles_deg.len()
    }

    pub fn vertical_angles(&self) -> Vec<f64> {
        self.vertical_angles_deg.iter().map(|d| d.to_radians()).collect()
    }

    pub fn azimuth_step(&self) -> f64 {
        self.azimuth_step_deg.to_radians()
    }

    pub fn azimuth_count(&self) -> usize {
        (360.0 / self.azimuth_step_deg).round() as usize
    }

    /// Smallest spacing between adjacent channels, radians.
    pub fn vertical_step(&self) -> f64 {
        let v = self.vertical_angles();
        v.windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Spot standard deviation at `range`, treating the quoted diameter as 4 sigma.
    pub fn spot_sigma(&self, range: f64) -> f64 {
        self.angular_spot_sigma() * range
    }

    pub fn angular_spot_sigma(&self) -> f64 {
        self.spot_diameter / self.spot_reference_range / 4.0
    }

    /// Firing time of a beam relative to the start of the scan.
    pub fn fire_time(&self, channel: usize, azimuth_index: usize) -> f64 {
        azimuth_index as f64 * self.firing_period + channel as f64 * self.burst_period
    }

    /// Azimuth index of a pulse fired at `time` by `channel`.
    pub fn azimuth_index_at(&self, channel: usize, time: f64) -> usize {
        ((time - channel as f64 * self.burst_period) / self.firing_period).round().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertical_angles_deg.is_empty() || self.vertical_angles_deg.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("vertical angles must be strictly increasing".into()));
        }
        if !(self.azimuth_step_deg > 0.0) {
            return Err(Error::Config("azimuth step must be positive".into()));
        }
        let sigmas = [self.range_noise_sigma, self.azimuth_jitter_sigma_deg, self.reflectivity_noise];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !(self.spot_diameter > 0.0 && self.spot_reference_range > 0.0 && self.firing_period > 0.0) {
            return Err(Error::Config("spot and timing parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Flat wall behind the board, parallel to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    /// Distance behind the board surface, meters.
    pub distance: f64,
    pub width: f64,
    pub height: f64,
    pub reflectivity: u8,
}

/// Photocurrent scale and capture settings of the PD electronics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdElectronics {
    pub tia: TiaParams,
    pub capture: CaptureSettings,
    /// Current of the brightest element for a spot centered on it, amperes.
    pub max_element_current: f64,
}

impl Default for PdElectronics {
    fn default() -> Self {
        Self {
            tia: TiaParams::default(),
            capture: CaptureSettings::default(),
            max_element_current: 100e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub board: BoardModel,
    pub lidar: LidarModel,
    pub electronics: PdElectronics,
    pub background: Option<Wall>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.board.validate()?;
        self.lidar.validate()?;
        self.electronics.tia.validate()
    }

    pub fn noiseless(mut self) -> Self {
        self.lidar = self.lidar.noiseless();
        self.electronics.capture.noise_sigma = 0.0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitTarget {
    Board,
    Wall,
}

/// Simulator ground truth for one frame (never serialized with the frame).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanTruth {
    /// What each beam hit, parallel to `ScanFrame::beams`.
    pub targets: Vec<HitTarget>,
    /// Noise-free spot center on the board `(x, z)` for board hits.
    pub spot_centers: Vec<Option<(f64, f64)>>,
    /// Per PD id: index of the beam whose spot puts the most power on that PD.
    pub pd_beams: Vec<(usize, Option<usize>)>,
}

impl ScanTruth {
    pub fn pd_beam(&self, pd_id: usize) -> Option<usize> {
        self.pd_beams.iter().find(|(id, _)| *id == pd_id).and_then(|(_, b)| *b)
    }
}

/// One full revolution of the LiDAR.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFrame {
    pub scan_id: u64,
    /// Scan start time, seconds.
    pub timestamp: f64,
    pub beams: Vec<PolarBeam>,
    pub pd_records: Vec<PdSignalRecord>,
    pub ground_truth: Option<Pose6DOF>,
    pub truth: Option<ScanTruth>,
}

impl ScanFrame {
    /// Beams of one channel, sorted by azimuth index, as indices into `beams`.
    pub fn channel_row(&self, channel: usize, subset: &[usize]) -> Vec<usize> {
        let mut row: Vec<usize> = subset.iter().copied().filter(|&i| self.beams[i].channel == channel).collect();
        row.sort_by_key(|&i| self.beams[i].azimuth_index);
        row
    }

    pub fn validate(&self) -> Result<()> {
        let mut keys: Vec<(usize, usize)> = self.beams.iter().map(|b| (b.channel, b.azimuth_index)).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input(format!("scan {}: duplicate azimuth index in a channel", self.scan_id)));
        }
        Ok(())
    }
}

fn std_normal_cdf_interval(a: f64, b: f64) -> f64 {
    // P(a < Z < b), evaluated on the tail that keeps precision.
    let s = std::f64::consts::SQRT_2;
    if a >= 0.0 {
        0.5 * (erfc(a / s) - erfc(b / s))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / s) - erfc(-a / s))
    } else {
        1.0 - 0.5 * (erfc(-a / s) + erfc(b / s))
    }
}

/// Fraction of an isotropic Gaussian spot's power inside `[a0, a1] x [l0, l1]`.
fn rect_fraction(center: (f64, f64), sigma: f64, a0: f64, a1: f64, l0: f64, l1: f64) -> f64 {
    std_normal_cdf_interval((a0 - center.0) / sigma, (a1 - center.0) / sigma)
        * std_normal_cdf_interval((l0 - center.1) / sigma, (l1 - center.1) / sigma)
}

/// Share of the spot power on the PD active area, normalized so a spot
/// centered on the active area gives 1.
pub fn pd_power_share(pd: &PdPlacement, spot_x: f64, spot_z: f64, sigma: f64) -> f64 {
    let c = pd.board_to_pd(spot_x, spot_z);
    let (a0, a1) = pd.along_extent();
    let w = pd.active_width;
    let hit = rect_fraction(c, sigma, a0, a1, 0.0, w);
    let centered = rect_fraction((pd.center_along(), pd.centerline()), sigma, a0, a1, 0.0, w);
    hit / centered
}

/// Per-element photocurrents for a Gaussian spot centered at `spot_center`
/// (board frame) with standard deviation `spot_sigma`.
///
/// Currents are scaled so that a spot centered on one element drives that
/// element at `max_current`.
pub fn integrate_beam_on_pd(spot_center: &CartesianPoint, spot_sigma: f64, pd: &PdPlacement, max_current: f64) -> Result<Vec<f64>> {
    if spot_center.frame != Frame::Board {
        return Err(Error::FrameMismatch {
            expected: Frame::Board,
            actual: spot_center.frame,
        });
    }
    if !(spot_sigma > 0.0) {
        return Err(Error::Input("spot sigma must be positive".into()));
    }
    let c = pd.board_to_pd(spot_center.coords.x, spot_center.coords.z);
    let half = 0.5 * pd.element_pitch;
    let w = pd.active_width;
    let peak = rect_fraction((0.0, 0.5 * w), spot_sigma, -half, half, 0.0, w);
    Ok((0..pd.n_elements)
        .map(|k| {
            let a = pd.element_position(k);
            max_current * rect_fraction(c, spot_sigma, a - half, a + half, 0.0, w) / peak
        })
        .collect())
}

/// Worst-case offset between an ideal feature and the nearest beam, `(horizontal, vertical)`.
pub fn corner_error_bound(b: &PolarBeam, lidar: &LidarModel) -> (f64, f64) {
    (b.range * lidar.azimuth_step().tan(), b.range * lidar.vertical_step().tan())
}

/// Simulate one scan of `scene` with the LiDAR at `pose` (LiDAR-to-board).
///
/// The random stream is selected by `(seed, scan_id)`, so equal arguments give
/// identical frames regardless of call order.
pub fn simulate_scan(scene: &Scene, pose: &Pose6DOF, scan_id: u64, seed: u64) -> Result<ScanFrame> {
    scene.validate()?;
    if !pose.is_finite() {
        return Err(Error::Simulation("non-finite pose".into()));
    }
    if pose.y >= 0.0 {
        return Err(Error::Simulation("sensor is behind the board plane".into()));
    }
    let lidar = &scene.lidar;
    let board = &scene.board;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scan_id);

    let jitter = Normal::new(0.0, lidar.azimuth_jitter_sigma_deg.to_radians()).map_err(|e| Error::Config(e.to_string()))?;
    let range_noise = Normal::new(0.0, lidar.range_noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let rot = pose.rotation();
    let origin = pose.translation();
    let omegas = lidar.vertical_angles();
    let step = lidar.azimuth_step();

    let mut beams = Vec::new();
    let mut truth = ScanTruth::default();
    // Per PD: (pulse time, spot center, spot sigma, beam index).
    let mut pd_hits: Vec<Vec<(f64, (f64, f64), f64, usize)>> = vec![Vec::new(); board.pds.len()];

    for j in 0..lidar.azimuth_count() {
        for (ch, &omega) in omegas.iter().enumerate() {
            let alpha = wrap_positive(j as f64 * step + jitter.sample(&mut rng));
            let dir = rot * unit_direction(omega, alpha);
            if dir.y <= 1e-9 {
                continue;
            }
            let t_board = -origin.y / dir.y;
            let hit = origin + t_board * dir;
            let (target, true_range, refl_base) = if board.contains(hit.x, hit.z) {
                (HitTarget::Board, t_board, None)
            } else if let Some(wall) = &scene.background {
                let t_wall = (wall.distance - origin.y) / dir.y;
                let h = origin + t_wall * dir;
                if h.x.abs() > 0.5 * wall.width || h.z.abs() > 0.5 * wall.height {
                    continue;
                }
                (HitTarget::Wall, t_wall, Some(wall.reflectivity))
            } else {
                continue;
            };

            let range = (true_range + range_noise.sample(&mut rng)).max(1e-3);
            let sigma = lidar.spot_sigma(true_range);
            let mut refl = match refl_base {
                Some(r) => r as f64,
                None => {
                    let share = board
                        .pds
                        .iter()
                        .map(|pd| pd_power_share(pd, hit.x, hit.z, sigma))
                        .fold(0.0, f64::max)
                        .min(1.0);
                    board.surround_reflectivity as f64
                        + share * (board.pd_reflectivity as f64 - board.surround_reflectivity as f64)
                }
            };
            if lidar.reflectivity_noise > 0.0 {
                refl += rng.random_range(-lidar.reflectivity_noise..=lidar.reflectivity_noise);
            }
            let index = beams.len();
            beams.push(PolarBeam {
                omega,
                alpha,
                range,
                channel: ch,
                azimuth_index: j,
                reflectivity: refl.round().clamp(0.0, 255.0) as u8,
            });
            truth.targets.push(target);
            if target == HitTarget::Board {
                truth.spot_centers.push(Some((hit.x, hit.z)));
                for (p, pd) in board.pds.iter().enumerate() {
                    let (x0, x1, z0, z1) = pd.board_bounds();
                    let dx = (x0 - hit.x).max(hit.x - x1).max(0.0);
                    let dz = (z0 - hit.z).max(hit.z - z1).max(0.0);
                    if dx.hypot(dz) <= 6.0 * sigma {
                        pd_hits[p].push((lidar.fire_time(ch, j), (hit.x, hit.z), sigma, index));
                    }
                }
            } else {
                truth.spot_centers.push(None);
            }
        }
    }

    if !truth.targets.contains(&HitTarget::Board) {
        return Err(Error::Simulation("no beam reaches the board at this pose".into()));
    }

    let elec = &scene.electronics;
    let mut pd_records = Vec::with_capacity(board.pds.len());
    for (p, pd) in board.pds.iter().enumerate() {
        let mut pulses = Vec::with_capacity(pd_hits[p].len());
        let mut best: Option<(f64, usize)> = None;
        for &(time, (x, z), sigma, index) in &pd_hits[p] {
            let center = CartesianPoint::new(Frame::Board, x, 0.0, z);
            let currents = integrate_beam_on_pd(&center, sigma, pd, elec.max_element_current)?;
            let share = pd_power_share(pd, x, z, sigma);
            if best.map_or(true, |(s, _)| share > s) {
                best = Some((share, index));
            }
            pulses.push(PulseCurrents { time, currents });
        }
        pulses.sort_by(|a, b| a.time.total_cmp(&b.time));
        truth.pd_beams.push((pd.id, best.filter(|(s, _)| *s > 0.05).map(|(_, i)| i)));
        let record_seed = rng.next_u64();
        pd_records.push(currents_to_record(
            pd.id,
            scan_id,
            &pulses,
            &pd.sampled_elements,
            &elec.tia,
            &elec.capture,
            record_seed,
        )?);
    }

    Ok(ScanFrame {
        scan_id,
        timestamp: scan_id as f64 * lidar.azimuth_count() as f64 * lidar.firing_period,
        beams,
        pd_records,
        ground_truth: Some(*pose),
        truth: Some(truth),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polar_to_cartesian;

    fn frontal_scene(noiseless: bool) -> (Scene, Pose6DOF) {
        let lidar = LidarModel::default();
        let lidar = if noiseless { lidar.noiseless() } else { lidar };
        let scene = Scene {
            board: BoardModel::bare(1.0, 0.54),
            lidar,
            electronics: PdElectronics::default(),
            background: None,
        };
        (scene, Pose6DOF::new(0.0, 0.0, 0.0, 0.0, -2.5, 0.0))
    }

    #[test]
    fn beam_spacing_matches_angular_resolution() {
        let (scene, pose) = frontal_scene(true);
        let f = simulate_scan(&scene, &pose, 0, 1).unwrap();
        let find = |ch: usize, j: usize| {
            let b = f.beams.iter().find(|b| b.channel == ch && b.azimuth_index == j).unwrap();
            polar_to_cartesian(b).unwrap().coords
        };
        // Channels 7 and 8 sit at -1 and +1 degrees.
        let h = (find(8, 1) - find(8, 0)).norm();
        let v = (find(8, 0) - find(7, 0)).norm();
        assert!((h - 2.5 * 0.2f64.to_radians().tan()).abs() < 1e-4, "h = {h}");
        assert!((h - 0.0087).abs() < 1e-4);
        assert!((v - 0.0873).abs() < 1e-4, "v = {v}");
        // Boresight returns land exactly on the noise-free plane.
        for b in f.beams.iter().filter(|b| b.azimuth_index == 0) {
            let y = polar_to_cartesian(b).unwrap().coords.y;
            assert!((y - 2.5).abs() < 1e-12);
        }
        let r = f.beams.iter().find(|b| b.channel == 7 && b.azimuth_index == 0).unwrap().range;
        assert!((r * 1f64.to_radians().cos() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn noiseless_points_lie_on_board_plane() {
        let (scene, _) = frontal_scene(true);
        let pose = Pose6DOF::new(0.05, -0.02, 0.03, -0.7, -2.5, 0.01);
        let f = simulate_scan(&scene, &pose, 0, 1).unwrap();
        let m = pose.to_transform();
        for b in &f.beams {
            let p = m.apply(&polar_to_cartesian(b).unwrap().coords);
            assert!(p.y.abs() < 1e-12);
        }
    }

    #[test]
    fn frontal_beam_count_matches_resolution() {
        let (scene, pose) = frontal_scene(false);
        let f = simulate_scan(&scene, &pose, 0, 9).unwrap();
        let h_res = 2.5 * 0.2f64.to_radians().tan();
        let v_res = 2.5 * 2f64.to_radians().tan();
        let expected = (1.0 / h_res) * (0.54 / v_res);
        let n = f.beams.len() as f64;
        assert!((n / expected - 1.0).abs() <= 0.10, "{n} vs {expected}");
    }

    #[test]
    fn seeds_are_deterministic() {
        let (scene, pose) = frontal_scene(false);
        let a = simulate_scan(&scene, &pose, 3, 11).unwrap();
        let b = simulate_scan(&scene, &pose, 3, 11).unwrap();
        let c = simulate_scan(&scene, &pose, 3, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.beams, c.beams);
    }

    #[test]
    fn degenerate_poses_are_rejected() {
        let (scene, _) = frontal_scene(true);
        let behind = Pose6DOF::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        assert!(matches!(simulate_scan(&scene, &behind, 0, 0), Err(Error::Simulation(_))));
        let away = Pose6DOF::new(std::f64::consts::PI, 0.0, 0.0, 0.0, -2.5, 0.0);
        // Facing away, the opposite half of the revolution still sees the board.
        assert!(simulate_scan(&scene, &away, 0, 0).is_ok());
        let edge_on = Pose6DOF::new(0.0, 0.0, 0.0, 0.0, -1e-9, 5.0);
        assert!(simulate_scan(&scene, &edge_on, 0, 0).is_err());
    }

    fn horizontal_pd() -> PdPlacement {
        PdPlacement::standard(0, PdOrientation::Horizontal, 0.0, 0.0)
    }

    #[test]
    fn symmetric_spot_gives_symmetric_currents() {
        let pd = horizontal_pd();
        let c = CartesianPoint::new(Frame::Board, 0.0075, 0.0, pd.centerline());
        let i = integrate_beam_on_pd(&c, 0.0049, &pd, 100e-6).unwrap();
        for j in 0..8 {
            assert!((i[7 - j] - i[8 + j]).abs() < 1e-9);
        }
    }

    #[test]
    fn distant_spot_gives_no_current() {
        let pd = horizontal_pd();
        let c = CartesianPoint::new(Frame::Board, 0.0575, 0.0, pd.centerline());
        let i = integrate_beam_on_pd(&c, 0.0049, &pd, 100e-6).unwrap();
        assert!(i.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn centered_element_gets_max_current() {
        let pd = horizontal_pd();
        let c = CartesianPoint::new(Frame::Board, 0.004, 0.0, pd.centerline());
        let i = integrate_beam_on_pd(&c, 0.0049, &pd, 100e-6).unwrap();
        assert!((i[4] - 100e-6).abs() < 1e-15);
    }

    #[test]
    fn currents_match_dense_integration() {
        // Oracle: midpoint-rule integration of the Gaussian on a 10 µm grid.
        let pd = horizontal_pd();
        let sigma = 0.0196 / 4.0;
        for spot in [0.0072, 0.0075] {
            let c = CartesianPoint::new(Frame::Board, spot, 0.0, pd.centerline());
            let i = integrate_beam_on_pd(&c, sigma, &pd, 1.0).unwrap();
            let h = 10e-6;
            let dense: Vec<f64> = (0..16)
                .map(|k| {
                    let mut s = 0.0;
                    let (a0, l0) = (k as f64 * 0.001 - 0.0005, 0.0);
                    for ia in 0..100 {
                        for il in 0..145 {
                            let a = a0 + (ia as f64 + 0.5) * h;
                            let l = l0 + (il as f64 + 0.5) * h;
                            let r2 = (a - spot).powi(2) + (l - pd.centerline()).powi(2);
                            s += (-r2 / (2.0 * sigma * sigma)).exp() * h * h;
                        }
                    }
                    s / (2.0 * std::f64::consts::PI * sigma * sigma)
                })
                .collect();
            let scale = i[0] / dense[0];
            for k in 0..16 {
                assert!((i[k] - scale * dense[k]).abs() < 1e-4 * i[k].max(1e-3));
            }
            let argmax = |v: &[f64]| (0..16).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            if spot == 0.0072 {
                assert_eq!(argmax(&i), 7);
                assert_eq!(argmax(&dense), 7);
            } else {
                // On the 7/8 boundary both elements tie.
                assert!((i[7] - i[8]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corner_bound_values() {
        let lidar = LidarModel::default();
        let mut b = PolarBeam {
            omega: 0.0,
            alpha: 0.0,
            range: 2.5,
            channel: 0,
            azimuth_index: 0,
            reflectivity: 0,
        };
        let (ex, ez) = corner_error_bound(&b, &lidar);
        assert!((ex - 0.00873).abs() < 1e-5);
        assert!((ez - 0.0873).abs() < 1e-4);
        b.range = 5.0;
        let (ex2, ez2) = corner_error_bound(&b, &lidar);
        assert_eq!(ex2, 2.0 * ex);
        assert_eq!(ez2, 2.0 * ez);
        b.range = 0.0;
        assert_eq!(corner_error_bound(&b, &lidar), (0.0, 0.0));
    }

    #[test]
    fn layout_places_pds_on_edge_rows() {
        let lidar = LidarModel::default();
        let pose = Pose6DOF::new(0.0, 0.0, 0.0, -0.7, -2.5, 0.0);
        for layout in [PdLayout::Horizontal, PdLayout::Vertical, PdLayout::Mixed] {
            let board = BoardModel::with_layout(1.0, 0.54, layout, &lidar, &pose).unwrap();
            assert_eq!(board.pds.len(), 4);
            for pd in &board.pds {
                let (x, z) = pd.center_on_board();
                let v = pose.to_transform().inverse().apply(&Vector3::new(x, 0.0, z));
                let elev = (v.z / v.norm()).asin().to_degrees();
                assert!((elev.abs() - 5.0).abs() < 1e-9, "elevation {elev}");
            }
        }
        let mixed = BoardModel::with_layout(1.0, 0.54, PdLayout::Mixed, &lidar, &pose).unwrap();
        assert_eq!(mixed.pds[0].orientation, PdOrientation::Vertical);
        assert_eq!(mixed.pds[1].orientation, PdOrientation::Horizontal);
    }

    #[test]
    fn pd_frame_round_trip() {
        for o in [PdOrientation::Horizontal, PdOrientation::Vertical] {
            let pd = PdPlacement::centered_at(0, o, 0.3, -0.2);
            let (x, z) = pd.pd_to_board(0.0123, 0.0004);
            let (a, l) = pd.board_to_pd(x, z);
            assert!((a - 0.0123).abs() < 1e-15 && (l - 0.0004).abs() < 1e-15);
            let (cx, cz) = pd.center_on_board();
            assert!((cx - 0.3).abs() < 1e-15 && (cz + 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn at_most_three_beams_overlap_a_pd() {
        let lidar = LidarModel::default();
        let pose = Pose6DOF::new(0.0, 0.0, 0.0, -0.7, -2.5, 0.0);
        let board = BoardModel::with_layout(1.0, 0.54, PdLayout::Horizontal, &lidar, &pose).unwrap();
        let scene = Scene {
            board,
            lidar,
            electronics: PdElectronics::default(),
            background: None,
        };
        let f = simulate_scan(&scene, &pose, 0, 5).unwrap();
        let truth = f.truth.as_ref().unwrap();
        for pd in &scene.board.pds {
            let (cx, cz) = pd.center_on_board();
            let sigma = scene.lidar.spot_sigma(2.6);
            let n = truth
                .spot_centers
                .iter()
                .flatten()
                .filter(|(x, z)| (x - cx).abs() <= 0.008 + sigma && (z - cz).abs() < 0.01)
                .count();
            assert!((1..=3).contains(&n), "PD {}: {n} beams", pd.id);
        }
    }
}
