//! Board segmentation, plane fitting and range cleanup.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian, CartesianPoint, Frame, PolarBeam};
use crate::scene_sim::ScanFrame;

/// How ROI ranges are corrected after the plane fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeCorrection {
    /// Keep raw ranges.
    None,
    /// Orthogonal projection onto the plane; the new range is the norm of the projected point.
    Normal,
    /// Intersect each beam ray with the plane.
    Ray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub cluster_tolerance: f64,
    pub min_points: usize,
    /// Allowed relative mismatch of the cluster extent against the board size.
    pub extent_tolerance: f64,
    pub range_correction: RangeCorrection,
    pub plane_scope: PlaneScope,
}

/// Which returns feed the board plane fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneScope {
    /// One plane per scan.
    Scan,
    /// One plane over every scan of a static batch.
    Batch,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cluster_tolerance: 0.15,
            min_points: 20,
            extent_tolerance: 0.2,
            range_correction: RangeCorrection::Ray,
            plane_scope: PlaneScope::Scan,
        }
    }
}

/// Plane `normal . p + d = 0` in the LiDAR frame, normal facing the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub d: f64,
    pub inlier_rms: f64,
    pub inlier_count: usize,
}

impl PlaneModel {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.d
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.signed_distance(p) * self.normal
    }

    /// Range along unit direction `u` from the origin to the plane, if the ray meets it.
    pub fn ray_range(&self, u: &Vector3<f64>) -> Option<f64> {
        let c = self.normal.dot(u);
        if c.abs() < 1e-12 {
            return None;
        }
        let t = -self.d / c;
        (t > 0.0).then_some(t)
    }
}

/// Orthonormal in-plane axes of the board seen from the LiDAR.
///
/// `u` points to board `+x` (sensor right), `v` to board `+z` (up), `n`
/// toward the sensor. `center` estimates the board center from the ROI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardAxes {
    pub center: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub n: Vector3<f64>,
}

impl BoardAxes {
    pub fn from_plane(plane: &PlaneModel, center: Vector3<f64>) -> Result<Self> {
        let n = plane.normal;
        let up = Vector3::z();
        let v = up - up.dot(&n) * n;
        if v.norm() < 1e-6 {
            return Err(Error::Rank("board plane is horizontal".into()));
        }
        let v = v.normalize();
        // Board +y points away from the sensor, so u = (-n) x v.
        let u = (-n).cross(&v);
        Ok(Self { center, u, v, n })
    }

    pub fn local(&self, p: &Vector3<f64>) -> (f64, f64) {
        let q = p - self.center;
        (q.dot(&self.u), q.dot(&self.v))
    }
}

fn points_of(beams: &[PolarBeam], idx: &[usize]) -> Result<Vec<Vector3<f64>>> {
    idx.iter().map(|&i| polar_to_cartesian(&beams[i]).map(|p| p.coords)).collect()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage Euclidean clustering; clusters are returned in order of their first member.
pub fn euclidean_clusters(points: &[Vector3<f64>], tolerance: f64) -> Vec<Vec<usize>> {
    let cell = |p: &Vector3<f64>| {
        (
            (p.x / tolerance).floor() as i64,
            (p.y / tolerance).floor() as i64,
            (p.z / tolerance).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let mut uf = UnionFind((0..points.len()).collect());
    let tol2 = tolerance * tolerance;
    for (i, p) in points.iter().enumerate() {
        let (cx, cy, cz) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j > i && (points[j] - p).norm_squared() <= tol2 {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }
    let mut by_root: HashMap<usize, usize> = HashMap::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..points.len() {
        let r = uf.find(i);
        let k = *by_root.entry(r).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[k].push(i);
    }
    clusters
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

/// In-plane (width, height) of a cluster, widened by the typical beam
/// spacing so a sparse sampling of the board still measures its full size.
fn cluster_extent(beams: &[PolarBeam], idx: &[usize]) -> Result<(f64, f64)> {
    let pts = points_of(beams, idx)?;
    let plane = fit_plane_coords(&pts)?;
    let axes = BoardAxes::from_plane(&plane, Vector3::zeros())?;
    let local: Vec<(f64, f64)> = pts.iter().map(|p| axes.local(p)).collect();
    let span = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let (lo, hi) = local.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        hi - lo
    };
    let (w, h) = (span(&|p| p.0), span(&|p| p.1));

    let mut rows: HashMap<usize, Vec<(usize, f64, f64)>> = HashMap::new();
    for (k, &i) in idx.iter().enumerate() {
        rows.entry(beams[i].channel).or_default().push((beams[i].azimuth_index, local[k].0, local[k].1));
    }
    let mut du = Vec::new();
    let mut row_v = Vec::new();
    for row in rows.values_mut() {
        row.sort_by_key(|r| r.0);
        du.extend(row.windows(2).filter(|w| w[1].0 == w[0].0 + 1).map(|w| (w[1].1 - w[0].1).abs()));
        row_v.push(row.iter().map(|r| r.2).sum::<f64>() / row.len() as f64);
    }
    row_v.sort_by(f64::total_cmp);
    let dv: Vec<f64> = row_v.windows(2).map(|w| w[1] - w[0]).collect();
    Ok((w + median(du).unwrap_or(0.0), h + median(dv).unwrap_or(0.0)))
}

/// Indices of the beams that belong to the target board.
pub fn segment_target(frame: &ScanFrame, board_width: f64, board_height: f64, cfg: &PreprocessConfig) -> Result<Vec<usize>> {
    let fail = |reason: &str, clusters, extents| Error::Segmentation {
        reason: reason.into(),
        clusters,
        extents,
    };
    if frame.beams.is_empty() {
        return Err(fail("empty frame", 0, Vec::new()));
    }
    let all: Vec<usize> = (0..frame.beams.len()).collect();
    let pts = points_of(&frame.beams, &all)?;
    let clusters = euclidean_clusters(&pts, cfg.cluster_tolerance);
    let mut extents = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for (k, c) in clusters.iter().enumerate() {
        if c.len() < cfg.min_points.max(3) {
            continue;
        }
        let Ok((w, h)) = cluster_extent(&frame.beams, c) else {
            continue;
        };
        extents.push((w, h));
        let ew = (w - board_width).abs() / board_width;
        let eh = (h - board_height).abs() / board_height;
        if ew <= cfg.extent_tolerance && eh <= cfg.extent_tolerance {
            let score = ew + eh;
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, k));
            }
        }
    }
    match best {
        Some((_, k)) => Ok(clusters[k].clone()),
        None => Err(fail("no cluster matches the board size", clusters.len(), extents)),
    }
}

fn fit_plane_coords(pts: &[Vector3<f64>]) -> Result<PlaneModel> {
    if pts.len() < 3 {
        return Err(Error::Rank(format!("{} points cannot define a plane", pts.len())));
    }
    let n = pts.len() as f64;
    let centroid = pts.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let q = p - centroid;
        cov += q * q.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = eig.eigenvalues[order[2]].max(f64::MIN_POSITIVE);
    if eig.eigenvalues[order[1]] <= 1e-12 * scale || scale <= 1e-24 {
        return Err(Error::Rank("points are collinear or coincident".into()));
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let mut d = -normal.dot(&centroid);
    let flip = if d.abs() > 1e-12 {
        d < 0.0
    } else if normal.y.abs() > 1e-12 {
        normal.y > 0.0
    } else if normal.z.abs() > 1e-12 {
        normal.z < 0.0
    } else {
        normal.x < 0.0
    };
    if flip {
        normal = -normal;
        d = -d;
    }
    let ss: f64 = pts.iter().map(|p| (normal.dot(p) + d).powi(2)).sum();
    Ok(PlaneModel {
        normal,
        d,
        inlier_rms: (ss / n).sqrt(),
        inlier_count: pts.len(),
    })
}

/// Total-least-squares plane through LiDAR-frame points.
pub fn fit_plane(points: &[CartesianPoint]) -> Result<PlaneModel> {
    if let Some(p) = points.iter().find(|p| p.frame != Frame::Lidar) {
        return Err(Error::FrameMismatch {
            expected: Frame::Lidar,
            actual: p.frame,
        });
    }
    let coords: Vec<Vector3<f64>> = points.iter().map(|p| p.coords).collect();
    fit_plane_coords(&coords)
}

pub fn project_to_plane(points: &[CartesianPoint], plane: &PlaneModel) -> Vec<CartesianPoint> {
    points
        .iter()
        .map(|p| CartesianPoint {
            frame: p.frame,
            coords: plane.project(&p.coords),
        })
        .collect()
}

/// Beams with ranges corrected against the fitted plane; angles are kept.
pub fn correct_ranges(beams: &[PolarBeam], plane: &PlaneModel, mode: RangeCorrection) -> Result<Vec<PolarBeam>> {
    beams
        .iter()
        .map(|b| {
            let range = match mode {
                RangeCorrection::None => b.range,
                RangeCorrection::Normal => plane.project(&polar_to_cartesian(b)?.coords).norm(),
                RangeCorrection::Ray => plane
                    .ray_range(&b.direction())
                    .ok_or_else(|| Error::Domain("beam parallel to the board plane".into()))?,
            };
            Ok(PolarBeam { range, ..*b })
        })
        .collect()
}

/// Board axes with a center estimated from the ROI: the mean of per-row
/// horizontal midpoints and the midpoint between the outermost rows.
pub fn coarse_board_axes(beams: &[PolarBeam], plane: &PlaneModel) -> Result<BoardAxes> {
    if beams.is_empty() {
        return Err(Error::Input("empty ROI".into()));
    }
    let pts: Vec<Vector3<f64>> = beams
        .iter()
        .map(|b| polar_to_cartesian(b).map(|p| plane.project(&p.coords)))
        .collect::<Result<_>>()?;
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let axes = BoardAxes::from_plane(plane, centroid)?;
    let mut rows: HashMap<usize, (f64, f64, f64, usize)> = HashMap::new();
    for (b, p) in beams.iter().zip(&pts) {
        let (u, v) = axes.local(p);
        let e = rows.entry(b.channel).or_insert((f64::INFINITY, f64::NEG_INFINITY, 0.0, 0));
        e.0 = e.0.min(u);
        e.1 = e.1.max(u);
        e.2 += v;
        e.3 += 1;
    }
    let mids: Vec<(f64, f64)> = rows.values().map(|r| (0.5 * (r.0 + r.1), r.2 / r.3 as f64)).collect();
    let cu = mids.iter().map(|m| m.0).sum::<f64>() / mids.len() as f64;
    let (vlo, vhi) = mids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), m| (a.min(m.1), b.max(m.1)));
    let center = axes.center + cu * axes.u + 0.5 * (vlo + vhi) * axes.v;
    Ok(BoardAxes { center, ..axes })
}
