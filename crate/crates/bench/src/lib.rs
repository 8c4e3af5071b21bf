//! Shared inputs for the pipeline benchmarks.

use pdtarget_core::correspondence::Correspondence;
use pdtarget_core::geometry::{cartesian_to_polar, CartesianPoint, Frame, PolarBeam, Pose6DOF};
use pdtarget_core::scene_sim::{BoardModel, LidarModel, PdElectronics, PdLayout, Scene};

/// Ground-truth pose of the reference set-up.
pub fn base_pose() -> Pose6DOF {
    Pose6DOF::new(0.0, 0.0, 0.0, -0.7, -2.5, 0.0)
}

/// Default-noise scene with four PDs of one orientation.
pub fn scene(layout: PdLayout) -> Scene {
    let lidar = LidarModel::default();
    let board = BoardModel::with_layout(1.0, 0.54, layout, &lidar, &base_pose()).unwrap();
    Scene {
        board,
        lidar,
        electronics: PdElectronics::default(),
        background: None,
    }
}

/// `n` exact correspondences spread over the board for `pose`.
pub fn correspondences(pose: &Pose6DOF, n: usize) -> Vec<Correspondence> {
    let r = pose.rotation();
    let t = pose.translation();
    (0..n)
        .map(|i| {
            let f = i as f64 / n.max(2) as f64;
            let o = nalgebra::Vector3::new(-0.45 + 0.9 * f, 0.0, 0.25 * ((7 * i) as f64).sin());
            let l = r.transpose() * (o - t);
            let (omega, alpha, range) = cartesian_to_polar(&CartesianPoint::new(Frame::Lidar, l.x, l.y, l.z)).unwrap();
            let beam = PolarBeam {
                omega,
                alpha,
                range,
                channel: 0,
                azimuth_index: 0,
                reflectivity: 60,
            };
            Correspondence {
                pd_id: i % 4,
                scan_id: 0,
                p_o: CartesianPoint::new(Frame::Board, o.x, o.y, o.z),
                beam,
                weight: 1.0,
            }
        })
        .collect()
}
