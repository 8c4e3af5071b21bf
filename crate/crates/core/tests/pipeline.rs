use pdtarget_core::harness::config::SceneConfig;
use pdtarget_core::harness::frame_io::{read_frames, write_frames};
use pdtarget_core::harness::single::{run_single, simulate_frames};
use pdtarget_core::harness::sweep::pose_error;
use pdtarget_core::pipeline::PipelineConfig;
use pdtarget_core::scene_sim::PdLayout;

#[test]
fn calibration_survives_a_frame_file_round_trip() {
    let cfg = SceneConfig::default();
    let scene = cfg.scene(Some(PdLayout::Horizontal)).unwrap();
    let frames = simulate_frames(&scene, &cfg.base_pose.pose(), 10, 9).unwrap();
    let mut buf = Vec::new();
    write_frames(&mut buf, &frames).unwrap();
    let loaded = read_frames(buf.as_slice(), "memory").unwrap();

    let a = run_single(&frames, &scene, &PipelineConfig::default()).unwrap();
    let b = run_single(&loaded, &scene, &PipelineConfig::default()).unwrap();
    let poses = |r: &pdtarget_core::pipeline::BatchResult| r.solved().map(|(id, s)| (id, s.beta)).collect::<Vec<_>>();
    let (pa, pb) = (poses(&a), poses(&b));
    assert_eq!(pa.len(), 10);
    for ((ia, x), (ib, y)) in pa.iter().zip(&pb) {
        assert_eq!(ia, ib);
        assert!(pose_error(x, y).iter().all(|e| e.abs() < 1e-6), "{x:?} vs {y:?}");
    }
}

#[test]
fn mixed_board_calibrates_near_truth() {
    let cfg = SceneConfig::default();
    let scene = cfg.scene(Some(PdLayout::Mixed)).unwrap();
    let truth = cfg.base_pose.pose();
    let frames = simulate_frames(&scene, &truth, 30, 4).unwrap();
    let batch = run_single(&frames, &scene, &PipelineConfig::default()).unwrap();
    assert_eq!(batch.models.len(), 4);
    let mut mean = [0.0; 6];
    let mut n = 0.0;
    for (_, r) in batch.solved() {
        pose_error(&r.beta, &truth).iter().enumerate().for_each(|(k, e)| mean[k] += e);
        n += 1.0;
    }
    assert!(n >= 28.0);
    let mean = mean.map(|v| v / n);
    assert!(mean[..3].iter().all(|e| e.abs() < 0.1), "{mean:?}");
    assert!(mean[3..].iter().all(|e| e.abs() < 5.0), "{mean:?}");
}
