use rollsense_core::mapping::{derive_affine, score_alignment, stitch, StitchParams};
use rollsense_core::simulator::{
    render_roll_sequence, SceneKind, truth_alignment_points, RenderOptions, RollSpeed, SimScene, TactileFrame, Texture,
};
use rollsense_core::{CameraIntrinsics, CylinderModel, ExtrinsicPose};

const FPS: f64 = 6.0;

fn roll(speed: RollSpeed) -> (SimScene, Vec<TactileFrame>) {
    let k = CameraIntrinsics::default();
    let cyl = CylinderModel::default();
    let scene = SimScene::texture(Texture::fabric(80.0, 110.0, 0.1, 7).unwrap());
    let traj = speed.trajectory(5.0, 105.0, FPS, ExtrinsicPose::identity(), &cyl);
    let frames = render_roll_sequence(&scene, &traj, &k, &cyl, &RenderOptions::default()).unwrap();
    (scene, frames)
}

fn mean_abs_shift(frames: &[TactileFrame]) -> f64 {
    let map = stitch(frames, &StitchParams::default()).unwrap();
    map.shifts.iter().map(|s| s.dy.abs() as f64).sum::<f64>() / map.shifts.len() as f64
}

#[test]
fn medium_roll_shifts_match_truth() {
    let (_, frames) = roll(RollSpeed::Medium);
    let map = stitch(&frames, &StitchParams::default()).unwrap();
    let mut exact = 0;
    for (s, f) in map.shifts.iter().zip(&frames[1..]) {
        let truth = f.truth.shift_rounded().unwrap();
        assert!((s.dy - truth).abs() <= 1, "dy {} vs truth {}", s.dy, truth);
        exact += (s.dy == truth) as usize;
    }
    assert!(exact as f64 >= 0.95 * map.shifts.len() as f64, "{exact}/{}", map.shifts.len());
}

#[test]
fn rolling_consistency_within_one_pixel() {
    let (_, frames) = roll(RollSpeed::Medium);
    let k = CameraIntrinsics::default();
    let cyl = CylinderModel::default();
    let summed: f64 = frames[1..].iter().map(|f| f.truth.shift_px.unwrap()).sum();
    let travel = frames.last().unwrap().truth.contact_y - frames[0].truth.contact_y;
    let arc_px = travel / cyl.radius() * k.fy;
    assert!((summed + arc_px).abs() < 1.0, "summed {summed} vs arc {arc_px}");
}

#[test]
fn mean_shift_scales_with_speed() {
    let m: Vec<f64> = RollSpeed::ALL.iter().map(|&s| mean_abs_shift(&roll(s).1)).collect();
    let (r_med, r_fast) = (m[1] / m[0], m[2] / m[0]);
    assert!((r_med / 1.5 - 1.0).abs() <= 0.15, "{m:?}");
    assert!((r_fast / 3.0 - 1.0).abs() <= 0.15, "{m:?}");
}

#[test]
fn stitched_map_matches_scene() {
    let (scene, frames) = roll(RollSpeed::Medium);
    let k = CameraIntrinsics::default();
    let cyl = CylinderModel::default();
    let ppm = k.fy / cyl.radius();
    let map = stitch(&frames, &StitchParams::default()).unwrap();
    let truth: Vec<_> = frames.iter().map(|f| f.truth.clone()).collect();
    let (mp, rp) =
        truth_alignment_points(&map.offsets, map.patch_top_row, &truth, &k, &cyl, scene.origin_offset, ppm)
            .unwrap();
    let spec = derive_affine(mp, rp).unwrap();
    let SceneKind::Texture(tex) = &scene.kind else { unreachable!() };
    let reference = tex.reference_view(ppm);
    let (m, region, _) = score_alignment(&map.pixels, &reference, &spec.affine).unwrap();
    eprintln!("{m:?} {region:?}");
    assert!(m.ssim >= 0.9 && m.psnr_db >= 25.0 && m.mae_percent <= 3.0, "{m:?}");
}

#[test]
fn noisy_rendering_is_deterministic_per_seed() {
    let k = CameraIntrinsics::default();
    let cyl = CylinderModel::default();
    let scene = SimScene::texture(Texture::fabric(80.0, 110.0, 0.1, 3).unwrap());
    let traj = RollSpeed::Fast.trajectory(5.0, 105.0, FPS, ExtrinsicPose::identity(), &cyl);
    let opts = RenderOptions { noise_sigma: 2.0, seed: 11, ..Default::default() };
    let a = render_roll_sequence(&scene, &traj[..6], &k, &cyl, &opts).unwrap();
    let b = render_roll_sequence(&scene, &traj[..6], &k, &cyl, &opts).unwrap();
    assert_eq!(a, b);
    let c = render_roll_sequence(&scene, &traj[..6], &k, &cyl, &RenderOptions { seed: 12, ..opts }).unwrap();
    assert_ne!(a[0].pixels, c[0].pixels);
}

#[test]
fn shifts_are_invariant_to_a_constant_row_offset() {
    let (_, frames) = roll(RollSpeed::Medium);
    let frames = &frames[..12];
    let moved: Vec<TactileFrame> = frames
        .iter()
        .map(|f| {
            let (w, h) = f.pixels.dimensions();
            let img = image::GrayImage::from_fn(w, h, |x, y| *f.pixels.get_pixel(x, y.saturating_sub(4)));
            TactileFrame::from_image(img, f.index)
        })
        .collect();
    let a = stitch(frames, &StitchParams::default()).unwrap();
    let b = stitch(&moved, &StitchParams::default()).unwrap();
    let dy = |m: &rollsense_core::mapping::TactileMap| m.shifts.iter().map(|s| s.dy).collect::<Vec<_>>();
    assert_eq!(dy(&a), dy(&b));
}

#[test]
fn single_frame_sequence_has_no_shift() {
    let k = CameraIntrinsics::default();
    let cyl = CylinderModel::default();
    let scene = SimScene::texture(Texture::fabric(80.0, 110.0, 0.1, 3).unwrap());
    let traj = rollsense_core::simulator::constant_speed_trajectory(20.0, 20.0, 1, ExtrinsicPose::identity(), &cyl);
    let frames = render_roll_sequence(&scene, &traj, &k, &cyl, &RenderOptions::default()).unwrap();
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].truth.shift_px, None);
}
