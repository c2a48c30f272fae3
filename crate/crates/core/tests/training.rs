use densuq_core::dataset::{camera_rig, generate_synthetic_scene, scene_bbox_for, Intrinsics, RenderConfig, RigKind, ScenePreset};
use densuq_core::desk;
use densuq_core::ensemble::{extract_grid, train_ensemble_logged};
use densuq_core::trainer::{mean_psnr, TrainConfig};

fn small_scene() -> densuq_core::dataset::Dataset {
    let gt = ScenePreset::SphereOccluder.ground_truth();
    let k = Intrinsics::from_angle_x(desk::CAMERA_ANGLE_X, 24, 24);
    let poses = camera_rig(RigKind::FullSphere, 10, desk::RIG_RADIUS, scene_bbox_for(&gt).center(), k).unwrap();
    generate_synthetic_scene(&gt, &poses, &RenderConfig::default()).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig {
        steps: 300,
        field_res: 16,
        log_every: 25,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_is_finite_and_decreases() {
    let ds = small_scene();
    let runs = train_ensemble_logged(&ds, &cfg(), &[3, 4], false).unwrap();
    for (_, log) in &runs {
        assert!(log.rows.len() >= 2);
        assert!(log.rows.iter().all(|r| r.loss.is_finite()));
        let (first, last) = (log.rows[0].loss, log.rows.last().unwrap().loss);
        assert!(last <= first, "loss {first} → {last}");
    }
}

#[test]
fn members_with_different_seeds_differ() {
    let ds = small_scene();
    let runs = train_ensemble_logged(&ds, &cfg(), &[0, 1], false).unwrap();
    let (a, b) = (&runs[0].0, &runs[1].0);
    let diff = a
        .density_raw
        .iter()
        .zip(&b.density_raw)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff > 0.0);
}

#[test]
fn parallel_members_match_sequential() {
    let ds = small_scene();
    let c = TrainConfig { steps: 60, ..cfg() };
    let seq = train_ensemble_logged(&ds, &c, &[5, 6, 7], false).unwrap();
    let par = train_ensemble_logged(&ds, &c, &[5, 6, 7], true).unwrap();
    for ((a, _), (b, _)) in seq.iter().zip(&par) {
        assert_eq!(a, b);
    }
}

#[test]
fn fitted_member_beats_its_initialization() {
    let ds = small_scene();
    let c = cfg();
    let step = c.march_step(&ds);
    let init = densuq_core::trainer::init_field(&ds, &c).unwrap();
    let (fit, _) = &train_ensemble_logged(&ds, &c, &[c.seed], false).unwrap()[0];
    assert!(mean_psnr(fit, &ds, step).unwrap().mean > mean_psnr(&init, &ds, step).unwrap().mean);
    let g = extract_grid(fit, &ds.scene_bbox, 12).unwrap();
    assert_eq!(g.values.len(), 12 * 12 * 12);
}
