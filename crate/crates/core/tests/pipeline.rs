use std::path::Path;

use colortraj::colorspace::{load_masked_frames, trajectory_delta_e};
use colortraj::dataset::{conditions_of, load_dataset, make_zero_shot_split, preprocess, samples_in, save_dataset};
use colortraj::eval::{train_model, TrainedModel};
use colortraj::synth::generate_dataset;
use colortraj::{
    delta_e, srgb_to_lab, BasisConfig, Checkpoint, EvalSelector, ModelKind, RgbColor, Target, TrainConfig, WorldConfig,
};
use image::{GrayImage, Luma, Rgb, RgbImage};

/// Writes a frame whose masked square has `inner` and whose background is a
/// color that must not leak into the average.
fn write_frame(images: &Path, masks: &Path, name: &str, inner: [u8; 3]) {
    let (w, h) = (12, 10);
    let mut img = RgbImage::from_pixel(w, h, Rgb([0, 255, 0]));
    let mut mask = GrayImage::new(w, h);
    for y in 2..7 {
        for x in 3..9 {
            img.put_pixel(x, y, Rgb(inner));
            mask.put_pixel(x, y, Luma([255]));
        }
    }
    img.save(images.join(format!("{name}.ppm"))).unwrap();
    mask.save(masks.join(format!("{name}.pgm"))).unwrap();
}

#[test]
fn frames_on_disk_become_a_delta_e_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (images, masks) = (dir.path().join("img"), dir.path().join("mask"));
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&masks).unwrap();
    let colors = [[200, 170, 120], [190, 150, 100], [170, 120, 80], [140, 90, 60]];
    // written out of order; timestamps come from the names
    for (i, c) in colors.iter().enumerate().rev() {
        write_frame(&images, &masks, &format!("frame_{}", i * 300), *c);
    }
    let frames = load_masked_frames(&images, &masks).unwrap();
    let traj = trajectory_delta_e(&frames).unwrap();
    assert_eq!(traj.times(), [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
    let first = srgb_to_lab(RgbColor::new(200, 170, 120));
    for (got, c) in traj.values().iter().zip(colors) {
        let want = delta_e(srgb_to_lab(RgbColor::new(c[0], c[1], c[2])), first);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert_eq!(traj.values()[0], 0.0);
}

#[test]
fn missing_mask_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (images, masks) = (dir.path().join("img"), dir.path().join("mask"));
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&masks).unwrap();
    write_frame(&images, &masks, "f_0", [1, 2, 3]);
    std::fs::remove_file(masks.join("f_0.pgm")).unwrap();
    let err = load_masked_frames(&images, &masks).unwrap_err().to_string();
    assert!(err.contains("f_0.pgm"), "{err}");
}

#[test]
fn library_pipeline_round_trips_through_disk() {
    let mut world = WorldConfig::cookie_default().with_seed(5);
    world.samples_per_condition = 3;
    world.trajectory_length = 60;
    let dir = tempfile::tempdir().unwrap();

    save_dataset(&generate_dataset(&world).unwrap(), &dir.path().join("raw")).unwrap();
    let raw = load_dataset(&dir.path().join("raw")).unwrap();
    let smooth = preprocess(&raw, 15).unwrap();
    save_dataset(&smooth, &dir.path().join("smooth")).unwrap();
    let records = load_dataset(&dir.path().join("smooth")).unwrap();
    assert_eq!(records, smooth);

    let plan = make_zero_shot_split(
        &conditions_of(&records),
        &EvalSelector::Conditions(vec![world.default_eval_condition()]),
        5,
    )
    .unwrap();
    let basis = BasisConfig::default();
    let tc = TrainConfig {
        max_epochs: 10,
        lstm_hidden: 8,
        ..TrainConfig::default()
    };
    let eval_set = samples_in(&records, plan.eval_conditions());
    for kind in [ModelKind::Baseline, ModelKind::TabularOnly, ModelKind::MultiModal] {
        let (model, history) = train_model(&records, &plan, kind, &basis, &tc).unwrap();
        assert!(history.train.iter().all(|v| v.is_finite()));
        let before = model.evaluate(&eval_set, &basis, Target::Smoothed).unwrap();

        let path = dir.path().join(format!("{}.json", kind.as_str()));
        model.checkpoint(&basis, &tc).save(&path).unwrap();
        let restored = TrainedModel::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(restored.kind(), kind);
        let after = restored.evaluate(&eval_set, &basis, Target::Smoothed).unwrap();
        assert_eq!(before.overall.to_bits(), after.overall.to_bits());
        assert_eq!(before.per_condition.len(), 1);
    }
}
