use ahdr_core::hdr::{ExposureImage, HdrImage, TonemapParams};
use ahdr_core::network::NetConfig;
use ahdr_core::synth::{generate_samples, SampleTriplet, SceneOptions, SynthOptions};
use ahdr_core::train::{augment, augment_with, sample_patch, tonemapped_loss, train, Dihedral, LossKind, TrainConfig, TrainRecord, Trainer};
use ahdr_core::{Checkpoint, Error};
use ahdr_tensor::{Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_net() -> NetConfig {
    NetConfig {
        base_channels: 4,
        growth_rate: 4,
        num_drdb: 1,
        drdb_conv_layers: 3,
        ..NetConfig::default()
    }
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        patch_size: 12,
        learning_rate: 1e-3,
        max_iterations: 6,
        seed: 5,
        log_every: 2,
        ..TrainConfig::default()
    }
}

fn data() -> Vec<SampleTriplet> {
    generate_samples(3, 9, (16, 16), &SceneOptions::default(), &SynthOptions::default()).unwrap()
}

/// Sample whose pixels encode their own coordinates: channel 0 holds y,
/// channel 1 holds x, channel 2 identifies the image.
fn coordinate_sample(h: usize, w: usize) -> SampleTriplet {
    let img = |tag: f32| {
        Tensor::from_fn(Shape::new(1, 3, h, w), move |_, c, y, x| match c {
            0 => y as f32 / 64.0,
            1 => x as f32 / 64.0,
            _ => tag,
        })
    };
    let ldrs = [-2, 0, 2].map(|b| ExposureImage::new(img(0.25 + b as f32 / 10.0), b).unwrap());
    SampleTriplet::new("coords", ldrs, HdrImage::new(img(0.9)).unwrap()).unwrap()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small_cfg()
    };
    let mut t = Trainer::new(&small_net(), &cfg).unwrap();
    let before = t.params.clone();
    for _ in 0..4 {
        t.step(&data()).unwrap();
    }
    assert_eq!(t.params, before);
    assert_eq!(t.adam.step, 4);
}

#[test]
fn same_seed_runs_are_bitwise_identical() {
    let d = data();
    let mut a = Trainer::new(&small_net(), &small_cfg()).unwrap();
    let mut b = Trainer::new(&small_net(), &small_cfg()).unwrap();
    let la: Vec<f64> = (0..4).map(|_| a.step(&d).unwrap()).collect();
    let lb: Vec<f64> = (0..4).map(|_| b.step(&d).unwrap()).collect();
    assert_eq!(la, lb);
    assert_eq!(a, b);
    let other = TrainConfig { seed: 6, ..small_cfg() };
    let mut c = Trainer::new(&small_net(), &other).unwrap();
    c.step(&d).unwrap();
    c.step(&d).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn resumed_run_matches_unbroken_run() {
    let d = data();
    let mut unbroken = Trainer::new(&small_net(), &small_cfg()).unwrap();
    unbroken.run(&d, None, |_| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    let mut first = Trainer::new(&small_net(), &TrainConfig { max_iterations: 3, ..small_cfg() }).unwrap();
    first.run(&d, Some(&path), |_| Ok(())).unwrap();
    let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(resumed.iteration, 3);
    resumed.config.max_iterations = 6;
    resumed.run(&d, None, |_| Ok(())).unwrap();
    assert_eq!(resumed.params, unbroken.params);
    assert_eq!(resumed.adam, unbroken.adam);
}

#[test]
fn batches_do_not_depend_on_history() {
    let d = data();
    let mut t = Trainer::new(&small_net(), &small_cfg()).unwrap();
    let b3 = t.make_batch(&d, 3).unwrap();
    t.step(&d).unwrap();
    assert_eq!(t.make_batch(&d, 3).unwrap(), b3);
    assert_eq!(b3.inputs[0].shape(), Shape::new(2, 6, 12, 12));
    assert_eq!(b3.gt.shape(), Shape::new(2, 3, 12, 12));
}

#[test]
fn log_records_are_monotone_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("train.jsonl");
    let ck = dir.path().join("out.ckpt");
    let cfg = TrainConfig {
        max_iterations: 5,
        ..small_cfg()
    };
    train(&data(), &small_net(), &cfg, Some(&ck), Some(log.clone())).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let records: Vec<TrainRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let its: Vec<u64> = records.iter().map(|r| r.iteration).collect();
    assert_eq!(its, vec![2, 4, 5]);
    assert!(records.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0 && r.timestamp > 0.0));
    assert_eq!(Checkpoint::load(&ck).unwrap().iteration, 5);
}

#[test]
fn non_finite_loss_aborts_with_last_good_checkpoint() {
    let cfg = TrainConfig {
        learning_rate: 1e30,
        max_iterations: 20,
        ..small_cfg()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.ckpt");
    let mut t = Trainer::new(&small_net(), &cfg).unwrap();
    let err = t.run(&data(), Some(&path), |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    let ck = Checkpoint::load(&path).unwrap();
    assert!(ck.params.all_finite());
    assert_eq!(ck.iteration, t.iteration);
    assert_eq!(ck.params, t.params);
    assert!(t.iteration < 20);
}

#[test]
fn empty_dataset_rejected() {
    let mut t = Trainer::new(&small_net(), &small_cfg()).unwrap();
    assert!(matches!(t.step(&[]), Err(Error::Dataset(_))));
}

#[test]
fn oversized_patch_rejected() {
    let cfg = TrainConfig {
        patch_size: 17,
        ..small_cfg()
    };
    let mut t = Trainer::new(&small_net(), &cfg).unwrap();
    assert!(t.step(&data()).is_err());
}

#[test]
fn config_validation() {
    assert!(TrainConfig { batch_size: 0, ..small_cfg() }.validate().is_err());
    assert!(TrainConfig { adam_beta1: 1.0, ..small_cfg() }.validate().is_err());
    assert!(TrainConfig { learning_rate: f64::NAN, ..small_cfg() }.validate().is_err());
    assert!(TrainConfig { gamma: 1.0, ..small_cfg() }.validate().is_err());
    assert!(small_cfg().validate().is_ok());
}

#[test]
fn full_size_patch_is_identity() {
    let s = coordinate_sample(9, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = sample_patch(&s, 9, &mut rng).unwrap();
    assert_eq!(p.ldrs, s.ldrs);
    assert_eq!(p.gt, s.gt);
}

#[test]
fn crop_shares_window_across_images() {
    let s = coordinate_sample(20, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let p = sample_patch(&s, 6, &mut rng).unwrap();
        let top = (p.gt.radiance().at(0, 0, 0, 0) * 64.0).round() as usize;
        let left = (p.gt.radiance().at(0, 1, 0, 0) * 64.0).round() as usize;
        assert_eq!(p.gt.radiance(), &s.gt.radiance().crop(top, left, 6, 6).unwrap());
        for (l, src) in p.ldrs.iter().zip(&s.ldrs) {
            assert_eq!(l.ldr(), &src.ldr().crop(top, left, 6, 6).unwrap());
        }
    }
}

#[test]
fn marker_pixel_stays_aligned_through_crop_and_augment() {
    let h = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let (my, mx) = (rng.random_range(4..12), rng.random_range(4..12));
        let mark = |v: f32| Tensor::from_fn(Shape::new(1, 3, h, h), move |_, _, y, x| if (y, x) == (my, mx) { 1.0 } else { v });
        let ldrs = [-2, 0, 2].map(|b| ExposureImage::new(mark(0.1), b).unwrap());
        let s = SampleTriplet::new("m", ldrs, HdrImage::new(mark(0.2)).unwrap()).unwrap();
        let p = augment(&sample_patch(&s, 12, &mut rng).unwrap(), &mut rng).unwrap();
        let find = |t: &Tensor<f32>| t.data().iter().position(|&v| v == 1.0);
        let at = find(p.gt.radiance());
        for l in &p.ldrs {
            assert_eq!(find(l.ldr()), at);
        }
    }
}

#[test]
fn loss_is_invariant_under_shared_dihedral_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pred = Tensor::<f64>::from_fn(Shape::new(1, 3, 6, 6), |_, _, _, _| rng.random_range(0.0..1.0));
    let gt = Tensor::<f64>::from_fn(Shape::new(1, 3, 6, 6), |_, _, _, _| rng.random_range(0.0..1.0));
    let value = |p: &Tensor<f64>, g: &Tensor<f64>, kind| {
        let mut tape = Tape::new();
        let vp = tape.constant(p.clone());
        let vg = tape.constant(g.clone());
        let l = tonemapped_loss(&mut tape, vp, vg, kind, TonemapParams::default()).unwrap();
        tape.value(l).item().unwrap()
    };
    for kind in [LossKind::L1, LossKind::L2] {
        let base = value(&pred, &gt, kind);
        for d in Dihedral::all() {
            let l = value(&d.apply(&pred), &d.apply(&gt), kind);
            assert!((l - base).abs() <= 1e-15 * base.abs().max(1.0), "{d:?}");
        }
    }
}

#[test]
fn horizontal_flip_twice_is_identity() {
    let s = coordinate_sample(5, 5);
    let flip = Dihedral {
        flip: true,
        quarter_turns: 0,
    };
    let twice = augment_with(&augment_with(&s, flip).unwrap(), flip).unwrap();
    assert_eq!(twice.ldrs, s.ldrs);
    assert_eq!(twice.gt, s.gt);
    assert_eq!(augment_with(&s, Dihedral::IDENTITY).unwrap().gt, s.gt);
}

#[test]
fn short_run_reduces_loss() {
    let d = generate_samples(1, 2, (16, 16), &SceneOptions::default(), &SynthOptions::default()).unwrap();
    let cfg = TrainConfig {
        batch_size: 1,
        patch_size: 16,
        augment: false,
        learning_rate: 1e-3,
        ..small_cfg()
    };
    let mut t = Trainer::new(&small_net(), &cfg).unwrap();
    let first = t.step(&d).unwrap();
    let mut last = first;
    for _ in 0..40 {
        last = t.step(&d).unwrap();
    }
    assert!(last < 0.8 * first, "{first} -> {last}");
}
