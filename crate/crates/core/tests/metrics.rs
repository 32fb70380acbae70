use ahdr_core::hdr::{mu_law_tonemap, ExposureImage, GammaParams, HdrImage, TonemapParams};
use ahdr_core::metrics::{baseline_merge, psnr, psnr_l, psnr_mu, reference_only};
use ahdr_core::synth::{gen_scene, make_sample, SampleTriplet, SceneOptions, SceneSpec, SynthOptions};
use ahdr_tensor::{Shape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rand::Rng::random_range(&mut rng, 0.0..1.0))
}

fn static_scene(seed: u64) -> SceneSpec {
    let mut spec = SceneSpec::random(48, 48, seed, &SceneOptions::default());
    for o in &mut spec.objects {
        o.displacement = (0.0, 0.0);
    }
    spec
}

#[test]
fn psnr_noise_sweep_is_monotone() {
    let a = image(1, 16, 16);
    let mut last = f64::INFINITY;
    for sigma in [0.001, 0.01, 0.03, 0.1] {
        let n = Normal::new(0.0f32, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = a.data().iter().map(|v| v + n.sample(&mut rng)).collect();
        let b = Tensor::new(a.shape(), data).unwrap();
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!(p < last, "sigma {sigma}: {p} !< {last}");
        last = p;
    }
}

#[test]
fn dark_errors_hurt_tonemapped_psnr_more() {
    let gt = Tensor::<f32>::from_fn(Shape::new(1, 3, 8, 8), |_, _, y, _| if y < 4 { 0.01 } else { 0.8 });
    let pred = Tensor::from_fn(gt.shape(), |_, _, y, _| if y < 4 { 0.012 } else { 0.8 });
    let tm = TonemapParams::default();
    assert!(psnr_mu(&pred, &gt, tm).unwrap() < psnr_l(&pred, &gt).unwrap());
}

#[test]
fn psnr_mu_matches_inlined_formula_bitwise() {
    let a = image(3, 7, 5);
    let b = image(4, 7, 5);
    let tm = TonemapParams::default();
    let ta = mu_law_tonemap(&a, tm).unwrap();
    let tb = mu_law_tonemap(&b, tm).unwrap();
    let mut sse = 0.0f64;
    for (x, y) in ta.data().iter().zip(tb.data()) {
        let d = *x as f64 - *y as f64;
        sse += d * d;
    }
    let inlined = 10.0 * (1.0 / (sse / ta.len() as f64)).log10();
    assert_eq!(psnr_mu(&a, &b, tm).unwrap().to_bits(), inlined.to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_symmetric_and_permutation_invariant(
        sa in any::<u64>(),
        sb in any::<u64>(),
        perm_seed in any::<u64>(),
    ) {
        let a = image(sa, 4, 6);
        let b = image(sb, 4, 6);
        let pab = psnr(&a, &b, 1.0).unwrap();
        prop_assert_eq!(pab.to_bits(), psnr(&b, &a, 1.0).unwrap().to_bits());
        let mut order: Vec<usize> = (0..a.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let permute = |t: &Tensor<f32>| Tensor::new(t.shape(), order.iter().map(|&i| t.data()[i]).collect()).unwrap();
        let pp = psnr(&permute(&a), &permute(&b), 1.0).unwrap();
        prop_assert!((pp - pab).abs() <= 1e-9 * pab.abs());
    }
}

#[test]
fn baseline_on_static_scenes_exceeds_forty_db() {
    let g = GammaParams::default();
    for seed in 0..5 {
        let s = make_sample("s", &static_scene(seed), &SynthOptions::default()).unwrap();
        let merged = baseline_merge(&s, g).unwrap();
        let p = psnr_l(merged.radiance(), s.gt.radiance()).unwrap();
        assert!(p > 40.0, "seed {seed}: {p:.2} dB");
    }
}

#[test]
fn baseline_ghosts_inside_motion_mask() {
    let g = GammaParams::default();
    let spec = SceneSpec::random(48, 48, 7, &SceneOptions::default());
    let frames = gen_scene(&spec).unwrap();
    let s = make_sample("s", &spec, &SynthOptions::default()).unwrap();
    let merged = baseline_merge(&s, g).unwrap();
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
    let gt = s.gt.radiance().data();
    for (k, (&m, &t)) in merged.radiance().data().iter().zip(gt).enumerate() {
        let moving = frames.iter().any(|f| f.radiance().data()[k] != gt[k]);
        let e = ((m - t) as f64).powi(2);
        if moving {
            inside += e;
            n_in += 1;
        } else {
            outside += e;
            n_out += 1;
        }
    }
    assert!(n_in > 0 && n_out > 0);
    let (mi, mo) = (inside / n_in as f64, outside / n_out as f64);
    assert!(mi > 10.0 * mo, "inside {mi:e} outside {mo:e}");
}

#[test]
fn baseline_of_identical_exposures_is_that_image() {
    let g = GammaParams::default();
    let ldr = image(8, 6, 6);
    let ldrs = [0, 0, 0].map(|b| ExposureImage::new(ldr.clone(), b).unwrap());
    let gt = HdrImage::new(Tensor::zeros(ldr.shape())).unwrap();
    let s = SampleTriplet::new("same", ldrs, gt).unwrap();
    let merged = baseline_merge(&s, g).unwrap();
    assert_eq!(merged.radiance(), reference_only(&s, g).unwrap().radiance());
}

#[test]
fn baseline_falls_back_when_everything_clips() {
    let g = GammaParams::default();
    let white = Tensor::<f32>::ones(Shape::new(1, 3, 2, 2));
    let ldrs = [-2, 0, 2].map(|b| ExposureImage::new(white.clone(), b).unwrap());
    let s = SampleTriplet::new("w", ldrs, HdrImage::new(white.clone()).unwrap()).unwrap();
    let merged = baseline_merge(&s, g).unwrap();
    assert!(merged.radiance().data().iter().all(|&v| v == 1.0));
}

#[test]
fn reference_only_is_exact_where_unsaturated_without_quantization() {
    let opts = SynthOptions {
        render: ahdr_core::synth::RenderOptions {
            quantize_bits: 0,
            noise_sigma: 0.0,
        },
        ..SynthOptions::default()
    };
    let s = make_sample("s", &static_scene(3), &opts).unwrap();
    let r = reference_only(&s, GammaParams::default()).unwrap();
    for (a, b) in r.radiance().data().iter().zip(s.gt.radiance().data()) {
        assert!((a - b).abs() <= 1e-5 * b.max(1e-3), "{a} vs {b}");
    }
}
