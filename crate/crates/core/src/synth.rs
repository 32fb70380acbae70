//! Procedural HDR scenes and bracketed LDR captures with object motion and
//! saturation.
//!
//! A scene is a smooth background radiance field plus flat-coloured disks
//! and rectangles. Each object translates rigidly between the three frames;
//! the middle frame is the ground truth. Frames are rendered through the
//! camera model `I = quantize(clip((h·t)^(1/γ) + noise))`.

use std::path::Path;

use ahdr_tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdr::{build_input, exposure_time, ExposureImage, GammaParams, HdrImage};
use crate::io::dataset::{write_dataset_sample, write_manifest, ManifestEntry};
use crate::seed::derive_seed;

/// Linear change of log2 radiance across the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub angle: f64,
    /// Stops gained over one canvas length along `angle`.
    pub stops: f64,
}

/// Sinusoidal modulation of log2 radiance; frequencies in cycles per canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub freq_x: f64,
    pub freq_y: f64,
    pub phase: f64,
    pub stops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// log2 radiance at the canvas origin before ramps and waves.
    pub log2_offset: f64,
    pub ramps: Vec<Ramp>,
    pub waves: Vec<Wave>,
    /// Per-channel multiplier in `(0, 1]`.
    pub tint: [f64; 3],
}

impl Background {
    fn radiance(&self, u: f64, v: f64, channel: usize) -> f64 {
        let mut l = self.log2_offset;
        for r in &self.ramps {
            l += r.stops * (r.angle.cos() * u + r.angle.sin() * v);
        }
        for w in &self.waves {
            l += w.stops * (std::f64::consts::TAU * (w.freq_x * u + w.freq_y * v) + w.phase).sin();
        }
        (self.tint[channel] * l.exp2()).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObjectShape {
    Disk { radius: f64 },
    Rect { half_width: f64, half_height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: ObjectShape,
    pub radiance: [f64; 3],
    /// Centre `(x, y)` in pixels in the reference frame.
    pub center: (f64, f64),
    /// Translation `(dx, dy)` in pixels between consecutive frames.
    pub displacement: (f64, f64),
}

impl SceneObject {
    fn covers(&self, x: f64, y: f64, frame_offset: f64) -> bool {
        let cx = self.center.0 + frame_offset * self.displacement.0;
        let cy = self.center.1 + frame_offset * self.displacement.1;
        match self.shape {
            ObjectShape::Disk { radius } => (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius,
            ObjectShape::Rect {
                half_width,
                half_height,
            } => (x - cx).abs() <= half_width && (y - cy).abs() <= half_height,
        }
    }

    fn half_extent(&self) -> (f64, f64) {
        match self.shape {
            ObjectShape::Disk { radius } => (radius, radius),
            ObjectShape::Rect {
                half_width,
                half_height,
            } => (half_width, half_height),
        }
    }

    pub fn motion(&self) -> f64 {
        self.displacement.0.hypot(self.displacement.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Background,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

/// Knobs for [`SceneSpec::random`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneOptions {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Lower bound on the motion of the first object, in pixels per frame.
    pub min_motion: f64,
    pub max_motion: f64,
    /// Force the first object's radiance above 0.5 so bright exposures clip.
    pub bright_object: bool,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            min_objects: 2,
            max_objects: 4,
            min_motion: 3.0,
            max_motion: 6.0,
            bright_object: true,
        }
    }
}

impl SceneSpec {
    /// Draws a random scene; identical arguments give identical scenes.
    pub fn random(width: usize, height: usize, seed: u64, opts: &SceneOptions) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tint = [
            rng.random_range(0.6..=1.0),
            rng.random_range(0.6..=1.0),
            rng.random_range(0.6..=1.0),
        ];
        let n_ramps = rng.random_range(1..=2);
        let ramps = (0..n_ramps)
            .map(|_| Ramp {
                angle: rng.random_range(0.0..std::f64::consts::TAU),
                stops: rng.random_range(-4.0..4.0),
            })
            .collect();
        let waves = (0..2)
            .map(|_| Wave {
                freq_x: rng.random_range(0.3..2.5),
                freq_y: rng.random_range(0.3..2.5),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                stops: rng.random_range(0.3..1.5),
            })
            .collect();
        let background = Background {
            log2_offset: rng.random_range(-7.0..-1.0),
            ramps,
            waves,
            tint,
        };

        let side = width.min(height) as f64;
        let n = rng.random_range(opts.min_objects..=opts.max_objects.max(opts.min_objects));
        let mut objects = Vec::with_capacity(n);
        for i in 0..n {
            let shape = if rng.random_bool(0.5) {
                ObjectShape::Disk {
                    radius: rng.random_range(0.08..0.2) * side,
                }
            } else {
                ObjectShape::Rect {
                    half_width: rng.random_range(0.06..0.2) * side,
                    half_height: rng.random_range(0.06..0.2) * side,
                }
            };
            let level: f64 = if i == 0 && opts.bright_object {
                rng.random_range(0.5..=1.0)
            } else {
                rng.random_range(-8.0f64..0.0).exp2()
            };
            let radiance = [
                level * rng.random_range(0.7..=1.0),
                level * rng.random_range(0.7..=1.0),
                level * rng.random_range(0.7..=1.0),
            ];
            let motion = if i == 0 {
                rng.random_range(opts.min_motion..=opts.max_motion.max(opts.min_motion))
            } else {
                rng.random_range(0.0..=opts.max_motion.max(0.0))
            };
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let mut object = SceneObject {
                shape,
                radiance,
                center: (0.0, 0.0),
                displacement: (motion * dir.cos(), motion * dir.sin()),
            };
            let (hx, hy) = object.half_extent();
            let cx = if width as f64 > 2.0 * hx + 1.0 {
                rng.random_range(hx..(width as f64 - 1.0 - hx))
            } else {
                (width as f64 - 1.0) / 2.0
            };
            let cy = if height as f64 > 2.0 * hy + 1.0 {
                rng.random_range(hy..(height as f64 - 1.0 - hy))
            } else {
                (height as f64 - 1.0) / 2.0
            };
            object.center = (cx, cy);
            objects.push(object);
        }
        SceneSpec {
            width,
            height,
            background,
            objects,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParam(format!(
                "degenerate canvas {}x{}",
                self.width, self.height
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.radiance.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::InvalidParam(format!("object {i} radiance outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Renders the three radiance frames; frame `f ∈ {0, 1, 2}` shifts each
/// object by `(f − 1)·displacement`. The middle frame is the ground truth.
pub fn gen_scene(spec: &SceneSpec) -> Result<[HdrImage; 3]> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let frame = |offset: f64| -> Result<HdrImage> {
        let t = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
            let (xf, yf) = (x as f64, y as f64);
            let top = spec.objects.iter().rev().find(|o| o.covers(xf, yf, offset));
            let v = match top {
                Some(o) => o.radiance[c],
                None => spec.background.radiance(xf / w as f64, yf / h as f64, c),
            };
            v.clamp(0.0, 1.0) as f32
        });
        HdrImage::new(t)
    };
    Ok([frame(-1.0)?, frame(0.0)?, frame(1.0)?])
}

/// Camera model parameters for [`render_ldr`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Output bit depth; 0 disables quantization.
    pub quantize_bits: u32,
    /// Standard deviation of additive Gaussian noise in the LDR domain.
    pub noise_sigma: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            quantize_bits: 8,
            noise_sigma: 0.0,
        }
    }
}

/// Rounds `v ∈ [0, 1]` to the nearest code at `bits` bits.
pub fn quantize(v: f64, bits: u32) -> f64 {
    if bits == 0 {
        return v;
    }
    let levels = ((1u64 << bits) - 1) as f64;
    (v * levels).round() / levels
}

/// Forward camera model for one exposure.
pub fn render_ldr<R: Rng + ?Sized>(
    h: &HdrImage,
    bias: i32,
    g: GammaParams,
    opts: &RenderOptions,
    rng: &mut R,
) -> Result<ExposureImage> {
    let t = exposure_time(bias);
    let inv_gamma = 1.0 / g.gamma;
    let noise = if opts.noise_sigma > 0.0 {
        Some(Normal::new(0.0, opts.noise_sigma).map_err(|e| Error::InvalidParam(e.to_string()))?)
    } else {
        None
    };
    let data = h
        .radiance()
        .data()
        .iter()
        .map(|&r| {
            let mut v = (r as f64 * t).powf(inv_gamma);
            if let Some(n) = &noise {
                v += n.sample(rng);
            }
            quantize(v.clamp(0.0, 1.0), opts.quantize_bits) as f32
        })
        .collect();
    ExposureImage::new(Tensor::new(h.radiance().shape(), data)?, bias)
}

/// Three exposures plus the ground truth aligned to the middle one.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTriplet {
    pub id: String,
    /// Sorted by exposure, shortest first.
    pub ldrs: [ExposureImage; 3],
    pub gt: HdrImage,
    pub meta: Option<SceneSpec>,
}

impl SampleTriplet {
    pub fn new(id: impl Into<String>, ldrs: [ExposureImage; 3], gt: HdrImage) -> Result<Self> {
        let b = ldrs.each_ref().map(|l| l.bias());
        if !(b[0] <= b[1] && b[1] <= b[2]) {
            return Err(Error::Dataset(format!("exposures not sorted by bias: {b:?}")));
        }
        let (h, w) = (gt.height(), gt.width());
        if gt.radiance().shape().batch() != 1 {
            return Err(Error::Dataset("ground truth must have batch size 1".into()));
        }
        for l in &ldrs {
            if (l.height(), l.width()) != (h, w) {
                return Err(Error::Dataset(format!(
                    "LDR is {}x{} but ground truth is {h}x{w}",
                    l.width(),
                    l.height()
                )));
            }
        }
        Ok(SampleTriplet {
            id: id.into(),
            ldrs,
            gt,
            meta: None,
        })
    }

    pub fn height(&self) -> usize {
        self.gt.height()
    }

    pub fn width(&self) -> usize {
        self.gt.width()
    }

    pub fn biases(&self) -> [i32; 3] {
        self.ldrs.each_ref().map(|l| l.bias())
    }

    pub fn reference(&self) -> &ExposureImage {
        &self.ldrs[1]
    }

    /// Applies the same spatial transform to all four images. Scene
    /// metadata no longer matches the pixels and is dropped.
    pub fn map_images(&self, mut f: impl FnMut(&Tensor<f32>) -> Result<Tensor<f32>>) -> Result<Self> {
        let mut ldrs = Vec::with_capacity(3);
        for l in &self.ldrs {
            ldrs.push(ExposureImage::new(f(l.ldr())?, l.bias())?);
        }
        let ldrs: [ExposureImage; 3] = ldrs.try_into().expect("three exposures");
        let gt = HdrImage::new(f(self.gt.radiance())?)?;
        SampleTriplet::new(self.id.clone(), ldrs, gt)
    }

    /// Six-channel network inputs, shortest exposure first.
    pub fn inputs(&self, g: GammaParams) -> Result<[Tensor<f32>; 3]> {
        Ok([
            build_input(&self.ldrs[0], g)?,
            build_input(&self.ldrs[1], g)?,
            build_input(&self.ldrs[2], g)?,
        ])
    }
}

/// Capture protocol for [`make_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub biases: [i32; 3],
    pub gamma: GammaParams,
    pub render: RenderOptions,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            biases: [-2, 0, 2],
            gamma: GammaParams::default(),
            render: RenderOptions::default(),
        }
    }
}

/// Renders a scene into a training/evaluation sample.
pub fn make_sample(id: impl Into<String>, spec: &SceneSpec, opts: &SynthOptions) -> Result<SampleTriplet> {
    let [f0, f1, f2] = gen_scene(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0x6e6f697365]));
    let b = opts.biases;
    let ldrs = [
        render_ldr(&f0, b[0], opts.gamma, &opts.render, &mut rng)?,
        render_ldr(&f1, b[1], opts.gamma, &opts.render, &mut rng)?,
        render_ldr(&f2, b[2], opts.gamma, &opts.render, &mut rng)?,
    ];
    let mut sample = SampleTriplet::new(id, ldrs, f1)?;
    sample.meta = Some(spec.clone());
    Ok(sample)
}

pub fn sample_id(index: usize) -> String {
    format!("sample_{index:04}")
}

/// Scene seed for sample `index` of a dataset.
pub fn sample_seed(base_seed: u64, index: usize) -> u64 {
    derive_seed(base_seed, &[index as u64])
}

/// Generates `n` samples in memory; sample `i` depends only on
/// `(base_seed, i)`.
pub fn generate_samples(
    n: usize,
    base_seed: u64,
    (width, height): (usize, usize),
    scene: &SceneOptions,
    opts: &SynthOptions,
) -> Result<Vec<SampleTriplet>> {
    (0..n)
        .map(|i| {
            let spec = SceneSpec::random(width, height, sample_seed(base_seed, i), scene);
            make_sample(sample_id(i), &spec, opts)
        })
        .collect()
}

/// Writes `n` generated samples and a manifest under `out_dir`.
pub fn dataset_generate(
    n: usize,
    base_seed: u64,
    out_dir: &Path,
    size: (usize, usize),
    scene: &SceneOptions,
    opts: &SynthOptions,
) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let depth = crate::io::BitDepth::for_quantization(opts.render.quantize_bits);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let seed = sample_seed(base_seed, i);
        let spec = SceneSpec::random(size.0, size.1, seed, scene);
        let sample = make_sample(sample_id(i), &spec, opts)?;
        write_dataset_sample(out_dir, &sample, depth)?;
        entries.push(ManifestEntry {
            id: sample.id.clone(),
            biases: sample.biases(),
            seed: Some(seed),
        });
    }
    write_manifest(out_dir, &entries)?;
    Ok(entries)
}
