//! Argument parsing and subcommand dispatch for the `ahdr` binary.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (I/O, malformed files, checkpoint problems), 3 numeric failure.
//! Every failure prints one line to stderr starting with `ahdr: error[<kind>]:`.

use std::io::Write;
use std::path::{Path, PathBuf};

use ahdr_core::gradcheck::{run_suite, SUITES};
use ahdr_core::hdr::{mu_law_tonemap, ExposureImage, GammaParams, TonemapParams};
use ahdr_core::io::dataset::{load_dataset, parse_biases};
use ahdr_core::io::pfm::{read_pfm, write_pfm};
use ahdr_core::io::ppm::{read_ppm, write_ppm};
use ahdr_core::io::BitDepth;
use ahdr_core::metrics::{baseline_merge, evaluate, evaluate_with, fingerprint, reference_only};
use ahdr_core::network::{predict, NetConfig, Variant};
use ahdr_core::synth::{dataset_generate, RenderOptions, SceneOptions, SynthOptions};
use ahdr_core::train::{LossKind, TrainConfig, Trainer};
use ahdr_core::{Checkpoint, Error};
use ahdr_tensor::Tensor;
use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ahdr", version, about = "Merge bracketed LDR exposures into an HDR image")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 64 channels, growth 32, 3 blocks.
    Full,
    /// 16 channels, growth 8, 3 blocks.
    Miniature,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "-2,0,2", allow_hyphen_values = true)]
        biases: String,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Bits per LDR sample; 0 disables quantization.
        #[arg(long, default_value_t = 8)]
        quantize_bits: u32,
        /// Standard deviation of additive Gaussian noise on the LDR frames.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Minimum per-frame motion of the first object, in pixels.
        #[arg(long, default_value_t = 3.0)]
        min_motion: f64,
        #[arg(long, default_value_t = 6.0)]
        max_motion: f64,
    },
    /// Train a network on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "ahdr")]
        variant: Variant,
        #[arg(long, default_value_t = 1000)]
        iters: u64,
        #[arg(long, default_value_t = 256)]
        patch: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 1e-5)]
        lr: f64,
        #[arg(long, default_value = "l1")]
        loss: LossKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Preset::Full)]
        preset: Preset,
        #[arg(long)]
        base_channels: Option<usize>,
        #[arg(long)]
        growth_rate: Option<usize>,
        #[arg(long)]
        num_blocks: Option<usize>,
        /// Disable random flips and rotations.
        #[arg(long)]
        no_augment: bool,
        #[arg(long, default_value_t = 10)]
        log_every: u64,
        /// Also write log records to this file (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: u64,
        /// Continue from a checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Merge three exposures with a trained network.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        low: PathBuf,
        #[arg(long)]
        mid: PathBuf,
        #[arg(long)]
        high: PathBuf,
        #[arg(long, default_value = "-2,0,2", allow_hyphen_values = true)]
        biases: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the μ-law tonemapped result as an 8-bit PPM.
        #[arg(long)]
        tonemapped: Option<PathBuf>,
        /// Write each attention channel as a PFM into this directory.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Append reports for the reference-only and triangle-merge baselines.
        #[arg(long)]
        baselines: bool,
    },
    /// μ-law tonemap a PFM into an 8-bit PPM.
    Tonemap {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 5000.0)]
        mu: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run finite-difference gradient checks.
    Gradcheck {
        /// `all` or one suite name.
        #[arg(long, default_value = "all")]
        ops: String,
    },
}

/// Failure of a subcommand, classified for the exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    Check(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<ahdr_tensor::TensorError> for CliError {
    fn from(e: ahdr_tensor::TensorError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Check(_) => EXIT_NUMERIC,
            CliError::Core(e) => match e {
                Error::InvalidParam(_) | Error::Config(_) => EXIT_USAGE,
                Error::NonFinite(_) => EXIT_NUMERIC,
                Error::Tensor(_)
                | Error::Io { .. }
                | Error::Format { .. }
                | Error::Checkpoint(_)
                | Error::StructuralMismatch { .. }
                | Error::Dataset(_) => EXIT_DATA,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_USAGE => "usage",
            EXIT_NUMERIC => "numeric",
            _ => "data",
        }
    }

    /// Single-line diagnostic.
    pub fn line(&self) -> String {
        let msg = match self {
            CliError::Usage(m) | CliError::Check(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        };
        format!("ahdr: error[{}]: {}", self.kind(), msg.replace(['\n', '\r'], " "))
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
                let first = text.lines().next().unwrap_or("invalid arguments");
                let first = first.trim_start_matches("error: ");
                let _ = writeln!(err, "ahdr: error[usage]: {first}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{}", e.line());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cmd {
        Command::GenData {
            count,
            seed,
            out: dir,
            biases,
            width,
            height,
            quantize_bits,
            noise,
            min_motion,
            max_motion,
        } => {
            let biases = sorted_biases(&biases)?;
            if width == 0 || height == 0 {
                return Err(CliError::Usage(format!("image size {width}x{height} is empty")));
            }
            if quantize_bits > 16 {
                return Err(CliError::Usage(format!("--quantize-bits {quantize_bits} exceeds 16")));
            }
            if !(noise >= 0.0 && noise.is_finite()) {
                return Err(CliError::Usage(format!("--noise {noise} must be non-negative")));
            }
            if !(min_motion >= 0.0 && max_motion >= min_motion) {
                return Err(CliError::Usage("motion range must satisfy 0 <= min <= max".into()));
            }
            let opts = SynthOptions {
                biases,
                gamma: GammaParams::default(),
                render: RenderOptions {
                    quantize_bits,
                    noise_sigma: noise,
                },
            };
            let scene = SceneOptions {
                min_motion,
                max_motion,
                ..SceneOptions::default()
            };
            let entries = dataset_generate(count, seed, &dir, (width, height), &scene, &opts)?;
            writeln!(out, "wrote {} samples to {}", entries.len(), dir.display()).ok();
            Ok(())
        }
        Command::Train {
            data,
            out: ckpt_path,
            variant,
            iters,
            patch,
            batch,
            lr,
            loss,
            seed,
            preset,
            base_channels,
            growth_rate,
            num_blocks,
            no_augment,
            log_every,
            log,
            checkpoint_every,
            resume,
        } => {
            let mut net = match preset {
                Preset::Full => NetConfig::default(),
                Preset::Miniature => NetConfig::miniature(),
            };
            if let Some(c) = base_channels {
                net.base_channels = c;
            }
            if let Some(g) = growth_rate {
                net.growth_rate = g;
            }
            if let Some(n) = num_blocks {
                net.num_drdb = n;
            }
            let net = net.with_variant(variant);
            let cfg = TrainConfig {
                batch_size: batch,
                learning_rate: lr,
                patch_size: patch,
                loss,
                max_iterations: iters,
                seed,
                augment: !no_augment,
                log_every,
                checkpoint_every,
                ..TrainConfig::default()
            };
            net.validate()?;
            cfg.validate()?;
            let samples = load_dataset(&data)?;
            if samples.is_empty() {
                return Err(Error::Dataset(format!("{}: manifest lists no samples", data.display())).into());
            }
            let mut trainer = match resume {
                Some(p) => {
                    let mut t = Trainer::from_checkpoint(Checkpoint::load_for(&p, &net)?)?;
                    t.config = TrainConfig {
                        seed: t.config.seed,
                        ..cfg
                    };
                    t
                }
                None => Trainer::new(&net, &cfg)?,
            };
            let mut log_file = match &log {
                Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?),
                None => None,
            };
            trainer.run(&samples, Some(&ckpt_path), |r| {
                let line = r.to_json_line();
                writeln!(out, "{line}").ok();
                if let (Some(f), Some(p)) = (log_file.as_mut(), log.as_ref()) {
                    writeln!(f, "{line}").map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                }
                Ok(())
            })?;
            writeln!(err, "saved checkpoint {} after {} iterations", ckpt_path.display(), trainer.iteration).ok();
            Ok(())
        }
        Command::Infer {
            ckpt,
            low,
            mid,
            high,
            biases,
            out: out_path,
            tonemapped,
            dump_attention,
        } => {
            let biases = sorted_biases(&biases)?;
            let ck = Checkpoint::load(&ckpt)?;
            if dump_attention.is_some() && !ck.params.config.use_attention {
                return Err(CliError::Usage("--dump-attention: this network has no attention modules".into()));
            }
            let g = ck.train_config.gamma_params();
            let mut ldrs = Vec::with_capacity(3);
            for (p, b) in [&low, &mid, &high].into_iter().zip(biases) {
                ldrs.push(ExposureImage::new(read_ppm(p)?, b)?);
            }
            let dims: Vec<(usize, usize)> = ldrs.iter().map(|l| (l.height(), l.width())).collect();
            if dims.iter().any(|d| *d != dims[0]) {
                return Err(Error::Dataset(format!("input images differ in size: {dims:?}")).into());
            }
            let inputs = [
                ahdr_core::hdr::build_input(&ldrs[0], g)?,
                ahdr_core::hdr::build_input(&ldrs[1], g)?,
                ahdr_core::hdr::build_input(&ldrs[2], g)?,
            ];
            let (hdr, attention) = predict(&ck.params, inputs.each_ref(), dump_attention.is_some())?;
            if !hdr.all_finite() {
                return Err(Error::NonFinite("network output".into()).into());
            }
            write_pfm(&out_path, &hdr)?;
            if let Some(p) = tonemapped {
                let t = mu_law_tonemap(&hdr, ck.train_config.tonemap_params())?;
                write_ppm(&p, &t, BitDepth::Eight)?;
            }
            if let (Some(dir), Some(maps)) = (dump_attention, attention) {
                dump_maps(&dir, &maps)?;
            }
            Ok(())
        }
        Command::Eval {
            ckpt,
            data,
            report,
            baselines,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let samples = load_dataset(&data)?;
            let g = ck.train_config.gamma_params();
            let tm = ck.train_config.tonemap_params();
            let r = evaluate(&ck.params, &samples, g, tm)?;
            let mut text = r.to_text();
            writeln!(out, "network mean PSNR-mu {:.4} dB, PSNR-L {:.4} dB", r.mean_psnr_mu(), r.mean_psnr_l()).ok();
            if baselines {
                let fp = fingerprint(&g);
                let methods: [(&str, fn(&ahdr_core::SampleTriplet, GammaParams) -> ahdr_core::Result<ahdr_core::HdrImage>); 2] =
                    [("reference-only", reference_only), ("triangle-merge", baseline_merge)];
                for (name, f) in methods {
                    let b = evaluate_with(name, fp.clone(), &samples, tm, |s| f(s, g))?;
                    writeln!(out, "{name} mean PSNR-mu {:.4} dB, PSNR-L {:.4} dB", b.mean_psnr_mu(), b.mean_psnr_l()).ok();
                    text.push('\n');
                    text.push_str(&b.to_text());
                }
            }
            ahdr_core::io::write_atomic(&report, text.as_bytes())?;
            Ok(())
        }
        Command::Tonemap { input, mu, out: out_path } => {
            let tm = TonemapParams::new(mu)?;
            let h = read_pfm(&input)?;
            write_ppm(&out_path, &mu_law_tonemap(&h, tm)?, BitDepth::Eight)?;
            Ok(())
        }
        Command::Gradcheck { ops } => {
            if ops != "all" && !SUITES.contains(&ops.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown suite `{ops}` (expected all, {})",
                    SUITES.join(", ")
                )));
            }
            let outcomes = run_suite(&ops)?;
            let mut failed = 0;
            for o in &outcomes {
                let status = if o.passed() { "PASS" } else { "FAIL" };
                writeln!(
                    out,
                    "{status} {:<12} {:<16} max_rel_error {:.3e} (tolerance {:.0e}, {} elements)",
                    o.suite, o.name, o.max_rel_error, o.tolerance, o.checked
                )
                .ok();
                failed += usize::from(!o.passed());
            }
            if failed > 0 {
                return Err(CliError::Check(format!("{failed} of {} gradient checks failed", outcomes.len())));
            }
            Ok(())
        }
    }
}

fn sorted_biases(s: &str) -> CliResult<[i32; 3]> {
    let b = parse_biases(s)?;
    if !(b[0] <= b[1] && b[1] <= b[2]) {
        return Err(CliError::Usage(format!("biases `{s}` must be sorted shortest exposure first")));
    }
    if b.iter().any(|v| v.abs() > 30) {
        return Err(CliError::Usage(format!("biases `{s}` out of range")));
    }
    Ok(b)
}

fn dump_maps(dir: &Path, maps: &[Tensor<f32>; 2]) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (name, map) in ["low", "high"].iter().zip(maps) {
        for c in 0..map.shape().channels() {
            let ch = map.slice_channels(c, 1)?;
            let rgb = Tensor::concat_channels(&[&ch, &ch, &ch])?;
            write_pfm(&dir.join(format!("attention_{name}_c{c:03}.pfm")), &rgb)?;
        }
    }
    Ok(())
}
