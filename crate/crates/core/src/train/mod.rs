//! Losses, optimizer, initialization, augmentation and the training loop.

pub mod adam;
pub mod augment;
pub mod init;
pub mod loss;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ahdr_tensor::{Element, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamHyper, AdamState, Moments};
pub use augment::{augment, augment_with, sample_patch, Dihedral};
pub use init::{xavier_bound, xavier_init};
pub use loss::{loss_l1, loss_l2, tonemapped_loss, LossKind};

use crate::error::{Error, Result};
use crate::hdr::{GammaParams, TonemapParams};
use crate::io::checkpoint::Checkpoint;
use crate::network::{ahdr_forward, build_variant, NetConfig, NetworkParams};
use crate::seed::derive_seed;
use crate::synth::SampleTriplet;

const INIT_STREAM: u64 = 0x696e6974;
const BATCH_STREAM: u64 = 0x62617463;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patch_size: usize,
    pub loss: LossKind,
    pub max_iterations: u64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Random dihedral transform per patch.
    pub augment: bool,
    /// Emit a record every this many iterations (and after the last one).
    pub log_every: u64,
    /// Save a checkpoint every this many iterations; 0 saves only at the end.
    pub checkpoint_every: u64,
    pub gamma: f64,
    pub mu: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-5,
            patch_size: 256,
            loss: LossKind::L1,
            max_iterations: 1000,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            augment: true,
            log_every: 10,
            checkpoint_every: 0,
            gamma: 2.2,
            mu: 5000.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.patch_size == 0 {
            return bad("patch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps {} must be positive", self.adam_eps));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        GammaParams::new(self.gamma)?;
        TonemapParams::new(self.mu)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn gamma_params(&self) -> GammaParams {
        GammaParams { gamma: self.gamma }
    }

    pub fn tonemap_params(&self) -> TonemapParams {
        TonemapParams { mu: self.mu }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Number of completed updates.
    pub iteration: u64,
    pub loss: f64,
    /// Seconds since the start of this run.
    pub wall_time_s: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr_l: Option<f64>,
}

impl TrainRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// A batch of network inputs and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: [Tensor<f32>; 3],
    pub gt: Tensor<f32>,
}

/// Mutable training state: parameters, optimizer moments and progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub params: NetworkParams<f32>,
    pub adam: AdamState<f32>,
    pub config: TrainConfig,
    pub iteration: u64,
}

impl Trainer {
    /// Fresh Xavier-initialized parameters derived from `cfg.seed`.
    pub fn new(net: &NetConfig, cfg: &TrainConfig) -> Result<Self> {
        net.validate()?;
        cfg.validate()?;
        let params = build_variant(net, derive_seed(cfg.seed, &[INIT_STREAM]))?;
        let adam = AdamState::new(&params);
        Ok(Trainer {
            params,
            adam,
            config: *cfg,
            iteration: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.train_config.validate()?;
        Ok(Trainer {
            params: ck.params,
            adam: ck.adam,
            config: ck.train_config,
            iteration: ck.iteration,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            train_config: self.config,
            iteration: self.iteration,
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Assembles the batch for `iteration`. Each slot draws its sample,
    /// crop window and transform from its own stream seeded by
    /// `(seed, iteration, slot)`, so batches do not depend on call order.
    pub fn make_batch(&self, data: &[SampleTriplet], iteration: u64) -> Result<Batch> {
        if data.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let g = self.config.gamma_params();
        let mut inputs: [Vec<Tensor<f32>>; 3] = Default::default();
        let mut gts = Vec::with_capacity(self.config.batch_size);
        for slot in 0..self.config.batch_size {
            let seed = derive_seed(self.config.seed, &[BATCH_STREAM, iteration, slot as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = &data[rng.random_range(0..data.len())];
            let mut patch = sample_patch(sample, self.config.patch_size, &mut rng)?;
            if self.config.augment {
                patch = augment(&patch, &mut rng)?;
            }
            for (dst, x) in inputs.iter_mut().zip(patch.inputs(g)?) {
                dst.push(x);
            }
            gts.push(patch.gt.into_tensor());
        }
        let stack = |v: &[Tensor<f32>]| Tensor::stack_batch(&v.iter().collect::<Vec<_>>());
        Ok(Batch {
            inputs: [stack(&inputs[0])?, stack(&inputs[1])?, stack(&inputs[2])?],
            gt: stack(&gts)?,
        })
    }

    /// Loss and parameter gradients (canonical order) on one batch.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, Vec<Tensor<f32>>)> {
        let mut tape = Tape::new();
        let net = self.params.bind(&mut tape, true);
        let xs = [
            tape.constant(batch.inputs[0].clone()),
            tape.constant(batch.inputs[1].clone()),
            tape.constant(batch.inputs[2].clone()),
        ];
        let trace = ahdr_forward(&mut tape, xs, &net, &self.params.config)?;
        let gt = tape.constant(batch.gt.clone());
        let loss = tonemapped_loss(&mut tape, trace.output, gt, self.config.loss, self.config.tonemap_params())?;
        let value = tape.value(loss).item().expect("scalar loss").to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss is {value}")));
        }
        tape.backward(loss)?;
        let mut grads = Vec::new();
        net.for_each(|_, b| {
            for v in [b.weight, b.bias] {
                let g = tape.take_grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                grads.push(g);
            }
        });
        Ok((value, grads))
    }

    /// One optimization step; returns the loss before the update. On a
    /// non-finite loss or update the state is left unchanged.
    pub fn step(&mut self, data: &[SampleTriplet]) -> Result<f64> {
        let batch = self.make_batch(data, self.iteration)?;
        let (loss, grads) = self.loss_and_grads(&batch)?;
        let previous = (self.params.clone(), self.adam.clone());
        adam_step(&mut self.params, &grads, &mut self.adam, &self.config.adam())?;
        if !self.params.all_finite() {
            (self.params, self.adam) = previous;
            return Err(Error::NonFinite(format!("parameters after iteration {}", self.iteration + 1)));
        }
        self.iteration += 1;
        Ok(loss)
    }

    /// Trains until `config.max_iterations`, calling `on_record` on each
    /// log record. With `checkpoint_path`, saves periodically, at the end,
    /// and before returning a non-finite error (the state saved is the last
    /// one whose loss was finite).
    pub fn run(
        &mut self,
        data: &[SampleTriplet],
        checkpoint_path: Option<&Path>,
        mut on_record: impl FnMut(&TrainRecord) -> Result<()>,
    ) -> Result<()> {
        let start = Instant::now();
        while self.iteration < self.config.max_iterations {
            let loss = match self.step(data) {
                Ok(l) => l,
                Err(e @ Error::NonFinite(_)) => {
                    if let Some(p) = checkpoint_path {
                        self.checkpoint().save(p)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let it = self.iteration;
            if it % self.config.log_every == 0 || it == self.config.max_iterations {
                on_record(&TrainRecord {
                    iteration: it,
                    loss,
                    wall_time_s: start.elapsed().as_secs_f64(),
                    timestamp: SystemTime::now()
                        .duration_since(UNIX_EPOCH)
                        .map(|d| d.as_secs_f64())
                        .unwrap_or(0.0),
                    psnr_mu: None,
                    psnr_l: None,
                })?;
            }
            if let Some(p) = checkpoint_path {
                let every = self.config.checkpoint_every;
                if (every > 0 && it % every == 0) || it == self.config.max_iterations {
                    self.checkpoint().save(p)?;
                }
            }
        }
        Ok(())
    }
}

/// Convenience wrapper: fresh trainer, full run, JSON-lines log at
/// `log_path` when given.
pub fn train(
    data: &[SampleTriplet],
    net: &NetConfig,
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
    log_path: Option<PathBuf>,
) -> Result<Trainer> {
    use std::io::Write;
    let mut trainer = Trainer::new(net, cfg)?;
    let mut log = match &log_path {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    trainer.run(data, checkpoint_path, |r| {
        if let (Some(f), Some(p)) = (log.as_mut(), log_path.as_ref()) {
            writeln!(f, "{}", r.to_json_line()).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    })?;
    Ok(trainer)
}
