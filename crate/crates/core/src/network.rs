//! The attention-guided merging network.
//!
//! Three six-channel inputs pass through a shared encoder. The two
//! non-reference feature maps are gated by attention maps computed against
//! the reference features, stacked with the reference, and merged by a chain
//! of dilated residual dense blocks with global residual learning.
//!
//! The layer tree is generic over its leaf type so the same structure holds
//! conv specs, parameter tensors, or tape variables.

use std::fmt;
use std::str::FromStr;

use ahdr_tensor::{ConvSpec, Element, Shape, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::xavier_init;

const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub base_channels: usize,
    pub growth_rate: usize,
    pub num_drdb: usize,
    /// Conv layers per dense block; the last one is the 1×1 compression.
    pub drdb_conv_layers: usize,
    pub dilation: usize,
    pub use_attention: bool,
    pub use_dilation: bool,
    pub use_dense_connections: bool,
    pub use_global_residual: bool,
    /// Residual blocks per merge slot when dense connections are off.
    pub rb_depth_multiplier: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 64,
            growth_rate: 32,
            num_drdb: 3,
            drdb_conv_layers: 6,
            dilation: 2,
            use_attention: true,
            use_dilation: true,
            use_dense_connections: true,
            use_global_residual: true,
            rb_depth_multiplier: 1,
        }
    }
}

impl NetConfig {
    /// Reduced widths for desk-scale training.
    pub fn miniature() -> Self {
        NetConfig {
            base_channels: 16,
            growth_rate: 8,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.base_channels == 0 {
            return fail("base_channels must be positive");
        }
        if self.num_drdb == 0 {
            return fail("num_drdb must be at least 1");
        }
        if self.dilation == 0 {
            return fail("dilation must be at least 1");
        }
        if self.rb_depth_multiplier == 0 {
            return fail("rb_depth_multiplier must be at least 1");
        }
        if self.use_dense_connections {
            if self.growth_rate == 0 {
                return fail("growth_rate must be positive");
            }
            if self.drdb_conv_layers < 2 {
                return fail("drdb_conv_layers must be at least 2");
            }
            if self.rb_depth_multiplier != 1 {
                return fail("rb_depth_multiplier only applies when dense connections are off");
            }
        }
        Ok(())
    }

    /// Dilation used by the 3×3 layers inside merge blocks.
    pub fn block_dilation(&self) -> usize {
        if self.use_dilation {
            self.dilation
        } else {
            1
        }
    }

    pub fn with_variant(self, variant: Variant) -> Self {
        let mut cfg = NetConfig {
            use_attention: true,
            use_dilation: true,
            use_dense_connections: true,
            use_global_residual: true,
            rb_depth_multiplier: 1,
            ..self
        };
        match variant {
            Variant::Ahdr => {}
            Variant::Drdb => cfg.use_attention = false,
            Variant::ARdb => cfg.use_dilation = false,
            Variant::Rdb => {
                cfg.use_attention = false;
                cfg.use_dilation = false;
            }
            Variant::Rb | Variant::DeepRb => {
                cfg.use_attention = false;
                cfg.use_dilation = false;
                cfg.use_dense_connections = false;
                if variant == Variant::DeepRb {
                    cfg.rb_depth_multiplier = 2;
                }
            }
            Variant::NoGrl => cfg.use_global_residual = false,
        }
        cfg
    }
}

/// Named architecture variants used in the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Ahdr,
    Drdb,
    ARdb,
    Rdb,
    Rb,
    DeepRb,
    NoGrl,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Ahdr,
        Variant::Drdb,
        Variant::ARdb,
        Variant::Rdb,
        Variant::Rb,
        Variant::DeepRb,
        Variant::NoGrl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ahdr => "ahdr",
            Variant::Drdb => "drdb",
            Variant::ARdb => "a-rdb",
            Variant::Rdb => "rdb",
            Variant::Rb => "rb",
            Variant::DeepRb => "deep-rb",
            Variant::NoGrl => "no-grl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<L> {
    pub conv1: L,
    pub conv2: L,
}

/// Dilated residual dense block.
#[derive(Debug, Clone, PartialEq)]
pub struct Drdb<L> {
    pub dense: Vec<L>,
    pub compress: L,
}

/// Plain two-conv residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<L> {
    pub conv1: L,
    pub conv2: L,
}

/// One merge slot; its output feeds the fusion concatenation.
#[derive(Debug, Clone, PartialEq)]
pub enum MergeBlock<L> {
    Dense(Drdb<L>),
    Residual(Vec<ResBlock<L>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<L> {
    pub encoder: L,
    pub attention_low: Option<Attention<L>>,
    pub attention_high: Option<Attention<L>>,
    pub merge_head: L,
    pub blocks: Vec<MergeBlock<L>>,
    pub fuse: L,
    pub tail1: L,
    pub tail2: L,
}

impl<L> Network<L> {
    /// Visits every layer in canonical order with its dotted name.
    pub fn for_each<'a>(&'a self, mut f: impl FnMut(String, &'a L)) {
        f("encoder".into(), &self.encoder);
        for (name, att) in [("attention_low", &self.attention_low), ("attention_high", &self.attention_high)] {
            if let Some(a) = att {
                f(format!("{name}.conv1"), &a.conv1);
                f(format!("{name}.conv2"), &a.conv2);
            }
        }
        f("merge_head".into(), &self.merge_head);
        for (k, block) in self.blocks.iter().enumerate() {
            match block {
                MergeBlock::Dense(d) => {
                    for (j, l) in d.dense.iter().enumerate() {
                        f(format!("drdb{k}.dense{j}"), l);
                    }
                    f(format!("drdb{k}.compress"), &d.compress);
                }
                MergeBlock::Residual(group) => {
                    for (m, rb) in group.iter().enumerate() {
                        f(format!("rb{k}.{m}.conv1"), &rb.conv1);
                        f(format!("rb{k}.{m}.conv2"), &rb.conv2);
                    }
                }
            }
        }
        f("fuse".into(), &self.fuse);
        f("tail1".into(), &self.tail1);
        f("tail2".into(), &self.tail2);
    }

    /// Mutable counterpart of [`for_each`](Self::for_each), same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(String, &mut L)) {
        f("encoder".into(), &mut self.encoder);
        for (name, att) in [
            ("attention_low", &mut self.attention_low),
            ("attention_high", &mut self.attention_high),
        ] {
            if let Some(a) = att {
                f(format!("{name}.conv1"), &mut a.conv1);
                f(format!("{name}.conv2"), &mut a.conv2);
            }
        }
        f("merge_head".into(), &mut self.merge_head);
        for (k, block) in self.blocks.iter_mut().enumerate() {
            match block {
                MergeBlock::Dense(d) => {
                    for (j, l) in d.dense.iter_mut().enumerate() {
                        f(format!("drdb{k}.dense{j}"), l);
                    }
                    f(format!("drdb{k}.compress"), &mut d.compress);
                }
                MergeBlock::Residual(group) => {
                    for (m, rb) in group.iter_mut().enumerate() {
                        f(format!("rb{k}.{m}.conv1"), &mut rb.conv1);
                        f(format!("rb{k}.{m}.conv2"), &mut rb.conv2);
                    }
                }
            }
        }
        f("fuse".into(), &mut self.fuse);
        f("tail1".into(), &mut self.tail1);
        f("tail2".into(), &mut self.tail2);
    }

    pub fn layers(&self) -> Vec<(String, &L)> {
        let mut out = Vec::new();
        self.for_each(|n, l| out.push((n, l)));
        out
    }

    /// Rebuilds the tree with every leaf transformed, visiting leaves in
    /// canonical order.
    pub fn try_map<M, E>(&self, mut f: impl FnMut(&str, &L) -> Result<M, E>) -> Result<Network<M>, E> {
        let att = |name: &str, a: &Option<Attention<L>>, f: &mut dyn FnMut(&str, &L) -> Result<M, E>| {
            a.as_ref()
                .map(|a| {
                    Ok(Attention {
                        conv1: f(&format!("{name}.conv1"), &a.conv1)?,
                        conv2: f(&format!("{name}.conv2"), &a.conv2)?,
                    })
                })
                .transpose()
        };
        let encoder = f("encoder", &self.encoder)?;
        let attention_low = att("attention_low", &self.attention_low, &mut f)?;
        let attention_high = att("attention_high", &self.attention_high, &mut f)?;
        let merge_head = f("merge_head", &self.merge_head)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (k, block) in self.blocks.iter().enumerate() {
            blocks.push(match block {
                MergeBlock::Dense(d) => {
                    let dense = d
                        .dense
                        .iter()
                        .enumerate()
                        .map(|(j, l)| f(&format!("drdb{k}.dense{j}"), l))
                        .collect::<Result<Vec<_>, E>>()?;
                    let compress = f(&format!("drdb{k}.compress"), &d.compress)?;
                    MergeBlock::Dense(Drdb { dense, compress })
                }
                MergeBlock::Residual(group) => MergeBlock::Residual(
                    group
                        .iter()
                        .enumerate()
                        .map(|(m, rb)| {
                            Ok(ResBlock {
                                conv1: f(&format!("rb{k}.{m}.conv1"), &rb.conv1)?,
                                conv2: f(&format!("rb{k}.{m}.conv2"), &rb.conv2)?,
                            })
                        })
                        .collect::<Result<Vec<_>, E>>()?,
                ),
            });
        }
        Ok(Network {
            encoder,
            attention_low,
            attention_high,
            merge_head,
            blocks,
            fuse: f("fuse", &self.fuse)?,
            tail1: f("tail1", &self.tail1)?,
            tail2: f("tail2", &self.tail2)?,
        })
    }

    pub fn map<M>(&self, mut f: impl FnMut(&str, &L) -> M) -> Network<M> {
        self.try_map::<M, std::convert::Infallible>(|n, l| Ok(f(n, l)))
            .unwrap_or_else(|e| match e {})
    }
}

/// Conv geometry of every layer for a configuration.
pub fn layout(cfg: &NetConfig) -> Result<Network<ConvSpec>> {
    cfg.validate()?;
    let c = cfg.base_channels;
    let d = cfg.block_dilation();
    let conv = |i, o, k, dil| ConvSpec::new(i, o, k, dil).map_err(Error::from);
    let attention = || -> Result<Attention<ConvSpec>> {
        Ok(Attention {
            conv1: conv(2 * c, c, KERNEL, 1)?,
            conv2: conv(c, c, KERNEL, 1)?,
        })
    };
    let mut blocks = Vec::with_capacity(cfg.num_drdb);
    for _ in 0..cfg.num_drdb {
        blocks.push(if cfg.use_dense_connections {
            let g = cfg.growth_rate;
            let n_dense = cfg.drdb_conv_layers - 1;
            let dense = (0..n_dense)
                .map(|j| conv(c + j * g, g, KERNEL, d))
                .collect::<Result<Vec<_>>>()?;
            MergeBlock::Dense(Drdb {
                dense,
                compress: conv(c + n_dense * g, c, 1, 1)?,
            })
        } else {
            MergeBlock::Residual(
                (0..cfg.rb_depth_multiplier)
                    .map(|_| {
                        Ok(ResBlock {
                            conv1: conv(c, c, KERNEL, d)?,
                            conv2: conv(c, c, KERNEL, d)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        });
    }
    Ok(Network {
        encoder: conv(6, c, KERNEL, 1)?,
        attention_low: if cfg.use_attention { Some(attention()?) } else { None },
        attention_high: if cfg.use_attention { Some(attention()?) } else { None },
        merge_head: conv(3 * c, c, KERNEL, 1)?,
        blocks,
        fuse: conv(cfg.num_drdb * c, c, KERNEL, 1)?,
        tail1: conv(c, c, KERNEL, 1)?,
        tail2: conv(c, 3, KERNEL, 1)?,
    })
}

/// Weights and bias of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Conv<T> {
    pub fn zeros(spec: ConvSpec) -> Self {
        Conv {
            spec,
            weight: Tensor::zeros(spec.weight_shape()),
            bias: Tensor::zeros(spec.bias_shape()),
        }
    }
}

/// A conv layer's parameters recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConv {
    pub spec: ConvSpec,
    pub weight: Var,
    pub bias: Var,
}

/// Complete parameter set for one network configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub config: NetConfig,
    pub layers: Network<Conv<T>>,
}

impl<T: Element> NetworkParams<T> {
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        Ok(NetworkParams {
            config: *cfg,
            layers: layout(cfg)?.map(|_, s| Conv::zeros(*s)),
        })
    }

    /// Named tensors (`<layer>.weight`, `<layer>.bias`) in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.layers.for_each(|name, conv| {
            out.push((format!("{name}.weight"), &conv.weight));
            out.push((format!("{name}.bias"), &conv.bias));
        });
        out
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(String, &mut Tensor<T>)) {
        self.layers.for_each_mut(|name, conv| {
            f(format!("{name}.weight"), &mut conv.weight);
            f(format!("{name}.bias"), &mut conv.bias);
        });
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.named_tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }

    pub fn cast<U: Element>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config,
            layers: self.layers.map(|_, c| Conv {
                spec: c.spec,
                weight: c.weight.cast(),
                bias: c.bias.cast(),
            }),
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Network<BoundConv> {
        self.layers.map(|_, c| BoundConv {
            spec: c.spec,
            weight: tape.leaf(c.weight.clone(), requires_grad),
            bias: tape.leaf(c.bias.clone(), requires_grad),
        })
    }
}

/// Xavier-uniform weights and zero biases for a configuration; identical
/// seeds give bit-identical parameters.
pub fn build_variant<T: Element>(cfg: &NetConfig, seed: u64) -> Result<NetworkParams<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(NetworkParams {
        config: *cfg,
        layers: layout(cfg)?.map(|_, s| Conv {
            spec: *s,
            weight: xavier_init(s.weight_shape(), &mut rng),
            bias: Tensor::zeros(s.bias_shape()),
        }),
    })
}

fn conv<T: Element>(tape: &mut Tape<T>, layer: &BoundConv, x: Var) -> Result<Var> {
    Ok(tape.conv2d(x, layer.weight, layer.bias, layer.spec)?)
}

fn conv_relu<T: Element>(tape: &mut Tape<T>, layer: &BoundConv, x: Var) -> Result<Var> {
    let y = conv(tape, layer, x)?;
    Ok(tape.relu(y))
}

/// Shared encoder: `ReLU(conv(x))`.
pub fn encode<T: Element>(tape: &mut Tape<T>, encoder: &BoundConv, x: Var) -> Result<Var> {
    conv_relu(tape, encoder, x)
}

/// Attention map `sigmoid(conv2(ReLU(conv1([z_i, z_r]))))`.
pub fn attention_forward<T: Element>(
    tape: &mut Tape<T>,
    z_i: Var,
    z_r: Var,
    p: &Attention<BoundConv>,
) -> Result<Var> {
    let cat = tape.concat_channels(&[z_i, z_r])?;
    let h = conv_relu(tape, &p.conv1, cat)?;
    let a = conv(tape, &p.conv2, h)?;
    Ok(tape.sigmoid(a))
}

/// Gates features with an attention map.
pub fn attend<T: Element>(tape: &mut Tape<T>, z_i: Var, a_i: Var) -> Result<Var> {
    Ok(tape.mul(a_i, z_i)?)
}

/// `[attended low, reference, attended high]` along channels.
pub fn stack_features<T: Element>(tape: &mut Tape<T>, z1p: Var, z2: Var, z3p: Var) -> Result<Var> {
    let s1 = tape.shape(z1p);
    for v in [z2, z3p] {
        let s = tape.shape(v);
        if s != s1 {
            return Err(Error::Config(format!("stack_features: shape {s} differs from {s1}")));
        }
    }
    Ok(tape.concat_channels(&[z1p, z2, z3p])?)
}

/// Dense layers each see the block input plus all earlier outputs; a 1×1
/// conv compresses back to the block width, then the input is added.
pub fn drdb_forward<T: Element>(tape: &mut Tape<T>, f_in: Var, p: &Drdb<BoundConv>) -> Result<Var> {
    let mut features = vec![f_in];
    for layer in &p.dense {
        let x = if features.len() == 1 {
            features[0]
        } else {
            tape.concat_channels(&features)?
        };
        let y = conv_relu(tape, layer, x)?;
        features.push(y);
    }
    let all = tape.concat_channels(&features)?;
    let compressed = conv(tape, &p.compress, all)?;
    Ok(tape.add(compressed, f_in)?)
}

pub fn resblock_forward<T: Element>(tape: &mut Tape<T>, f_in: Var, p: &ResBlock<BoundConv>) -> Result<Var> {
    let h = conv_relu(tape, &p.conv1, f_in)?;
    let h = conv(tape, &p.conv2, h)?;
    Ok(tape.add(h, f_in)?)
}

fn block_forward<T: Element>(tape: &mut Tape<T>, f_in: Var, block: &MergeBlock<BoundConv>) -> Result<Var> {
    match block {
        MergeBlock::Dense(d) => drdb_forward(tape, f_in, d),
        MergeBlock::Residual(group) => group
            .iter()
            .try_fold(f_in, |f, rb| resblock_forward(tape, f, rb)),
    }
}

/// Merging network; returns the 3-channel estimate in `(0, 1)`.
pub fn merge_forward<T: Element>(
    tape: &mut Tape<T>,
    z_s: Var,
    z_r: Var,
    net: &Network<BoundConv>,
    cfg: &NetConfig,
) -> Result<Var> {
    let c = cfg.base_channels;
    if tape.shape(z_s).channels() != 3 * c || tape.shape(z_r).channels() != c {
        return Err(Error::Config(format!(
            "merge expects {} stacked and {c} reference channels, got {} and {}",
            3 * c,
            tape.shape(z_s).channels(),
            tape.shape(z_r).channels()
        )));
    }
    if net.blocks.len() != cfg.num_drdb {
        return Err(Error::Config(format!(
            "network has {} merge blocks, config expects {}",
            net.blocks.len(),
            cfg.num_drdb
        )));
    }
    let mut f = conv_relu(tape, &net.merge_head, z_s)?;
    let mut outs = Vec::with_capacity(net.blocks.len());
    for block in &net.blocks {
        f = block_forward(tape, f, block)?;
        outs.push(f);
    }
    let f4 = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_channels(&outs)?
    };
    let mut f5 = conv_relu(tape, &net.fuse, f4)?;
    if cfg.use_global_residual {
        f5 = tape.add(f5, z_r)?;
    }
    let f7 = conv_relu(tape, &net.tail1, f5)?;
    let out = conv(tape, &net.tail2, f7)?;
    Ok(tape.sigmoid(out))
}

/// Nodes of one forward pass worth inspecting.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    pub output: Var,
    /// Encoder features of the low, reference and high inputs.
    pub features: [Var; 3],
    /// Attention maps for the low and high inputs, when enabled.
    pub attention: Option<[Var; 2]>,
}

/// Full network on three six-channel inputs ordered by exposure; the middle
/// one is the reference.
pub fn ahdr_forward<T: Element>(
    tape: &mut Tape<T>,
    inputs: [Var; 3],
    net: &Network<BoundConv>,
    cfg: &NetConfig,
) -> Result<ForwardTrace> {
    let s0 = tape.shape(inputs[0]);
    for &x in &inputs[1..] {
        let s = tape.shape(x);
        if s != s0 {
            return Err(Error::Config(format!("network inputs differ in shape: {s0} vs {s}")));
        }
    }
    let z = [
        encode(tape, &net.encoder, inputs[0])?,
        encode(tape, &net.encoder, inputs[1])?,
        encode(tape, &net.encoder, inputs[2])?,
    ];
    let (stacked, attention) = match (&net.attention_low, &net.attention_high, cfg.use_attention) {
        (Some(low), Some(high), true) => {
            let a1 = attention_forward(tape, z[0], z[1], low)?;
            let a3 = attention_forward(tape, z[2], z[1], high)?;
            let z1p = attend(tape, z[0], a1)?;
            let z3p = attend(tape, z[2], a3)?;
            (stack_features(tape, z1p, z[1], z3p)?, Some([a1, a3]))
        }
        (None, None, false) => (stack_features(tape, z[0], z[1], z[2])?, None),
        _ => {
            return Err(Error::Config(
                "attention parameters do not match use_attention".into(),
            ))
        }
    };
    let output = merge_forward(tape, stacked, z[1], net, cfg)?;
    Ok(ForwardTrace {
        output,
        features: z,
        attention,
    })
}

/// Inference without gradient tracking. Returns the prediction and, when
/// requested and available, the two attention maps.
pub fn predict<T: Element>(
    params: &NetworkParams<T>,
    inputs: [&Tensor<T>; 3],
    keep_attention: bool,
) -> Result<(Tensor<T>, Option<[Tensor<T>; 2]>)> {
    let mut tape = Tape::new();
    let net = params.bind(&mut tape, false);
    let vars = inputs.map(|x| tape.constant(x.clone()));
    let trace = ahdr_forward(&mut tape, vars, &net, &params.config)?;
    let attention = match (keep_attention, trace.attention) {
        (true, Some([a, b])) => Some([tape.value(a).clone(), tape.value(b).clone()]),
        _ => None,
    };
    Ok((tape.value(trace.output).clone(), attention))
}

/// Expected input shape for a batch of `n` images of `h × w`.
pub fn input_shape(n: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, 6, h, w)
}
