//! Named finite-difference suites covering every differentiable op, the
//! losses, the network blocks and a complete small network.

use ahdr_tensor::{finite_diff_check_many, ConvSpec, Shape, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hdr::{mu_law_tonemap_var, TonemapParams};
use crate::network::{
    ahdr_forward, attention_forward, build_variant, drdb_forward, layout, BoundConv, MergeBlock, NetConfig,
    NetworkParams,
};
use crate::train::{loss_l1, loss_l2};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-5;

pub const SUITES: [&str; 7] = ["conv", "activations", "structural", "tonemap", "loss", "blocks", "network"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

type Objective = dyn Fn(&mut Tape<f64>, &[Var]) -> ahdr_tensor::Result<Var>;

fn random(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Magnitudes in `[0.05, 1)` with random sign, away from activation kinks.
fn off_zero(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `x` to a scalar through fixed random weights.
fn project(tape: &mut Tape<f64>, x: Var, seed: u64) -> ahdr_tensor::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(x), -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn run(
    suite: &'static str,
    name: &str,
    tolerance: f64,
    inputs: &[Tensor<f64>],
    eps: f64,
    f: &Objective,
) -> Result<CheckOutcome> {
    let r = finite_diff_check_many(f, inputs, eps)?;
    Ok(CheckOutcome {
        suite,
        name: name.to_string(),
        max_rel_error: r.max_rel_error,
        tolerance,
        checked: r.checked,
    })
}

fn conv_suite() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    for (k, d) in [(3, 1), (3, 2), (1, 1)] {
        let spec = ConvSpec::new(3, 2, k, d)?;
        let inputs = [
            random(&mut rng, Shape::new(2, 3, 6, 5), -1.0, 1.0),
            random(&mut rng, spec.weight_shape(), -1.0, 1.0),
            random(&mut rng, spec.bias_shape(), -1.0, 1.0),
        ];
        out.push(run(
            "conv",
            &format!("conv2d k={k} d={d}"),
            OP_TOLERANCE,
            &inputs,
            EPS,
            &move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], spec)?;
                project(t, y, 10)
            },
        )?);
    }
    Ok(out)
}

fn activation_suite() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = [off_zero(&mut rng, Shape::new(2, 3, 4, 4))];
    let cases: [(&str, fn(&mut Tape<f64>, Var) -> Var); 5] = [
        ("relu", |t, x| t.relu(x)),
        ("sigmoid", |t, x| t.sigmoid(x)),
        ("abs", |t, x| t.abs(x)),
        ("square", |t, x| t.square(x)),
        ("clamp", |t, x| t.clamp(x, -0.5, 0.5)),
    ];
    let mut out = Vec::new();
    for (name, op) in cases {
        // Keep clamp inputs away from its bounds.
        let input = if name == "clamp" {
            [x[0].map(|v| if (v.abs() - 0.5).abs() < 0.05 { v * 0.8 } else { v })]
        } else {
            x.clone()
        };
        out.push(run("activations", name, OP_TOLERANCE, &input, EPS, &move |t, v| {
            let y = op(t, v[0]);
            project(t, y, 20)
        })?);
    }
    out.push(run("activations", "mean", OP_TOLERANCE, &x, EPS, &|t, v| {
        let y = t.square(v[0]);
        Ok(t.mean(y))
    })?);
    Ok(out)
}

fn structural_suite() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = [
        random(&mut rng, Shape::new(2, 3, 3, 4), -1.0, 1.0),
        random(&mut rng, Shape::new(2, 3, 3, 4), -1.0, 1.0),
        random(&mut rng, Shape::new(2, 2, 3, 4), -1.0, 1.0),
    ];
    let cases: [(&str, fn(&mut Tape<f64>, &[Var]) -> ahdr_tensor::Result<Var>); 6] = [
        ("add", |t, v| t.add(v[0], v[1])),
        ("sub", |t, v| t.sub(v[0], v[1])),
        ("mul", |t, v| t.mul(v[0], v[1])),
        ("scale", |t, v| Ok(t.scale(v[0], 0.7))),
        ("concat", |t, v| t.concat_channels(&[v[2], v[0], v[1]])),
        ("slice", |t, v| {
            let c = t.concat_channels(&[v[0], v[2]])?;
            t.slice_channels(c, 1, 4)
        }),
    ];
    cases
        .into_iter()
        .map(|(name, op)| {
            run("structural", name, OP_TOLERANCE, &inputs, EPS, &move |t, v| {
                let y = op(t, v)?;
                project(t, y, 30)
            })
        })
        .collect()
}

fn tonemap_suite() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = [random(&mut rng, Shape::new(1, 3, 4, 4), 0.02, 0.98)];
    let tm = TonemapParams::default();
    Ok(vec![run("tonemap", "mu-law", OP_TOLERANCE, &h, 1e-6, &move |t, v| {
        let y = mu_law_tonemap_var(t, v[0], tm).map_err(to_tensor_err)?;
        project(t, y, 40)
    })?])
}

fn loss_suite() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pred = random(&mut rng, Shape::new(2, 3, 4, 4), 0.05, 0.95);
    // Offsets bounded away from zero so no element sits on the ℓ1 kink.
    let gt = pred.map(|v| {
        let d = if v > 0.5 { -0.03 } else { 0.03 };
        v + d
    });
    let tm = TonemapParams::default();
    let inputs = [pred, gt];
    Ok(vec![
        run("loss", "l1", OP_TOLERANCE, &inputs, 1e-7, &move |t, v| {
            loss_l1(t, v[0], v[1], tm).map_err(to_tensor_err)
        })?,
        run("loss", "l2", 1e-6, &inputs, 1e-6, &move |t, v| {
            loss_l2(t, v[0], v[1], tm).map_err(to_tensor_err)
        })?,
    ])
}

fn to_tensor_err(e: Error) -> ahdr_tensor::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => ahdr_tensor::TensorError::InvalidConv(other.to_string()),
    }
}

fn small_config() -> NetConfig {
    NetConfig {
        base_channels: 4,
        growth_rate: 4,
        num_drdb: 1,
        drdb_conv_layers: 3,
        ..NetConfig::default()
    }
}

/// Flattens parameters into gradcheck inputs in canonical order.
fn param_inputs(params: &NetworkParams<f64>) -> Vec<Tensor<f64>> {
    params.named_tensors().into_iter().map(|(_, t)| t.clone()).collect()
}

/// Rebuilds the bound network from gradcheck leaves, starting at `offset`.
fn rebind(params: &NetworkParams<f64>, vars: &[Var], offset: usize) -> crate::network::Network<BoundConv> {
    let mut k = offset;
    params.layers.map(|_, c| {
        let b = BoundConv {
            spec: c.spec,
            weight: vars[k],
            bias: vars[k + 1],
        };
        k += 2;
        b
    })
}

/// Random non-zero biases so every layer's bias gradient is exercised
/// away from activation kinks.
fn with_random_biases(mut p: NetworkParams<f64>, seed: u64) -> NetworkParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.for_each_tensor_mut(|name, t| {
        if name.ends_with(".bias") {
            *t = random(&mut rng, t.shape(), -0.1, 0.1);
        }
    });
    p
}

fn blocks_suite() -> Result<Vec<CheckOutcome>> {
    let cfg = small_config();
    let params = with_random_biases(build_variant::<f64>(&cfg, 6)?, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let c = cfg.base_channels;
    let mut out = Vec::new();

    let att = params.layers.attention_low.clone().expect("attention enabled");
    let att_inputs = vec![
        random(&mut rng, Shape::new(1, c, 5, 5), 0.0, 1.0),
        random(&mut rng, Shape::new(1, c, 5, 5), 0.0, 1.0),
        att.conv1.weight.clone(),
        att.conv1.bias.clone(),
        att.conv2.weight.clone(),
        att.conv2.bias.clone(),
    ];
    let (s1, s2) = (att.conv1.spec, att.conv2.spec);
    out.push(run("blocks", "attention", OP_TOLERANCE, &att_inputs, EPS, &move |t, v| {
        let p = crate::network::Attention {
            conv1: BoundConv {
                spec: s1,
                weight: v[2],
                bias: v[3],
            },
            conv2: BoundConv {
                spec: s2,
                weight: v[4],
                bias: v[5],
            },
        };
        let a = attention_forward(t, v[0], v[1], &p).map_err(to_tensor_err)?;
        project(t, a, 70)
    })?);

    let MergeBlock::Dense(drdb) = params.layers.blocks[0].clone() else {
        unreachable!("dense configuration")
    };
    let mut drdb_inputs = vec![random(&mut rng, Shape::new(1, c, 5, 5), -1.0, 1.0)];
    for l in drdb.dense.iter().chain([&drdb.compress]) {
        drdb_inputs.push(l.weight.clone());
        drdb_inputs.push(l.bias.clone());
    }
    let specs: Vec<ConvSpec> = drdb.dense.iter().chain([&drdb.compress]).map(|l| l.spec).collect();
    out.push(run("blocks", "drdb", OP_TOLERANCE, &drdb_inputs, EPS, &move |t, v| {
        let bound: Vec<BoundConv> = specs
            .iter()
            .enumerate()
            .map(|(i, &spec)| BoundConv {
                spec,
                weight: v[1 + 2 * i],
                bias: v[2 + 2 * i],
            })
            .collect();
        let (compress, dense) = bound.split_last().unwrap();
        let p = crate::network::Drdb {
            dense: dense.to_vec(),
            compress: *compress,
        };
        let y = drdb_forward(t, v[0], &p).map_err(to_tensor_err)?;
        project(t, y, 71)
    })?);
    Ok(out)
}

/// Configuration of the end-to-end check: 8 base channels, one block.
pub fn network_check_config() -> NetConfig {
    NetConfig {
        base_channels: 8,
        growth_rate: 8,
        num_drdb: 1,
        ..NetConfig::default()
    }
}

fn network_suite() -> Result<Vec<CheckOutcome>> {
    let cfg = network_check_config();
    layout(&cfg)?;
    let params = with_random_biases(build_variant::<f64>(&cfg, 8)?, 80);
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut inputs: Vec<Tensor<f64>> = (0..3)
        .map(|_| random(&mut rng, Shape::new(1, 6, 8, 8), 0.0, 1.0))
        .collect();
    let gt = random(&mut rng, Shape::new(1, 3, 8, 8), 0.05, 0.95);
    inputs.extend(param_inputs(&params));
    let tm = TonemapParams::default();
    Ok(vec![run(
        "network",
        "end-to-end l1",
        NETWORK_TOLERANCE,
        &inputs,
        EPS,
        &move |t, v| {
            let net = rebind(&params, v, 3);
            let trace = ahdr_forward(t, [v[0], v[1], v[2]], &net, &cfg).map_err(to_tensor_err)?;
            let g = t.constant(gt.clone());
            loss_l1(t, trace.output, g, tm).map_err(to_tensor_err)
        },
    )?])
}

/// Runs the named suite, or every suite for `"all"`.
pub fn run_suite(name: &str) -> Result<Vec<CheckOutcome>> {
    match name {
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s)?);
            }
            Ok(out)
        }
        "conv" => conv_suite(),
        "activations" => activation_suite(),
        "structural" => structural_suite(),
        "tonemap" => tonemap_suite(),
        "loss" => loss_suite(),
        "blocks" => blocks_suite(),
        "network" => network_suite(),
        other => Err(Error::InvalidParam(format!(
            "unknown gradcheck suite `{other}` (expected all, {})",
            SUITES.join(", ")
        ))),
    }
}
