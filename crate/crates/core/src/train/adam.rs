use ahdr_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    /// Number of updates applied so far.
    pub step: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        AdamState {
            step: 0,
            moments: params
                .named_tensors()
                .into_iter()
                .map(|(name, t)| Moments {
                    name,
                    first: Tensor::zeros(t.shape()),
                    second: Tensor::zeros(t.shape()),
                })
                .collect(),
        }
    }
}

/// One bias-corrected Adam update. `grads` follows the canonical tensor
/// order of [`NetworkParams::named_tensors`].
pub fn adam_step<T: Element>(
    params: &mut NetworkParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<()> {
    let names = params.tensor_names();
    if grads.len() != names.len() || state.moments.len() != names.len() {
        return Err(Error::Config(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            names.len(),
            grads.len(),
            state.moments.len()
        )));
    }
    for ((name, g), m) in names.iter().zip(grads).zip(&state.moments) {
        if &m.name != name || m.first.shape() != g.shape() {
            return Err(Error::Config(format!("adam: state for `{}` does not match `{name}`", m.name)));
        }
        if let Some(i) = g.data().iter().position(|v| v.is_nan()) {
            return Err(Error::NonFinite(format!("gradient of `{name}` is NaN at element {i}")));
        }
    }

    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let b1 = T::from_f64_lossy(hyper.beta1);
    let b2 = T::from_f64_lossy(hyper.beta2);
    let one = T::one();
    let step_size = T::from_f64_lossy(hyper.learning_rate / bc1);
    let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
    let eps = T::from_f64_lossy(hyper.eps);

    let mut k = 0;
    params.for_each_tensor_mut(|_, p| {
        let g = &grads[k];
        let m = &mut state.moments[k];
        for (((p, &g), m1), m2) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.first.data_mut())
            .zip(m.second.data_mut())
        {
            *m1 = b1 * *m1 + (one - b1) * g;
            *m2 = b2 * *m2 + (one - b2) * g * g;
            *p = *p - step_size * *m1 / ((*m2 * inv_bc2).sqrt() + eps);
        }
        k += 1;
    });
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_variant, NetConfig};

    fn tiny() -> NetConfig {
        NetConfig {
            base_channels: 2,
            growth_rate: 2,
            num_drdb: 1,
            ..NetConfig::default()
        }
    }

    fn grads_like(p: &NetworkParams<f64>, v: f64) -> Vec<Tensor<f64>> {
        p.named_tensors().iter().map(|(_, t)| Tensor::full(t.shape(), v)).collect()
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = build_variant::<f64>(&tiny(), 1).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &grads_like(&before, 0.0), &mut state, &AdamHyper::default()).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        // Closed-form scalar Adam: with constant g, m̂ = g and v̂ = g² exactly,
        // so every step moves by lr · |g| / (|g| + eps).
        let mut p = build_variant::<f64>(&tiny(), 2).unwrap();
        let mut state = AdamState::new(&p);
        let hyper = AdamHyper {
            learning_rate: 1e-3,
            ..AdamHyper::default()
        };
        let g = 0.37;
        let grads = grads_like(&p, g);
        let mut prev = p.named_tensors()[0].1.data()[0];
        for step in 1..=200 {
            adam_step(&mut p, &grads, &mut state, &hyper).unwrap();
            let now = p.named_tensors()[0].1.data()[0];
            let moved = prev - now;
            let expected = hyper.learning_rate * g / (g + hyper.eps);
            assert!((moved - expected).abs() < 1e-12, "step {step}: {moved}");
            prev = now;
        }
    }

    #[test]
    fn moments_decay_geometrically() {
        let mut p = build_variant::<f64>(&tiny(), 3).unwrap();
        let mut state = AdamState::new(&p);
        let hyper = AdamHyper::default();
        let g = grads_like(&p, 1.0);
        adam_step(&mut p, &g, &mut state, &hyper).unwrap();
        let m0 = state.moments[0].first.data()[0];
        let v0 = state.moments[0].second.data()[0];
        let g = grads_like(&p, 0.0);
        adam_step(&mut p, &g, &mut state, &hyper).unwrap();
        assert!((state.moments[0].first.data()[0] - 0.9 * m0).abs() < 1e-15);
        assert!((state.moments[0].second.data()[0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = build_variant::<f64>(&tiny(), 4).unwrap();
        let mut state = AdamState::new(&p);
        let mut grads = grads_like(&p, 0.1);
        grads[3].data_mut()[1] = f64::NAN;
        let before = p.clone();
        let err = adam_step(&mut p, &grads, &mut state, &AdamHyper::default()).unwrap_err();
        let name = &before.tensor_names()[3];
        assert!(err.to_string().contains(name.as_str()), "{err}");
        assert_eq!(p, before);
    }
}
