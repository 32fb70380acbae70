//! Mappings between the LDR, linear HDR and μ-law tonemapped domains, and
//! assembly of the six-channel network inputs.

use ahdr_tensor::{Element, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma: f64,
}

impl GammaParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 1.0 && gamma.is_finite() {
            Ok(GammaParams { gamma })
        } else {
            Err(Error::InvalidParam(format!("gamma must be > 1, got {gamma}")))
        }
    }
}

impl Default for GammaParams {
    fn default() -> Self {
        GammaParams { gamma: 2.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TonemapParams {
    pub mu: f64,
}

impl TonemapParams {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(TonemapParams { mu })
        } else {
            Err(Error::InvalidParam(format!("mu must be > 0, got {mu}")))
        }
    }
}

impl Default for TonemapParams {
    fn default() -> Self {
        TonemapParams { mu: 5000.0 }
    }
}

/// Exposure time for a bias in stops, relative to the reference (`t = 2^bias`).
pub fn exposure_time(bias: i32) -> f64 {
    2f64.powi(bias)
}

/// An LDR frame with values in `[0, 1]` and its exposure bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureImage {
    ldr: Tensor<f32>,
    bias: i32,
}

impl ExposureImage {
    pub fn new(ldr: Tensor<f32>, bias: i32) -> Result<Self> {
        if ldr.shape().batch() != 1 || ldr.shape().channels() != 3 {
            return Err(Error::InvalidParam(format!(
                "LDR image must have shape (1, 3, H, W), got {}",
                ldr.shape()
            )));
        }
        if let Some(v) = ldr.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParam(format!("LDR value {v} outside [0, 1]")));
        }
        Ok(ExposureImage { ldr, bias })
    }

    pub fn ldr(&self) -> &Tensor<f32> {
        &self.ldr
    }

    pub fn bias(&self) -> i32 {
        self.bias
    }

    pub fn exposure_time(&self) -> f64 {
        exposure_time(self.bias)
    }

    pub fn height(&self) -> usize {
        self.ldr.shape().height()
    }

    pub fn width(&self) -> usize {
        self.ldr.shape().width()
    }
}

/// Linear-domain radiance, shape `(1, 3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    radiance: Tensor<f32>,
}

impl HdrImage {
    pub fn new(radiance: Tensor<f32>) -> Result<Self> {
        if radiance.shape().channels() != 3 {
            return Err(Error::InvalidParam(format!(
                "HDR image needs 3 channels, got shape {}",
                radiance.shape()
            )));
        }
        if let Some(v) = radiance.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParam(format!("HDR radiance {v} is negative or non-finite")));
        }
        Ok(HdrImage { radiance })
    }

    pub fn radiance(&self) -> &Tensor<f32> {
        &self.radiance
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.radiance
    }

    pub fn height(&self) -> usize {
        self.radiance.shape().height()
    }

    pub fn width(&self) -> usize {
        self.radiance.shape().width()
    }
}

/// `I^γ / t`, elementwise.
pub fn ldr_to_hdr<T: Element>(ldr: &Tensor<T>, exposure_time: f64, g: GammaParams) -> Result<Tensor<T>> {
    if !(exposure_time > 0.0) {
        return Err(Error::InvalidParam(format!(
            "exposure time must be positive, got {exposure_time}"
        )));
    }
    let gamma = T::from_f64_lossy(g.gamma);
    let t = T::from_f64_lossy(exposure_time);
    Ok(ldr.map(|v| v.max(T::zero()).powf(gamma) / t))
}

pub fn ldr_to_hdr_domain(img: &ExposureImage, g: GammaParams) -> Result<Tensor<f32>> {
    ldr_to_hdr(img.ldr(), img.exposure_time(), g)
}

/// Six-channel input: channels 0–2 hold the LDR frame, 3–5 its HDR-domain
/// mapping. The HDR half is not clamped.
pub fn build_input(img: &ExposureImage, g: GammaParams) -> Result<Tensor<f32>> {
    let hdr = ldr_to_hdr_domain(img, g)?;
    Ok(Tensor::concat_channels(&[img.ldr(), &hdr])?)
}

fn check_mu(p: TonemapParams) -> Result<()> {
    if p.mu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("mu must be > 0, got {}", p.mu)))
    }
}

/// μ-law compression `ln(1 + μh) / ln(1 + μ)` of `h` clamped to `[0, 1]`.
pub fn mu_law_tonemap<T: Element>(h: &Tensor<T>, p: TonemapParams) -> Result<Tensor<T>> {
    check_mu(p)?;
    let mu = T::from_f64_lossy(p.mu);
    let denom = mu.ln_1p();
    Ok(h.map(|v| (mu * v.max(T::zero()).min(T::one())).ln_1p() / denom))
}

/// Differentiable form of [`mu_law_tonemap`] recorded on a tape.
pub fn mu_law_tonemap_var<T: Element>(tape: &mut Tape<T>, h: Var, p: TonemapParams) -> Result<Var> {
    check_mu(p)?;
    let clamped = tape.clamp(h, T::zero(), T::one());
    Ok(tape.mu_law(clamped, T::from_f64_lossy(p.mu)))
}
