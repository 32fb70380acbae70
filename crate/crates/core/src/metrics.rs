//! PSNR in the linear and μ-law domains, a learning-free merge baseline,
//! and per-dataset evaluation reports.

use std::fmt::Write as _;

use ahdr_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdr::{ldr_to_hdr_domain, mu_law_tonemap, GammaParams, HdrImage, TonemapParams};
use crate::network::{predict, NetworkParams};
use crate::synth::SampleTriplet;

/// `10·log10(peak² / MSE)` with the mean over every element; identical
/// inputs give `f64::INFINITY`.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidParam(format!("psnr: shapes {} and {} differ", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::InvalidParam("psnr: empty images".into()));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR between μ-law tonemapped images, peak 1.
pub fn psnr_mu<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, tm: TonemapParams) -> Result<f64> {
    psnr(&mu_law_tonemap(pred, tm)?, &mu_law_tonemap(gt, tm)?, 1.0)
}

/// PSNR in the linear radiance domain, peak 1.
pub fn psnr_l<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    psnr(pred, gt, 1.0)
}

/// Weight of an LDR value in the classical merge: `1 − |2I − 1|`.
pub fn triangle_weight(i: f64) -> f64 {
    1.0 - (2.0 * i - 1.0).abs()
}

/// Per-element weighted average of the three exposures mapped to the HDR
/// domain, clamped to `[0, 1]`. Where every exposure is fully clipped or
/// black the exposure closest to mid-grey is used alone.
pub fn baseline_merge(sample: &SampleTriplet, g: GammaParams) -> Result<HdrImage> {
    let hs = [
        ldr_to_hdr_domain(&sample.ldrs[0], g)?,
        ldr_to_hdr_domain(&sample.ldrs[1], g)?,
        ldr_to_hdr_domain(&sample.ldrs[2], g)?,
    ];
    let is = sample.ldrs.each_ref().map(|l| l.ldr().data());
    let out = hs[0].zip_map(&hs[1], "baseline_merge", |_, _| 0.0f32)?;
    let data = (0..out.len())
        .map(|k| {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..3 {
                let w = triangle_weight(is[j][k] as f64).max(0.0);
                num += w * hs[j].data()[k] as f64;
                den += w;
            }
            let v = if den > 0.0 {
                num / den
            } else {
                let j = (0..3)
                    .min_by(|&a, &b| {
                        let da = (is[a][k] as f64 - 0.5).abs();
                        let db = (is[b][k] as f64 - 0.5).abs();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                hs[j].data()[k] as f64
            };
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    HdrImage::new(Tensor::new(out.shape(), data)?)
}

/// The reference exposure alone mapped to the HDR domain, clamped to
/// `[0, 1]`.
pub fn reference_only(sample: &SampleTriplet, g: GammaParams) -> Result<HdrImage> {
    let h = ldr_to_hdr_domain(sample.reference(), g)?;
    HdrImage::new(h.map(|v| v.clamp(0.0, 1.0)))
}

/// Network prediction for one full-size sample.
pub fn infer_sample(params: &NetworkParams<f32>, sample: &SampleTriplet, g: GammaParams) -> Result<HdrImage> {
    let [a, b, c] = sample.inputs(g)?;
    let (out, _) = predict(params, [&a, &b, &c], false)?;
    HdrImage::new(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub psnr_mu: f64,
    pub psnr_l: f64,
    /// Slots for externally computed metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hdr_vdp2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub fingerprint: String,
    pub samples: Vec<SampleScore>,
}

impl EvalReport {
    pub fn mean_psnr_mu(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.psnr_mu))
    }

    pub fn mean_psnr_l(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.psnr_l))
    }

    /// One row per sample followed by a `mean` row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# method {}", self.method).unwrap();
        writeln!(s, "# fingerprint {}", self.fingerprint).unwrap();
        writeln!(s, "# id psnr_mu_db psnr_l_db").unwrap();
        for r in &self.samples {
            writeln!(s, "{} {:.4} {:.4}", r.id, r.psnr_mu, r.psnr_l).unwrap();
        }
        writeln!(s, "mean {:.4} {:.4}", self.mean_psnr_mu(), self.mean_psnr_l()).unwrap();
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Short hex digest identifying a configuration.
pub fn fingerprint(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    format!("{:08x}", crc32fast::hash(&bytes))
}

/// Scores `method` on every sample.
pub fn evaluate_with(
    name: &str,
    fingerprint: String,
    samples: &[SampleTriplet],
    tm: TonemapParams,
    mut method: impl FnMut(&SampleTriplet) -> Result<HdrImage>,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = method(s)?;
        rows.push(SampleScore {
            id: s.id.clone(),
            psnr_mu: psnr_mu(pred.radiance(), s.gt.radiance(), tm)?,
            psnr_l: psnr_l(pred.radiance(), s.gt.radiance())?,
            psnr_m: None,
            hdr_vdp2: None,
        });
    }
    Ok(EvalReport {
        method: name.to_string(),
        fingerprint,
        samples: rows,
    })
}

/// Scores a trained network.
pub fn evaluate(
    params: &NetworkParams<f32>,
    samples: &[SampleTriplet],
    g: GammaParams,
    tm: TonemapParams,
) -> Result<EvalReport> {
    evaluate_with("network", fingerprint(&params.config), samples, tm, |s| infer_sample(params, s, g))
}

#[cfg(test)]
mod tests {
    use ahdr_tensor::Shape;

    use super::*;

    #[test]
    fn identical_is_infinite() {
        let a = Tensor::<f32>::full(Shape::new(1, 3, 2, 2), 0.3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn uniform_offset_gives_twenty_db() {
        let a = Tensor::<f64>::full(Shape::new(1, 3, 4, 4), 0.2);
        let b = Tensor::<f64>::full(Shape::new(1, 3, 4, 4), 0.3);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 2));
        let b = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 3));
        assert!(psnr(&a, &b, 1.0).is_err());
    }

    #[test]
    fn triangle_weight_shape() {
        assert_eq!(triangle_weight(0.0), 0.0);
        assert_eq!(triangle_weight(0.5), 1.0);
        assert_eq!(triangle_weight(1.0), 0.0);
        assert_eq!(triangle_weight(0.25), 0.5);
    }

    #[test]
    fn report_mean_row() {
        let r = EvalReport {
            method: "m".into(),
            fingerprint: "0".into(),
            samples: vec![
                SampleScore {
                    id: "a".into(),
                    psnr_mu: 30.0,
                    psnr_l: 20.0,
                    psnr_m: None,
                    hdr_vdp2: None,
                },
                SampleScore {
                    id: "b".into(),
                    psnr_mu: 40.0,
                    psnr_l: 25.0,
                    psnr_m: None,
                    hdr_vdp2: None,
                },
            ],
        };
        assert_eq!(r.mean_psnr_mu(), 35.0);
        assert!(r.to_text().ends_with("mean 35.0000 22.5000\n"));
    }
}
