use ahdr_tensor::{Element, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hdr::{mu_law_tonemap_var, TonemapParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            other => Err(crate::Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

fn tonemapped_diff<T: Element>(tape: &mut Tape<T>, pred: Var, gt: Var, tm: TonemapParams) -> Result<Var> {
    let tp = mu_law_tonemap_var(tape, pred, tm)?;
    let tg = mu_law_tonemap_var(tape, gt, tm)?;
    Ok(tape.sub(tp, tg)?)
}

/// Mean absolute difference of the μ-law tonemapped images.
pub fn loss_l1<T: Element>(tape: &mut Tape<T>, pred: Var, gt: Var, tm: TonemapParams) -> Result<Var> {
    let d = tonemapped_diff(tape, pred, gt, tm)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Mean squared difference of the μ-law tonemapped images.
pub fn loss_l2<T: Element>(tape: &mut Tape<T>, pred: Var, gt: Var, tm: TonemapParams) -> Result<Var> {
    let d = tonemapped_diff(tape, pred, gt, tm)?;
    let s = tape.square(d);
    Ok(tape.mean(s))
}

pub fn tonemapped_loss<T: Element>(
    tape: &mut Tape<T>,
    pred: Var,
    gt: Var,
    kind: LossKind,
    tm: TonemapParams,
) -> Result<Var> {
    match kind {
        LossKind::L1 => loss_l1(tape, pred, gt, tm),
        LossKind::L2 => loss_l2(tape, pred, gt, tm),
    }
}

#[cfg(test)]
mod tests {
    use ahdr_tensor::{finite_diff_check, Shape, Tensor};

    use super::*;

    fn ramp(offset: f64) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(2, 3, 4, 4), |n, c, y, x| {
            0.05 + 0.9 * (((n * 48 + c * 16 + y * 4 + x) as f64 * 0.37 + offset).sin() * 0.5 + 0.5)
        })
    }

    fn value(kind: LossKind, pred: &Tensor<f64>, gt: &Tensor<f64>) -> f64 {
        let mut tape = Tape::new();
        let p = tape.leaf(pred.clone(), false);
        let g = tape.leaf(gt.clone(), false);
        let l = tonemapped_loss(&mut tape, p, g, kind, TonemapParams::default()).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn identical_images_give_zero() {
        let a = ramp(0.0);
        assert_eq!(value(LossKind::L1, &a, &a), 0.0);
        assert_eq!(value(LossKind::L2, &a, &a), 0.0);
    }

    #[test]
    fn l2_symmetric_and_nonnegative() {
        let a = ramp(0.0);
        let b = ramp(1.3);
        assert_eq!(value(LossKind::L2, &a, &b), value(LossKind::L2, &b, &a));
        assert!(value(LossKind::L1, &a, &b) > 0.0);
    }

    #[test]
    fn l1_small_offset_matches_tonemap_slope() {
        // pred = gt + δ in the interior: loss ≈ mean |T'(gt)| δ, with T'
        // estimated by central differences of the tonemap itself.
        let gt = ramp(0.4);
        let delta = 1e-6;
        let pred = gt.map(|v| v + delta);
        let tm = TonemapParams::default();
        let t = |h: f64| (tm.mu * h).ln_1p() / tm.mu.ln_1p();
        let h = 1e-7;
        let expected = gt
            .data()
            .iter()
            .map(|&g| ((t(g + h) - t(g - h)) / (2.0 * h)).abs() * delta)
            .sum::<f64>()
            / gt.len() as f64;
        let got = value(LossKind::L1, &pred, &gt);
        assert!((got - expected).abs() / expected < 1e-4, "{got} vs {expected}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let gt = ramp(0.0);
        let pred = ramp(2.0);
        for (kind, tol) in [(LossKind::L1, 1e-4), (LossKind::L2, 1e-6)] {
            let err = finite_diff_check(
                |tape, p| {
                    let g = tape.constant(gt.clone());
                    tonemapped_loss(tape, p, g, kind, TonemapParams::default()).map_err(|e| match e {
                        crate::Error::Tensor(t) => t,
                        other => panic!("{other}"),
                    })
                },
                &pred,
                1e-6,
            )
            .unwrap();
            assert!(err < tol, "{kind:?}: {err}");
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut tape = Tape::<f32>::new();
        let p = tape.leaf(Tensor::zeros(Shape::new(1, 3, 4, 4)), false);
        let g = tape.leaf(Tensor::zeros(Shape::new(1, 3, 4, 5)), false);
        assert!(loss_l1(&mut tape, p, g, TonemapParams::default()).is_err());
    }
}
