//! Size-preserving 2-D convolution (cross-correlation) with dilation.
//!
//! Lowered to im2col + GEMM. The column buffer is built for bands of output
//! rows so that large images never materialize the full `K × H·W` matrix.

use crate::element::{gemm, Element};
use crate::error::{check_dim, Axis, Result, TensorError};
use crate::tensor::{Shape, Tensor};

/// Upper bound on column-buffer elements per band.
const COL_BUDGET: usize = 1 << 21;

/// Stride-1 convolution geometry with zero padding chosen so the output has
/// the input's spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
    ) -> Result<Self> {
        if kernel_size == 0 || kernel_size % 2 == 0 {
            return Err(TensorError::InvalidConv(format!(
                "kernel size must be odd, got {kernel_size}"
            )));
        }
        if dilation == 0 {
            return Err(TensorError::InvalidConv("dilation must be at least 1".into()));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(TensorError::InvalidConv("channel counts must be positive".into()));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
        })
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel_size - 1) / 2
    }

    /// Rows of the lowered weight matrix: `in_channels · k²`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        )
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + self.out_channels
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_size == 1
    }

    fn check(&self, input: Shape, weight: Shape, bias: Shape) -> Result<()> {
        const OP: &str = "conv2d";
        check_dim(OP, Axis::Channels, self.in_channels, input.channels())?;
        let ws = self.weight_shape();
        check_dim(OP, Axis::Batch, ws.batch(), weight.batch())?;
        check_dim(OP, Axis::Channels, ws.channels(), weight.channels())?;
        check_dim(OP, Axis::Height, ws.height(), weight.height())?;
        check_dim(OP, Axis::Width, ws.width(), weight.width())?;
        check_dim(OP, Axis::Channels, self.out_channels, bias.numel())
    }

    fn band_rows(&self, height: usize, width: usize) -> usize {
        let per_row = self.patch_len() * width.max(1);
        (COL_BUDGET / per_row).clamp(1, height.max(1))
    }
}

/// Lowers rows `y0..y1` of one `(C, H, W)` image into `col`, laid out as
/// `patch_len × ((y1 - y0) · W)`.
fn im2col<T: Element>(
    image: &[T],
    spec: &ConvSpec,
    (h, w): (usize, usize),
    (y0, y1): (usize, usize),
    col: &mut [T],
) {
    let k = spec.kernel_size;
    let d = spec.dilation;
    let pad = spec.padding() as isize;
    let ncols = (y1 - y0) * w;
    let wi = w as isize;
    for c in 0..spec.in_channels {
        let plane = &image[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let dy = (ky * d) as isize - pad;
            for kx in 0..k {
                let dx = (kx * d) as isize - pad;
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                let x_lo = (-dx).clamp(0, wi) as usize;
                let x_hi = (wi - dx).clamp(x_lo as isize, wi) as usize;
                for y in y0..y1 {
                    let out = &mut dst[(y - y0) * w..(y - y0 + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x_lo].fill(T::zero());
                    if x_hi > x_lo {
                        let s0 = (x_lo as isize + dx) as usize;
                        out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                    }
                    out[x_hi..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds `col` back into the image.
fn col2im<T: Element>(
    col: &[T],
    spec: &ConvSpec,
    (h, w): (usize, usize),
    (y0, y1): (usize, usize),
    image: &mut [T],
) {
    let k = spec.kernel_size;
    let d = spec.dilation;
    let pad = spec.padding() as isize;
    let ncols = (y1 - y0) * w;
    let wi = w as isize;
    for c in 0..spec.in_channels {
        let plane = &mut image[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let dy = (ky * d) as isize - pad;
            for kx in 0..k {
                let dx = (kx * d) as isize - pad;
                let row = (c * k + ky) * k + kx;
                let src = &col[row * ncols..(row + 1) * ncols];
                let x_lo = (-dx).clamp(0, wi) as usize;
                let x_hi = (wi - dx).clamp(x_lo as isize, wi) as usize;
                for y in y0..y1 {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_hi == x_lo {
                        continue;
                    }
                    let s = &src[(y - y0) * w + x_lo..(y - y0) * w + x_hi];
                    let d0 = sy as usize * w + (x_lo as isize + dx) as usize;
                    for (o, &v) in plane[d0..d0 + s.len()].iter_mut().zip(s) {
                        *o = *o + v;
                    }
                }
            }
        }
    }
}

/// Forward convolution. `weight` is `(out, in, k, k)`, `bias` holds `out`
/// values (shape `(1, out, 1, 1)`).
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let ishape = input.shape();
    spec.check(ishape, weight.shape(), bias.shape())?;
    let (h, w) = (ishape.height(), ishape.width());
    let hw = h * w;
    let oc = spec.out_channels;
    let kk = spec.patch_len();
    let oshape = ishape.with_channels(oc);
    let mut out = vec![T::zero(); oshape.numel()];
    if hw == 0 {
        return Tensor::new(oshape, out);
    }
    let band = spec.band_rows(h, w);
    let mut col = if spec.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * band * w]
    };
    for n in 0..ishape.batch() {
        let image = &input.data()[n * ishape.item()..(n + 1) * ishape.item()];
        let out_item = &mut out[n * oc * hw..(n + 1) * oc * hw];
        for (o, plane) in out_item.chunks_mut(hw).enumerate() {
            plane.fill(bias.data()[o]);
        }
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + band).min(h);
            let ncols = (y1 - y0) * w;
            let (b, rsb): (&[T], usize) = if spec.is_pointwise() {
                (&image[y0 * w..], hw)
            } else {
                im2col(image, spec, (h, w), (y0, y1), &mut col);
                (&col[..kk * ncols], ncols)
            };
            gemm(
                oc,
                kk,
                ncols,
                T::one(),
                weight.data(),
                (kk, 1),
                b,
                (rsb, 1),
                T::one(),
                &mut out_item[y0 * w..],
                (hw, 1),
            );
            y0 = y1;
        }
    }
    Tensor::new(oshape, out)
}

/// Gradients of a convolution with respect to its operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward pass given the upstream gradient `grad_out`. The input gradient
/// is only formed when `want_input` is set.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let ishape = input.shape();
    spec.check(ishape, weight.shape(), spec.bias_shape())?;
    let oshape = ishape.with_channels(spec.out_channels);
    crate::error::check_same_shape("conv2d_backward", oshape, grad_out.shape())?;
    let (h, w) = (ishape.height(), ishape.width());
    let hw = h * w;
    let oc = spec.out_channels;
    let kk = spec.patch_len();
    let mut gw = vec![T::zero(); spec.weight_shape().numel()];
    let mut gb = vec![T::zero(); oc];
    let mut gi = if want_input {
        vec![T::zero(); ishape.numel()]
    } else {
        Vec::new()
    };
    if hw > 0 {
        let band = spec.band_rows(h, w);
        let pointwise = spec.is_pointwise();
        let mut col = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); kk * band * w]
        };
        let mut dcol = if pointwise || !want_input {
            Vec::new()
        } else {
            vec![T::zero(); kk * band * w]
        };
        for n in 0..ishape.batch() {
            let image = &input.data()[n * ishape.item()..(n + 1) * ishape.item()];
            let g_item = &grad_out.data()[n * oc * hw..(n + 1) * oc * hw];
            for (o, plane) in g_item.chunks(hw).enumerate() {
                gb[o] = plane.iter().fold(gb[o], |acc, &v| acc + v);
            }
            let mut y0 = 0;
            while y0 < h {
                let y1 = (y0 + band).min(h);
                let ncols = (y1 - y0) * w;
                let g_band = &g_item[y0 * w..];
                // dW += dOut · colᵀ
                {
                    let (b, rsb): (&[T], usize) = if pointwise {
                        (&image[y0 * w..], hw)
                    } else {
                        im2col(image, spec, (h, w), (y0, y1), &mut col);
                        (&col[..kk * ncols], ncols)
                    };
                    gemm(
                        oc,
                        ncols,
                        kk,
                        T::one(),
                        g_band,
                        (hw, 1),
                        b,
                        (1, rsb),
                        T::one(),
                        &mut gw,
                        (kk, 1),
                    );
                }
                if want_input {
                    let gi_item = &mut gi[n * ishape.item()..(n + 1) * ishape.item()];
                    if pointwise {
                        // dX += Wᵀ · dOut, written straight into the image.
                        gemm(
                            kk,
                            oc,
                            ncols,
                            T::one(),
                            weight.data(),
                            (1, kk),
                            g_band,
                            (hw, 1),
                            T::one(),
                            &mut gi_item[y0 * w..],
                            (hw, 1),
                        );
                    } else {
                        gemm(
                            kk,
                            oc,
                            ncols,
                            T::one(),
                            weight.data(),
                            (1, kk),
                            g_band,
                            (hw, 1),
                            T::zero(),
                            &mut dcol[..kk * ncols],
                            (ncols, 1),
                        );
                        col2im(&dcol[..kk * ncols], spec, (h, w), (y0, y1), gi_item);
                    }
                }
                y0 = y1;
            }
        }
    }
    Ok(ConvGrads {
        input: if want_input {
            Some(Tensor::new(ishape, gi)?)
        } else {
            None
        },
        weight: Tensor::new(spec.weight_shape(), gw)?,
        bias: Tensor::new(spec.bias_shape(), gb)?,
    })
}
