use std::fmt;

use crate::element::Element;
use crate::error::{check_dim, check_same_shape, Axis, Result, TensorError};

/// Extents of a rank-4 tensor: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape([usize; 4]);

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape([batch, channels, height, width])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn channels(&self) -> usize {
        self.0[1]
    }

    pub fn height(&self) -> usize {
        self.0[2]
    }

    pub fn width(&self) -> usize {
        self.0[3]
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements in one spatial plane.
    pub fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    /// Elements in one batch item.
    pub fn item(&self) -> usize {
        self.0[1] * self.plane()
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Shape([self.0[0], channels, self.0[2], self.0[3]])
    }

    pub fn with_batch(self, batch: usize) -> Self {
        Shape([batch, self.0[1], self.0[2], self.0[3]])
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n}, {c}, {h}, {w})")
    }
}

/// Dense NCHW array. The data length always equals `shape.numel()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
                expected: shape.numel(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` for every element.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [bn, cn, hn, wn] = shape.dims();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..bn {
            for c in 0..cn {
                for y in 0..hn {
                    for x in 0..wn {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cn, hn, wn] = self.shape.dims();
        ((n * cn + c) * hn + y) * wn + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = value;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<T> {
        if self.shape.is_scalar() {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        check_same_shape(op, self.shape, other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Copies channels `start..start + len` of every batch item.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let channels = self.shape.channels();
        if start + len > channels {
            return Err(TensorError::ChannelRange {
                start,
                end: start + len,
                channels,
            });
        }
        let plane = self.shape.plane();
        let out_shape = self.shape.with_channels(len);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..self.shape.batch() {
            let base = (n * channels + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Joins tensors along the channel axis; part `k` occupies a contiguous
    /// channel block in input order.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or(TensorError::Empty("concat_channels"))?;
        let s0 = first.shape;
        for p in &parts[1..] {
            check_dim("concat_channels", Axis::Batch, s0.batch(), p.shape.batch())?;
            check_dim("concat_channels", Axis::Height, s0.height(), p.shape.height())?;
            check_dim("concat_channels", Axis::Width, s0.width(), p.shape.width())?;
        }
        let channels: usize = parts.iter().map(|p| p.shape.channels()).sum();
        let out_shape = s0.with_channels(channels);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.batch() {
            for p in parts {
                let item = p.shape.item();
                data.extend_from_slice(&p.data[n * item..(n + 1) * item]);
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Copies batch item `n` into a batch-1 tensor.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        if n >= self.shape.batch() {
            return Err(TensorError::DimMismatch {
                op: "batch_item",
                axis: Axis::Batch,
                expected: self.shape.batch(),
                actual: n,
            });
        }
        let item = self.shape.item();
        Ok(Tensor {
            shape: self.shape.with_batch(1),
            data: self.data[n * item..(n + 1) * item].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack_batch(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or(TensorError::Empty("stack_batch"))?;
        let s0 = first.shape;
        let mut batch = 0;
        let mut data = Vec::new();
        for t in items {
            check_dim("stack_batch", Axis::Channels, s0.channels(), t.shape.channels())?;
            check_dim("stack_batch", Axis::Height, s0.height(), t.shape.height())?;
            check_dim("stack_batch", Axis::Width, s0.width(), t.shape.width())?;
            batch += t.shape.batch();
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: s0.with_batch(batch),
            data,
        })
    }

    /// Spatial window `[top, top + height) × [left, left + width)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let [bn, cn, hn, wn] = self.shape.dims();
        if top + height > hn {
            return Err(TensorError::DimMismatch {
                op: "crop",
                axis: Axis::Height,
                expected: hn,
                actual: top + height,
            });
        }
        if left + width > wn {
            return Err(TensorError::DimMismatch {
                op: "crop",
                axis: Axis::Width,
                expected: wn,
                actual: left + width,
            });
        }
        let shape = Shape::new(bn, cn, height, width);
        let mut data = Vec::with_capacity(shape.numel());
        for plane in 0..bn * cn {
            for y in top..top + height {
                let row = (plane * hn + y) * wn;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Ok(Tensor { shape, data })
    }
}
