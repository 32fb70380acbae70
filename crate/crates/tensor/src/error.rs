use std::fmt;

use crate::tensor::Shape;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Tensor axis, used to name the offending dimension in shape errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channels,
    Height,
    Width,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Axis::Batch => "batch",
            Axis::Channels => "channels",
            Axis::Height => "height",
            Axis::Width => "width",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: {axis} dimension mismatch (expected {expected}, got {actual})")]
    DimMismatch {
        op: &'static str,
        axis: Axis,
        expected: usize,
        actual: usize,
    },
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    LengthMismatch {
        shape: Shape,
        len: usize,
        expected: usize,
    },
    #[error("invalid convolution: {0}")]
    InvalidConv(String),
    #[error("{0}: no input tensors")]
    Empty(&'static str),
    #[error("channel range {start}..{end} out of bounds for {channels} channels")]
    ChannelRange {
        start: usize,
        end: usize,
        channels: usize,
    },
    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("backward already ran on this tape; reset gradients first")]
    BackwardTwice,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}

/// Checks `actual == expected` along one axis.
pub(crate) fn check_dim(
    op: &'static str,
    axis: Axis,
    expected: usize,
    actual: usize,
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(TensorError::DimMismatch {
            op,
            axis,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    check_dim(op, Axis::Batch, a.batch(), b.batch())?;
    check_dim(op, Axis::Channels, a.channels(), b.channels())?;
    check_dim(op, Axis::Height, a.height(), b.height())?;
    check_dim(op, Axis::Width, a.width(), b.width())
}
