//! Dense rank-4 tensors in NCHW layout and a tape that records
//! differentiable operations for reverse-mode gradient computation.
//!
//! Forward values are computed eagerly when an operation is recorded on a
//! [`Tape`]; [`Tape::backward`] then walks the tape in reverse and populates
//! gradients for every node that depends on a grad-enabled leaf.
//!
//! ```
//! use ahdr_tensor::{Shape, Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::full(Shape::new(1, 1, 2, 2), 3.0), true);
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[6.0; 4]);
//! ```

mod conv;
mod element;
mod error;
mod gradcheck;
mod tape;
mod tensor;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use element::{gemm, DType, Element};
pub use error::{Axis, Result, TensorError};
pub use gradcheck::{finite_diff_check, finite_diff_check_many, GradCheckReport};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
