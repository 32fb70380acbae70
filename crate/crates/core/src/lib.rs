//! Attention-guided merging of three bracketed LDR exposures into one HDR
//! image: the network, its training loop, synthetic data, metrics and file
//! formats.
//!
//! ```
//! use ahdr_core::hdr::{mu_law_tonemap, TonemapParams};
//! use ahdr_tensor::{Shape, Tensor};
//!
//! let h = Tensor::<f64>::full(Shape::new(1, 3, 1, 1), 0.5);
//! let t = mu_law_tonemap(&h, TonemapParams::default()).unwrap();
//! assert!((t.data()[0] - 0.91864).abs() < 1e-4);
//! ```

pub mod error;
pub mod gradcheck;
pub mod hdr;
pub mod io;
pub mod metrics;
pub mod network;
pub mod seed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use hdr::{ExposureImage, GammaParams, HdrImage, TonemapParams};
pub use io::checkpoint::Checkpoint;
pub use network::{NetConfig, NetworkParams, Variant};
pub use synth::SampleTriplet;
pub use train::{LossKind, TrainConfig, TrainRecord, Trainer};
