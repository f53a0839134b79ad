//! Reduced-precision floating-point emulation and a from-scratch CNN trainer
//! for measuring how training reacts to lost mantissa bits.
//!
//! * [`quant`]: truncation and stochastic rounding on binary32 bit patterns.
//! * [`tensor`]: dense tensors and kernels that can round after every
//!   elementary operation.
//! * [`network`]: conv/pool/dense classifier, back-propagation, RMSprop and
//!   the training loop with per-batch, per-layer or per-operation rounding.
//! * [`data`]: MNIST IDX loading and deterministic mini-batches.
//! * [`analysis`]: forward and backward round-off error models with
//!   brute-force checks.
//!
//! ```
//! use lowprec::quant::{truncate, MantissaBits};
//!
//! let sixteen_bit = MantissaBits::from_bitsize(16).unwrap();
//! assert_eq!(truncate(1.9875, sixteen_bit), 1.984375);
//! ```

pub mod analysis;
pub mod data;
pub mod network;
pub mod quant;
pub mod tensor;

pub use data::{Dataset, Split};
pub use network::{Network, NetworkSpec, Params, TrainConfig};
pub use quant::{Granularity, MantissaBits, PrecisionConfig, Rng, Rounding};
pub use tensor::{ArithContext, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
}
