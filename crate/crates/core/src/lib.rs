//! Wavelet convolutional neural networks on the CPU.
//!
//! The crate pairs a small tensor library with reverse-mode autodiff
//! ([`graph`]) and a Haar multiresolution analysis ([`wavelet`]) that is
//! wired into a convolutional trunk as fixed, parameter-free layers
//! ([`network`]). [`train`] and [`data`] provide the optimization loop and
//! the image/dataset pipeline.

pub mod data;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod network;
pub mod params;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use kernels::Mode;
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
pub use wavelet::WaveletFilterPair;
