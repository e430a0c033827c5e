//! A minimal neural-network engine: tensors, the layer kinds needed for the
//! reconstruction models (convolution, transposed convolution, batch
//! normalization, leaky ReLU, tanh, sigmoid, global average pooling,
//! linear), exact reverse-mode gradients, and an adaptive-moment optimizer.
//!
//! The engine is CPU-only and deterministic: batches may be processed in
//! parallel internally, but reductions happen in a fixed order, so results
//! depend only on parameters, inputs, and mode.

mod adam;
mod layer;
mod network;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layer::{conv_out_size, ConvSpec, DeconvSpec, LayerSpec};
pub use network::{Layer, Mode, NetGrads, Network, Tape};
pub use tensor::Tensor;

pub(crate) use network::{read_network, write_network, ByteReader};
