//! From-scratch forward inference for the three binary classifiers.

pub mod layers;
pub mod network;
pub mod ops;
mod tensor;
pub mod weights;

pub use layers::{Bottleneck, Conv2d, ConvBlock, Inception, InceptionWidths, Linear, GN_GROUPS};
pub use network::{build_network, ForwardOutput, Layer, NetworkKind, NetworkModel, TraceEntry};
pub use ops::{conv2d, cross_entropy, group_norm, linear, pool2d, softmax, PoolMode};
pub use tensor::Tensor4;
pub use weights::{load_weights, save_weights, WeightManifest};
