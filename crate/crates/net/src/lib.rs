//! Transforming convolutional network for speckle-to-image inversion.
//!
//! A multi-scale convolutional encoder/decoder turns the speckle image into a
//! feature map and a fully connected "transformation" layer maps it to the
//! object domain. Every layer carries a hand-derived backward pass.

pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod param;
pub mod tensor;
pub mod train;

pub use error::{NetError, Result};
pub use layers::Layer;
pub use network::{Network, NetworkConfig};
pub use param::Param;
pub use tensor::Batch;
