//! Minimal deterministic neural-network plumbing.
//!
//! Everything here is single-threaded and allocation-explicit so that a
//! fixed seed reproduces a training run bit for bit. Convolutions lower to
//! im2col + GEMM (`ndarray::dot`), which is where nearly all training time
//! goes. Layers return an explicit cache from `forward`; `backward` consumes
//! that cache, so several live forwards (labeled batch, unlabeled batch) can
//! coexist before their backward passes run.

mod conv;
mod layers;
mod optim;
mod param;
mod rng;

pub use conv::{Conv2d, ConvCache};
pub use layers::{
    channel_softmax, channel_softmax_backward, concat_channels, split_channels, Dropout,
    DropoutCache, LeakyRelu, MaxPool2, MaxPoolCache, Relu, ReluCache, UpsampleNearest2,
};
pub use optim::{Adam, Sgd};
pub use param::Param;
pub use rng::{stream_rng, RngSnapshot, StreamId};

/// Forward-pass mode. Eval disables dropout and consumes no RNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
}
