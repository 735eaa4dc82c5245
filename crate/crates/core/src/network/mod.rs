//! A from-scratch 1-D convolutional network with an optional persistence
//! layer: early convolutions, a middle convolution and/or persistence branch
//! (concatenated when both are present), 1x1 late convolutions, sigmoid
//! outputs, and final temporal mean pooling.

mod conv;
mod feature_map;
pub mod io;
mod model;
mod persistence;
mod spec;
pub mod train;

pub use conv::{conv1d_backward, conv1d_forward, sigmoid, Activation, ConvCache, ConvLayerSpec, ConvParams};
pub use feature_map::{concat_branches, mean_pool_backward, mean_pool_forward, split_branches, FeatureMap};
pub use io::SavedModel;
pub use model::{bce_loss, Dropout, ForwardTrace, Network, Parameters};
pub use persistence::{persistence_backward, persistence_forward, PersistenceCache, PersistenceLayerSpec};
pub use spec::{NetworkSpec, ShapeTrace, Variant};
pub use train::{train, AdaGrad, EpochRecord, LabeledExample, TrainConfig, TrainOutcome};
