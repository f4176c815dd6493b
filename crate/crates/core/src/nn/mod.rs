//! Dense networks trained from scratch in double precision.

pub mod arch;
pub mod bundle;
pub mod layers;
pub mod network;
pub mod train;

pub use arch::{
    build_amp_net, build_joint_net, build_naive_concat_net, build_network, build_phase_net, phase_weight_ratio,
    Architecture, NetShape, DEFAULT_HIDDEN,
};
pub use bundle::{load_bundle, save_bundle, ModelBundle, BUNDLE_VERSION};
pub use layers::{matmul, Layer, LayerKind};
pub use network::{Branch, InputBlock, Network, NetworkLayout};
pub use train::{evaluate_mse, train, Examples, MemoryExamples, OptimizerKind, TrainConfig, TrainReport};
