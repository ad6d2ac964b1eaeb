//! Dense feedforward networks: parameters, forward and backward passes,
//! Adam updates and masked binary cross-entropy.

mod adam;
mod loss;
mod matrix;
mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{bce_loss, BceOutput};
pub use matrix::Matrix;
pub use network::{
    init_network, logistic, Activation, ForwardCache, Layer, LayerGrads, Network, NetworkGrads,
    PROB_EPS,
};
