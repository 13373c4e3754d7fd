//! The MoE-augmented causal transformer policy.

pub mod attention;
pub mod config;
pub mod policy;
pub mod tensors;

pub use attention::AttnParams;
pub use config::{Ablation, ActionSpace, ModelConfig, MoePosition, Variant};
pub use policy::{
    imitation_count, imitation_grads, imitation_loss, BlockFfn, HeadOutput, MoeBlock, PolicyModel,
    PolicyOutput, PolicyParams, SeqForward,
};

/// Cross-entropy / MSE over autoregressively predicted positions.
pub use policy::imitation_loss as loss_ad;
/// Same functional form, evaluated at query positions only.
pub use policy::imitation_loss as loss_dpt;
