//! Both mixture-of-experts layers and their training losses.
//!
//! The token-wise layer routes every (state/action/reward) token through a
//! noisy top-k gate and is regularized by importance and load-balancing
//! losses. The task-wise layer routes whole sequences via their pooled hidden
//! state, and its router doubles as a task encoder trained contrastively
//! against a momentum copy.

mod balance;
mod contrastive;
mod gating;
mod task;
mod token;

pub use balance::{balance_loss, balance_loss_backward, coefficient_of_variation, importance_vector, load_contribution, load_contribution_backward, load_vector, BalanceLossTerms};
pub use contrastive::{infonce_loss, infonce_loss_with_grads, momentum_update, InfoNceGrads, TaskRouterState};
pub use gating::{noisy_gate_logits, top_k_gate, GateDecision, NoisyLogits, RouterParams};
pub use task::{pool_mean, task_moe_backward, task_moe_forward, task_router_representation, TaskMoeCache, TaskMoeParams};
pub use token::{token_moe_backward, token_moe_forward, TokenMoeCache, TokenMoeParams};
