//! Model configuration and the activated-parameter accounting used to build
//! ablations with matched per-token compute.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoePosition {
    Bottom,
    Middle,
    Top,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ad,
    Dpt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Both MoE layers in the designated block.
    Full,
    /// Token-wise MoE only (no contrastive loss).
    NoTaskMoe,
    /// Task-wise MoE only (no balance loss).
    NoTokenMoe,
    /// Plain feedforward of matched activated width.
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { dim: usize, bound: f64 },
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { dim, .. } => *dim,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub moe_position: MoePosition,
    /// K1 / k1: token-wise expert pool and active count.
    pub token_experts: usize,
    pub token_top_k: usize,
    /// K2 / k2: task-wise expert pool and active count.
    pub task_experts: usize,
    pub task_top_k: usize,
    pub token_expert_width: usize,
    pub task_expert_width: usize,
    pub variant: Variant,
    pub max_context_tokens: usize,
    pub action_space: ActionSpace,
    pub state_dim: usize,
    /// Episode horizon; the timestep embedding table holds horizon + 1 rows
    /// so a query state can carry the next timestep id.
    pub horizon: usize,
    pub momentum_beta: f64,
    #[serde(default = "default_ablation")]
    pub ablation: Ablation,
    /// Dense feedforward width at the MoE position for the MLP ablation,
    /// solved for activated-parameter parity; `None` keeps `d_ff`.
    #[serde(default)]
    pub d_ff_at_moe: Option<usize>,
}

fn default_ablation() -> Ablation {
    Ablation::Full
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_top_k == 0 || self.token_top_k > self.token_experts {
            return Err(Error::Config(format!(
                "token top-k {} out of range for {} experts",
                self.token_top_k, self.token_experts
            )));
        }
        if self.task_top_k == 0 || self.task_top_k > self.task_experts {
            return Err(Error::Config(format!(
                "task top-k {} out of range for {} experts",
                self.task_top_k, self.task_experts
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.momentum_beta) {
            return Err(Error::Config(format!(
                "momentum beta {} outside [0,1)",
                self.momentum_beta
            )));
        }
        if self.max_context_tokens < 3 {
            return Err(Error::Config("max_context_tokens must cover at least one step".into()));
        }
        Ok(())
    }

    /// Index of the block whose feedforward is replaced.
    pub fn moe_layer_index(&self) -> usize {
        match self.moe_position {
            MoePosition::Bottom => 0,
            MoePosition::Middle => self.n_layers / 2,
            MoePosition::Top => self.n_layers - 1,
        }
    }

    /// Whether this config's block at `layer` carries MoE machinery.
    pub fn has_token_moe(&self) -> bool {
        matches!(self.ablation, Ablation::Full | Ablation::NoTaskMoe)
    }

    pub fn has_task_moe(&self) -> bool {
        matches!(self.ablation, Ablation::Full | Ablation::NoTokenMoe)
    }

    pub fn with_ablation(&self, ablation: Ablation) -> ModelConfig {
        let mut cfg = self.clone();
        cfg.ablation = ablation;
        let full = activated_params_per_token_full(self);
        match ablation {
            Ablation::Full => {}
            Ablation::NoTaskMoe => {
                cfg.token_expert_width = solve_expert_width(
                    self,
                    full - token_router_cost(self),
                    self.token_top_k,
                );
            }
            Ablation::NoTokenMoe => {
                cfg.task_expert_width = solve_expert_width(self, full, self.task_top_k);
            }
            Ablation::Mlp => {
                // matched dense width replaces d_ff at the MoE position
                let d = self.d_model;
                cfg.d_ff_at_moe = Some(((full - d) as f64 / (2 * d + 1) as f64).round() as usize);
            }
        }
        cfg
    }

    /// Activated parameters per token in the feedforward slot of the MoE
    /// block, for this config's ablation.
    pub fn activated_params_per_token(&self) -> usize {
        let d = self.d_model;
        match self.ablation {
            Ablation::Full => activated_params_per_token_full(self),
            Ablation::NoTaskMoe => {
                self.token_top_k * expert_cost(d, self.token_expert_width) + token_router_cost(self)
            }
            Ablation::NoTokenMoe => self.task_top_k * expert_cost(d, self.task_expert_width),
            Ablation::Mlp => {
                let w = self.d_ff_at_moe.unwrap_or(self.d_ff);
                w * (2 * d + 1) + d
            }
        }
    }
}

impl ModelConfig {
    pub fn d_ff_at_moe_or_default(&self) -> usize {
        self.d_ff_at_moe.unwrap_or(self.d_ff)
    }
}

fn expert_cost(d: usize, w: usize) -> usize {
    // d->w->d feedforward with biases
    d * w + w + w * d + d
}

fn token_router_cost(cfg: &ModelConfig) -> usize {
    let (d, k) = (cfg.d_model, cfg.token_experts);
    // clean gate (two bias-free linears) plus the noise matrix
    d * k + k * k + d * k
}

fn concat_proj_cost(d: usize) -> usize {
    2 * d * d + d
}

fn activated_params_per_token_full(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    cfg.token_top_k * expert_cost(d, cfg.token_expert_width)
        + token_router_cost(cfg)
        + cfg.task_top_k * expert_cost(d, cfg.task_expert_width)
        + concat_proj_cost(d)
}

fn solve_expert_width(cfg: &ModelConfig, budget: usize, top_k: usize) -> usize {
    let d = cfg.d_model;
    // budget = top_k * (w (2d+1) + d)  =>  w
    let per = budget as f64 / top_k as f64 - d as f64;
    (per / (2 * d + 1) as f64).round().max(1.0) as usize
}

/// Small configurations shared by unit tests across modules.
#[cfg(test)]
pub mod tests_support {
    use super::*;

    pub fn test_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            moe_position: MoePosition::Top,
            token_experts: 6,
            token_top_k: 2,
            task_experts: 8,
            task_top_k: 2,
            token_expert_width: 64,
            task_expert_width: 64,
            variant: Variant::Ad,
            max_context_tokens: 360,
            action_space: ActionSpace::Discrete { n: 5 },
            state_dim: 2,
            horizon: 100,
            momentum_beta: 0.995,
            ablation: Ablation::Full,
            d_ff_at_moe: None,
        }
    }

    /// The gradient-check instance: 2 layers, d = 16, 3/1 token experts,
    /// 3/2 task experts.
    pub fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            moe_position: MoePosition::Top,
            token_experts: 3,
            token_top_k: 1,
            task_experts: 3,
            task_top_k: 2,
            token_expert_width: 8,
            task_expert_width: 8,
            variant: Variant::Ad,
            max_context_tokens: 64,
            action_space: ActionSpace::Discrete { n: 5 },
            state_dim: 2,
            horizon: 4,
            momentum_beta: 0.995,
            ablation: Ablation::Full,
            d_ff_at_moe: None,
        }
    }
}
