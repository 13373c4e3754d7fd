//! Finite-difference verification of the composed training loss on a tiny
//! double-precision model: imitation + balance + weighted contrastive,
//! checked parameter by parameter against central differences.
//!
//! Run with: cargo run --release --example gradient_check

use t2mir::grad_check::{
    composed_loss, composed_loss_and_grad, finite_difference, key_batch_representations,
    max_relative_error, LossWeights,
};
use t2mir::math::Rng;
use t2mir::model::{ActionSpace, Ablation, ModelConfig, MoePosition, PolicyModel, Variant};
use t2mir::seq::{Span, Target, TokenFeat, TokenSeq};

fn tiny_config() -> ModelConfig {
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

fn seq(task: usize, seed: u64) -> TokenSeq {
    let mut rng = Rng::new(seed);
    let mut feats = Vec::new();
    let mut timesteps = Vec::new();
    let mut groups = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..2 {
        let start = feats.len();
        for t in 0..2 {
            let pos = feats.len();
            feats.push(TokenFeat::State(vec![rng.uniform(), rng.uniform()]));
            let a = rng.below(5);
            targets.push((pos, Target::Discrete(a)));
            feats.push(TokenFeat::ActionDiscrete(a));
            feats.push(TokenFeat::Reward(rng.uniform().round()));
            timesteps.extend([t, t, t]);
        }
        groups.push(Span { start, end: feats.len() });
    }
    let prompt_len = feats.len();
    TokenSeq { feats, timesteps, groups, prompt_len, targets, task_index: task }
}

fn main() {
    let model: PolicyModel<f64> = PolicyModel::init(tiny_config(), 42).unwrap();
    let batch = vec![seq(0, 1), seq(1, 2)];
    let key_seqs = vec![seq(0, 3), seq(1, 4)];
    let keys = key_batch_representations(&model, &key_seqs).unwrap();
    let weights = LossWeights { w_imp: 0.01, w_load: 0.01, w_con: 0.01 };

    let (loss, analytic) = composed_loss_and_grad(&model, &batch, &keys, &weights).unwrap();
    println!("composed loss on the tiny batch: {loss:.6}");
    println!("checking {} trainable parameters against central differences...", analytic.len());

    let flat0 = model.params.flatten_trainable();
    let mut probe = PolicyModel::<f64>::init(tiny_config(), 42).unwrap();
    let fd = finite_difference(&flat0, 1e-5, |p| {
        probe.params.set_trainable_from_flat(p);
        composed_loss(&probe, &batch, &keys, &weights).unwrap()
    });
    let err = max_relative_error(&analytic, &fd, 1e-6);
    println!("max relative error: {err:.3e}");
    assert!(err < 1e-3);
    println!("analytic backward agrees with finite differences.");
}
