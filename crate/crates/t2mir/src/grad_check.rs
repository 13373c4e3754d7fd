//! Finite-difference verification of the composed training loss.
//!
//! The composed objective here deliberately re-assembles the training loss
//! from the same building blocks the trainer uses (forward, balance,
//! contrastive), but with serial orchestration, so the analytic backward can
//! be checked end to end against central differences.

use crate::error::Result;
use crate::math::{Real, Rng};
use crate::model::{imitation_count, imitation_grads, PolicyModel};
use crate::moe::{balance_loss, balance_loss_backward, infonce_loss_with_grads};
use crate::seq::TokenSeq;

/// Loss weights for the composed objective.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub w_imp: f64,
    pub w_load: f64,
    pub w_con: f64,
}

/// Composed loss over a small batch with frozen key representations, plus
/// the analytic gradient flattened over all trainable parameters.
///
/// The noise draws come from `Rng::zero_noise()` so the run is deterministic
/// while the load estimator and its gradient paths stay active.
pub fn composed_loss_and_grad<F: Real>(
    model: &PolicyModel<F>,
    batch: &[TokenSeq],
    keys: &[Vec<F>],
    weights: &LossWeights,
) -> Result<(F, Vec<F>)> {
    let (loss, grads) = composed_loss_inner(model, batch, keys, weights, true)?;
    Ok((loss, grads.expect("gradients requested").flatten_trainable()))
}

/// Loss only (used by the finite-difference probe).
pub fn composed_loss<F: Real>(
    model: &PolicyModel<F>,
    batch: &[TokenSeq],
    keys: &[Vec<F>],
    weights: &LossWeights,
) -> Result<F> {
    composed_loss_inner(model, batch, keys, weights, false).map(|(l, _)| l)
}

fn composed_loss_inner<F: Real>(
    model: &PolicyModel<F>,
    batch: &[TokenSeq],
    keys: &[Vec<F>],
    weights: &LossWeights,
    want_grads: bool,
) -> Result<(F, Option<crate::model::PolicyParams<F>>)> {
    let n_exp = model.cfg.token_experts;
    let mut fwds = Vec::with_capacity(batch.len());
    let mut total_count = 0usize;
    for seq in batch {
        let positions: Vec<usize> = seq.targets.iter().map(|(p, _)| *p).collect();
        let fwd = model.forward(seq, &positions, true, &mut Rng::zero_noise())?;
        total_count += imitation_count(&model.cfg.action_space, &seq.targets);
        fwds.push(fwd);
    }

    // imitation
    let inv = 1.0 / total_count.max(1) as f64;
    let mut imitation = 0.0;
    let mut d_outputs = Vec::with_capacity(batch.len());
    for (seq, fwd) in batch.iter().zip(fwds.iter()) {
        let (l, g) = imitation_grads(&model.cfg.action_space, &fwd.outputs, &seq.targets, inv);
        imitation += l;
        d_outputs.push(g);
    }

    // balance over the whole batch
    let has_token = model.moe_block().map(|m| m.token.is_some()).unwrap_or(false);
    let (balance_total, d_imp, d_load, terms) = if has_token {
        let mut imp = vec![F::zero(); n_exp];
        let mut load = vec![F::zero(); n_exp];
        for fwd in &fwds {
            for (a, &b) in imp.iter_mut().zip(fwd.imp.iter()) {
                *a = *a + b;
            }
            for (a, &b) in load.iter_mut().zip(fwd.load.iter()) {
                *a = *a + b;
            }
        }
        let terms = balance_loss(imp, load, F::from_f64(weights.w_imp), F::from_f64(weights.w_load));
        let (di, dl) = balance_loss_backward(&terms, F::one());
        (terms.total.as_f64(), di, dl, Some(terms))
    } else {
        (0.0, vec![F::zero(); n_exp], vec![F::zero(); n_exp], None)
    };
    let _ = terms;

    // contrastive against the frozen keys
    let has_task = model.moe_block().map(|m| m.task.is_some()).unwrap_or(false);
    let (contrastive, dz_all) = if has_task && weights.w_con != 0.0 {
        let queries: Vec<Vec<F>> = fwds.iter().map(|f| f.z_query.clone().expect("task moe active")).collect();
        let task_ids: Vec<usize> = batch.iter().map(|s| s.task_index).collect();
        let bilinear = &model
            .moe_block()
            .unwrap()
            .task
            .as_ref()
            .unwrap()
            .state
            .bilinear;
        let (l, grads) = infonce_loss_with_grads(&queries, keys, &task_ids, bilinear)?;
        (l.as_f64(), Some(grads))
    } else {
        (0.0, None)
    };

    let total = imitation + balance_total + weights.w_con * contrastive;
    if !want_grads {
        return Ok((F::from_f64(total), None));
    }

    let mut g = model.params.zeros_like();
    let dim = model.cfg.task_experts;
    for (i, (seq, fwd)) in batch.iter().zip(fwds.iter()).enumerate() {
        let dz: Option<Vec<F>> = dz_all.as_ref().map(|gz| {
            gz.d_queries[i * dim..(i + 1) * dim]
                .iter()
                .map(|&v| v * F::from_f64(weights.w_con))
                .collect()
        });
        model.backward(seq, fwd, &d_outputs[i], dz.as_deref(), &d_imp, &d_load, &mut g);
    }
    if let Some(gz) = &dz_all {
        if let Some(task) = model.moe_block().and_then(|m| m.task.as_ref()) {
            let _ = task;
            let gm = match &mut g.blocks[model.cfg.moe_layer_index()].ffn {
                crate::model::BlockFfn::Moe(m) => m.task.as_mut().unwrap(),
                _ => unreachable!(),
            };
            for (a, &b) in gm.state.bilinear.iter_mut().zip(gz.d_bilinear.iter()) {
                *a = *a + b * F::from_f64(weights.w_con);
            }
        }
    }
    Ok((F::from_f64(total), Some(g)))
}

/// Key-side representations for a batch (forward without gradients through
/// the momentum router).
pub fn key_batch_representations<F: Real>(model: &PolicyModel<F>, keys: &[TokenSeq]) -> Result<Vec<Vec<F>>> {
    let mut out = Vec::with_capacity(keys.len());
    for seq in keys {
        let pooled = model.forward_pooled(seq)?;
        out.push(model.key_representation(&pooled).expect("task moe active"));
    }
    Ok(out)
}

/// Worst relative error between analytic and central-difference gradients.
/// Entries whose magnitudes both sit under `floor` are compared absolutely.
pub fn max_relative_error(analytic: &[f64], fd: &[f64], floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (&a, &b) in analytic.iter().zip(fd.iter()) {
        let denom = a.abs().max(b.abs());
        let err = if denom < floor { (a - b).abs() } else { (a - b).abs() / denom };
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Central finite differences of `f` over `params`.
pub fn finite_difference<G: FnMut(&[f64]) -> f64>(params: &[f64], step: f64, mut f: G) -> Vec<f64> {
    let mut fd = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let fp = f(&work);
        work[i] = orig - step;
        let fm = f(&work);
        work[i] = orig;
        fd[i] = (fp - fm) / (2.0 * step);
    }
    fd
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::tests_support::tiny_config;
    use crate::seq::{Span, Target, TokenFeat};

    /// Hand-built two-episode AD sequence with random features.
    pub fn synthetic_seq(task: usize, seed: u64, steps_per_episode: usize, episodes: usize) -> TokenSeq {
        let mut rng = Rng::new(seed);
        let mut feats = Vec::new();
        let mut timesteps = Vec::new();
        let mut groups = Vec::new();
        let mut targets = Vec::new();
        for ep in 0..episodes {
            let start = feats.len();
            for t in 0..steps_per_episode {
                let pos = feats.len();
                feats.push(TokenFeat::State(vec![rng.uniform(), rng.uniform()]));
                let action = rng.below(5);
                targets.push((pos, Target::Discrete(action)));
                feats.push(TokenFeat::ActionDiscrete(action));
                feats.push(TokenFeat::Reward(if rng.uniform() < 0.3 { 1.0 } else { 0.0 }));
                timesteps.extend([t, t, t]);
            }
            groups.push(Span { start, end: feats.len() });
            let _ = ep;
        }
        let prompt_len = feats.len();
        TokenSeq { feats, timesteps, groups, prompt_len, targets, task_index: task }
    }

    #[test]
    fn tiny_model_composed_loss_matches_fd() {
        let cfg = tiny_config();
        let model: PolicyModel<f64> = PolicyModel::init(cfg, 42).unwrap();
        let batch = vec![synthetic_seq(0, 1, 2, 2), synthetic_seq(1, 2, 2, 2)];
        let key_seqs = vec![synthetic_seq(0, 3, 2, 2), synthetic_seq(1, 4, 2, 2)];
        let keys = key_batch_representations(&model, &key_seqs).unwrap();
        let weights = LossWeights { w_imp: 0.01, w_load: 0.01, w_con: 0.01 };

        let (_, analytic) = composed_loss_and_grad(&model, &batch, &keys, &weights).unwrap();
        let flat0 = model.params.flatten_trainable();
        assert_eq!(analytic.len(), flat0.len());

        let mut probe = PolicyModel::init(tiny_config(), 42).unwrap();
        let fd = finite_difference(&flat0, 1e-5, |p| {
            probe.params.set_trainable_from_flat(p);
            composed_loss(&probe, &batch, &keys, &weights).unwrap()
        });
        let err = max_relative_error(&analytic, &fd, 1e-6);
        assert!(err < 1e-3, "max relative error {err}");
    }
}
