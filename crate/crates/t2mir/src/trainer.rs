//! Training loops for both pipeline variants: composed loss (imitation +
//! balance + weighted contrastive), one optimizer step, then the momentum
//! update of the key router.

use crate::checkpoint::{load_checkpoint, model_from_checkpoint, save_checkpoint};
use crate::data::{build_ad_batch, build_dpt_batch, BatchPair, Dataset, QueryRecord};
use crate::error::{Error, Result};
use crate::math::{Real, Rng};
use crate::model::{
    imitation_count, imitation_grads, Ablation, BlockFfn, PolicyModel, Variant,
};
use crate::moe::{balance_loss, balance_loss_backward, infonce_loss_with_grads, momentum_update};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Trajectories concatenated per context (AD).
    pub trajectories_per_seq: usize,
    /// Prompt truncation in steps (DPT).
    pub max_prompt_steps: usize,
    pub w_con: f64,
    pub w_imp: f64,
    pub w_load: f64,
    pub momentum_beta: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
    pub grad_clip: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_con < 0.0 {
            return Err(Error::Config("w_con must be nonnegative".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be positive".into()));
        }
        if self.log_interval == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config("intervals must be positive".into()));
        }
        Ok(())
    }
}

/// Loss breakdown for one step. `contrastive` is the weighted contribution
/// (w_con * raw InfoNCE), so the parts sum to the total.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub imitation: f64,
    pub balance: f64,
    pub contrastive: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.imitation + self.balance + self.contrastive
    }
}

/// Adam with constant learning rate over the trainable tensors.
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64, n_trainable: usize) -> Adam<F> {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![F::zero(); n_trainable],
            v: vec![F::zero(); n_trainable],
        }
    }

    pub fn step(&mut self, model: &mut PolicyModel<F>, grads: &crate::model::PolicyParams<F>) {
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr = F::from_f64(self.lr * bc2.sqrt() / bc1);
        let eps = F::from_f64(self.eps);
        let g = grads.tensors();
        let mut off = 0;
        for (dst, src) in model.params.tensors_mut().into_iter().zip(g.into_iter()) {
            debug_assert_eq!(dst.name, src.name);
            if !dst.trainable {
                continue;
            }
            for (i, (p, &gi)) in dst.data.iter_mut().zip(src.data.iter()).enumerate() {
                let mi = b1 * self.m[off + i] + (one - b1) * gi;
                let vi = b2 * self.v[off + i] + (one - b2) * gi * gi;
                self.m[off + i] = mi;
                self.v[off + i] = vi;
                *p = *p - lr * mi / (vi.sqrt() + eps);
            }
            off += src.data.len();
        }
    }
}

/// Scale gradients in place so the global norm does not exceed `clip`.
fn clip_gradients<F: Real>(grads: &mut crate::model::PolicyParams<F>, clip: f64) {
    if clip <= 0.0 {
        return;
    }
    let mut sq = 0.0f64;
    for t in grads.tensors() {
        if t.trainable {
            for &g in t.data.iter() {
                let g = g.as_f64();
                sq += g * g;
            }
        }
    }
    let norm = sq.sqrt();
    if norm > clip {
        let scale = F::from_f64(clip / norm);
        for t in grads.tensors_mut() {
            if t.trainable {
                for g in t.data.iter_mut() {
                    *g = *g * scale;
                }
            }
        }
    }
}

fn noise_rng(seed: u64, step: usize, item: usize) -> Rng {
    Rng::new(seed ^ 0x6e6f_6973_6500_0000).fork(step as u64).fork(item as u64)
}

/// One composed-loss optimization step over a prepared batch pair. The key
/// batch runs without gradients through the momentum key router; the
/// momentum update itself follows the optimizer step.
pub fn train_step<F: Real>(
    model: &mut PolicyModel<F>,
    opt: &mut Adam<F>,
    batch: &BatchPair,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossParts> {
    let has_token = model.moe_block().map(|m| m.token.is_some()).unwrap_or(false);
    let has_task = model.moe_block().map(|m| m.task.is_some()).unwrap_or(false);
    let n_exp = model.cfg.token_experts;

    // forward pass over the query batch, train mode
    let model_ref = &*model;
    let fwds: Vec<_> = batch
        .queries
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let positions: Vec<usize> = seq.targets.iter().map(|(p, _)| *p).collect();
            model_ref.forward(seq, &positions, true, &mut noise_rng(cfg.seed, step, i))
        })
        .collect::<Result<Vec<_>>>()?;

    // imitation loss over all predicted positions in the batch
    let total: usize = batch
        .queries
        .iter()
        .map(|s| imitation_count(&model.cfg.action_space, &s.targets))
        .sum();
    let inv = 1.0 / total.max(1) as f64;
    let mut imitation = 0.0;
    let mut d_outputs = Vec::with_capacity(fwds.len());
    for (seq, fwd) in batch.queries.iter().zip(fwds.iter()) {
        let (l, g) = imitation_grads(&model.cfg.action_space, &fwd.outputs, &seq.targets, inv);
        imitation += l;
        d_outputs.push(g);
    }

    // balance loss over the batch's aggregated importance and load
    let (balance, d_imp, d_load) = if has_token {
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
        let terms = balance_loss(imp, load, F::from_f64(cfg.w_imp), F::from_f64(cfg.w_load));
        let (di, dl) = balance_loss_backward(&terms, F::one());
        (terms.total.as_f64(), di, dl)
    } else {
        (0.0, vec![F::zero(); n_exp], vec![F::zero(); n_exp])
    };

    // contrastive loss against the key batch through the momentum router
    let (contrastive_weighted, dz_grads) = if has_task && cfg.w_con > 0.0 {
        let keys: Vec<Vec<F>> = batch
            .keys
            .par_iter()
            .map(|seq| {
                let pooled = model_ref.forward_pooled(seq)?;
                Ok(model_ref.key_representation(&pooled).expect("task moe active"))
            })
            .collect::<Result<Vec<_>>>()?;
        let queries: Vec<Vec<F>> = fwds.iter().map(|f| f.z_query.clone().expect("task moe")).collect();
        let task_ids: Vec<usize> = batch.queries.iter().map(|s| s.task_index).collect();
        let bilinear = &model.moe_block().unwrap().task.as_ref().unwrap().state.bilinear;
        let (raw, grads) = infonce_loss_with_grads(&queries, &keys, &task_ids, bilinear)?;
        (cfg.w_con * raw.as_f64(), Some(grads))
    } else {
        (0.0, None)
    };

    let parts = LossParts { imitation, balance, contrastive: contrastive_weighted };
    if !parts.total().is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            imitation: parts.imitation,
            balance: parts.balance,
            contrastive: parts.contrastive,
            lr: cfg.learning_rate,
        });
    }

    // backward per sequence, then a serial reduction in batch order
    let k2 = model.cfg.task_experts;
    let w_con = F::from_f64(cfg.w_con);
    let per_seq: Vec<crate::model::PolicyParams<F>> = batch
        .queries
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let mut g = model_ref.params.zeros_like();
            let dz: Option<Vec<F>> = dz_grads.as_ref().map(|gz| {
                gz.d_queries[i * k2..(i + 1) * k2].iter().map(|&v| v * w_con).collect()
            });
            model_ref.backward(seq, &fwds[i], &d_outputs[i], dz.as_deref(), &d_imp, &d_load, &mut g);
            g
        })
        .collect();
    let mut grads = model.params.zeros_like();
    for g in &per_seq {
        grads.add_assign_all(g);
    }
    if let Some(gz) = &dz_grads {
        if let BlockFfn::Moe(m) = &mut grads.blocks[model.cfg.moe_layer_index()].ffn {
            let gt = m.task.as_mut().unwrap();
            for (a, &b) in gt.state.bilinear.iter_mut().zip(gz.d_bilinear.iter()) {
                *a = *a + b * w_con;
            }
        }
    }

    clip_gradients(&mut grads, cfg.grad_clip);
    opt.step(model, &grads);

    if let Some(task) = model.moe_block_mut().and_then(|m| m.task.as_mut()) {
        momentum_update(&mut task.state)?;
    }
    Ok(parts)
}

/// Alg-1-shaped step: across-episode contexts built by [`build_ad_batch`].
pub fn train_step_ad<F: Real>(
    model: &mut PolicyModel<F>,
    opt: &mut Adam<F>,
    batch: &BatchPair,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossParts> {
    debug_assert_eq!(model.cfg.variant, Variant::Ad);
    train_step(model, opt, batch, cfg, step)
}

/// Alg-3-shaped step: prompt + query sequences built by [`build_dpt_batch`].
pub fn train_step_dpt<F: Real>(
    model: &mut PolicyModel<F>,
    opt: &mut Adam<F>,
    batch: &BatchPair,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossParts> {
    debug_assert_eq!(model.cfg.variant, Variant::Dpt);
    train_step(model, opt, batch, cfg, step)
}

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub loss_rows: Vec<(usize, LossParts)>,
}

/// Full training loop with periodic checkpoints and a loss CSV; resumable
/// from the latest checkpoint in `out_dir`. All per-step randomness derives
/// from (seed, step), so a resumed run reproduces the original trajectory.
pub fn run_training<F: Real>(
    model: &mut PolicyModel<F>,
    dataset: &Dataset,
    queries: &[QueryRecord],
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: bool,
    mut on_log: Option<&mut dyn FnMut(usize, &LossParts)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("loss.csv");
    let latest_path = out_dir.join("latest.t2mir");
    let final_path = out_dir.join("final.t2mir");

    let mut start_step = 0usize;
    let mut opt = Adam::new(cfg.learning_rate, model.params.trainable_len());
    if resume && latest_path.exists() {
        let ck = load_checkpoint(&latest_path)?;
        *model = model_from_checkpoint(&ck)?;
        opt.t = ck.adam_t;
        opt.m = ck.adam_m.iter().map(|&v| F::from_f64(v as f64)).collect();
        opt.v = ck.adam_v.iter().map(|&v| F::from_f64(v as f64)).collect();
        start_step = ck.step as usize;
    }

    // keep only rows at or before the resume point
    let mut rows: Vec<(usize, LossParts)> = Vec::new();
    if start_step > 0 && csv_path.exists() {
        for line in std::fs::read_to_string(&csv_path)?.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() == 5 {
                let s: usize = f[0].parse().unwrap_or(0);
                if s <= start_step {
                    rows.push((
                        s,
                        LossParts {
                            imitation: f[1].parse().unwrap_or(0.0),
                            balance: f[2].parse().unwrap_or(0.0),
                            contrastive: f[3].parse().unwrap_or(0.0),
                        },
                    ));
                }
            }
        }
    }

    for step in start_step..cfg.steps {
        let mut batch_rng = Rng::new(cfg.seed).fork(0xba7c4).fork(step as u64);
        let batch = match model.cfg.variant {
            Variant::Ad => build_ad_batch(
                dataset,
                cfg.batch_size,
                cfg.trajectories_per_seq,
                model.cfg.max_context_tokens,
                &mut batch_rng,
            )?,
            Variant::Dpt => build_dpt_batch(
                dataset,
                queries,
                cfg.batch_size,
                cfg.max_prompt_steps,
                &mut batch_rng,
            )?,
        };
        let parts = train_step(model, &mut opt, &batch, cfg, step)?;
        let done = step + 1;
        if done % cfg.log_interval == 0 || done == cfg.steps {
            rows.push((done, parts));
            if let Some(cb) = on_log.as_deref_mut() {
                cb(done, &parts);
            }
        }
        if done % cfg.checkpoint_interval == 0 || done == cfg.steps {
            save_checkpoint(&latest_path, model, done as u64, Some((opt.t, &opt.m, &opt.v)))?;
            write_loss_csv(&csv_path, &rows)?;
        }
    }
    save_checkpoint(&final_path, model, cfg.steps as u64, Some((opt.t, &opt.m, &opt.v)))?;
    write_loss_csv(&csv_path, &rows)?;
    Ok(TrainOutcome { final_checkpoint: final_path, loss_rows: rows })
}

fn write_loss_csv(path: &Path, rows: &[(usize, LossParts)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,imitation,balance,contrastive,total")?;
    for (step, p) in rows {
        writeln!(f, "{step},{},{},{},{}", p.imitation, p.balance, p.contrastive, p.total())?;
    }
    f.flush()?;
    Ok(())
}

/// Default profiles: expert pools and loss weights follow the published
/// configuration (6/2 token experts, 8/2 task experts, InfoNCE weight 0.01
/// for the autoregressive variant and 0.001 for the prompted one, momentum
/// 0.995, MoE block on top, learning rate 3e-4); step budgets are desk
/// scale.
pub fn default_train_config(env: crate::envs::EnvId, variant: Variant, ablation: Ablation) -> TrainConfig {
    let (steps, batch_size, trajectories_per_seq) = match env {
        crate::envs::EnvId::Darkroom => (30_000, 3, 2),
        crate::envs::EnvId::Pointrobot => (20_000, 8, 4),
    };
    TrainConfig {
        steps,
        learning_rate: 3e-4,
        batch_size,
        trajectories_per_seq,
        max_prompt_steps: crate::envs::horizon(env),
        w_con: match variant {
            Variant::Ad => 0.01,
            Variant::Dpt => 0.001,
        },
        w_imp: 0.01,
        w_load: 0.01,
        momentum_beta: 0.995,
        seed: 0,
        ablation,
        log_interval: 50,
        checkpoint_interval: 5_000,
        grad_clip: 1.0,
    }
}

pub fn default_model_config(env: crate::envs::EnvId, variant: Variant, ablation: Ablation) -> crate::model::ModelConfig {
    use crate::envs::EnvId;
    use crate::model::{ActionSpace, ModelConfig, MoePosition};
    let base = ModelConfig {
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
        variant,
        max_context_tokens: match (env, variant) {
            (EnvId::Darkroom, Variant::Ad) => 330,
            (EnvId::Darkroom, Variant::Dpt) => 301,
            (EnvId::Pointrobot, Variant::Ad) => 240,
            (EnvId::Pointrobot, Variant::Dpt) => 61,
        },
        action_space: match env {
            EnvId::Darkroom => ActionSpace::Discrete { n: 5 },
            EnvId::Pointrobot => ActionSpace::Continuous { dim: 2, bound: crate::envs::POINTROBOT_ACTION_BOUND },
        },
        state_dim: 2,
        horizon: crate::envs::horizon(env),
        momentum_beta: 0.995,
        ablation: Ablation::Full,
        d_ff_at_moe: None,
    };
    base.with_ablation(ablation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_trajectories, label_queries, DatasetManifest, Tier};
    use crate::envs::{EnvId, SplitManifest};

    fn tiny_setup(ablation: Ablation) -> (PolicyModel<f32>, Dataset, Vec<QueryRecord>, TrainConfig) {
        let split = SplitManifest::generate(EnvId::Pointrobot, 5);
        let manifest = DatasetManifest::new(EnvId::Pointrobot, Tier::Mixed, 6, 3);
        let dataset = generate_trajectories(&manifest, &split).unwrap();
        let queries = label_queries(&dataset, &split).unwrap();
        let mut mc = default_model_config(EnvId::Pointrobot, Variant::Ad, ablation);
        mc.n_layers = 2;
        mc.d_model = 32;
        mc.n_heads = 2;
        mc.d_ff = 64;
        mc.max_context_tokens = 122;
        let model = PolicyModel::init(mc, 1).unwrap();
        let mut tc = default_train_config(EnvId::Pointrobot, Variant::Ad, ablation);
        tc.steps = 4;
        tc.batch_size = 3;
        tc.log_interval = 1;
        tc.checkpoint_interval = 2;
        (model, dataset, queries, tc)
    }

    #[test]
    fn parts_sum_to_total_and_losses_flow() {
        let (mut model, dataset, _q, cfg) = tiny_setup(Ablation::Full);
        let mut opt = Adam::new(cfg.learning_rate, model.params.trainable_len());
        let mut rng = Rng::new(9);
        let batch = build_ad_batch(&dataset, 3, 2, 122, &mut rng).unwrap();
        let parts = train_step(&mut model, &mut opt, &batch, &cfg, 0).unwrap();
        assert!(parts.total().is_finite());
        assert!((parts.imitation + parts.balance + parts.contrastive - parts.total()).abs() < 1e-6);
        assert!(parts.balance >= 0.0);
    }

    #[test]
    fn mlp_ablation_drops_both_aux_losses() {
        let (mut model, dataset, _q, cfg) = tiny_setup(Ablation::Mlp);
        let mut opt = Adam::new(cfg.learning_rate, model.params.trainable_len());
        let mut rng = Rng::new(9);
        let batch = build_ad_batch(&dataset, 3, 2, 122, &mut rng).unwrap();
        let parts = train_step(&mut model, &mut opt, &batch, &cfg, 0).unwrap();
        assert_eq!(parts.balance, 0.0);
        assert_eq!(parts.contrastive, 0.0);
        assert_eq!(parts.total(), parts.imitation);
    }

    #[test]
    fn zero_contrastive_weight_removes_that_term() {
        let (mut model, dataset, _q, mut cfg) = tiny_setup(Ablation::Full);
        cfg.w_con = 0.0;
        let mut opt = Adam::new(cfg.learning_rate, model.params.trainable_len());
        let mut rng = Rng::new(9);
        let batch = build_ad_batch(&dataset, 3, 2, 122, &mut rng).unwrap();
        let parts = train_step(&mut model, &mut opt, &batch, &cfg, 0).unwrap();
        assert_eq!(parts.contrastive, 0.0);
        assert!(parts.balance > 0.0 || parts.balance == 0.0);
        assert!((parts.total() - parts.imitation - parts.balance).abs() < 1e-9);
    }

    #[test]
    fn key_router_untouched_by_optimizer() {
        let (mut model, dataset, _q, cfg) = tiny_setup(Ablation::Full);
        // freeze momentum so the key router should stay bit-identical
        if let Some(task) = model.moe_block_mut().and_then(|m| m.task.as_mut()) {
            task.state.beta = 1.0;
        }
        let key_before = model
            .moe_block()
            .unwrap()
            .task
            .as_ref()
            .unwrap()
            .state
            .key
            .w1
            .clone();
        let query_before = model.moe_block().unwrap().task.as_ref().unwrap().state.query.w1.clone();
        let mut opt = Adam::new(cfg.learning_rate, model.params.trainable_len());
        let mut rng = Rng::new(9);
        for step in 0..3 {
            let batch = build_ad_batch(&dataset, 3, 2, 122, &mut rng).unwrap();
            train_step(&mut model, &mut opt, &batch, &cfg, step).unwrap();
        }
        let task = model.moe_block().unwrap().task.as_ref().unwrap();
        assert_eq!(task.state.key.w1, key_before);
        assert_ne!(task.state.query.w1, query_before);
    }

    #[test]
    fn momentum_update_runs_after_step() {
        let (mut model, dataset, _q, cfg) = tiny_setup(Ablation::Full);
        let key_before = model.moe_block().unwrap().task.as_ref().unwrap().state.key.w1.clone();
        let mut opt = Adam::new(cfg.learning_rate, model.params.trainable_len());
        let mut rng = Rng::new(9);
        let batch = build_ad_batch(&dataset, 3, 2, 122, &mut rng).unwrap();
        train_step(&mut model, &mut opt, &batch, &cfg, 0).unwrap();
        let task = model.moe_block().unwrap().task.as_ref().unwrap();
        // key moved toward the updated query: beta^1 blend
        assert_ne!(task.state.key.w1, key_before);
        for ((k, k0), q) in task.state.key.w1.iter().zip(key_before.iter()).zip(task.state.query.w1.iter()) {
            let expect = 0.995 * k0 + 0.005 * q;
            assert!((k - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_seeds_identical_loss_curves() {
        let run = || {
            let (mut model, dataset, queries, cfg) = tiny_setup(Ablation::Full);
            let dir = tempfile::tempdir().unwrap();
            let out = run_training(&mut model, &dataset, &queries, &cfg, dir.path(), false, None).unwrap();
            out.loss_rows
                .iter()
                .map(|(s, p)| (*s, p.imitation, p.balance, p.contrastive))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resume_reproduces_unbroken_run() {
        let (mut model_a, dataset, queries, mut cfg) = tiny_setup(Ablation::Full);
        cfg.steps = 6;
        cfg.checkpoint_interval = 3;
        let dir_a = tempfile::tempdir().unwrap();
        let full = run_training(&mut model_a, &dataset, &queries, &cfg, dir_a.path(), false, None).unwrap();

        let (mut model_b, _, _, _) = tiny_setup(Ablation::Full);
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_half = cfg.clone();
        cfg_half.steps = 3;
        run_training(&mut model_b, &dataset, &queries, &cfg_half, dir_b.path(), false, None).unwrap();
        // pretend the first run stopped at step 3, then resume to 6
        std::fs::copy(dir_b.path().join("final.t2mir"), dir_b.path().join("latest.t2mir")).unwrap();
        let (mut model_c, _, _, _) = tiny_setup(Ablation::Full);
        let resumed = run_training(&mut model_c, &dataset, &queries, &cfg, dir_b.path(), true, None).unwrap();

        let a: Vec<_> = full.loss_rows.iter().map(|(s, p)| (*s, p.total())).collect();
        let b: Vec<_> = resumed.loss_rows.iter().map(|(s, p)| (*s, p.total())).collect();
        let a_tail: Vec<_> = a.iter().filter(|(s, _)| *s > 3).collect();
        let b_tail: Vec<_> = b.iter().filter(|(s, _)| *s > 3).collect();
        assert_eq!(a_tail.len(), b_tail.len());
        for (x, y) in a_tail.iter().zip(b_tail.iter()) {
            assert_eq!(x.0, y.0);
            assert!((x.1 - y.1).abs() < 1e-6, "step {}: {} vs {}", x.0, x.1, y.1);
        }
        // model parameters agree bitwise after the same total number of steps
        for (ta, tb) in model_a.params.tensors().iter().zip(model_c.params.tensors().iter()) {
            assert_eq!(ta.data, tb.data, "tensor {}", ta.name);
        }
    }
}
