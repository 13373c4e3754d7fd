//! The causal transformer policy. One designated block carries the two
//! parallel MoE layers in place of its feedforward; their outputs are
//! concatenated and projected back into the residual stream.

use super::attention::{AttnCache, AttnParams};
use super::config::{Ablation, ActionSpace, ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::math::{softmax_inplace, Real, Rng};
use crate::moe::{
    task_moe_forward, token_moe_forward, TaskMoeCache, TaskMoeParams, TaskRouterState,
    TokenMoeCache, TokenMoeParams,
};
use crate::moe::{importance_vector, RouterParams};
use crate::nn::{FeedForward, FfCache, LayerNorm, Linear, LnCache};
use crate::seq::{RoutingKind, RoutingRecord, Span, Target, TokenFeat, TokenSeq};

#[derive(Clone, Debug)]
pub struct EmbedParams<F> {
    pub state: Linear<F>,
    pub action: Linear<F>,
    pub reward: Linear<F>,
    /// (horizon + 1) x d timestep table, shared by the s/a/r tokens of a step.
    pub pos: Vec<F>,
}

#[derive(Clone, Debug)]
pub enum BlockFfn<F> {
    Dense(FeedForward<F>),
    Moe(MoeBlock<F>),
}

#[derive(Clone, Debug)]
pub struct MoeBlock<F> {
    pub token: Option<TokenMoeParams<F>>,
    pub task: Option<TaskMoeParams<F>>,
    /// 2d -> d projection after concatenating the two branch outputs;
    /// present only when both branches exist.
    pub cat: Option<Linear<F>>,
}

#[derive(Clone, Debug)]
pub struct BlockParams<F> {
    pub ln1: LayerNorm<F>,
    pub attn: AttnParams<F>,
    pub ln2: LayerNorm<F>,
    pub ffn: BlockFfn<F>,
}

#[derive(Clone, Debug)]
pub struct PolicyParams<F> {
    pub embed: EmbedParams<F>,
    pub blocks: Vec<BlockParams<F>>,
    pub ln_f: LayerNorm<F>,
    pub head: Linear<F>,
}

pub struct PolicyModel<F> {
    pub cfg: ModelConfig,
    pub params: PolicyParams<F>,
}

const INIT_STD: f64 = 0.02;
// Routers start wider so gate logits and task representations differentiate
// early instead of sitting at the uniform fixed point.
const ROUTER_STD: f64 = 0.1;

impl<F: Real> PolicyModel<F> {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let d = cfg.d_model;
        let proj_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
        let action_in = cfg.action_space.dim();
        let head_out = cfg.action_space.dim();

        let embed = EmbedParams {
            state: Linear::init(cfg.state_dim, d, INIT_STD, true, &mut rng),
            action: Linear::init(action_in, d, INIT_STD, true, &mut rng),
            reward: Linear::init(1, d, INIT_STD, true, &mut rng),
            pos: (0..(cfg.horizon + 1) * d)
                .map(|_| F::from_f64(rng.normal() * INIT_STD))
                .collect(),
        };

        let moe_idx = cfg.moe_layer_index();
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for layer in 0..cfg.n_layers {
            let ffn = if layer == moe_idx && cfg.ablation != Ablation::Mlp {
                let token = cfg.has_token_moe().then(|| TokenMoeParams {
                    router: RouterParams::init(d, cfg.token_experts, true, ROUTER_STD, &mut rng),
                    experts: (0..cfg.token_experts)
                        .map(|_| FeedForward::init(d, cfg.token_expert_width, d, INIT_STD, proj_std, &mut rng))
                        .collect(),
                    top_k: cfg.token_top_k,
                });
                let task = if cfg.has_task_moe() {
                    Some(TaskMoeParams {
                        state: TaskRouterState::init(d, cfg.task_experts, cfg.momentum_beta, ROUTER_STD, &mut rng)?,
                        experts: (0..cfg.task_experts)
                            .map(|_| FeedForward::init(d, cfg.task_expert_width, d, INIT_STD, proj_std, &mut rng))
                            .collect(),
                        top_k: cfg.task_top_k,
                    })
                } else {
                    None
                };
                let cat = (token.is_some() && task.is_some())
                    .then(|| Linear::init(2 * d, d, proj_std, true, &mut rng));
                BlockFfn::Moe(MoeBlock { token, task, cat })
            } else {
                let width = if layer == moe_idx { cfg.d_ff_at_moe_or_default() } else { cfg.d_ff };
                BlockFfn::Dense(FeedForward::init(d, width, d, INIT_STD, proj_std, &mut rng))
            };
            blocks.push(BlockParams {
                ln1: LayerNorm::new(d),
                attn: AttnParams {
                    n_heads: cfg.n_heads,
                    wq: Linear::init(d, d, INIT_STD, true, &mut rng),
                    wk: Linear::init(d, d, INIT_STD, true, &mut rng),
                    wv: Linear::init(d, d, INIT_STD, true, &mut rng),
                    wo: Linear::init(d, d, proj_std, true, &mut rng),
                },
                ln2: LayerNorm::new(d),
                ffn,
            });
        }

        Ok(PolicyModel {
            params: PolicyParams {
                embed,
                blocks,
                ln_f: LayerNorm::new(d),
                head: Linear::init(d, head_out, INIT_STD, true, &mut rng),
            },
            cfg,
        })
    }

    pub fn moe_block(&self) -> Option<&MoeBlock<F>> {
        match &self.params.blocks[self.cfg.moe_layer_index()].ffn {
            BlockFfn::Moe(m) => Some(m),
            BlockFfn::Dense(_) => None,
        }
    }

    pub fn moe_block_mut(&mut self) -> Option<&mut MoeBlock<F>> {
        match &mut self.params.blocks[self.cfg.moe_layer_index()].ffn {
            BlockFfn::Moe(m) => Some(m),
            BlockFfn::Dense(_) => None,
        }
    }

    fn token_feat_vec(&self, feat: &TokenFeat) -> Vec<F> {
        match feat {
            TokenFeat::State(s) => s.iter().map(|&v| F::from_f64(v)).collect(),
            TokenFeat::ActionDiscrete(a) => {
                let n = self.cfg.action_space.dim();
                let mut v = vec![F::zero(); n];
                v[*a] = F::one();
                v
            }
            TokenFeat::ActionContinuous(a) => {
                let bound = match self.cfg.action_space {
                    ActionSpace::Continuous { bound, .. } => bound,
                    _ => 1.0,
                };
                a.iter().map(|&v| F::from_f64(v / bound)).collect()
            }
            TokenFeat::Reward(r) => vec![F::from_f64(*r)],
        }
    }

    #[cfg(test)]
    fn embed_linear(&self, feat: &TokenFeat) -> &Linear<F> {
        match feat {
            TokenFeat::State(_) => &self.params.embed.state,
            TokenFeat::ActionDiscrete(_) | TokenFeat::ActionContinuous(_) => &self.params.embed.action,
            TokenFeat::Reward(_) => &self.params.embed.reward,
        }
    }

    /// Separate learned embeddings per modality plus the shared timestep
    /// embedding added identically to the s/a/r tokens of one step.
    /// State and continuous-action rows run as one gemm per modality;
    /// discrete actions are table lookups and rewards a scaled row.
    pub fn embed_sequence(&self, seq: &TokenSeq) -> Vec<F> {
        let d = self.cfg.d_model;
        let t = seq.len();
        let mut x = vec![F::zero(); t * d];

        let mut state_rows: Vec<usize> = Vec::new();
        let mut state_feats: Vec<F> = Vec::new();
        let mut cact_rows: Vec<usize> = Vec::new();
        let mut cact_feats: Vec<F> = Vec::new();
        for (i, feat) in seq.feats.iter().enumerate() {
            match feat {
                TokenFeat::State(s) => {
                    state_rows.push(i);
                    state_feats.extend(s.iter().map(|&v| F::from_f64(v)));
                }
                TokenFeat::ActionContinuous(_) => {
                    cact_rows.push(i);
                    cact_feats.extend(self.token_feat_vec(feat));
                }
                TokenFeat::ActionDiscrete(a) => {
                    let lin = &self.params.embed.action;
                    let dst = &mut x[i * d..(i + 1) * d];
                    let wrow = &lin.w[a * d..(a + 1) * d];
                    for j in 0..d {
                        dst[j] = wrow[j];
                    }
                    if let Some(b) = &lin.b {
                        for j in 0..d {
                            dst[j] = dst[j] + b[j];
                        }
                    }
                }
                TokenFeat::Reward(r) => {
                    let lin = &self.params.embed.reward;
                    let rv = F::from_f64(*r);
                    let dst = &mut x[i * d..(i + 1) * d];
                    for j in 0..d {
                        dst[j] = rv * lin.w[j];
                    }
                    if let Some(b) = &lin.b {
                        for j in 0..d {
                            dst[j] = dst[j] + b[j];
                        }
                    }
                }
            }
        }
        if !state_rows.is_empty() {
            let rows = self.params.embed.state.forward(&state_feats, state_rows.len());
            for (r, &i) in state_rows.iter().enumerate() {
                x[i * d..(i + 1) * d].copy_from_slice(&rows[r * d..(r + 1) * d]);
            }
        }
        if !cact_rows.is_empty() {
            let rows = self.params.embed.action.forward(&cact_feats, cact_rows.len());
            for (r, &i) in cact_rows.iter().enumerate() {
                x[i * d..(i + 1) * d].copy_from_slice(&rows[r * d..(r + 1) * d]);
            }
        }
        for i in 0..t {
            let step = seq.timesteps[i];
            debug_assert!(step <= self.cfg.horizon, "timestep {step} exceeds table");
            let pos = &self.params.embed.pos[step * d..(step + 1) * d];
            let dst = &mut x[i * d..(i + 1) * d];
            for j in 0..d {
                dst[j] = dst[j] + pos[j];
            }
        }
        x
    }

    fn embed_backward(&self, seq: &TokenSeq, dx0: &[F], g: &mut PolicyParams<F>) {
        let d = self.cfg.d_model;
        let mut state_rows: Vec<usize> = Vec::new();
        let mut state_feats: Vec<F> = Vec::new();
        let mut cact_rows: Vec<usize> = Vec::new();
        let mut cact_feats: Vec<F> = Vec::new();
        for (i, feat) in seq.feats.iter().enumerate() {
            let dy = &dx0[i * d..(i + 1) * d];
            match feat {
                TokenFeat::State(s) => {
                    state_rows.push(i);
                    state_feats.extend(s.iter().map(|&v| F::from_f64(v)));
                }
                TokenFeat::ActionContinuous(_) => {
                    cact_rows.push(i);
                    cact_feats.extend(self.token_feat_vec(feat));
                }
                TokenFeat::ActionDiscrete(a) => {
                    let gw = &mut g.embed.action.w[a * d..(a + 1) * d];
                    for j in 0..d {
                        gw[j] = gw[j] + dy[j];
                    }
                    if let Some(gb) = &mut g.embed.action.b {
                        for j in 0..d {
                            gb[j] = gb[j] + dy[j];
                        }
                    }
                }
                TokenFeat::Reward(r) => {
                    let rv = F::from_f64(*r);
                    for j in 0..d {
                        g.embed.reward.w[j] = g.embed.reward.w[j] + rv * dy[j];
                    }
                    if let Some(gb) = &mut g.embed.reward.b {
                        for j in 0..d {
                            gb[j] = gb[j] + dy[j];
                        }
                    }
                }
            }
            let step = seq.timesteps[i];
            let gp = &mut g.embed.pos[step * d..(step + 1) * d];
            for j in 0..d {
                gp[j] = gp[j] + dy[j];
            }
        }
        if !state_rows.is_empty() {
            let mut dy_rows = Vec::with_capacity(state_rows.len() * d);
            for &i in &state_rows {
                dy_rows.extend_from_slice(&dx0[i * d..(i + 1) * d]);
            }
            self.params
                .embed
                .state
                .backward(&state_feats, &dy_rows, state_rows.len(), None, &mut g.embed.state);
        }
        if !cact_rows.is_empty() {
            let mut dy_rows = Vec::with_capacity(cact_rows.len() * d);
            for &i in &cact_rows {
                dy_rows.extend_from_slice(&dx0[i * d..(i + 1) * d]);
            }
            self.params
                .embed
                .action
                .backward(&cact_feats, &dy_rows, cact_rows.len(), None, &mut g.embed.action);
        }
    }

    /// Trunk-only forward: run up to the MoE block's attention output and
    /// return the pooled hidden state that feeds the task routers. Used by
    /// the no-gradient key pass, which never needs the expert mixing.
    pub fn forward_pooled(&self, seq: &TokenSeq) -> Result<Vec<F>> {
        let d = self.cfg.d_model;
        let t = seq.len();
        if t == 0 {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        let moe_idx = self.cfg.moe_layer_index();
        let mut x = self.embed_sequence(seq);
        for (layer, block) in self.params.blocks.iter().enumerate() {
            let (a, _) = block.ln1.forward(&x, t);
            let (attn_out, _) = block.attn.forward(&a, t);
            for (xm, &ao) in x.iter_mut().zip(attn_out.iter()) {
                *xm = *xm + ao;
            }
            let (b, _) = block.ln2.forward(&x, t);
            if layer == moe_idx {
                return Ok(crate::moe::pool_mean(&b, d, self.z_pool_span(seq)));
            }
            let ffn_out = match &block.ffn {
                BlockFfn::Dense(ff) => ff.forward(&b, t).0,
                BlockFfn::Moe(_) => unreachable!("moe block handled above"),
            };
            for (xo, &f) in x.iter_mut().zip(ffn_out.iter()) {
                *xo = *xo + f;
            }
        }
        unreachable!("moe layer index within blocks")
    }

    /// Pooling span for the sequence-level task representation.
    fn z_pool_span(&self, seq: &TokenSeq) -> Span {
        match self.cfg.variant {
            Variant::Ad => Span { start: 0, end: seq.len() },
            Variant::Dpt => Span { start: 0, end: seq.prompt_len },
        }
    }

    /// Prefix pooling spans per routing group: a group routes on the mean
    /// hidden state of everything before it (autoregressive variants must
    /// not peek inside the group), while a DPT prompt is fully observed.
    fn group_pool_spans(&self, seq: &TokenSeq) -> Vec<Span> {
        match self.cfg.variant {
            Variant::Ad => seq
                .groups
                .iter()
                .map(|g| Span { start: 0, end: g.start })
                .collect(),
            Variant::Dpt => seq
                .groups
                .iter()
                .map(|_| Span { start: 0, end: seq.prompt_len })
                .collect(),
        }
    }

    pub fn forward(&self, seq: &TokenSeq, positions: &[usize], train: bool, rng: &mut Rng) -> Result<SeqForward<F>> {
        let d = self.cfg.d_model;
        let t = seq.len();
        if t == 0 {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if t > self.cfg.max_context_tokens {
            return Err(Error::InvalidInput(format!(
                "sequence of {t} tokens exceeds max context {}",
                self.cfg.max_context_tokens
            )));
        }
        let x0 = self.embed_sequence(seq);
        let mut x = x0.clone();
        let moe_idx = self.cfg.moe_layer_index();

        let mut block_caches = Vec::with_capacity(self.params.blocks.len());
        let mut imp: Vec<F> = Vec::new();
        let mut load: Vec<F> = Vec::new();
        let mut pooled_moe: Option<Vec<F>> = None;
        let mut z_cache: Option<ZCache<F>> = None;

        for (layer, block) in self.params.blocks.iter().enumerate() {
            let (a, ln1c) = block.ln1.forward(&x, t);
            let (attn_out, attnc) = block.attn.forward(&a, t);
            let mut x_mid = x;
            for (xm, &ao) in x_mid.iter_mut().zip(attn_out.iter()) {
                *xm = *xm + ao;
            }
            let (b, ln2c) = block.ln2.forward(&x_mid, t);

            let (ffn_out, ffnc) = match &block.ffn {
                BlockFfn::Dense(ff) => {
                    let (y, c) = ff.forward(&b, t);
                    (y, FfnCache::Dense(c))
                }
                BlockFfn::Moe(moe) => {
                    debug_assert_eq!(layer, moe_idx);
                    let mut tok_out: Option<Vec<F>> = None;
                    let mut tok_cache: Option<TokenMoeCache<F>> = None;
                    if let Some(tok) = &moe.token {
                        let (y, c) = token_moe_forward(&b, t, tok, train, rng)?;
                        imp = importance_vector(&c.gates, tok.experts.len())?;
                        if train {
                            load = c.load.clone();
                        }
                        tok_out = Some(y);
                        tok_cache = Some(c);
                    }
                    let mut task_out: Option<Vec<F>> = None;
                    let mut task_cache: Option<TaskMoeCache<F>> = None;
                    if let Some(task) = &moe.task {
                        let pools = self.group_pool_spans(seq);
                        let (y, c) = task_moe_forward(&b, t, &seq.groups, &pools, task)?;
                        task_out = Some(y);
                        task_cache = Some(c);

                        let zspan = self.z_pool_span(seq);
                        let pooled = crate::moe::pool_mean(&b, d, zspan);
                        let (logits, hidden) = task.state.query.clean_logits(&pooled);
                        let mut z = logits.clone();
                        softmax_inplace(&mut z);
                        z_cache = Some(ZCache { span: zspan, pooled: pooled.clone(), hidden, logits, z });
                        pooled_moe = Some(pooled);
                    }
                    match (tok_out, task_out) {
                        (Some(yt), Some(yk)) => {
                            let cat = moe.cat.as_ref().expect("concat projection missing");
                            let mut concat = vec![F::zero(); t * 2 * d];
                            for ti in 0..t {
                                concat[ti * 2 * d..ti * 2 * d + d].copy_from_slice(&yt[ti * d..(ti + 1) * d]);
                                concat[ti * 2 * d + d..(ti + 1) * 2 * d].copy_from_slice(&yk[ti * d..(ti + 1) * d]);
                            }
                            let y = cat.forward(&concat, t);
                            (y, FfnCache::Moe { token: tok_cache, task: task_cache, concat: Some(concat) })
                        }
                        (Some(yt), None) => (yt, FfnCache::Moe { token: tok_cache, task: None, concat: None }),
                        (None, Some(yk)) => (yk, FfnCache::Moe { token: None, task: task_cache, concat: None }),
                        (None, None) => unreachable!("MoE block with no branches"),
                    }
                }
            };

            let mut x_out = x_mid.clone();
            for (xo, &f) in x_out.iter_mut().zip(ffn_out.iter()) {
                *xo = *xo + f;
            }
            block_caches.push(BlockCache { ln1: ln1c, a, attn: attnc, x_mid, ln2: ln2c, b, ffn: ffnc });
            x = x_out;
        }

        let (hf, lnfc) = self.params.ln_f.forward(&x, t);
        let mut outputs = Vec::with_capacity(positions.len());
        for &p in positions {
            debug_assert!(p < t);
            let raw = self.params.head.forward(&hf[p * d..(p + 1) * d], 1);
            outputs.push((p, raw));
        }

        let z_query = z_cache.as_ref().map(|zc| zc.z.clone());
        Ok(SeqForward {
            outputs,
            z_query,
            pooled_moe,
            imp,
            load,
            cache: SeqCache { x0, blocks: block_caches, ln_f: lnfc, hf },
            z_cache,
        })
    }

    /// Key-side task representation from a pooled hidden state; no gradients
    /// flow anywhere.
    pub fn key_representation(&self, pooled: &[F]) -> Option<Vec<F>> {
        self.moe_block().and_then(|m| m.task.as_ref()).map(|task| {
            let (mut logits, _) = task.state.key.clean_logits(pooled);
            softmax_inplace(&mut logits);
            logits
        })
    }

    /// Backward for one sequence. `d_outputs` aligns with the forward's
    /// requested positions (gradients w.r.t. the raw head outputs);
    /// `d_imp`/`d_load` carry batch-level balance gradients; `d_z` is the
    /// contrastive gradient w.r.t. the sequence task representation.
    pub fn backward(
        &self,
        seq: &TokenSeq,
        fwd: &SeqForward<F>,
        d_outputs: &[(usize, Vec<F>)],
        d_z: Option<&[F]>,
        d_imp: &[F],
        d_load: &[F],
        g: &mut PolicyParams<F>,
    ) {
        let d = self.cfg.d_model;
        let t = seq.len();
        let cache = &fwd.cache;

        let mut dhf = vec![F::zero(); t * d];
        for (p, dout) in d_outputs {
            let row = &cache.hf[p * d..(p + 1) * d];
            self.params
                .head
                .backward(row, dout, 1, Some(&mut dhf[p * d..(p + 1) * d]), &mut g.head);
        }

        let mut dx = vec![F::zero(); t * d];
        self.params.ln_f.backward(&cache.ln_f, &dhf, t, &mut dx, &mut g.ln_f);

        let moe_idx = self.cfg.moe_layer_index();
        for (layer, block) in self.params.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[layer];
            let gblock = &mut g.blocks[layer];
            // x_out = x_mid + ffn(ln2(x_mid)); dx is d x_out here
            let mut db = vec![F::zero(); t * d];
            match (&block.ffn, &bc.ffn) {
                (BlockFfn::Dense(ff), FfnCache::Dense(fc)) => {
                    let gff = match &mut gblock.ffn {
                        BlockFfn::Dense(gf) => gf,
                        _ => unreachable!(),
                    };
                    ff.backward(&bc.b, fc, &dx, t, Some(&mut db), gff);
                }
                (BlockFfn::Moe(moe), FfnCache::Moe { token, task, concat }) => {
                    let gmoe = match &mut gblock.ffn {
                        BlockFfn::Moe(gm) => gm,
                        _ => unreachable!(),
                    };
                    let (dtok, dtask): (Option<Vec<F>>, Option<Vec<F>>) = match (&moe.token, &moe.task) {
                        (Some(_), Some(_)) => {
                            let cat = moe.cat.as_ref().unwrap();
                            let gcat = gmoe.cat.as_mut().unwrap();
                            let concat = concat.as_ref().unwrap();
                            let mut dconcat = vec![F::zero(); t * 2 * d];
                            cat.backward(concat, &dx, t, Some(&mut dconcat), gcat);
                            let mut dt = vec![F::zero(); t * d];
                            let mut dk = vec![F::zero(); t * d];
                            for ti in 0..t {
                                dt[ti * d..(ti + 1) * d]
                                    .copy_from_slice(&dconcat[ti * 2 * d..ti * 2 * d + d]);
                                dk[ti * d..(ti + 1) * d]
                                    .copy_from_slice(&dconcat[ti * 2 * d + d..(ti + 1) * 2 * d]);
                            }
                            (Some(dt), Some(dk))
                        }
                        (Some(_), None) => (Some(dx.clone()), None),
                        (None, Some(_)) => (None, Some(dx.clone())),
                        (None, None) => unreachable!(),
                    };
                    if let (Some(tok), Some(tc), Some(dt)) = (&moe.token, token.as_ref(), dtok) {
                        crate::moe::token_moe_backward(
                            &bc.b,
                            t,
                            tok,
                            tc,
                            &dt,
                            d_imp,
                            d_load,
                            &mut db,
                            gmoe.token.as_mut().unwrap(),
                        );
                    }
                    if let (Some(task), Some(tc), Some(dk)) = (&moe.task, task.as_ref(), dtask) {
                        crate::moe::task_moe_backward(&bc.b, task, tc, &dk, &mut db, gmoe.task.as_mut().unwrap());
                    }
                    // contrastive gradient: z = softmax(query_router(pooled(b)))
                    if let (Some(dz), Some(zc), Some(task)) = (d_z, fwd.z_cache.as_ref(), &moe.task) {
                        debug_assert_eq!(layer, moe_idx);
                        let z = &zc.z;
                        let mut inner = F::zero();
                        for (dzi, zi) in dz.iter().zip(z.iter()) {
                            inner = inner + *dzi * *zi;
                        }
                        let dlogits: Vec<F> = dz
                            .iter()
                            .zip(z.iter())
                            .map(|(&dzi, &zi)| zi * (dzi - inner))
                            .collect();
                        let gtask = gmoe.task.as_mut().unwrap();
                        let mut dpooled = vec![F::zero(); d];
                        task.state.query.clean_backward(
                            &zc.pooled,
                            &zc.hidden,
                            &dlogits,
                            &mut dpooled,
                            &mut gtask.state.query,
                        );
                        if !zc.span.is_empty() {
                            let inv = F::one() / F::from_f64(zc.span.len() as f64);
                            for ti in zc.span.start..zc.span.end {
                                let dst = &mut db[ti * d..(ti + 1) * d];
                                for (a2, &b2) in dst.iter_mut().zip(dpooled.iter()) {
                                    *a2 = *a2 + b2 * inv;
                                }
                            }
                        }
                    }
                }
                _ => unreachable!("cache shape mismatch"),
            }

            // through ln2 into x_mid, plus the residual path
            let mut dx_mid = dx; // residual contribution
            block.ln2.backward(&bc.ln2, &db, t, &mut dx_mid, &mut gblock.ln2);

            // attention: x_mid = x_in + attn(ln1(x_in))
            let mut da = vec![F::zero(); t * d];
            block
                .attn
                .backward(&bc.a, &bc.attn, &dx_mid, t, &mut da, &mut gblock.attn);
            let mut dx_in = dx_mid;
            block.ln1.backward(&bc.ln1, &da, t, &mut dx_in, &mut gblock.ln1);
            dx = dx_in;
        }

        self.embed_backward(seq, &dx, g);
    }

    /// Routing records for analysis: one per token for the token-wise layer,
    /// one per group for the task-wise layer.
    pub fn routing_records(&self, seq: &TokenSeq, fwd: &SeqForward<F>) -> Vec<RoutingRecord> {
        let layer = self.cfg.moe_layer_index();
        let mut records = Vec::new();
        let bc = &fwd.cache.blocks[layer];
        if let FfnCache::Moe { token, task, .. } = &bc.ffn {
            if let Some(tc) = token {
                for (i, gate) in tc.gates.iter().enumerate() {
                    records.push(RoutingRecord {
                        layer,
                        kind: RoutingKind::TokenWise,
                        index: i,
                        modality: Some(seq.feats[i].modality()),
                        experts: gate.indices.clone(),
                        weights: gate.weights.iter().map(|w| w.as_f64()).collect(),
                        z: None,
                        task_index: seq.task_index,
                    });
                }
            }
            if let Some(tc) = task {
                for (gi, gate) in tc.gates.iter().enumerate() {
                    records.push(RoutingRecord {
                        layer,
                        kind: RoutingKind::TaskWise,
                        index: gi,
                        modality: None,
                        experts: gate.indices.clone(),
                        weights: gate.weights.iter().map(|w| w.as_f64()).collect(),
                        z: Some(tc.z[gi].iter().map(|z| z.as_f64()).collect()),
                        task_index: seq.task_index,
                    });
                }
            }
        }
        records
    }

    /// Autoregressive forward: predictions at every state-token position.
    pub fn ad_forward(&self, seq: &TokenSeq) -> Result<PolicyOutput> {
        let positions: Vec<usize> = seq
            .feats
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f, TokenFeat::State(_)))
            .map(|(i, _)| i)
            .collect();
        self.predict_at(seq, &positions)
    }

    /// Prompt-conditioned forward: prediction at the final (query) position.
    pub fn dpt_forward(&self, seq: &TokenSeq) -> Result<PolicyOutput> {
        let last = seq.len() - 1;
        self.predict_at(seq, &[last])
    }

    fn predict_at(&self, seq: &TokenSeq, positions: &[usize]) -> Result<PolicyOutput> {
        let mut rng = Rng::new(0);
        let fwd = self.forward(seq, positions, false, &mut rng)?;
        let outputs = fwd
            .outputs
            .iter()
            .map(|(p, raw)| {
                let raw64: Vec<f64> = raw.iter().map(|v| v.as_f64()).collect();
                (*p, self.head_to_action(&raw64))
            })
            .collect();
        let records = self.routing_records(seq, &fwd);
        let z_groups = match &fwd.cache.blocks[self.cfg.moe_layer_index()].ffn {
            FfnCache::Moe { task: Some(tc), .. } => tc
                .z
                .iter()
                .map(|z| z.iter().map(|v| v.as_f64()).collect())
                .collect(),
            _ => Vec::new(),
        };
        Ok(PolicyOutput { outputs, routing_records: records, pooled_task_repr: z_groups })
    }

    /// Raw head output -> action parameterization (logits stay raw; a
    /// continuous head is a Tanh-squashed mean scaled to the bounds).
    pub fn head_to_action(&self, raw: &[f64]) -> HeadOutput {
        match &self.cfg.action_space {
            ActionSpace::Discrete { .. } => HeadOutput::Logits(raw.to_vec()),
            ActionSpace::Continuous { bound, .. } => {
                HeadOutput::Mean(raw.iter().map(|&v| v.tanh() * bound).collect())
            }
        }
    }
}

pub struct ZCache<F> {
    pub span: Span,
    pub pooled: Vec<F>,
    pub hidden: Vec<F>,
    pub logits: Vec<F>,
    pub z: Vec<F>,
}

pub enum FfnCache<F> {
    Dense(FfCache<F>),
    Moe {
        token: Option<TokenMoeCache<F>>,
        task: Option<TaskMoeCache<F>>,
        concat: Option<Vec<F>>,
    },
}

pub struct BlockCache<F> {
    pub ln1: LnCache<F>,
    /// ln1 output (attention input).
    pub a: Vec<F>,
    pub attn: AttnCache<F>,
    pub x_mid: Vec<F>,
    pub ln2: LnCache<F>,
    /// ln2 output (feedforward/MoE input).
    pub b: Vec<F>,
    pub ffn: FfnCache<F>,
}

pub struct SeqCache<F> {
    pub x0: Vec<F>,
    pub blocks: Vec<BlockCache<F>>,
    pub ln_f: LnCache<F>,
    pub hf: Vec<F>,
}

pub struct SeqForward<F> {
    /// (position, raw head output) at the requested positions.
    pub outputs: Vec<(usize, Vec<F>)>,
    /// Sequence-level task representation from the query router.
    pub z_query: Option<Vec<F>>,
    /// Pooled hidden state feeding the task routers (for the key pass).
    pub pooled_moe: Option<Vec<F>>,
    /// Per-expert importance sums over this sequence's tokens.
    pub imp: Vec<F>,
    /// Per-expert smooth load sums (train mode only).
    pub load: Vec<F>,
    pub cache: SeqCache<F>,
    pub z_cache: Option<ZCache<F>>,
}

/// Model output in evaluation form.
#[derive(Clone, Debug)]
pub struct PolicyOutput {
    pub outputs: Vec<(usize, HeadOutput)>,
    pub routing_records: Vec<RoutingRecord>,
    /// Task-router distribution per routing group.
    pub pooled_task_repr: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub enum HeadOutput {
    Logits(Vec<f64>),
    Mean(Vec<f64>),
}

/// Cross-entropy (discrete) or MSE (continuous) averaged over all predicted
/// positions; `preds` are raw head outputs.
pub fn imitation_loss<F: Real>(
    space: &ActionSpace,
    preds: &[(usize, Vec<F>)],
    targets: &[(usize, Target)],
) -> f64 {
    let (total, count) = imitation_loss_sum(space, preds, targets);
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn imitation_loss_sum<F: Real>(
    space: &ActionSpace,
    preds: &[(usize, Vec<F>)],
    targets: &[(usize, Target)],
) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for ((p, raw), (tp, target)) in preds.iter().zip(targets.iter()) {
        debug_assert_eq!(p, tp);
        match (space, target) {
            (ActionSpace::Discrete { .. }, Target::Discrete(a)) => {
                let mut probs: Vec<f64> = raw.iter().map(|v| v.as_f64()).collect();
                let mx = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = probs.iter().map(|v| (v - mx).exp()).sum();
                total += z.ln() + mx - probs[*a];
                softmax_f64(&mut probs);
                count += 1;
            }
            (ActionSpace::Continuous { bound, dim }, Target::Continuous(t)) => {
                // error in units of the action bound, keeping the loss O(1)
                for i in 0..*dim {
                    let a = raw[i].as_f64().tanh() * bound;
                    let e = (a - t[i]) / bound;
                    total += e * e;
                }
                count += *dim;
            }
            _ => panic!("action space / target mismatch"),
        }
    }
    (total, count)
}

fn softmax_f64(v: &mut [f64]) {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - mx).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

/// Loss plus gradients w.r.t. the raw head outputs, scaled by `inv_count`
/// (1 / total predicted positions across the batch, or per-dim for MSE).
pub fn imitation_grads<F: Real>(
    space: &ActionSpace,
    preds: &[(usize, Vec<F>)],
    targets: &[(usize, Target)],
    inv_count: f64,
) -> (f64, Vec<(usize, Vec<F>)>) {
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for ((p, raw), (tp, target)) in preds.iter().zip(targets.iter()) {
        debug_assert_eq!(p, tp);
        match (space, target) {
            (ActionSpace::Discrete { .. }, Target::Discrete(a)) => {
                let mut probs: Vec<f64> = raw.iter().map(|v| v.as_f64()).collect();
                let mx = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = probs.iter().map(|v| (v - mx).exp()).sum();
                loss += (z.ln() + mx - probs[*a]) * inv_count;
                softmax_f64(&mut probs);
                let mut g: Vec<F> = probs.iter().map(|&v| F::from_f64(v * inv_count)).collect();
                g[*a] = g[*a] - F::from_f64(inv_count);
                grads.push((*p, g));
            }
            (ActionSpace::Continuous { bound, dim }, Target::Continuous(t)) => {
                let mut g = vec![F::zero(); *dim];
                for i in 0..*dim {
                    let th = raw[i].as_f64().tanh();
                    let a = th * bound;
                    let e = (a - t[i]) / bound;
                    loss += e * e * inv_count;
                    g[i] = F::from_f64(2.0 * e * (1.0 - th * th) * inv_count);
                }
                grads.push((*p, g));
            }
            _ => panic!("action space / target mismatch"),
        }
    }
    (loss, grads)
}

/// Count of scalar loss terms for normalization (positions for CE, position
/// times dim for MSE).
pub fn imitation_count(space: &ActionSpace, targets: &[(usize, Target)]) -> usize {
    match space {
        ActionSpace::Discrete { .. } => targets.len(),
        ActionSpace::Continuous { dim, .. } => targets.len() * dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::tests_support::{test_config, tiny_config};
    use crate::seq::Span;

    fn seq_of(task: usize, seed: u64, steps: usize, episodes: usize, n_actions: usize) -> TokenSeq {
        let mut rng = Rng::new(seed);
        let mut feats = Vec::new();
        let mut timesteps = Vec::new();
        let mut groups = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..episodes {
            let start = feats.len();
            for t in 0..steps {
                let pos = feats.len();
                feats.push(TokenFeat::State(vec![rng.uniform(), rng.uniform()]));
                let a = rng.below(n_actions);
                targets.push((pos, Target::Discrete(a)));
                feats.push(TokenFeat::ActionDiscrete(a));
                feats.push(TokenFeat::Reward(rng.uniform()));
                timesteps.extend([t, t, t]);
            }
            groups.push(Span { start, end: feats.len() });
        }
        let prompt_len = feats.len();
        TokenSeq { feats, timesteps, groups, prompt_len, targets, task_index: task }
    }

    #[test]
    fn embedding_layout_and_shared_position() {
        let model: PolicyModel<f64> = PolicyModel::init(tiny_config(), 3).unwrap();
        let seq = seq_of(0, 1, 2, 1, 5);
        assert_eq!(seq.len(), 6);
        let mods = seq.modalities();
        use crate::seq::Modality::*;
        assert_eq!(mods, vec![State, Action, Reward, State, Action, Reward]);

        // tokens of step t share one additive position embedding:
        // embedding(s_t) - raw_embed(s_t) == embedding(r_t) - raw_embed(r_t)
        let d = model.cfg.d_model;
        let x = model.embed_sequence(&seq);
        for step in 0..2 {
            let s_tok = 3 * step;
            let r_tok = 3 * step + 2;
            let raw_s = model.embed_linear(&seq.feats[s_tok]).forward(&model.token_feat_vec(&seq.feats[s_tok]), 1);
            let raw_r = model.embed_linear(&seq.feats[r_tok]).forward(&model.token_feat_vec(&seq.feats[r_tok]), 1);
            for j in 0..d {
                let ps = x[s_tok * d + j] - raw_s[j];
                let pr = x[r_tok * d + j] - raw_r[j];
                assert!((ps - pr).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causality_through_full_model() {
        // Perturbing any future token leaves all earlier per-position
        // outputs unchanged, including through the MoE block with causal
        // prefix pooling.
        let model: PolicyModel<f64> = PolicyModel::init(tiny_config(), 9).unwrap();
        let seq = seq_of(0, 7, 2, 2, 5);
        let t = seq.len();
        let all: Vec<usize> = (0..t).collect();
        let base = model
            .forward(&seq, &all, false, &mut Rng::zero_noise())
            .unwrap();
        for q in 1..t {
            let mut perturbed = seq.clone();
            match &mut perturbed.feats[q] {
                TokenFeat::State(s) => s[0] += 0.5,
                TokenFeat::ActionDiscrete(a) => *a = (*a + 1) % 5,
                TokenFeat::ActionContinuous(a) => a[0] += 0.5,
                TokenFeat::Reward(r) => *r += 0.5,
            }
            let out = model
                .forward(&perturbed, &all, false, &mut Rng::zero_noise())
                .unwrap();
            for p in 0..q {
                let a = &base.outputs[p].1;
                let b = &out.outputs[p].1;
                for (x, y) in a.iter().zip(b.iter()) {
                    assert!((x - y).abs() < 1e-6, "leak from {q} to {p}");
                }
            }
        }
    }

    #[test]
    fn task_routing_ignores_tokens_inside_and_after_group() {
        let model: PolicyModel<f64> = PolicyModel::init(tiny_config(), 11).unwrap();
        let seq = seq_of(0, 5, 2, 2, 5);
        let fwd = model.forward(&seq, &[], false, &mut Rng::zero_noise()).unwrap();
        let records = model.routing_records(&seq, &fwd);
        let gates: Vec<_> = records
            .iter()
            .filter(|r| r.kind == crate::seq::RoutingKind::TaskWise)
            .map(|r| (r.experts.clone(), r.weights.clone()))
            .collect();

        // perturb a token inside the second group; both groups' gates hold
        let mut p = seq.clone();
        if let TokenFeat::State(s) = &mut p.feats[seq.groups[1].start] {
            s[0] += 1.0;
        }
        let fwd2 = model.forward(&p, &[], false, &mut Rng::zero_noise()).unwrap();
        let records2 = model.routing_records(&p, &fwd2);
        let gates2: Vec<_> = records2
            .iter()
            .filter(|r| r.kind == crate::seq::RoutingKind::TaskWise)
            .map(|r| (r.experts.clone(), r.weights.clone()))
            .collect();
        assert_eq!(gates[0].0, gates2[0].0);
        assert_eq!(gates[1].0, gates2[1].0);
        for (w1, w2) in gates[1].1.iter().zip(gates2[1].1.iter()) {
            assert!((w1 - w2).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_head_shape_and_uniform_ce() {
        let model: PolicyModel<f64> = PolicyModel::init(test_config(), 5).unwrap();
        let seq = seq_of(0, 2, 3, 1, 5);
        let out = model.ad_forward(&seq).unwrap();
        assert_eq!(out.outputs.len(), 3);
        for (_, h) in &out.outputs {
            match h {
                HeadOutput::Logits(l) => assert_eq!(l.len(), 5),
                _ => panic!("expected logits"),
            }
        }

        // uniform logits over 5 actions -> loss = ln 5
        let preds = vec![(0usize, vec![0.3f64; 5])];
        let targets = vec![(0usize, Target::Discrete(2))];
        let l = imitation_loss(&ActionSpace::Discrete { n: 5 }, &preds, &targets);
        assert!((l - 5.0f64.ln()).abs() < 1e-12);

        // perfect prediction of a one-hot target -> cross-entropy near 0
        let mut hot = vec![-30.0f64; 5];
        hot[2] = 30.0;
        let l = imitation_loss(&ActionSpace::Discrete { n: 5 }, &[(0, hot)], &targets);
        assert!(l < 1e-9);
    }

    #[test]
    fn continuous_head_bounded_and_mse_zero_on_match() {
        let mut cfg = test_config();
        cfg.action_space = ActionSpace::Continuous { dim: 2, bound: 0.1 };
        let model: PolicyModel<f64> = PolicyModel::init(cfg, 6).unwrap();
        let mut rng = Rng::new(3);
        let mut feats = Vec::new();
        let mut timesteps = Vec::new();
        let mut targets = Vec::new();
        for t in 0..3 {
            let pos = feats.len();
            feats.push(TokenFeat::State(vec![rng.normal(), rng.normal()]));
            targets.push((pos, Target::Continuous(vec![0.05, -0.02])));
            feats.push(TokenFeat::ActionContinuous(vec![0.05, -0.02]));
            feats.push(TokenFeat::Reward(-0.5));
            timesteps.extend([t, t, t]);
        }
        let n = feats.len();
        let seq = TokenSeq {
            feats,
            timesteps,
            groups: vec![Span { start: 0, end: n }],
            prompt_len: n,
            targets,
            task_index: 0,
        };
        let out = model.ad_forward(&seq).unwrap();
        for (_, h) in &out.outputs {
            match h {
                HeadOutput::Mean(m) => {
                    assert!(m.iter().all(|v| v.abs() <= 0.1));
                }
                _ => panic!("expected mean"),
            }
        }

        // exact match -> zero loss: raw = atanh(target / bound)
        let raw: Vec<f64> = [0.05, -0.02].iter().map(|&a: &f64| (a / 0.1f64).atanh()).collect();
        let l = imitation_loss(
            &ActionSpace::Continuous { dim: 2, bound: 0.1 },
            &[(0, raw)],
            &[(0, Target::Continuous(vec![0.05, -0.02]))],
        );
        assert!(l < 1e-20);
    }

    #[test]
    fn loss_matches_per_element_loop_oracle() {
        let mut rng = Rng::new(44);
        let space = ActionSpace::Discrete { n: 4 };
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for p in 0..10 {
            preds.push((p, (0..4).map(|_| rng.normal()).collect::<Vec<f64>>()));
            targets.push((p, Target::Discrete(rng.below(4))));
        }
        let l = imitation_loss(&space, &preds, &targets);
        // independent re-summation
        let mut total = 0.0;
        for ((_, raw), (_, t)) in preds.iter().zip(targets.iter()) {
            let a = match t {
                Target::Discrete(a) => *a,
                _ => unreachable!(),
            };
            let z: f64 = raw.iter().map(|v| v.exp()).sum();
            total += -(raw[a].exp() / z).ln();
        }
        assert!((l - total / 10.0).abs() < 1e-9);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model: PolicyModel<f32> = PolicyModel::init(test_config(), 1).unwrap();
        let seq = seq_of(0, 9, 5, 2, 5);
        let all: Vec<usize> = (0..seq.len()).collect();
        let a = model.forward(&seq, &all, false, &mut Rng::new(1)).unwrap();
        let b = model.forward(&seq, &all, false, &mut Rng::new(999)).unwrap();
        for (x, y) in a.outputs.iter().zip(b.outputs.iter()) {
            assert_eq!(x.1, y.1);
        }
    }
}

#[cfg(test)]
mod block_tests {
    use super::*;
    use crate::model::config::tests_support::tiny_config;
    use crate::seq::Span;

    fn small_seq(seed: u64) -> TokenSeq {
        let mut rng = Rng::new(seed);
        let mut feats = Vec::new();
        let mut timesteps = Vec::new();
        for t in 0..3 {
            feats.push(TokenFeat::State(vec![rng.uniform(), rng.uniform()]));
            feats.push(TokenFeat::ActionDiscrete(rng.below(5)));
            feats.push(TokenFeat::Reward(0.0));
            timesteps.extend([t, t, t]);
        }
        let n = feats.len();
        TokenSeq {
            feats,
            timesteps,
            groups: vec![Span { start: 0, end: n }],
            prompt_len: n,
            targets: Vec::new(),
            task_index: 0,
        }
    }

    #[test]
    fn zeroed_concat_projection_reduces_block_to_attention_plus_residual() {
        // With the MoE concat projection zeroed, the designated block adds
        // nothing to the residual stream, so the model must match a copy
        // whose MoE branch outputs are ignored entirely.
        let mut model: PolicyModel<f64> = PolicyModel::init(tiny_config(), 21).unwrap();
        let moe_idx = model.cfg.moe_layer_index();
        {
            let moe = model.moe_block_mut().unwrap();
            let cat = moe.cat.as_mut().unwrap();
            for v in cat.w.iter_mut() {
                *v = 0.0;
            }
            if let Some(b) = &mut cat.b {
                for v in b.iter_mut() {
                    *v = 0.0;
                }
            }
        }
        let seq = small_seq(4);
        let all: Vec<usize> = (0..seq.len()).collect();
        let full = model.forward(&seq, &all, false, &mut Rng::zero_noise()).unwrap();

        // reference: identical weights, but we recompute the moe block by
        // hand as attention + residual only
        let d = model.cfg.d_model;
        let t = seq.len();
        let mut x = model.embed_sequence(&seq);
        for (layer, block) in model.params.blocks.iter().enumerate() {
            let (a, _) = block.ln1.forward(&x, t);
            let (attn_out, _) = block.attn.forward(&a, t);
            for (xm, &ao) in x.iter_mut().zip(attn_out.iter()) {
                *xm = *xm + ao;
            }
            if layer != moe_idx {
                let (b, _) = block.ln2.forward(&x, t);
                let ffn_out = match &block.ffn {
                    BlockFfn::Dense(ff) => ff.forward(&b, t).0,
                    BlockFfn::Moe(_) => unreachable!(),
                };
                for (xo, &f) in x.iter_mut().zip(ffn_out.iter()) {
                    *xo = *xo + f;
                }
            }
        }
        let (hf, _) = model.params.ln_f.forward(&x, t);
        for (p, raw) in &full.outputs {
            let want = model.params.head.forward(&hf[p * d..(p + 1) * d], 1);
            for (a, b) in raw.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_outputs_preserve_shape() {
        let model: PolicyModel<f64> = PolicyModel::init(tiny_config(), 5).unwrap();
        let seq = small_seq(7);
        let fwd = model.forward(&seq, &[], false, &mut Rng::zero_noise()).unwrap();
        let t = seq.len();
        let d = model.cfg.d_model;
        for bc in &fwd.cache.blocks {
            assert_eq!(bc.x_mid.len(), t * d);
            assert_eq!(bc.b.len(), t * d);
        }
        assert_eq!(fwd.cache.hf.len(), t * d);
    }

    #[test]
    fn empty_prompt_output_depends_only_on_query_state() {
        let mut cfg = tiny_config();
        cfg.variant = Variant::Dpt;
        let model: PolicyModel<f64> = PolicyModel::init(cfg, 9).unwrap();
        let seq_of = |q: [f64; 2]| crate::data::build_dpt_seq(
            crate::envs::EnvId::Darkroom,
            None,
            q,
            4,
            0,
            None,
        );
        let a = model.dpt_forward(&seq_of([1.0, 2.0])).unwrap();
        let b = model.dpt_forward(&seq_of([1.0, 2.0])).unwrap();
        let c = model.dpt_forward(&seq_of([3.0, 1.0])).unwrap();
        let logits = |o: &PolicyOutput| match &o.outputs[0].1 {
            HeadOutput::Logits(l) => l.clone(),
            _ => unreachable!(),
        };
        assert_eq!(logits(&a), logits(&b));
        assert_ne!(logits(&a), logits(&c));
    }

    #[test]
    fn zero_continuous_loss_gives_zero_gradients() {
        let space = ActionSpace::Continuous { dim: 2, bound: 0.1 };
        let raw = vec![0.3f64, -0.8];
        let target: Vec<f64> = raw.iter().map(|v| v.tanh() * 0.1).collect();
        let (loss, grads) = imitation_grads(&space, &[(0, raw)], &[(0, Target::Continuous(target))], 1.0);
        assert_eq!(loss, 0.0);
        assert!(grads[0].1.iter().all(|&g| g == 0.0));
    }
}
