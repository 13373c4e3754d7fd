//! Task-wise MoE: a whole routing group (one episode of context, or a DPT
//! prompt) shares one gate decision computed from a pooled hidden state.

use super::contrastive::TaskRouterState;
use super::gating::{top_k_gate, GateDecision, RouterParams};
use crate::error::{Error, Result};
use crate::math::{softmax_inplace, Real};
use crate::nn::{FeedForward, FfCache};
use crate::seq::Span;

#[derive(Clone, Debug)]
pub struct TaskMoeParams<F> {
    pub state: TaskRouterState<F>,
    pub experts: Vec<FeedForward<F>>,
    pub top_k: usize,
}

impl<F: Real> TaskMoeParams<F> {
    pub fn zeros_like(&self) -> Self {
        TaskMoeParams {
            state: TaskRouterState {
                query: self.state.query.zeros_like(),
                key: self.state.key.zeros_like(),
                bilinear: vec![F::zero(); self.state.bilinear.len()],
                beta: self.state.beta,
            },
            experts: self.experts.iter().map(|e| e.zeros_like()).collect(),
            top_k: self.top_k,
        }
    }
}

/// The router as a task encoder: softmax over all clean logits.
pub fn task_router_representation<F: Real>(pooled: &[F], router: &RouterParams<F>) -> Vec<F> {
    let (mut logits, _) = router.clean_logits(pooled);
    softmax_inplace(&mut logits);
    logits
}

struct GroupExpertApply<F> {
    expert: usize,
    cache: FfCache<F>,
    /// Unweighted outputs over the group's tokens.
    out: Vec<F>,
}

pub struct TaskMoeCache<F> {
    pub groups: Vec<Span>,
    pub pools: Vec<Span>,
    pub pooled: Vec<Vec<F>>,
    pub logits: Vec<Vec<F>>,
    pub hidden: Vec<Vec<F>>,
    pub gates: Vec<GateDecision<F>>,
    /// Full softmax router distribution per group, for analysis exports.
    pub z: Vec<Vec<F>>,
    applies: Vec<Vec<GroupExpertApply<F>>>,
}

/// Mean of the pool span's rows; zeros when the span is empty (a cold group
/// with no observed prefix routes through the bias-free router at the origin,
/// which yields uniform logits).
pub fn pool_mean<F: Real>(hidden: &[F], d: usize, pool: Span) -> Vec<F> {
    let mut out = vec![F::zero(); d];
    if pool.is_empty() {
        return out;
    }
    for t in pool.start..pool.end {
        for (o, &v) in out.iter_mut().zip(hidden[t * d..(t + 1) * d].iter()) {
            *o = *o + v;
        }
    }
    let inv = F::one() / F::from_f64(pool.len() as f64);
    for o in out.iter_mut() {
        *o = *o * inv;
    }
    out
}

/// One gate decision per routing group from its pooled vector; the selected
/// experts run over every token of the group and mix with the shared weights.
pub fn task_moe_forward<F: Real>(
    hidden: &[F],
    _n_tokens: usize,
    groups: &[Span],
    pools: &[Span],
    params: &TaskMoeParams<F>,
) -> Result<(Vec<F>, TaskMoeCache<F>)> {
    let d = params.state.query.d;
    let d_out = params.experts[0].down.dout;
    debug_assert_eq!(groups.len(), pools.len());
    let mut y = vec![F::zero(); _n_tokens * d_out];
    let mut cache = TaskMoeCache {
        groups: groups.to_vec(),
        pools: pools.to_vec(),
        pooled: Vec::new(),
        logits: Vec::new(),
        hidden: Vec::new(),
        gates: Vec::new(),
        z: Vec::new(),
        applies: Vec::new(),
    };
    for (gi, (&group, &pool)) in groups.iter().zip(pools.iter()).enumerate() {
        if group.is_empty() {
            return Err(Error::InvalidInput(format!("routing group {gi} is empty")));
        }
        let pooled = pool_mean(hidden, d, pool);
        let (logits, tanh_hidden) = params.state.query.clean_logits(&pooled);
        let gate = top_k_gate(&logits, params.top_k)?;
        let mut z = logits.clone();
        softmax_inplace(&mut z);

        let rows = group.len();
        let x = &hidden[group.start * d..group.end * d];
        let mut applies = Vec::with_capacity(gate.indices.len());
        for (slot, &e) in gate.indices.iter().enumerate() {
            let w = gate.weights[slot];
            let (out, fcache) = params.experts[e].forward(x, rows);
            for r in 0..rows {
                let dst = &mut y[(group.start + r) * d_out..(group.start + r + 1) * d_out];
                let src = &out[r * d_out..(r + 1) * d_out];
                for (a, &b) in dst.iter_mut().zip(src.iter()) {
                    *a = *a + w * b;
                }
            }
            applies.push(GroupExpertApply { expert: e, cache: fcache, out });
        }
        cache.pooled.push(pooled);
        cache.logits.push(logits);
        cache.hidden.push(tanh_hidden);
        cache.gates.push(gate);
        cache.z.push(z);
        cache.applies.push(applies);
    }
    Ok((y, cache))
}

/// Backward pass; accumulates into `dh` and `g`. The pooled-vector gradient
/// spreads uniformly over each group's pooling span.
pub fn task_moe_backward<F: Real>(
    hidden: &[F],
    params: &TaskMoeParams<F>,
    cache: &TaskMoeCache<F>,
    dy: &[F],
    dh: &mut [F],
    g: &mut TaskMoeParams<F>,
) {
    let d = params.state.query.d;
    let d_out = params.experts[0].down.dout;
    let n_exp = params.experts.len();

    for gi in 0..cache.groups.len() {
        let group = cache.groups[gi];
        let pool = cache.pools[gi];
        let gate = &cache.gates[gi];
        let rows = group.len();
        let x = &hidden[group.start * d..group.end * d];

        let mut dgate = vec![F::zero(); gate.indices.len()];
        for (slot, app) in cache.applies[gi].iter().enumerate() {
            let w = gate.weights[slot];
            debug_assert_eq!(app.expert, gate.indices[slot]);
            let mut d_out_rows = vec![F::zero(); rows * d_out];
            let mut dw = F::zero();
            for r in 0..rows {
                let dyt = &dy[(group.start + r) * d_out..(group.start + r + 1) * d_out];
                let out = &app.out[r * d_out..(r + 1) * d_out];
                let dst = &mut d_out_rows[r * d_out..(r + 1) * d_out];
                for i in 0..d_out {
                    dst[i] = w * dyt[i];
                    dw = dw + dyt[i] * out[i];
                }
            }
            dgate[slot] = dw;
            let mut dx = vec![F::zero(); rows * d];
            params.experts[app.expert].backward(
                x,
                &app.cache,
                &d_out_rows,
                rows,
                Some(&mut dx),
                &mut g.experts[app.expert],
            );
            let dst = &mut dh[group.start * d..group.end * d];
            for (a, &b) in dst.iter_mut().zip(dx.iter()) {
                *a = *a + b;
            }
        }

        // softmax backward over the selected clean logits
        let mut inner = F::zero();
        for (slot, &w) in gate.weights.iter().enumerate() {
            inner = inner + dgate[slot] * w;
        }
        let mut dlogits = vec![F::zero(); n_exp];
        for (slot, &e) in gate.indices.iter().enumerate() {
            dlogits[e] = gate.weights[slot] * (dgate[slot] - inner);
        }

        if pool.is_empty() {
            // cold group: pooled vector is a constant zero, router weights
            // still receive gradient through the logits
            let mut sink = vec![F::zero(); d];
            params.state.query.clean_backward(&cache.pooled[gi], &cache.hidden[gi], &dlogits, &mut sink, &mut g.state.query);
        } else {
            let mut dpooled = vec![F::zero(); d];
            params.state.query.clean_backward(&cache.pooled[gi], &cache.hidden[gi], &dlogits, &mut dpooled, &mut g.state.query);
            let inv = F::one() / F::from_f64(pool.len() as f64);
            for t in pool.start..pool.end {
                let dst = &mut dh[t * d..(t + 1) * d];
                for (a, &b) in dst.iter_mut().zip(dpooled.iter()) {
                    *a = *a + b * inv;
                }
            }
        }
    }
}
