//! Token-wise MoE: every token is routed independently through a noisy
//! top-k gate. Router math runs batched over all tokens; expert inputs are
//! gathered per expert so each expert sees one dense matrix.

use super::balance::{load_contribution_backward_row, load_contribution_row};
use super::gating::{top_k_gate, GateDecision, RouterParams};
use crate::error::Result;
use crate::math::{softplus, Real, Rng};
use crate::nn::{FeedForward, FfCache};

#[derive(Clone, Debug)]
pub struct TokenMoeParams<F> {
    pub router: RouterParams<F>,
    pub experts: Vec<FeedForward<F>>,
    pub top_k: usize,
}

impl<F: Real> TokenMoeParams<F> {
    pub fn zeros_like(&self) -> Self {
        TokenMoeParams {
            router: self.router.zeros_like(),
            experts: self.experts.iter().map(|e| e.zeros_like()).collect(),
            top_k: self.top_k,
        }
    }
}

/// Rows gathered for one expert in one forward pass.
pub struct ExpertApply<F> {
    pub rows: Vec<usize>,
    pub x: Vec<F>,
    pub cache: FfCache<F>,
    /// Unweighted expert outputs, rows x d_out.
    pub out: Vec<F>,
}

/// Columnar per-token routing state: all t x K matrices.
pub struct TokenMoeCache<F> {
    pub clean: Vec<F>,
    pub noisy: Vec<F>,
    pub std: Vec<F>,
    pub eps: Vec<F>,
    pub pre: Vec<F>,
    pub hidden: Vec<F>,
    pub gates: Vec<GateDecision<F>>,
    pub per_expert: Vec<Option<ExpertApply<F>>>,
    /// Smooth per-expert example counts summed over tokens (train mode only).
    pub load: Vec<F>,
    pub train_mode: bool,
}

/// Routes each token to its top-k experts and mixes their outputs with the
/// gate weights. Gating uses the noisy logits in train mode, the clean ones
/// otherwise; routing decisions stay in the cache for analysis.
pub fn token_moe_forward<F: Real>(
    hidden_in: &[F],
    n_tokens: usize,
    params: &TokenMoeParams<F>,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<(Vec<F>, TokenMoeCache<F>)> {
    let d = params.router.d;
    let n_exp = params.experts.len();
    let d_out = params.experts[0].down.dout;
    debug_assert_eq!(params.router.n_experts, n_exp);

    let (clean, hidden) = params.router.clean_logits_batch(hidden_in, n_tokens);
    let pre = params.router.noise_pre_batch(hidden_in, n_tokens);
    let std: Vec<F> = pre.iter().map(|&p| softplus(p)).collect();
    let mut eps = vec![F::zero(); n_tokens * n_exp];
    let mut noisy = clean.clone();
    if train_mode {
        for i in 0..eps.len() {
            let e = F::from_f64(rng.normal());
            eps[i] = e;
            noisy[i] = clean[i] + e * std[i];
        }
    }

    let mut gates = Vec::with_capacity(n_tokens);
    let mut load = vec![F::zero(); n_exp];
    let mut rows_per_expert: Vec<Vec<usize>> = vec![Vec::new(); n_exp];
    for t in 0..n_tokens {
        let row = t * n_exp..(t + 1) * n_exp;
        let gate = top_k_gate(&noisy[row.clone()], params.top_k)?;
        for &e in &gate.indices {
            rows_per_expert[e].push(t);
        }
        if train_mode {
            let p = load_contribution_row(&clean[row.clone()], &noisy[row.clone()], &std[row], params.top_k);
            for (l, pi) in load.iter_mut().zip(p) {
                *l = *l + pi;
            }
        }
        gates.push(gate);
    }

    let mut y = vec![F::zero(); n_tokens * d_out];
    let mut per_expert: Vec<Option<ExpertApply<F>>> = Vec::with_capacity(n_exp);
    for (e, rows) in rows_per_expert.into_iter().enumerate() {
        if rows.is_empty() {
            per_expert.push(None);
            continue;
        }
        let mut x = Vec::with_capacity(rows.len() * d);
        for &t in &rows {
            x.extend_from_slice(&hidden_in[t * d..(t + 1) * d]);
        }
        let (out, cache) = params.experts[e].forward(&x, rows.len());
        for (r, &t) in rows.iter().enumerate() {
            let w = gate_weight(&gates[t], e);
            let dst = &mut y[t * d_out..(t + 1) * d_out];
            let src = &out[r * d_out..(r + 1) * d_out];
            for (yo, &o) in dst.iter_mut().zip(src.iter()) {
                *yo = *yo + w * o;
            }
        }
        per_expert.push(Some(ExpertApply { rows, x, cache, out }));
    }

    Ok((
        y,
        TokenMoeCache { clean, noisy, std, eps, pre, hidden, gates, per_expert, load, train_mode },
    ))
}

fn gate_weight<F: Real>(gate: &GateDecision<F>, expert: usize) -> F {
    for (&i, &w) in gate.indices.iter().zip(gate.weights.iter()) {
        if i == expert {
            return w;
        }
    }
    F::zero()
}

/// Backward pass. `d_importance` / `d_load` carry the balance-loss gradients
/// with respect to the per-expert importance and load sums; either may be
/// zeros. Accumulates into `dh` and `g`.
#[allow(clippy::too_many_arguments)]
pub fn token_moe_backward<F: Real>(
    hidden_in: &[F],
    n_tokens: usize,
    params: &TokenMoeParams<F>,
    cache: &TokenMoeCache<F>,
    dy: &[F],
    d_importance: &[F],
    d_load: &[F],
    dh: &mut [F],
    g: &mut TokenMoeParams<F>,
) {
    let d = params.router.d;
    let n_exp = params.experts.len();
    let d_out = params.experts[0].down.dout;

    // d gate weight per token, sparse over the selected experts
    let mut dgate: Vec<Vec<F>> = cache
        .gates
        .iter()
        .map(|gt| vec![F::zero(); gt.indices.len()])
        .collect();

    for e in 0..n_exp {
        let Some(app) = &cache.per_expert[e] else { continue };
        let rows = app.rows.len();
        let mut d_out_rows = vec![F::zero(); rows * d_out];
        for (r, &t) in app.rows.iter().enumerate() {
            let w = gate_weight(&cache.gates[t], e);
            let dyt = &dy[t * d_out..(t + 1) * d_out];
            let out = &app.out[r * d_out..(r + 1) * d_out];
            let dst = &mut d_out_rows[r * d_out..(r + 1) * d_out];
            let mut dw = F::zero();
            for i in 0..d_out {
                dst[i] = w * dyt[i];
                dw = dw + dyt[i] * out[i];
            }
            let slot = cache.gates[t].indices.iter().position(|&i| i == e).unwrap();
            dgate[t][slot] = dgate[t][slot] + dw;
        }
        let mut dx = vec![F::zero(); rows * d];
        params.experts[e].backward(&app.x, &app.cache, &d_out_rows, rows, Some(&mut dx), &mut g.experts[e]);
        for (r, &t) in app.rows.iter().enumerate() {
            let dst = &mut dh[t * d..(t + 1) * d];
            let src = &dx[r * d..(r + 1) * d];
            for (a, &b) in dst.iter_mut().zip(src.iter()) {
                *a = *a + b;
            }
        }
    }

    // importance gradient flows straight into the gate weights
    for (t, gate) in cache.gates.iter().enumerate() {
        for (slot, &e) in gate.indices.iter().enumerate() {
            dgate[t][slot] = dgate[t][slot] + d_importance[e];
        }
    }

    let any_load = d_load.iter().any(|&v| v != F::zero());
    let mut dclean = vec![F::zero(); n_tokens * n_exp];
    let mut dstd = vec![F::zero(); n_tokens * n_exp];
    for t in 0..n_tokens {
        let gate = &cache.gates[t];
        let row = t * n_exp;

        // softmax backward over the selected noisy logits
        let mut inner = F::zero();
        for (slot, &w) in gate.weights.iter().enumerate() {
            inner = inner + dgate[t][slot] * w;
        }
        for (slot, &e) in gate.indices.iter().enumerate() {
            let dnoisy = gate.weights[slot] * (dgate[t][slot] - inner);
            dclean[row + e] = dclean[row + e] + dnoisy;
            if cache.train_mode {
                dstd[row + e] = dstd[row + e] + dnoisy * cache.eps[row + e];
            }
        }

        if cache.train_mode && any_load {
            let r = row..row + n_exp;
            let (lc, ls) = load_contribution_backward_row(
                &cache.clean[r.clone()],
                &cache.noisy[r.clone()],
                &cache.std[r.clone()],
                &cache.eps[r],
                params.top_k,
                d_load,
            );
            for i in 0..n_exp {
                dclean[row + i] = dclean[row + i] + lc[i];
                dstd[row + i] = dstd[row + i] + ls[i];
            }
        }
    }

    params
        .router
        .clean_backward_batch(hidden_in, &cache.hidden, &dclean, n_tokens, dh, &mut g.router);
    if cache.train_mode {
        params
            .router
            .noise_backward_batch(hidden_in, &cache.pre, &dstd, n_tokens, dh, &mut g.router);
    }
}
