//! Routers and sparse top-k gate selection.

use crate::error::{Error, Result};
use crate::math::{sigmoid, softmax_inplace, softplus, Real, Rng};

/// Router network: two linear maps with a Tanh between them, no bias terms.
/// The token-wise router additionally carries a noise-scale matrix.
#[derive(Clone, Debug)]
pub struct RouterParams<F> {
    pub d: usize,
    pub n_experts: usize,
    /// d x K
    pub w1: Vec<F>,
    /// K x K
    pub w2: Vec<F>,
    /// d x K; present only on the token-wise router.
    pub noise_w: Option<Vec<F>>,
}

impl<F: Real> RouterParams<F> {
    pub fn init(d: usize, n_experts: usize, noisy: bool, std: f64, rng: &mut Rng) -> Self {
        let mut draw = |n: usize| -> Vec<F> { (0..n).map(|_| F::from_f64(rng.normal() * std)).collect() };
        RouterParams {
            d,
            n_experts,
            w1: draw(d * n_experts),
            w2: draw(n_experts * n_experts),
            noise_w: noisy.then(|| draw(d * n_experts)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        RouterParams {
            d: self.d,
            n_experts: self.n_experts,
            w1: vec![F::zero(); self.w1.len()],
            w2: vec![F::zero(); self.w2.len()],
            noise_w: self.noise_w.as_ref().map(|w| vec![F::zero(); w.len()]),
        }
    }

    /// Clean gate logits for one hidden vector; returns (logits, tanh hidden).
    pub fn clean_logits(&self, h: &[F]) -> (Vec<F>, Vec<F>) {
        let k = self.n_experts;
        let mut hidden = vec![F::zero(); k];
        F::gemm(1, self.d, k, F::one(), h, &self.w1, F::zero(), &mut hidden);
        for v in hidden.iter_mut() {
            *v = v.ftanh();
        }
        let mut logits = vec![F::zero(); k];
        F::gemm(1, k, k, F::one(), &hidden, &self.w2, F::zero(), &mut logits);
        (logits, hidden)
    }

    /// Backward through [`Self::clean_logits`]; accumulates into `dh` and `g`.
    pub fn clean_backward(&self, h: &[F], hidden: &[F], dlogits: &[F], dh: &mut [F], g: &mut RouterParams<F>) {
        let k = self.n_experts;
        // d hidden = dlogits . w2^T, and g.w2 += hidden^T dlogits
        let mut dhidden = vec![F::zero(); k];
        crate::nn::gemm_nt(1, k, k, dlogits, &self.w2, &mut dhidden);
        crate::nn::gemm_tn(k, 1, k, hidden, dlogits, &mut g.w2);
        for (dv, &t) in dhidden.iter_mut().zip(hidden.iter()) {
            *dv = *dv * (F::one() - t * t);
        }
        crate::nn::gemm_tn(self.d, 1, k, h, &dhidden, &mut g.w1);
        crate::nn::gemm_nt(1, k, self.d, &dhidden, &self.w1, dh);
    }

    /// Clean gate logits for `t` stacked hidden vectors; returns
    /// (t x K logits, t x K tanh hidden).
    pub fn clean_logits_batch(&self, h: &[F], t: usize) -> (Vec<F>, Vec<F>) {
        let k = self.n_experts;
        let mut hidden = vec![F::zero(); t * k];
        F::gemm(t, self.d, k, F::one(), h, &self.w1, F::zero(), &mut hidden);
        for v in hidden.iter_mut() {
            *v = v.ftanh();
        }
        let mut logits = vec![F::zero(); t * k];
        F::gemm(t, k, k, F::one(), &hidden, &self.w2, F::zero(), &mut logits);
        (logits, hidden)
    }

    /// Batched backward of [`Self::clean_logits_batch`].
    pub fn clean_backward_batch(&self, h: &[F], hidden: &[F], dlogits: &[F], t: usize, dh: &mut [F], g: &mut RouterParams<F>) {
        let k = self.n_experts;
        let mut dhidden = vec![F::zero(); t * k];
        crate::nn::gemm_nt(t, k, k, dlogits, &self.w2, &mut dhidden);
        crate::nn::gemm_tn(k, t, k, hidden, dlogits, &mut g.w2);
        for (dv, &th) in dhidden.iter_mut().zip(hidden.iter()) {
            *dv = *dv * (F::one() - th * th);
        }
        crate::nn::gemm_tn(self.d, t, k, h, &dhidden, &mut g.w1);
        crate::nn::gemm_nt(t, k, self.d, &dhidden, &self.w1, dh);
    }

    /// Noise pre-activations h . W_noise for `t` stacked vectors.
    pub fn noise_pre_batch(&self, h: &[F], t: usize) -> Vec<F> {
        let w = self.noise_w.as_ref().expect("router has no noise weights");
        let mut pre = vec![F::zero(); t * self.n_experts];
        F::gemm(t, self.d, self.n_experts, F::one(), h, w, F::zero(), &mut pre);
        pre
    }

    /// Batched backward of std = softplus(pre).
    pub fn noise_backward_batch(&self, h: &[F], pre: &[F], dstd: &[F], t: usize, dh: &mut [F], g: &mut RouterParams<F>) {
        let w = self.noise_w.as_ref().expect("router has no noise weights");
        let gw = g.noise_w.as_mut().expect("grad router has no noise weights");
        let dpre: Vec<F> = dstd.iter().zip(pre.iter()).map(|(&d, &p)| d * sigmoid(p)).collect();
        crate::nn::gemm_tn(self.d, t, self.n_experts, h, &dpre, gw);
        crate::nn::gemm_nt(t, self.n_experts, self.d, &dpre, w, dh);
    }

    /// Noise pre-activation h . W_noise (before softplus).
    pub fn noise_pre(&self, h: &[F]) -> Vec<F> {
        self.noise_pre_batch(h, 1)
    }

    /// Backward of std = softplus(pre) given d std; accumulates into `dh`, `g`.
    pub fn noise_backward(&self, h: &[F], pre: &[F], dstd: &[F], dh: &mut [F], g: &mut RouterParams<F>) {
        let w = self.noise_w.as_ref().expect("router has no noise weights");
        let gw = g.noise_w.as_mut().expect("grad router has no noise weights");
        let dpre: Vec<F> = dstd.iter().zip(pre.iter()).map(|(&d, &p)| d * sigmoid(p)).collect();
        crate::nn::gemm_tn(self.d, 1, self.n_experts, h, &dpre, gw);
        crate::nn::gemm_nt(1, self.n_experts, self.d, &dpre, w, dh);
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.w2.len() + self.noise_w.as_ref().map_or(0, |w| w.len())
    }
}

/// Sparse gate: the selected expert ids and their softmax weights.
/// Non-selected experts implicitly carry weight exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GateDecision<F> {
    pub indices: Vec<usize>,
    pub weights: Vec<F>,
}

impl<F: Real> GateDecision<F> {
    /// Dense K-length weight vector with zeros at non-selected experts.
    pub fn dense(&self, n_experts: usize) -> Vec<F> {
        let mut v = vec![F::zero(); n_experts];
        for (&i, &w) in self.indices.iter().zip(self.weights.iter()) {
            v[i] = w;
        }
        v
    }

    /// Expert with the largest gate weight (first index on ties).
    pub fn top1(&self) -> usize {
        let mut best = 0;
        for j in 1..self.weights.len() {
            if self.weights[j] > self.weights[best] {
                best = j;
            }
        }
        self.indices[best]
    }
}

/// Indices of the k largest values, ties broken toward the lower index.
/// Returned in descending value order.
pub fn top_k_indices<F: Real>(values: &[F], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| match values[b].partial_cmp(&values[a]) {
        Some(o) if o != std::cmp::Ordering::Equal => o,
        _ => a.cmp(&b),
    });
    idx.truncate(k);
    idx
}

/// Softmax over the k largest logits; everything else gets weight zero.
pub fn top_k_gate<F: Real>(logits: &[F], k: usize) -> Result<GateDecision<F>> {
    let n = logits.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("top-k gate: k={k} out of range for {n} experts")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("top-k gate: non-finite logit".into()));
    }
    let indices = top_k_indices(logits, k);
    let mut weights: Vec<F> = indices.iter().map(|&i| logits[i]).collect();
    softmax_inplace(&mut weights);
    Ok(GateDecision { indices, weights })
}

/// Clean and noise-perturbed gate logits for one token.
#[derive(Clone, Debug)]
pub struct NoisyLogits<F> {
    pub clean: Vec<F>,
    pub noisy: Vec<F>,
    pub noise_std: Vec<F>,
    /// Standard normal draws actually used (zeros in eval mode).
    pub eps: Vec<F>,
    /// Pre-softplus noise activations, kept for backward.
    pub noise_pre: Vec<F>,
    /// Router tanh hidden, kept for backward.
    pub hidden: Vec<F>,
}

/// Noisy gating: noisy_i = clean_i + eps_i * softplus(h . W_noise)_i.
/// In eval mode the noise is disabled and `noisy == clean` exactly.
pub fn noisy_gate_logits<F: Real>(
    h: &[F],
    router: &RouterParams<F>,
    train_mode: bool,
    rng: &mut Rng,
) -> NoisyLogits<F> {
    let (clean, hidden) = router.clean_logits(h);
    let noise_pre = router.noise_pre(h);
    let noise_std: Vec<F> = noise_pre.iter().map(|&p| softplus(p)).collect();
    let k = clean.len();
    let mut eps = vec![F::zero(); k];
    let mut noisy = clean.clone();
    if train_mode {
        for i in 0..k {
            let e = F::from_f64(rng.normal());
            eps[i] = e;
            noisy[i] = clean[i] + e * noise_std[i];
        }
    }
    NoisyLogits { clean, noisy, noise_std, eps, noise_pre, hidden }
}
