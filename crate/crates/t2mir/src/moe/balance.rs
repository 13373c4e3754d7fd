//! Importance and load-balancing regularizers for the token-wise gate.

use super::gating::{noisy_gate_logits, top_k_indices, GateDecision, NoisyLogits, RouterParams};
use crate::error::{Error, Result};
use crate::math::{normal_cdf, normal_pdf, Real, Rng};

const CV_EPS: f64 = 1e-10;
const STD_FLOOR: f64 = 1e-8;

/// Population standard deviation over (mean + 1e-10).
pub fn coefficient_of_variation<F: Real>(v: &[F]) -> F {
    if v.is_empty() {
        return F::zero();
    }
    let n = F::from_f64(v.len() as f64);
    let mut mean = F::zero();
    for &x in v {
        mean = mean + x;
    }
    mean = mean / n;
    let mut var = F::zero();
    for &x in v {
        let c = x - mean;
        var = var + c * c;
    }
    var = var / n;
    var.sqrt() / (mean + F::from_f64(CV_EPS))
}

/// Gradient of upstream * CV(v)^2, accumulated into `dv`.
fn cv_sq_backward<F: Real>(v: &[F], upstream: F, dv: &mut [F]) {
    let n = F::from_f64(v.len() as f64);
    let mut mean = F::zero();
    for &x in v {
        mean = mean + x;
    }
    mean = mean / n;
    let mut var = F::zero();
    for &x in v {
        let c = x - mean;
        var = var + c * c;
    }
    var = var / n;
    let denom = mean + F::from_f64(CV_EPS);
    let two_over_n = F::from_f64(2.0) / n;
    let d2 = denom * denom;
    let d3 = d2 * denom;
    for (dvi, &x) in dv.iter_mut().zip(v.iter()) {
        *dvi = *dvi + upstream * two_over_n * ((x - mean) / d2 - var / d3);
    }
}

/// Per-expert sum of sparse gate weights over a batch of decisions.
pub fn importance_vector<F: Real>(decisions: &[GateDecision<F>], n_experts: usize) -> Result<Vec<F>> {
    if decisions.is_empty() {
        return Err(Error::InvalidInput("importance over an empty batch".into()));
    }
    let mut imp = vec![F::zero(); n_experts];
    for d in decisions {
        for (&i, &w) in d.indices.iter().zip(d.weights.iter()) {
            imp[i] = imp[i] + w;
        }
    }
    Ok(imp)
}

/// Per-token smooth selection probabilities P(expert i is in the top-k),
/// using the standard normal CDF against the k-th greatest competitor.
pub fn load_contribution<F: Real>(nl: &NoisyLogits<F>, k: usize) -> Vec<F> {
    load_contribution_row(&nl.clean, &nl.noisy, &nl.noise_std, k)
}

pub fn load_contribution_row<F: Real>(clean: &[F], noisy: &[F], noise_std: &[F], k: usize) -> Vec<F> {
    let n = clean.len();
    if k >= n {
        return vec![F::one(); n];
    }
    let ord = top_k_indices(noisy, n);
    let pos_of: Vec<usize> = {
        let mut p = vec![0; n];
        for (rank, &i) in ord.iter().enumerate() {
            p[i] = rank;
        }
        p
    };
    let mut out = vec![F::zero(); n];
    for i in 0..n {
        let thr_idx = if pos_of[i] <= k - 1 { ord[k] } else { ord[k - 1] };
        let std = noise_std[i].max(F::from_f64(STD_FLOOR));
        let u = (clean[i] - noisy[thr_idx]) / std;
        out[i] = normal_cdf(u);
    }
    out
}

/// Backward of [`load_contribution`] for one token. Returns gradients with
/// respect to the clean logits and the noise stds (the noisy threshold
/// element is chained back through `noisy = clean + eps * std`).
pub fn load_contribution_backward<F: Real>(nl: &NoisyLogits<F>, k: usize, dload: &[F]) -> (Vec<F>, Vec<F>) {
    load_contribution_backward_row(&nl.clean, &nl.noisy, &nl.noise_std, &nl.eps, k, dload)
}

pub fn load_contribution_backward_row<F: Real>(
    clean: &[F],
    noisy: &[F],
    noise_std: &[F],
    eps: &[F],
    k: usize,
    dload: &[F],
) -> (Vec<F>, Vec<F>) {
    let n = clean.len();
    let mut dclean = vec![F::zero(); n];
    let mut dstd = vec![F::zero(); n];
    if k >= n {
        return (dclean, dstd);
    }
    let ord = top_k_indices(noisy, n);
    let pos_of: Vec<usize> = {
        let mut p = vec![0; n];
        for (rank, &i) in ord.iter().enumerate() {
            p[i] = rank;
        }
        p
    };
    for i in 0..n {
        let thr_idx = if pos_of[i] <= k - 1 { ord[k] } else { ord[k - 1] };
        let raw_std = noise_std[i];
        let clamped = raw_std < F::from_f64(STD_FLOOR);
        let std = raw_std.max(F::from_f64(STD_FLOOR));
        let u = (clean[i] - noisy[thr_idx]) / std;
        let dphi = normal_pdf(u) * dload[i];
        let dnum = dphi / std;
        dclean[i] = dclean[i] + dnum;
        // threshold is another element's noisy logit
        dclean[thr_idx] = dclean[thr_idx] - dnum;
        dstd[thr_idx] = dstd[thr_idx] - dnum * eps[thr_idx];
        if !clamped {
            dstd[i] = dstd[i] - dphi * u / std;
        }
    }
    (dclean, dstd)
}

/// Smooth per-expert example counts over a batch of hidden states.
/// Training-mode semantics: fresh noise is drawn per token from `rng`.
pub fn load_vector<F: Real>(
    hidden: &[F],
    n_tokens: usize,
    router: &RouterParams<F>,
    k: usize,
    rng: &mut Rng,
) -> Vec<F> {
    let d = router.d;
    let mut load = vec![F::zero(); router.n_experts];
    for t in 0..n_tokens {
        let nl = noisy_gate_logits(&hidden[t * d..(t + 1) * d], router, true, rng);
        for (l, p) in load.iter_mut().zip(load_contribution(&nl, k)) {
            *l = *l + p;
        }
    }
    load
}

/// The two balance terms and their weighted total.
#[derive(Clone, Debug)]
pub struct BalanceLossTerms<F> {
    pub importance: Vec<F>,
    pub load: Vec<F>,
    pub w_imp: F,
    pub w_load: F,
    pub total: F,
}

/// total = w_imp * CV(importance)^2 + w_load * CV(load)^2.
pub fn balance_loss<F: Real>(importance: Vec<F>, load: Vec<F>, w_imp: F, w_load: F) -> BalanceLossTerms<F> {
    let cvi = coefficient_of_variation(&importance);
    let cvl = coefficient_of_variation(&load);
    let total = w_imp * cvi * cvi + w_load * cvl * cvl;
    BalanceLossTerms { importance, load, w_imp, w_load, total }
}

/// Gradients of `upstream * total` with respect to the importance and load
/// vectors.
pub fn balance_loss_backward<F: Real>(terms: &BalanceLossTerms<F>, upstream: F) -> (Vec<F>, Vec<F>) {
    let mut dimp = vec![F::zero(); terms.importance.len()];
    let mut dload = vec![F::zero(); terms.load.len()];
    cv_sq_backward(&terms.importance, upstream * terms.w_imp, &mut dimp);
    cv_sq_backward(&terms.load, upstream * terms.w_load, &mut dload);
    (dimp, dload)
}
