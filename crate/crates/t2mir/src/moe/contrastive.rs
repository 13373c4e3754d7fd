//! Contrastive training of the task router: bilinear InfoNCE against a
//! momentum-updated key router.

use super::gating::RouterParams;
use crate::error::{Error, Result};
use crate::math::{Real, Rng};
use crate::nn::{gemm_nt, gemm_tn};

/// Query/key router pair plus the bilinear score matrix.
/// The key router never receives gradients; it trails the query router
/// through [`momentum_update`].
#[derive(Clone, Debug)]
pub struct TaskRouterState<F> {
    pub query: RouterParams<F>,
    pub key: RouterParams<F>,
    /// K2 x K2 learnable score matrix.
    pub bilinear: Vec<F>,
    pub beta: F,
}

impl<F: Real> TaskRouterState<F> {
    pub fn init(d: usize, n_experts: usize, beta: f64, std: f64, rng: &mut Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Config(format!("momentum beta {beta} outside [0,1)")));
        }
        let query = RouterParams::init(d, n_experts, false, std, rng);
        let key = query.clone();
        let bilinear = (0..n_experts * n_experts)
            .map(|_| F::from_f64(rng.normal() * std))
            .collect();
        Ok(TaskRouterState { query, key, bilinear, beta: F::from_f64(beta) })
    }
}

/// key <- beta * key + (1 - beta) * query, elementwise over both router maps.
/// The query side is untouched. beta = 1 is tolerated so the fixed-point
/// boundary can be exercised in tests; construction still rejects it.
pub fn momentum_update<F: Real>(state: &mut TaskRouterState<F>) -> Result<()> {
    let beta = state.beta;
    if beta < F::zero() || beta > F::one() {
        return Err(Error::Config(format!("momentum beta {beta} outside [0,1]")));
    }
    let blend = |dst: &mut [F], src: &[F]| {
        for (k, &q) in dst.iter_mut().zip(src.iter()) {
            *k = beta * *k + (F::one() - beta) * q;
        }
    };
    blend(&mut state.key.w1, &state.query.w1);
    blend(&mut state.key.w2, &state.query.w2);
    Ok(())
}

/// InfoNCE gradients with respect to the query representations and the
/// bilinear matrix. Keys are treated as constants.
pub struct InfoNceGrads<F> {
    pub d_queries: Vec<F>,
    pub d_bilinear: Vec<F>,
}

/// Bilinear-score InfoNCE over aligned query/key batches.
///
/// score(i, j) = q_i^T W k_j; for each query the positives are every key
/// drawn from the same task (summed in the numerator), all other keys are
/// negatives. Returns the mean loss over queries.
pub fn infonce_loss<F: Real>(
    queries: &[Vec<F>],
    keys: &[Vec<F>],
    task_ids: &[usize],
    bilinear: &[F],
) -> Result<F> {
    infonce_loss_with_grads(queries, keys, task_ids, bilinear).map(|(l, _)| l)
}

pub fn infonce_loss_with_grads<F: Real>(
    queries: &[Vec<F>],
    keys: &[Vec<F>],
    task_ids: &[usize],
    bilinear: &[F],
) -> Result<(F, InfoNceGrads<F>)> {
    let m = queries.len();
    if m == 0 || keys.len() != m || task_ids.len() != m {
        return Err(Error::InvalidInput(format!(
            "contrastive batch shape mismatch: {m} queries, {} keys, {} task ids",
            keys.len(),
            task_ids.len()
        )));
    }
    let distinct = {
        let mut ids: Vec<usize> = task_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    if distinct < 2 {
        return Err(Error::DataComposition(
            "contrastive loss needs at least two distinct tasks in the batch".into(),
        ));
    }
    let dim = queries[0].len();
    debug_assert_eq!(bilinear.len(), dim * dim);

    let qf: Vec<F> = queries.iter().flatten().copied().collect();
    let kf: Vec<F> = keys.iter().flatten().copied().collect();

    // scores = (Q W) K^T
    let mut qw = vec![F::zero(); m * dim];
    F::gemm(m, dim, dim, F::one(), &qf, bilinear, F::zero(), &mut qw);
    let mut scores = vec![F::zero(); m * m];
    gemm_nt(m, dim, m, &qw, &kf, &mut scores);

    let mut loss = F::zero();
    let mut dscores = vec![F::zero(); m * m];
    let inv_m = F::one() / F::from_f64(m as f64);
    for i in 0..m {
        let row = &scores[i * m..(i + 1) * m];
        let mut mx = F::neg_infinity();
        for &s in row {
            if s > mx {
                mx = s;
            }
        }
        let mut probs: Vec<F> = row.iter().map(|&s| (s - mx).fexp()).collect();
        let z: F = probs.iter().copied().sum();
        for p in probs.iter_mut() {
            *p = *p / z;
        }
        let mut pos_mass = F::zero();
        for j in 0..m {
            if task_ids[j] == task_ids[i] {
                pos_mass = pos_mass + probs[j];
            }
        }
        loss = loss - pos_mass.ln() * inv_m;
        for j in 0..m {
            let is_pos = task_ids[j] == task_ids[i];
            let mut d = probs[j];
            if is_pos {
                d = d - probs[j] / pos_mass;
            }
            dscores[i * m + j] = d * inv_m;
        }
    }

    // dQ = dS (K W^T); dW = Q^T (dS K)
    let mut kw = vec![F::zero(); m * dim];
    gemm_nt(m, dim, dim, &kf, bilinear, &mut kw);
    let mut d_queries = vec![F::zero(); m * dim];
    F::gemm(m, m, dim, F::one(), &dscores, &kw, F::one(), &mut d_queries);
    let mut dsk = vec![F::zero(); m * dim];
    F::gemm(m, m, dim, F::one(), &dscores, &kf, F::zero(), &mut dsk);
    let mut d_bilinear = vec![F::zero(); dim * dim];
    gemm_tn(dim, m, dim, &qf, &dsk, &mut d_bilinear);

    Ok((loss, InfoNceGrads { d_queries, d_bilinear }))
}
