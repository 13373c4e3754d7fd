//! Causal multi-head self-attention with an explicit backward pass.

use crate::math::Real;
use crate::nn::Linear;

#[derive(Clone, Debug)]
pub struct AttnParams<F> {
    pub n_heads: usize,
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
}

pub struct AttnCache<F> {
    pub q: Vec<F>,
    pub k: Vec<F>,
    pub v: Vec<F>,
    /// Post-softmax attention, heads x T x T (row-major per head).
    pub probs: Vec<F>,
    pub ctx: Vec<F>,
}

impl<F: Real> AttnParams<F> {
    pub fn zeros_like(&self) -> Self {
        AttnParams {
            n_heads: self.n_heads,
            wq: self.wq.zeros_like(),
            wk: self.wk.zeros_like(),
            wv: self.wv.zeros_like(),
            wo: self.wo.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.wq.param_count() + self.wk.param_count() + self.wv.param_count() + self.wo.param_count()
    }

    /// x: T x d (already normalized). Causal mask: position i attends to j <= i.
    pub fn forward(&self, x: &[F], t: usize) -> (Vec<F>, AttnCache<F>) {
        let d = self.wq.din;
        let h = self.n_heads;
        let dh = d / h;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());

        let q = self.wq.forward(x, t);
        let k = self.wk.forward(x, t);
        let v = self.wv.forward(x, t);

        let mut probs = vec![F::zero(); h * t * t];
        let mut ctx = vec![F::zero(); t * d];
        for head in 0..h {
            let off = head * dh;
            let scores = &mut probs[head * t * t..(head + 1) * t * t];
            // scores = scale * q_h k_h^T
            unsafe {
                gemm_any(
                    t, dh, t, scale,
                    q.as_ptr().add(off), d as isize, 1,
                    k.as_ptr().add(off), 1, d as isize,
                    F::zero(),
                    scores.as_mut_ptr(), t as isize, 1,
                );
            }
            // causal softmax row by row
            for i in 0..t {
                let row = &mut scores[i * t..(i + 1) * t];
                let mut mx = F::neg_infinity();
                for &s in &row[..=i] {
                    if s > mx {
                        mx = s;
                    }
                }
                let mut sum = F::zero();
                for s in row[..=i].iter_mut() {
                    *s = (*s - mx).fexp();
                    sum = sum + *s;
                }
                let inv = F::one() / sum;
                for s in row[..=i].iter_mut() {
                    *s = *s * inv;
                }
                for s in row[i + 1..].iter_mut() {
                    *s = F::zero();
                }
            }
            // ctx_h = probs v_h
            unsafe {
                gemm_any(
                    t, t, dh, F::one(),
                    scores.as_ptr(), t as isize, 1,
                    v.as_ptr().add(off), d as isize, 1,
                    F::zero(),
                    ctx.as_mut_ptr().add(off), d as isize, 1,
                );
            }
        }
        let out = self.wo.forward(&ctx, t);
        (out, AttnCache { q, k, v, probs, ctx })
    }

    pub fn backward(
        &self,
        x: &[F],
        cache: &AttnCache<F>,
        dout: &[F],
        t: usize,
        dx: &mut [F],
        g: &mut AttnParams<F>,
    ) {
        let d = self.wq.din;
        let h = self.n_heads;
        let dh = d / h;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());

        let mut dctx = vec![F::zero(); t * d];
        self.wo.backward(&cache.ctx, dout, t, Some(&mut dctx), &mut g.wo);

        let mut dq = vec![F::zero(); t * d];
        let mut dk = vec![F::zero(); t * d];
        let mut dv = vec![F::zero(); t * d];
        let mut dprobs = vec![F::zero(); t * t];
        for head in 0..h {
            let off = head * dh;
            let probs = &cache.probs[head * t * t..(head + 1) * t * t];
            // dprobs = dctx_h v_h^T
            unsafe {
                gemm_any(
                    t, dh, t, F::one(),
                    dctx.as_ptr().add(off), d as isize, 1,
                    cache.v.as_ptr().add(off), 1, d as isize,
                    F::zero(),
                    dprobs.as_mut_ptr(), t as isize, 1,
                );
                // dv_h += probs^T dctx_h
                gemm_any(
                    t, t, dh, F::one(),
                    probs.as_ptr(), 1, t as isize,
                    dctx.as_ptr().add(off), d as isize, 1,
                    F::one(),
                    dv.as_mut_ptr().add(off), d as isize, 1,
                );
            }
            // softmax backward in place (masked entries have probs = 0)
            for i in 0..t {
                let p = &probs[i * t..(i + 1) * t];
                let dp = &mut dprobs[i * t..(i + 1) * t];
                let mut inner = F::zero();
                for j in 0..=i {
                    inner = inner + dp[j] * p[j];
                }
                for j in 0..=i {
                    dp[j] = p[j] * (dp[j] - inner) * scale;
                }
                for j in i + 1..t {
                    dp[j] = F::zero();
                }
            }
            unsafe {
                // dq_h += dscores k_h
                gemm_any(
                    t, t, dh, F::one(),
                    dprobs.as_ptr(), t as isize, 1,
                    cache.k.as_ptr().add(off), d as isize, 1,
                    F::one(),
                    dq.as_mut_ptr().add(off), d as isize, 1,
                );
                // dk_h += dscores^T q_h
                gemm_any(
                    t, t, dh, F::one(),
                    dprobs.as_ptr(), 1, t as isize,
                    cache.q.as_ptr().add(off), d as isize, 1,
                    F::one(),
                    dk.as_mut_ptr().add(off), d as isize, 1,
                );
            }
        }
        self.wq.backward(x, &dq, t, Some(dx), &mut g.wq);
        self.wk.backward(x, &dk, t, Some(dx), &mut g.wk);
        self.wv.backward(x, &dv, t, Some(dx), &mut g.wv);
    }
}

/// Strided gemm over either scalar type: c = alpha a b + beta c.
///
/// # Safety
/// Pointers must cover the extents implied by the strides.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_any<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: F,
    a: *const F,
    rsa: isize,
    csa: isize,
    b: *const F,
    rsb: isize,
    csb: isize,
    beta: F,
    c: *mut F,
    rsc: isize,
    csc: isize,
) {
    if std::mem::size_of::<F>() == 4 {
        matrixmultiply::sgemm(
            m, k, n,
            alpha.as_f64() as f32,
            a as *const f32, rsa, csa,
            b as *const f32, rsb, csb,
            beta.as_f64() as f32,
            c as *mut f32, rsc, csc,
        );
    } else {
        matrixmultiply::dgemm(
            m, k, n,
            alpha.as_f64(),
            a as *const f64, rsa, csa,
            b as *const f64, rsb, csb,
            beta.as_f64(),
            c as *mut f64, rsc, csc,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;

    fn make(d: usize, h: usize, seed: u64) -> AttnParams<f64> {
        let mut rng = Rng::new(seed);
        AttnParams {
            n_heads: h,
            wq: Linear::init(d, d, 0.3, true, &mut rng),
            wk: Linear::init(d, d, 0.3, true, &mut rng),
            wv: Linear::init(d, d, 0.3, true, &mut rng),
            wo: Linear::init(d, d, 0.3, true, &mut rng),
        }
    }

    #[test]
    fn causal_mask_holds() {
        let attn = make(8, 2, 3);
        let mut rng = Rng::new(5);
        let t = 6;
        let x: Vec<f64> = (0..t * 8).map(|_| rng.normal()).collect();
        let (y, _) = attn.forward(&x, t);
        // perturb token 4; outputs at 0..4 must not change
        let mut x2 = x.clone();
        for i in 0..8 {
            x2[4 * 8 + i] += 1.0;
        }
        let (y2, _) = attn.forward(&x2, t);
        for p in 0..4 {
            for i in 0..8 {
                assert!((y[p * 8 + i] - y2[p * 8 + i]).abs() < 1e-12, "leak at {p}");
            }
        }
        assert!((0..8).any(|i| (y[4 * 8 + i] - y2[4 * 8 + i]).abs() > 1e-9));
    }

    #[test]
    fn backward_matches_fd() {
        let attn = make(8, 2, 7);
        let mut rng = Rng::new(9);
        let t = 4;
        let x: Vec<f64> = (0..t * 8).map(|_| rng.normal()).collect();
        let loss = |a: &AttnParams<f64>, xv: &[f64]| -> f64 {
            a.forward(xv, t).0.iter().map(|v| v * v).sum()
        };
        let (y, cache) = attn.forward(&x, t);
        let dy: Vec<f64> = y.iter().map(|&v| 2.0 * v).collect();
        let mut dx = vec![0.0; t * 8];
        let mut g = attn.zeros_like();
        attn.backward(&x, &cache, &dy, t, &mut dx, &mut g);

        let h = 1e-6;
        for i in 0..t * 8 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&attn, &xp) - loss(&attn, &xm)) / (2.0 * h);
            let denom = fd.abs().max(dx[i].abs()).max(1e-7);
            assert!(((dx[i] - fd) / denom).abs() < 1e-4, "dx[{i}] {} vs {fd}", dx[i]);
        }
        for i in 0..attn.wq.w.len() {
            let mut ap = attn.clone();
            ap.wq.w[i] += h;
            let mut am = attn.clone();
            am.wq.w[i] -= h;
            let fd = (loss(&ap, &x) - loss(&am, &x)) / (2.0 * h);
            let a = g.wq.w[i];
            let denom = fd.abs().max(a.abs()).max(1e-7);
            assert!(((a - fd) / denom).abs() < 1e-4, "wq[{i}] {a} vs {fd}");
        }
        for i in 0..attn.wk.w.len() {
            let mut ap = attn.clone();
            ap.wk.w[i] += h;
            let mut am = attn.clone();
            am.wk.w[i] -= h;
            let fd = (loss(&ap, &x) - loss(&am, &x)) / (2.0 * h);
            let a = g.wk.w[i];
            let denom = fd.abs().max(a.abs()).max(1e-7);
            assert!(((a - fd) / denom).abs() < 1e-4, "wk[{i}] {a} vs {fd}");
        }
    }
}
