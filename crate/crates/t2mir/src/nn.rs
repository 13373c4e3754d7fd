//! Dense building blocks with explicit forward caches and hand-written
//! backward passes. Gradients accumulate into a mirror instance of the
//! parameter struct (`zeros_like`).

use crate::math::{gelu, gelu_grad, Real, Rng};

/// Row-major linear map `y = x W + b`, `W: din x dout`.
#[derive(Clone, Debug)]
pub struct Linear<F> {
    pub din: usize,
    pub dout: usize,
    pub w: Vec<F>,
    pub b: Option<Vec<F>>,
}

impl<F: Real> Linear<F> {
    pub fn init(din: usize, dout: usize, std: f64, bias: bool, rng: &mut Rng) -> Self {
        let w = (0..din * dout)
            .map(|_| F::from_f64(rng.normal() * std))
            .collect();
        Linear {
            din,
            dout,
            w,
            b: bias.then(|| vec![F::zero(); dout]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            din: self.din,
            dout: self.dout,
            w: vec![F::zero(); self.w.len()],
            b: self.b.as_ref().map(|b| vec![F::zero(); b.len()]),
        }
    }

    /// x: t x din, returns t x dout.
    pub fn forward(&self, x: &[F], t: usize) -> Vec<F> {
        let mut y = vec![F::zero(); t * self.dout];
        F::gemm(t, self.din, self.dout, F::one(), x, &self.w, F::zero(), &mut y);
        if let Some(b) = &self.b {
            for row in y.chunks_mut(self.dout) {
                for (yi, &bi) in row.iter_mut().zip(b.iter()) {
                    *yi = *yi + bi;
                }
            }
        }
        y
    }

    /// Accumulates into `g` and, when given, into `dx`.
    pub fn backward(&self, x: &[F], dy: &[F], t: usize, dx: Option<&mut [F]>, g: &mut Linear<F>) {
        // dW += x^T dy
        gemm_tn(self.din, t, self.dout, x, dy, &mut g.w);
        if let Some(gb) = &mut g.b {
            for row in dy.chunks(self.dout) {
                for (gi, &d) in gb.iter_mut().zip(row.iter()) {
                    *gi = *gi + d;
                }
            }
        }
        if let Some(dx) = dx {
            // dx += dy W^T
            gemm_nt(t, self.dout, self.din, dy, &self.w, dx);
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.as_ref().map_or(0, |b| b.len())
    }
}

/// c(m,n) += a^T(m,k as stored k,m) . b(k,n); `a` is stored k x m row-major.
pub fn gemm_tn<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    // View a (k x m) transposed via strides: row stride 1, col stride m.
    unsafe {
        gemm_raw(m, k, n, a.as_ptr(), 1, m as isize, b.as_ptr(), n as isize, 1, c.as_mut_ptr());
    }
}

/// c(m,n) += a(m,k) . b^T(k,n as stored n,k); `b` is stored n x k row-major.
pub fn gemm_nt<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    unsafe {
        gemm_raw(m, k, n, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, c.as_mut_ptr());
    }
}

/// Strided accumulate-gemm dispatching on scalar width.
///
/// # Safety
/// Pointers must cover the implied extents for the given strides.
unsafe fn gemm_raw<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: *const F,
    rsa: isize,
    csa: isize,
    b: *const F,
    rsb: isize,
    csb: isize,
    c: *mut F,
) {
    if std::mem::size_of::<F>() == 4 {
        matrixmultiply::sgemm(
            m, k, n, 1.0,
            a as *const f32, rsa, csa,
            b as *const f32, rsb, csb,
            1.0,
            c as *mut f32, n as isize, 1,
        );
    } else {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a as *const f64, rsa, csa,
            b as *const f64, rsb, csb,
            1.0,
            c as *mut f64, n as isize, 1,
        );
    }
}

/// LayerNorm with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm<F> {
    pub dim: usize,
    pub gain: Vec<F>,
    pub bias: Vec<F>,
}

pub struct LnCache<F> {
    /// Normalized activations, t x dim.
    pub xhat: Vec<F>,
    /// Per-token 1/sqrt(var + eps).
    pub inv_std: Vec<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            dim,
            gain: vec![F::one(); dim],
            bias: vec![F::zero(); dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm {
            dim: self.dim,
            gain: vec![F::zero(); self.dim],
            bias: vec![F::zero(); self.dim],
        }
    }

    pub fn forward(&self, x: &[F], t: usize) -> (Vec<F>, LnCache<F>) {
        let d = self.dim;
        let eps = F::from_f64(1e-5);
        let mut y = vec![F::zero(); t * d];
        let mut xhat = vec![F::zero(); t * d];
        let mut inv_std = vec![F::zero(); t];
        let inv_d = F::one() / F::from_f64(d as f64);
        for ti in 0..t {
            let row = &x[ti * d..(ti + 1) * d];
            let mut mean = F::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_d;
            let mut var = F::zero();
            for &v in row {
                let c = v - mean;
                var = var + c * c;
            }
            var = var * inv_d;
            let is = F::one() / (var + eps).sqrt();
            inv_std[ti] = is;
            for i in 0..d {
                let xh = (row[i] - mean) * is;
                xhat[ti * d + i] = xh;
                y[ti * d + i] = self.gain[i] * xh + self.bias[i];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LnCache<F>, dy: &[F], t: usize, dx: &mut [F], g: &mut LayerNorm<F>) {
        let d = self.dim;
        let inv_d = F::one() / F::from_f64(d as f64);
        for ti in 0..t {
            let xh = &cache.xhat[ti * d..(ti + 1) * d];
            let dyr = &dy[ti * d..(ti + 1) * d];
            let mut sum_dxhat = F::zero();
            let mut sum_dxhat_xhat = F::zero();
            for i in 0..d {
                g.gain[i] = g.gain[i] + dyr[i] * xh[i];
                g.bias[i] = g.bias[i] + dyr[i];
                let dxh = dyr[i] * self.gain[i];
                sum_dxhat = sum_dxhat + dxh;
                sum_dxhat_xhat = sum_dxhat_xhat + dxh * xh[i];
            }
            let is = cache.inv_std[ti];
            for i in 0..d {
                let dxh = dyr[i] * self.gain[i];
                let v = (dxh - inv_d * sum_dxhat - xh[i] * inv_d * sum_dxhat_xhat) * is;
                dx[ti * d + i] = dx[ti * d + i] + v;
            }
        }
    }
}

/// Two-layer GELU feedforward; also serves as the expert network shape.
#[derive(Clone, Debug)]
pub struct FeedForward<F> {
    pub up: Linear<F>,
    pub down: Linear<F>,
}

pub struct FfCache<F> {
    /// Pre-activation of the hidden layer, t x hidden.
    pub pre: Vec<F>,
    /// Activated hidden layer, t x hidden.
    pub act: Vec<F>,
}

impl<F: Real> FeedForward<F> {
    pub fn init(din: usize, hidden: usize, dout: usize, std: f64, proj_std: f64, rng: &mut Rng) -> Self {
        FeedForward {
            up: Linear::init(din, hidden, std, true, rng),
            down: Linear::init(hidden, dout, proj_std, true, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        FeedForward {
            up: self.up.zeros_like(),
            down: self.down.zeros_like(),
        }
    }

    pub fn forward(&self, x: &[F], t: usize) -> (Vec<F>, FfCache<F>) {
        let pre = self.up.forward(x, t);
        let act: Vec<F> = pre.iter().map(|&v| gelu(v)).collect();
        let y = self.down.forward(&act, t);
        (y, FfCache { pre, act })
    }

    pub fn backward(
        &self,
        x: &[F],
        cache: &FfCache<F>,
        dy: &[F],
        t: usize,
        dx: Option<&mut [F]>,
        g: &mut FeedForward<F>,
    ) {
        let h = self.up.dout;
        let mut dact = vec![F::zero(); t * h];
        self.down.backward(&cache.act, dy, t, Some(&mut dact), &mut g.down);
        for (da, &p) in dact.iter_mut().zip(cache.pre.iter()) {
            *da = *da * gelu_grad(p);
        }
        self.up.backward(x, &dact, t, dx, &mut g.up);
    }

    pub fn param_count(&self) -> usize {
        self.up.param_count() + self.down.param_count()
    }
}
