//! Numeric foundation: a float abstraction over `f32`/`f64`, a seeded PRNG,
//! and the small nonlinearity zoo the model needs.
//!
//! All matrices are flat row-major slices with explicit shapes. Training runs
//! in `f32`; gradient-verification tests instantiate the same code in `f64`.

use num_traits::Float;

/// Scalar type the whole model is generic over.
///
/// `fexp` is allowed to be a fast approximation in `f32` (softmax inner loops
/// dominate otherwise); the `f64` path uses the accurate libm routines so
/// finite-difference checks see a smooth, precise function.
pub trait Real:
    Float + Send + Sync + std::fmt::Debug + std::fmt::Display + std::iter::Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn fexp(self) -> Self;
    fn ftanh(self) -> Self;
    fn ferf(self) -> Self;
    /// c = alpha * a(m,k) . b(k,n) + beta * c(m,n), row-major.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
}

const EXP_HI_F32: f32 = 88.376_26;
const EXP_LO_F32: f32 = -87.336_54;

/// Cephes-style expf: Cody–Waite reduction plus degree-5 polynomial.
/// Relative error stays under ~4e-7 across the clamped range.
#[inline]
fn fast_exp_f32(x: f32) -> f32 {
    let x = x.clamp(EXP_LO_F32, EXP_HI_F32);
    let n = (x * std::f32::consts::LOG2_E).round();
    // two-part ln(2) keeps the reduced argument accurate
    let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let mut p = 1.987_569_1e-4_f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_345_2e-3;
    p = p * r + 4.166_579_5e-2;
    p = p * r + 1.666_666_6e-1;
    p = p * r + 0.5;
    let poly = p * r * r + r + 1.0;
    let bits = ((n as i32 + 127) as u32) << 23;
    poly * f32::from_bits(bits)
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn fexp(self) -> Self {
        fast_exp_f32(self)
    }
    #[inline]
    fn ftanh(self) -> Self {
        // tanh(x) = 1 - 2/(exp(2x)+1), numerically fine for |x| < ~9
        if self > 9.0 {
            1.0
        } else if self < -9.0 {
            -1.0
        } else {
            1.0 - 2.0 / (fast_exp_f32(2.0 * self) + 1.0)
        }
    }
    #[inline]
    fn ferf(self) -> Self {
        libm::erff(self)
    }
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            )
        }
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn fexp(self) -> Self {
        self.exp()
    }
    #[inline]
    fn ftanh(self) -> Self {
        self.tanh()
    }
    #[inline]
    fn ferf(self) -> Self {
        libm::erf(self)
    }
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            )
        }
    }
}

/// Softplus with the usual overflow guard; strictly positive.
#[inline]
pub fn softplus<F: Real>(x: F) -> F {
    let twenty = F::from_f64(20.0);
    if x > twenty {
        x + (-x).fexp()
    } else if x < -twenty {
        x.fexp()
    } else {
        (F::one() + x.fexp()).ln()
    }
}

/// d softplus / dx = sigmoid(x).
#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + (-x).fexp())
    } else {
        let e = x.fexp();
        e / (one + e)
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    half * (F::one() + (x * F::from_f64(INV_SQRT_2)).ferf())
}

/// Standard normal PDF (derivative of [`normal_cdf`]).
#[inline]
pub fn normal_pdf<F: Real>(x: F) -> F {
    F::from_f64(INV_SQRT_2PI) * (-(x * x) * F::from_f64(0.5)).fexp()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximation GELU.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).ftanh())
}

/// d gelu / dx for the tanh approximation.
#[inline]
pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.ftanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + three * a * x * x)
}

/// In-place softmax over a slice (max-subtracted).
pub fn softmax_inplace<F: Real>(v: &mut [F]) {
    let mut mx = F::neg_infinity();
    for &x in v.iter() {
        if x > mx {
            mx = x;
        }
    }
    let mut sum = F::zero();
    for x in v.iter_mut() {
        *x = (*x - mx).fexp();
        sum = sum + *x;
    }
    let inv = F::one() / sum;
    for x in v.iter_mut() {
        *x = *x * inv;
    }
}

/// y += x, elementwise.
#[inline]
pub fn axpy<F: Real>(y: &mut [F], alpha: F, x: &[F]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        s = s + x * y;
    }
    s
}

/// Deterministic splittable PRNG: splitmix64 seeding + xoshiro256++ core.
///
/// Every stochastic draw in the project flows through one of these, seeded
/// from an explicit (seed, stream-tag) pair, so reruns are bit-identical and
/// resumable training can regenerate any step's randomness statelessly.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
    gauss_spare: Option<f64>,
    zero_normals: bool,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        Rng {
            s: [
                splitmix64(&mut sm),
                splitmix64(&mut sm),
                splitmix64(&mut sm),
                splitmix64(&mut sm),
            ],
            gauss_spare: None,
            zero_normals: false,
        }
    }

    /// An rng whose normal draws are all zero; keeps noise-bearing code
    /// paths live while the injected noise itself is disabled.
    pub fn zero_noise() -> Rng {
        let mut rng = Rng::new(0);
        rng.zero_normals = true;
        rng
    }

    /// Independent stream derived from this rng's seed material and a tag.
    /// Forking does not disturb `self`.
    pub fn fork(&self, tag: u64) -> Rng {
        let mut sm = self.s[0] ^ self.s[2].rotate_left(17) ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let _ = splitmix64(&mut sm);
        Rng::new(splitmix64(&mut sm))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let r = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        r
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box–Muller with one cached spare.
    pub fn normal(&mut self) -> f64 {
        if self.zero_normals {
            return 0.0;
        }
        if let Some(z) = self.gauss_spare.take() {
            return z;
        }
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gauss_spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i + 1);
            v.swap(i, j);
        }
    }

    /// Sample an index from unnormalized nonnegative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut dart = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            dart -= w;
            if dart <= 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    /// k distinct indices from [0, n); falls back to with-replacement when n < k.
    /// Returns (indices, with_replacement_used).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> (Vec<usize>, bool) {
        if n >= k {
            let mut idx: Vec<usize> = (0..n).collect();
            self.shuffle(&mut idx);
            idx.truncate(k);
            (idx, false)
        } else {
            let v = (0..k).map(|_| self.below(n)).collect();
            (v, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_matches_std() {
        for i in -800..=800 {
            let x = i as f32 * 0.1;
            let got = x.fexp();
            let want = x.exp();
            let rel = if want > 0.0 { ((got - want) / want).abs() } else { got.abs() };
            assert!(rel < 2e-6, "exp({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn fast_tanh_matches_std() {
        for i in -200..=200 {
            let x = i as f32 * 0.05;
            assert!((x.ftanh() - x.tanh()).abs() < 3e-6, "tanh({x})");
        }
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0f64) - 0.5).abs() < 1e-12);
        assert!((normal_cdf(1.0f64) - 0.841_344_746_068_543).abs() < 1e-9);
        assert!((normal_cdf(-1.96f64) - 0.024_997_895_148_22).abs() < 1e-8);
    }

    #[test]
    fn gelu_grad_matches_fd() {
        for i in -30..=30 {
            let x = i as f64 * 0.2;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "gelu'({x})");
        }
    }

    #[test]
    fn softplus_positive_and_smooth() {
        for i in -100..=100 {
            let x = i as f64 * 0.5;
            assert!(softplus(x) > 0.0);
            let h = 1e-6;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((sigmoid(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn rng_reproducible_and_fork_independent() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut f1 = a.fork(1);
        let mut f2 = a.fork(2);
        assert_ne!(f1.next_u64(), f2.next_u64());
    }

    #[test]
    fn normal_moments_sane() {
        let mut rng = Rng::new(42);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn gemm_small_case() {
        // 2x3 . 3x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }
}
