//! Special functions, bracketed root finding and reproducible random variates.
//!
//! Every stochastic routine in the crate draws from an [`RngStream`], a ChaCha8
//! generator keyed by `(seed, stream_id)`. Substreams are derived by hashing, so a
//! Monte Carlo replication or a simulated subject can own its generator and the
//! output never depends on how work is scheduled across threads.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{GptcmError, Result};

/// Smallest argument accepted by [`gamma_fn`].
pub const GAMMA_MIN_ARG: f64 = 1e-3;
/// Largest argument accepted by [`gamma_fn`]; Γ(171.7) overflows a 64-bit float.
pub const GAMMA_MAX_ARG: f64 = 170.0;

/// Default bracket-width tolerance of [`find_root`].
pub const ROOT_TOL: f64 = 1e-10;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Cloning a stream snapshots its position; the clone replays the same variates.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    /// Child stream `id` of this stream. Depends only on `(seed, stream_id, id)`,
    /// never on how many variates the parent has already produced.
    pub fn substream(&self, id: u64) -> Self {
        let mut state = self.seed ^ self.stream_id.rotate_left(32);
        let child_seed = splitmix64(&mut state) ^ splitmix64(&mut state).rotate_left(17);
        RngStream::new(child_seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform variate on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            // 53 random mantissa bits
            let u = (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Probability vector `(p_1, ..., p_L)` on the unit simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Simplex {
    weights: Vec<f64>,
}

impl Simplex {
    /// Renormalizes `weights` to sum to one. Rejects empty input, negative or
    /// non-finite entries and a zero total.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(GptcmError::InvalidSimplex("no components".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(GptcmError::InvalidSimplex(format!(
                "component {w} is negative or non-finite"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(GptcmError::InvalidSimplex("components sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Simplex { weights })
    }

    /// Equal weights `1/L`.
    pub fn uniform(len: usize) -> Result<Self> {
        Simplex::new(vec![1.0; len])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Simplex {
    type Error = GptcmError;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Simplex::new(value)
    }
}

impl From<Simplex> for Vec<f64> {
    fn from(value: Simplex) -> Self {
        value.weights
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

// Lanczos series for x >= 0.5; returns (w, sum) with Γ(x) = √(2π) w^(x-1/2) e^(-w) sum.
fn lanczos_parts(x: f64) -> (f64, f64) {
    let z = x - 1.0;
    let sum = LANCZOS_COEF[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS_COEF[0], |acc, (i, c)| acc + c / (z + (i + 1) as f64));
    (z + LANCZOS_G + 0.5, sum)
}

/// Gamma function on `[1e-3, 170]`.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(GAMMA_MIN_ARG..=GAMMA_MAX_ARG).contains(&x) {
        return Err(GptcmError::domain(format!(
            "gamma_fn argument {x} outside [{GAMMA_MIN_ARG}, {GAMMA_MAX_ARG}]"
        )));
    }
    Ok(gamma_unchecked(x))
}

pub(crate) fn gamma_unchecked(x: f64) -> f64 {
    if x.fract() == 0.0 && x <= GAMMA_MAX_ARG {
        // exact factorial for integer arguments
        return (1..x as u32).fold(1.0, |acc, k| acc * f64::from(k));
    }
    if x < 0.5 {
        return gamma_unchecked(x + 1.0) / x;
    }
    let (w, sum) = lanczos_parts(x);
    // split the power so w^(x-1/2) does not overflow before e^(-w) is applied
    let half = w.powf(0.5 * (x - 0.5));
    (2.0 * std::f64::consts::PI).sqrt() * half * (half * (-w).exp()) * sum
}

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return ln_gamma(x + 1.0) - x.ln();
    }
    let (w, sum) = lanczos_parts(x);
    HALF_LN_TWO_PI + (x - 0.5) * w.ln() - w + sum.ln()
}

/// Digamma ψ(x) for `x > 0`, by upward recurrence and the asymptotic series.
pub fn digamma(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut z = x;
    while z < 10.0 {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + z.ln() - 0.5 / z - series
}

/// Draws a Dirichlet(`alpha`) vector by normalizing independent Gamma(α_l, 1) variates.
pub fn sample_dirichlet(rng: &mut RngStream, alpha: &[f64]) -> Result<Simplex> {
    if alpha.is_empty() {
        return Err(GptcmError::domain("dirichlet concentration is empty"));
    }
    let mut draws = Vec::with_capacity(alpha.len());
    for &a in alpha {
        if !(a > 0.0 && a.is_finite()) {
            return Err(GptcmError::domain(format!(
                "dirichlet concentration {a} must be positive"
            )));
        }
        let g = Gamma::new(a, 1.0).map_err(|e| GptcmError::domain(e.to_string()))?;
        draws.push(g.sample(rng));
    }
    if draws.iter().sum::<f64>() > 0.0 {
        return Simplex::new(draws);
    }
    // every gamma draw underflowed (tiny alphas): the mass sits on one vertex,
    // chosen with probability proportional to alpha
    let total: f64 = alpha.iter().sum();
    let mut u = rng.uniform_open() * total;
    let mut vertex = alpha.len() - 1;
    for (l, &a) in alpha.iter().enumerate() {
        if u < a {
            vertex = l;
            break;
        }
        u -= a;
    }
    let mut weights = vec![0.0; alpha.len()];
    weights[vertex] = 1.0;
    Simplex::new(weights)
}

/// Draws a Poisson(`theta`) count.
pub fn sample_poisson(rng: &mut RngStream, theta: f64) -> Result<u64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(GptcmError::domain(format!(
            "poisson mean {theta} must be positive"
        )));
    }
    let dist = Poisson::new(theta).map_err(|e| GptcmError::domain(e.to_string()))?;
    Ok(dist.sample(rng) as u64)
}

/// Root of `f` in `[lo, hi]` by bisection with secant acceleration.
///
/// Stops once `|f(t)| <= tol` or the bracket is narrower than `tol`; the bracket
/// always shrinks, so a sign change guarantees convergence.
pub fn find_root<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) || !(tol > 0.0) {
        return Err(GptcmError::domain(format!(
            "invalid bracket [{lo}, {hi}] or tolerance {tol}"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(GptcmError::NoSignChange {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }
    let mut use_secant = true;
    for _ in 0..400 {
        let width = b - a;
        let mut t = 0.5 * (a + b);
        if use_secant {
            let s = b - fb * (b - a) / (fb - fa);
            // accept the secant point only well inside the bracket
            if s.is_finite() && s > a + 0.01 * width && s < b - 0.01 * width {
                t = s;
            }
        }
        let ft = f(t);
        if ft == 0.0 || ft.abs() <= tol {
            return Ok(t);
        }
        let before = width;
        if ft.signum() == fa.signum() {
            a = t;
            fa = ft;
        } else {
            b = t;
            fb = ft;
        }
        if b - a <= tol {
            return Ok(if fa.abs() < fb.abs() { a } else { b });
        }
        // alternate with plain bisection whenever the secant step stalls
        use_secant = (b - a) < 0.5 * before;
    }
    Ok(0.5 * (a + b))
}
