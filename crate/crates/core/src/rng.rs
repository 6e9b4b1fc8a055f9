//! Seedable counter-based pseudo-random generator.
//!
//! Everything stochastic in this crate draws from this generator so that runs
//! are reproducible bit-for-bit from `(seed, stream ids)` alone, independent
//! of thread scheduling. The algorithm is fixed here so that a second
//! implementation can produce identical streams:
//!
//! * `mix(z)` is the SplitMix64 finalizer:
//!   `z ^= z >> 30; z *= 0xBF58_476D_1CE4_E5B9; z ^= z >> 27;
//!    z *= 0x94D0_49BB_1331_11EB; z ^= z >> 31`.
//! * A stream is keyed by folding its ids into the seed:
//!   `key = mix(seed ^ SEED_TAG)`, then for the i-th id (1-based)
//!   `key = mix(key ^ mix(id + i * GAMMA))` with
//!   `GAMMA = 0x9E37_79B9_7F4A_7C15` and `SEED_TAG = 0x243F_6A88_85A3_08D3`.
//! * The n-th raw output (n starting at 1) is `mix(key + n * GAMMA)`.
//! * `uniform()` maps a raw output `x` to `((x >> 11) + 1) * 2^-53`, a double
//!   in `(0, 1]`.
//! * `normal()` is Box-Muller on consecutive uniforms `u1, u2`:
//!   `r = sqrt(-2 ln u1)`, `theta = 2 pi u2`; it returns `r cos(theta)` and
//!   caches `r sin(theta)` for the next call.
//!
//! Stream-splitting conventions used by the rest of the crate (the ids passed
//! to [`CounterRng::stream`]):
//!
//! * sampler, initial latent of batch element `e`: `[SAMPLER, e, 0]`
//! * sampler, transition noise of element `e` at step `k` (k = 1..=T,
//!   counting from t = 1 down): `[SAMPLER, e, k]`
//! * trainer, batch indices at step `k`: `[TRAIN_BATCH, k]`
//! * trainer, (t, eps) draws for element `e` of step `k`: `[TRAIN_NOISE, k, e]`
//! * trainer, weight initialization: `[INIT]`
//! * dataset generation, sample `i`: `[DATA, i]`

use std::f64::consts::PI;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_TAG: u64 = 0x243F_6A88_85A3_08D3;

/// Stream id tags. Part of the documented stream-splitting scheme.
pub mod stream_id {
    pub const SAMPLER: u64 = 1;
    pub const TRAIN_BATCH: u64 = 2;
    pub const TRAIN_NOISE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const DATA: u64 = 5;
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Counter-based PRNG: the k-th output is a pure function of `(key, k)`.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    /// Root stream for a seed, equivalent to `stream(seed, &[])`.
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, &[])
    }

    /// Derive the sub-stream identified by `ids` (order-sensitive).
    pub fn stream(seed: u64, ids: &[u64]) -> Self {
        let mut key = mix(seed ^ SEED_TAG);
        for (i, &id) in ids.iter().enumerate() {
            key = mix(key ^ mix(id.wrapping_add((i as u64 + 1).wrapping_mul(GAMMA))));
        }
        CounterRng {
            key,
            counter: 0,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform double in `(0, 1]`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Uniform double in `[0, 1)`, used for drawing diffusion times.
    #[inline]
    pub fn uniform_co(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Uniform integer in `0..bound`. `bound` must be nonzero; the modulo
    /// bias is negligible for the small bounds used here (dataset indices).
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fill `out` with standard normal draws.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }
}
