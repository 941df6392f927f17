//! Counter-based deterministic RNG.
//!
//! Every stream is a SplitMix64 sequence: output `i` of a stream keyed by
//! `key` is `finalize(key + (i + 1) * GOLDEN)`. Because the output is a pure
//! function of `(key, i)`, streams can be derived per (seed, round, client,
//! element, ...) and accessed out of order, and the results never depend on
//! thread scheduling. Distributions come from `rand_distr` on top of the
//! stream. Not cryptographically secure.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, StandardNormal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a path of stream identifiers into a new key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(finalize(seed ^ GOLDEN), |key, &id| {
        finalize(key.wrapping_add(GOLDEN).wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ finalize(id.wrapping_add(GOLDEN)))
    })
}

/// Derives a seed from a textual label (FNV-1a), e.g. an engine name.
pub fn derive_labeled(seed: u64, label: &str) -> u64 {
    let hash = label
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3));
    derive_seed(seed, &[hash])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: seed, counter: 0 }
    }

    /// Independent stream for `(seed, path...)`.
    pub fn stream(seed: u64, path: &[u64]) -> Self {
        Self::new(derive_seed(seed, path))
    }

    /// Random access into the stream without advancing it.
    #[inline]
    pub fn at(&self, index: u64) -> u64 {
        finalize(self.key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform integer in `[0, bound)`.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "next_below needs a positive bound");
        self.random_range(0..bound)
    }

    pub fn next_normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    /// Gamma(shape, 1).
    pub fn next_gamma(&mut self, shape: f64) -> f64 {
        Gamma::new(shape, 1.0).expect("gamma shape must be positive and finite").sample(self)
    }

    /// Dirichlet(alpha, ..., alpha) over `n` categories as normalized gammas.
    pub fn next_dirichlet(&mut self, alpha: f64, n: usize) -> Vec<f64> {
        let gamma = Gamma::new(alpha, 1.0).expect("dirichlet alpha must be positive and finite");
        let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(self)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            draws.iter_mut().for_each(|x| *x /= total);
        } else {
            // Every gamma underflowed (tiny alpha): all mass on one category.
            let pick = self.next_below(n as u64) as usize;
            draws.iter_mut().enumerate().for_each(|(i, x)| *x = if i == pick { 1.0 } else { 0.0 });
        }
        draws
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(self);
    }

    /// `count` distinct indices from `0..n`.
    pub fn sample_without_replacement(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n);
        rand::seq::index::sample(self, n, count).into_vec()
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (CounterRng::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        CounterRng::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

#[inline]
pub fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
