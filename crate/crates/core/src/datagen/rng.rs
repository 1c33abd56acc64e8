use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Seedable ChaCha20 stream.
///
/// Streams for different domains are keyed by `SHA-256(seed_le || domain_id)`,
/// so a domain's samples depend only on the run seed and its own id and are
/// reproducible across platforms.
#[derive(Debug, Clone)]
pub struct DomainRng {
    inner: ChaCha20Rng,
}

impl DomainRng {
    pub fn new(seed: u64) -> Self {
        DomainRng {
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn for_stream(seed: u64, stream: &str) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(stream.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        DomainRng {
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    /// Independent child stream labelled `name`.
    pub fn derive(&mut self, name: &str) -> Self {
        let s: u64 = self.inner.random();
        DomainRng::for_stream(s, name)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// First `k` entries of a uniformly random permutation of `0..n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k.min(n) {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k.min(n));
        idx
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Random sign: `+1` with probability `beta`, `-1` otherwise.
pub fn rad_sample(beta: f64, rng: &mut DomainRng) -> Result<i8> {
    check_probability(beta)?;
    Ok(if rng.bernoulli(beta) { 1 } else { -1 })
}

/// `1` with probability `p`, else `0`.
pub fn bern_sample(p: f64, rng: &mut DomainRng) -> Result<u8> {
    check_probability(p)?;
    Ok(rng.bernoulli(p) as u8)
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "probability {} outside [0, 1]",
            p
        )))
    }
}
