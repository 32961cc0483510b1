use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::{Error, Result};

/// Seeded, platform-independent random source.
///
/// The generator is ChaCha20 (a counter-based stream cipher) keyed with the
/// little-endian bytes of the 64-bit seed, zero-padded to 32 bytes, and
/// positioned on stream `stream`. Independent sub-streams for parallel work
/// come from [`Rng::derive`], so serial and parallel consumers see identical
/// draws. Floats are built from the top 53 bits of each 64-bit output.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::derive(seed, 0)
    }

    /// Stream `stream` of the generator keyed by `seed`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One draw from `U[lo, hi)`. Requires `lo < hi`.
    pub fn uniform_one(&mut self, lo: f64, hi: f64) -> Result<f64> {
        check_bounds(lo, hi)?;
        Ok(self.draw(lo, hi))
    }

    /// `count` i.i.d. draws from `U[lo, hi)`. Requires `lo < hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
        check_bounds(lo, hi)?;
        Ok((0..count).map(|_| self.draw(lo, hi)).collect())
    }

    fn draw(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_f64();
        // rounding can land exactly on `hi`
        if v < hi {
            v
        } else {
            hi.next_down()
        }
    }

    /// Uniform integer in `[0, n)`, unbiased by rejection. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

fn check_bounds(lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "uniform bounds require finite lo < hi, got [{lo}, {hi})"
        )));
    }
    Ok(())
}
