//! Counter-based splittable random number generator.
//!
//! Output at position `c` of stream `(seed, stream)` is a pure hash of the
//! triple, so identical `(seed, stream)` pairs reproduce the same sequence
//! bit-exactly regardless of scheduling, and disjoint streams can be handed
//! to parallel workers.

use crate::scalar::Scalar;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream {
            seed,
            stream,
            counter: 0,
        }
    }

    /// Identifier pair recorded in output headers.
    pub fn id(&self) -> (u64, u64) {
        (self.seed, self.stream)
    }

    /// Derive an independent child stream; deterministic in `(self, child)`.
    pub fn substream(&self, child: u64) -> RngStream {
        RngStream::new(
            self.seed,
            mix(self.stream ^ GOLDEN).wrapping_add(mix(child.wrapping_add(GOLDEN))),
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        mix(mix(self.seed.wrapping_add(GOLDEN))
            ^ mix(self.stream).wrapping_add(c.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `{0, ..., n-1}`.
    pub fn next_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Exponential waiting time with the given rate.
    pub fn next_exponential(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0);
        // 1 - u is in (0, 1], so the logarithm is finite.
        -(1.0 - self.next_f64()).ln() / rate
    }

    /// Sample an index from a probability vector by inverse CDF.
    pub fn sample_discrete<T: Scalar>(&mut self, probs: &[T]) -> usize {
        let u = T::of(self.next_f64());
        let mut acc = T::zero();
        for (i, &p) in probs.iter().enumerate() {
            acc = acc + p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}
