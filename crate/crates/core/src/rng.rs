//! Seedable, splittable random streams.
//!
//! A stream is identified by `(seed, stream_id)`. Each layer that samples at
//! run time owns the stream whose id is its layer index, so sampling does not
//! depend on what other layers drew. ChaCha8 is counter based and takes the
//! stream id as its nonce, which gives independent sequences per id.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stream ids at or above this are used for parameter initialization
/// (`INIT_STREAM_BASE + layer index`).
pub const INIT_STREAM_BASE: u64 = 1 << 32;
/// Stream id for minibatch shuffling (one stream per epoch, offset by epoch).
pub const SHUFFLE_STREAM_BASE: u64 = 1 << 40;
/// Stream id for synthetic data generation.
pub const DATA_STREAM: u64 = 1 << 48;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`. The caller guarantees `lo < hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_f64();
        // lo + (hi - lo)·u can round up to hi when u is close to 1.
        if v >= hi {
            hi.next_down()
        } else {
            v
        }
    }

    /// Fills `out` with draws from `U(lo, hi)`, each in `[lo, hi)`.
    ///
    /// Consumes the stream in bulk, so the values differ from repeated
    /// [`uniform`](Self::uniform) calls but are equally reproducible.
    pub fn fill_uniform(&mut self, lo: f64, hi: f64, out: &mut [f64]) {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        let mut buf = [0u8; 4096];
        for chunk in out.chunks_mut(buf.len() / 8) {
            let bytes = &mut buf[..chunk.len() * 8];
            self.inner.fill_bytes(bytes);
            for (v, b) in chunk.iter_mut().zip(bytes.chunks_exact(8)) {
                let bits = u64::from_le_bytes(b.try_into().expect("8-byte chunk"));
                let u = (bits >> 11) as f64 * SCALE;
                *v = (lo + (hi - lo) * u).min(hi.next_down());
            }
        }
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        mean + std * z
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

/// `n` draws from `U(lo, hi)`, each in `[lo, hi)`, as a 1-d tensor.
pub fn uniform_sample(rng: &mut RngStream, lo: f64, hi: f64, n: usize) -> Result<Tensor> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidRange { lo, hi });
    }
    let mut data = vec![0.0; n];
    rng.fill_uniform(lo, hi, &mut data);
    Tensor::from_vec(&[n], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mean_of_3_8() {
        let n = 100_000;
        let mut rng = RngStream::new(7, 0);
        let t = uniform_sample(&mut rng, 3.0, 8.0, n).unwrap();
        let mean = t.reduce_sum() / n as f64;
        let sigma = (25.0f64 / 12.0).sqrt();
        assert!((mean - 5.5).abs() < 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
        assert!(t.data().iter().all(|&v| (3.0..8.0).contains(&v)));
    }

    #[test]
    fn single_unit_draw() {
        let mut rng = RngStream::new(1, 0);
        let t = uniform_sample(&mut rng, 0.0, 1.0, 1).unwrap();
        assert!((0.0..1.0).contains(&t.data()[0]));
    }

    #[test]
    fn empty_range_is_rejected() {
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(
            uniform_sample(&mut rng, 5.0, 5.0, 3),
            Err(Error::InvalidRange { .. })
        ));
        assert!(uniform_sample(&mut rng, 6.0, 5.0, 3).is_err());
    }

    #[test]
    fn draws_never_reach_hi() {
        // A range so narrow that most products round to an endpoint.
        let lo = 1.0;
        let hi = 1.0f64.next_up();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..1000 {
            let v = rng.uniform(lo, hi);
            assert!(v >= lo && v < hi);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(42, 5);
        let mut b = RngStream::new(42, 5);
        let mut c = RngStream::new(42, 6);
        let mut same_as_c = 0;
        for _ in 0..1_000_000 {
            let x = a.next_u64();
            assert_eq!(x, b.next_u64());
            if x == c.next_u64() {
                same_as_c += 1;
            }
        }
        assert_eq!(same_as_c, 0);
    }
}
