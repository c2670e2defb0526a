//! Reproducible standard-normal streams.
//!
//! Each `(seed, stream_id)` pair selects one ChaCha8 keystream: the seed sets
//! the key and the stream id sets the 64-bit nonce, so replica streams never
//! overlap. Normals come from the ziggurat transform in `rand_distr`; the
//! counter advances by exactly one unit per variate regardless of how many
//! raw words the transform consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            counter: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Draw units consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        self.counter += 1;
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`; one draw unit.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        self.counter += 1;
        self.rng.random::<f64>()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }

    pub fn normal_vector(&mut self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.fill_normal(&mut out);
        out
    }
}
