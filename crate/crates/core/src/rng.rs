//! Counter-based, splittable random streams.
//!
//! A stream is addressed by `(master_seed, stream_id)` and positioned by a
//! counter, so any draw can be replayed from those three numbers alone. Each
//! replica owns its stream, which is what makes replica-parallel runs
//! independent of thread scheduling.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Mixes a tag into a seed (SplitMix64 finalizer). Used to give every
/// sub-task of a command its own master seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One independent random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        RngStream {
            master_seed,
            stream_id,
            inner,
        }
    }

    /// Stream positioned at `counter` 32-bit words from its start.
    pub fn at(master_seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut s = Self::new(master_seed, stream_id);
        s.inner.set_word_pos(counter as u128);
        s
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position in 32-bit words consumed since the start of the stream.
    pub fn counter(&self) -> u64 {
        self.inner.get_word_pos() as u64
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `N(mean, sd²)` via the ziggurat sampler. One normal is always
    /// consumed, so `sd = 0` keeps streams aligned and returns `mean`.
    pub fn gaussian(&mut self, mean: f64, sd: f64) -> f64 {
        let z = self.standard_normal();
        if sd == 0.0 {
            mean
        } else {
            mean + sd * z
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

/// Free-function form of [`RngStream::gaussian`].
pub fn rng_draw_gaussian(stream: &mut RngStream, mean: f64, sd: f64) -> f64 {
    stream.gaussian(mean, sd)
}
