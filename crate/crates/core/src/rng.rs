//! Keyed random streams.
//!
//! Every random draw in a run comes from a stream identified by a [`StreamKey`]:
//! master seed, particle slot, assimilation window, substep (or stage counter) and a
//! purpose tag. The key is used directly as the 256-bit key of a ChaCha8 block
//! cipher, so a stream is a pure function of its key and two different keys give
//! independent streams. Nothing is shared between particles, which makes the draws
//! independent of how particles are scheduled onto threads.
//!
//! Gaussian variates use the ziggurat sampler of `rand_distr::StandardNormal`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// What a stream is used for. Streams with different purposes never alias.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Brownian increments driving a particle.
    ModelNoise,
    /// Proposal noise and accept/reject uniforms of MCMC jittering.
    JitterNoise,
    /// The single uniform offset of systematic resampling.
    ResampleUniform,
    /// Observation errors added to the truth.
    ObsNoise,
    /// Brownian increments driving the reference ("truth") trajectory.
    TruthNoise,
    /// Initial ensemble sampling and spin-up.
    Initial,
    /// Tie breaking in rank histograms.
    RankTies,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::ModelNoise => 1,
            Purpose::JitterNoise => 2,
            Purpose::ResampleUniform => 3,
            Purpose::ObsNoise => 4,
            Purpose::TruthNoise => 5,
            Purpose::Initial => 6,
            Purpose::RankTies => 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub particle_id: u64,
    pub window_index: u64,
    /// Substep within the window, or a stage counter for purposes without substeps.
    pub substep: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(master_seed: u64, purpose: Purpose) -> Self {
        Self {
            master_seed,
            particle_id: 0,
            window_index: 0,
            substep: 0,
            purpose,
        }
    }

    pub fn particle(mut self, id: usize) -> Self {
        self.particle_id = id as u64;
        self
    }

    pub fn window(mut self, k: usize) -> Self {
        self.window_index = k as u64;
        self
    }

    pub fn substep(mut self, n: usize) -> Self {
        self.substep = n as u64;
        self
    }

    pub fn derive(&self) -> NoiseStream {
        derive_stream(self)
    }
}

/// Build the stream for `key`.
pub fn derive_stream(key: &StreamKey) -> NoiseStream {
    assert!(key.substep < (1 << 56), "substep counter overflows the key layout");
    let words = [
        key.master_seed,
        key.particle_id,
        key.window_index,
        key.substep | (key.purpose.tag() << 56),
    ];
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    NoiseStream(ChaCha8Rng::from_seed(seed))
}

/// A deterministic random stream owned by one consumer.
#[derive(Clone, Debug)]
pub struct NoiseStream(ChaCha8Rng);

impl NoiseStream {
    pub fn standard_normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn normal_vec(&mut self, n: usize, std_dev: f64) -> Vec<f64> {
        (0..n).map(|_| std_dev * self.standard_normal()).collect()
    }
}

impl RngCore for NoiseStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// One vector of Brownian increments over a time step of length `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianIncrement {
    pub values: Vec<f64>,
    pub dt: f64,
}

/// Draw `n_noise` iid `N(0, dt)` increments.
pub fn sample_brownian(stream: &mut NoiseStream, n_noise: usize, dt: f64) -> Result<BrownianIncrement> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if n_noise == 0 {
        return Err(Error::invalid("n_noise must be at least 1"));
    }
    Ok(BrownianIncrement {
        values: stream.normal_vec(n_noise, dt.sqrt()),
        dt,
    })
}
