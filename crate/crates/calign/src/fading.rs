//! Channel gain generation.
//!
//! Gains h_{m,k}[t] between transmitter k and receiver m are unit-variance
//! circularly-symmetric complex Gaussians, either iid across time or an
//! AR(1) process h[t] = rho h[t-1] + sqrt(1-rho^2) w[t] started in its
//! stationary distribution (so the marginal is CN(0,1) at every t).
//!
//! Each link (m,k) draws from its own deterministic RNG stream tagged by
//! (trial, layer, m, k): regenerating with a larger K, more layers, or more
//! trials reproduces existing links bit-for-bit. Receiver noise comes from a
//! separate stream family with the same property.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::rng::{stream_rng, StreamKind};
use crate::Result;

/// Time-correlation model of each gain process.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Process {
    /// Independent draws each slot.
    Iid,
    /// First-order autoregressive with coefficient `rho` in [0, 1); the
    /// innovation variance 1 - rho^2 keeps the process stationary at unit
    /// power.
    Ar1 { rho: f64 },
}

/// Parameters for one K x K block of gain processes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FadingConfig {
    /// Number of transmitters = number of receivers per layer.
    pub k: usize,
    /// Number of time slots.
    pub t: usize,
    pub process: Process,
    /// Master seed; all streams derive from it.
    pub seed: u64,
}

impl FadingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.t == 0 {
            return Err(Error::InvalidConfig("t must be >= 1".into()));
        }
        if let Process::Ar1 { rho } = self.process {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::InvalidConfig(format!(
                    "ar1 rho must lie in [0,1), got {rho}"
                )));
            }
        }
        Ok(())
    }
}

/// A realized block of gains, laid out time-major.
#[derive(Debug, Clone)]
pub struct GainSequence {
    pub config: FadingConfig,
    /// gains[t * k * k + m * k + kk] = h_{m,kk}[t] (0-based indices).
    gains: Vec<Complex64>,
}

impl GainSequence {
    /// Gain from transmitter `k` to receiver `m` at slot `t`.
    #[inline]
    pub fn gain(&self, t: usize, m: usize, k: usize) -> Complex64 {
        let kk = self.config.k;
        self.gains[t * kk * kk + m * kk + k]
    }

    pub fn len(&self) -> usize {
        self.config.t
    }

    pub fn is_empty(&self) -> bool {
        self.config.t == 0
    }

    /// Builds a sequence directly from a time-major gain vector; used by the
    /// synthetic tuple generator and by tests.
    pub fn from_raw(config: FadingConfig, gains: Vec<Complex64>) -> Result<Self> {
        config.validate()?;
        if gains.len() != config.t * config.k * config.k {
            return Err(Error::Domain(format!(
                "gain vector length {} != t*k*k = {}",
                gains.len(),
                config.t * config.k * config.k
            )));
        }
        Ok(GainSequence { config, gains })
    }
}

/// One CN(0,1) draw: independent real and imaginary parts of variance 1/2.
#[inline]
pub(crate) fn complex_gaussian<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Generates the gain block for trial 0, layer 0.
pub fn generate(config: &FadingConfig) -> Result<GainSequence> {
    generate_at(config, 0, 0)
}

/// Generates the gain block for a given (trial, layer) stream context.
pub fn generate_at(config: &FadingConfig, trial: u64, layer: u64) -> Result<GainSequence> {
    config.validate()?;
    let kk = config.k;
    let mut gains = vec![Complex64::new(0.0, 0.0); config.t * kk * kk];
    for m in 0..kk {
        for k in 0..kk {
            let mut rng = stream_rng(
                config.seed,
                StreamKind::Gain,
                [trial, layer, m as u64, k as u64],
            );
            match config.process {
                Process::Iid => {
                    for t in 0..config.t {
                        gains[t * kk * kk + m * kk + k] = complex_gaussian(&mut rng);
                    }
                }
                Process::Ar1 { rho } => {
                    let innov = (1.0 - rho * rho).sqrt();
                    let mut h = complex_gaussian(&mut rng);
                    gains[m * kk + k] = h;
                    for t in 1..config.t {
                        h = h * rho + complex_gaussian(&mut rng) * innov;
                        gains[t * kk * kk + m * kk + k] = h;
                    }
                }
            }
        }
    }
    Ok(GainSequence { config: *config, gains })
}

/// Unit-variance receiver noise, one stream per receiver: noise[t*k + m] =
/// z_m[t]. Tagged independently of the gain streams.
pub fn generate_noise(seed: u64, trial: u64, layer: u64, t: usize, k: usize) -> Vec<Complex64> {
    let mut noise = vec![Complex64::new(0.0, 0.0); t * k];
    for m in 0..k {
        let mut rng = stream_rng(seed, StreamKind::Noise, [trial, layer, m as u64, 0]);
        for slot in 0..t {
            noise[slot * k + m] = complex_gaussian(&mut rng);
        }
    }
    noise
}
