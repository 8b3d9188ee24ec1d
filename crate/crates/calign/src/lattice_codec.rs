//! Desk-scale nested-lattice codec for the integer subchannels, plus the
//! computation-rate formula.
//!
//! The codebook is the hypercube construction: fine lattice
//! Lambda_f = (gamma_s/q) Z^n inside the coarse lattice Lambda_c =
//! gamma_s Z^n, with n even and two real dimensions packed per complex
//! symbol (integer coefficients never mix the real and imaginary parts).
//! A message symbol w in Z_q maps to the fine point gamma_s w / q; adding a
//! dither uniform over the coarse Voronoi cell [-gamma_s/2, gamma_s/2)^n
//! and reducing mod Lambda_c makes the transmitted block uniform over the
//! cell regardless of the message. gamma_s = sqrt(6P) pins the per-real-
//! dimension second moment gamma_s^2 / 12 to P/2, i.e. power P per complex
//! symbol.
//!
//! The decoder follows the subchannel model r = beta sum_k a_k s_k + mu:
//! scale by beta^{-1}, subtract sum_k a_k d_k, quantize to Lambda_f, reduce
//! mod Lambda_c. Because integer combinations of fine points are fine
//! points, the noise-free result is exactly sum_k a_k w_k mod q for any
//! integers a_k — the property the whole relaying scheme leans on. These
//! scalar lattices are deliberately far from capacity: the rate formula
//! here is the Lemma-style bound K log2(beta^2 P / (1 + sigma^2 + K
//! gamma^2 P)), an upper envelope the uncoded codec stays under.

use num_complex::Complex64;
use rand::Rng;

use crate::error::Error;
use crate::function_system::is_prime;
use crate::Result;

/// Hypercube codebook parameters. The lattice dimension is `kappa` rounded
/// up to even (messages are zero-padded to the last real dimension when
/// `kappa` is odd).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CodecConfig {
    pub q: u64,
    /// Message length over Z_q.
    pub kappa: usize,
    /// Power budget per complex symbol.
    pub power: f64,
}

impl CodecConfig {
    pub fn new(q: u64, kappa: usize, power: f64) -> Result<Self> {
        let cfg = CodecConfig { q, kappa, power };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_prime(self.q) {
            return Err(Error::InvalidConfig(format!("q = {} is not prime", self.q)));
        }
        if self.kappa == 0 {
            return Err(Error::InvalidConfig("kappa must be at least 1".into()));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::InvalidConfig(format!("power must be positive, got {}", self.power)));
        }
        Ok(())
    }

    /// Lattice dimension: real dimensions per block, always even.
    pub fn n(&self) -> usize {
        self.kappa + (self.kappa & 1)
    }

    /// Coarse-lattice scale gamma_s = sqrt(6 P).
    pub fn gamma_s(&self) -> f64 {
        (6.0 * self.power).sqrt()
    }
}

/// The integer subchannel r = beta sum_k a_k s_k + mu seen by a decoder.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SubchannelModel {
    pub beta: f64,
    pub a: Vec<u64>,
    /// Per-stream mismatch power bound.
    pub gamma2: f64,
    /// Leakage power bound.
    pub sigma2: f64,
    /// Transmitter count K of the layer (the rate formula's prefactor).
    pub k: usize,
}

impl SubchannelModel {
    pub fn validate(&self) -> Result<()> {
        if self.a.iter().all(|&a| a == 0) {
            return Err(Error::InvalidConfig("all integer coefficients are zero".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Centered mod: x reduced into [-gamma/2, gamma/2), consistently half-open
/// (floor form, so the reduction is idempotent at the cell boundary).
#[inline]
pub fn centered_mod(x: f64, gamma: f64) -> f64 {
    x - gamma * (x / gamma + 0.5).floor()
}

/// Dither uniform over the coarse Voronoi cell, length n.
pub fn draw_dither<R: Rng>(config: &CodecConfig, rng: &mut R) -> Vec<f64> {
    let g = config.gamma_s();
    (0..config.n()).map(|_| (rng.gen::<f64>() - 0.5) * g).collect()
}

/// x = (lambda(w) + d) mod Lambda_c, packed two real dimensions per complex
/// symbol.
pub fn encode(config: &CodecConfig, w: &[u64], dither: &[f64]) -> Result<Vec<Complex64>> {
    config.validate()?;
    if w.len() != config.kappa {
        return Err(Error::InvalidConfig(format!(
            "message length {} != kappa {}",
            w.len(),
            config.kappa
        )));
    }
    if let Some(&bad) = w.iter().find(|&&s| s >= config.q) {
        return Err(Error::InvalidConfig(format!("symbol {bad} outside Z_{}", config.q)));
    }
    if dither.len() != config.n() {
        return Err(Error::InvalidConfig(format!(
            "dither length {} != n {}",
            dither.len(),
            config.n()
        )));
    }
    let g = config.gamma_s();
    let fine = |i: usize| -> f64 {
        let s = if i < config.kappa { w[i] } else { 0 };
        g * s as f64 / config.q as f64
    };
    Ok((0..config.n() / 2)
        .map(|j| {
            Complex64::new(
                centered_mod(fine(2 * j) + dither[2 * j], g),
                centered_mod(fine(2 * j + 1) + dither[2 * j + 1], g),
            )
        })
        .collect())
}

/// Decodes the target combination u = sum_k a_k w_k mod q from the
/// subchannel output block: beta^{-1} r - sum_k a_k d_k, quantized to the
/// fine lattice and reduced mod the coarse one. Exact when mu = 0.
pub fn decode_equation(
    config: &CodecConfig,
    received: &[Complex64],
    model: &SubchannelModel,
    dithers: &[&[f64]],
) -> Result<Vec<u64>> {
    config.validate()?;
    model.validate()?;
    if received.len() != config.n() / 2 {
        return Err(Error::InvalidConfig(format!(
            "received block length {} != n/2 = {}",
            received.len(),
            config.n() / 2
        )));
    }
    if dithers.len() != model.a.len() {
        return Err(Error::InvalidConfig(format!(
            "{} dithers for {} coefficients",
            dithers.len(),
            model.a.len()
        )));
    }
    if dithers.iter().any(|d| d.len() != config.n()) {
        return Err(Error::InvalidConfig("dither length mismatch".into()));
    }
    let g = config.gamma_s();
    let qf = config.q as f64;
    let qi = config.q as i64;
    let mut out = Vec::with_capacity(config.kappa);
    for i in 0..config.kappa {
        let r = received[i / 2];
        let y = if i % 2 == 0 { r.re } else { r.im } / model.beta;
        let removed: f64 = model
            .a
            .iter()
            .zip(dithers)
            .map(|(&a, d)| a as f64 * d[i])
            .sum();
        // Quantize to Lambda_f, reduce mod Lambda_c, read off the Z_q label.
        let steps = ((y - removed) * qf / g).round() as i64;
        out.push(steps.rem_euclid(qi) as u64);
    }
    Ok(out)
}

/// Lemma-style computation sum rate over the subchannel, in bits per
/// complex channel use, clamped at zero:
/// K log2(beta^2 P / (1 + sigma^2 + K gamma^2 P)).
pub fn computation_rate(model: &SubchannelModel, p: f64) -> f64 {
    let k = model.k as f64;
    let sinr = model.beta * model.beta * p
        / (1.0 + model.sigma2 + k * model.gamma2 * p);
    (k * sinr.log2()).max(0.0)
}

/// Uncoded symbol rate of the hypercube codec itself: each of K streams
/// carries log2(q) bits per real dimension, i.e. 2 log2(q) per complex use.
pub fn codec_rate(q: u64, k: usize) -> f64 {
    2.0 * k as f64 * (q as f64).log2()
}
