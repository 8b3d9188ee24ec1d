//! Channel gain quantization onto a ring/sector grid.
//!
//! The complex plane up to magnitude nu is cut into nu^2 concentric rings of
//! width 1/nu; each ring is cut into nu^2*L sectors of central angle
//! 2*pi/(nu^2*L). Everything beyond magnitude nu collapses into a single
//! Infinity cell, so the codebook has exactly nu^4*L + 1 entries. A finite
//! cell's representative is the midpoint of its arc: magnitude
//! (ring - 1/2)/nu on the angular bisector.
//!
//! Two properties make this grid useful for alignment:
//!
//! * distortion: |h - rep(quantize(h))| <= (pi+1)/nu for every finite cell
//!   (radial error <= 1/(2 nu), arc error <= pi/nu), and the ratio bound
//!   max{|rep|, 1/|rep|} <= 2 max{|h|, 1/|h|};
//! * exact rotation closure: multiplying a gain by the L-th root of unity
//!   omega_L = exp(i 2 pi / L) advances the sector index by exactly nu^2
//!   (mod nu^2 L) and never changes the ring, so phase rotations act on
//!   cells as pure index arithmetic.
//!
//! Ring intervals are half-open [(i-1)/nu, i/nu); boundary ties at the outer
//! edge |h| = nu and the angular wrap resolve toward the lower index.

use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QuantizerConfig {
    /// Grid resolution; rings have width 1/nu and the grid reaches |h| = nu.
    pub nu: u32,
    /// Number of subblocks the matcher will use; folded into the sector
    /// count so that rotation by omega_L is exact on the grid.
    pub l: u32,
}

impl QuantizerConfig {
    pub fn new(nu: u32, l: u32) -> Result<Self> {
        let cfg = QuantizerConfig { nu, l };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu < 2 {
            return Err(Error::InvalidConfig(format!("nu must be >= 2, got {}", self.nu)));
        }
        if self.l < 1 {
            return Err(Error::InvalidConfig("l must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of rings: nu^2.
    #[inline]
    pub fn rings(&self) -> u32 {
        self.nu * self.nu
    }

    /// Sectors per ring: nu^2 * L.
    #[inline]
    pub fn sectors(&self) -> u64 {
        u64::from(self.nu) * u64::from(self.nu) * u64::from(self.l)
    }

    /// Total codebook size nu^4 L + 1, counting the Infinity cell.
    pub fn cell_count(&self) -> u64 {
        u64::from(self.rings()) * self.sectors() + 1
    }

    /// Worst-case distortion bound (pi+1)/nu for finite cells.
    pub fn error_bound(&self) -> f64 {
        (PI + 1.0) / f64::from(self.nu)
    }
}

/// A quantized gain: either a finite (ring, sector) cell or the catch-all
/// Infinity cell for |h| > nu. Rings are 1-based (1..=nu^2), sectors 0-based
/// (0..nu^2*L).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuantizedGain {
    Cell { ring: u32, sector: u32 },
    Infinity,
}

impl QuantizedGain {
    pub fn is_finite(&self) -> bool {
        matches!(self, QuantizedGain::Cell { .. })
    }
}

/// Cells print as "ring:sector", the Infinity cell as "inf"; this string
/// form is what reports and CSV artifacts carry.
impl fmt::Display for QuantizedGain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantizedGain::Cell { ring, sector } => write!(f, "{ring}:{sector}"),
            QuantizedGain::Infinity => write!(f, "inf"),
        }
    }
}

impl FromStr for QuantizedGain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "inf" {
            return Ok(QuantizedGain::Infinity);
        }
        let (r, sec) = s
            .split_once(':')
            .ok_or_else(|| Error::Domain(format!("bad cell string {s:?}")))?;
        let ring = r
            .parse::<u32>()
            .map_err(|e| Error::Domain(format!("bad ring in {s:?}: {e}")))?;
        let sector = sec
            .parse::<u32>()
            .map_err(|e| Error::Domain(format!("bad sector in {s:?}: {e}")))?;
        Ok(QuantizedGain::Cell { ring, sector })
    }
}

impl serde::Serialize for QuantizedGain {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for QuantizedGain {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps a gain to its cell. Total over the complex plane: Infinity iff
/// |h| > nu, otherwise the unique half-open cell containing h.
pub fn quantize(config: &QuantizerConfig, h: Complex64) -> QuantizedGain {
    let nu = f64::from(config.nu);
    let r = h.norm();
    if r > nu || !r.is_finite() {
        return QuantizedGain::Infinity;
    }
    // floor(r*nu) lands in 0..=nu^2; the outer edge r = nu clamps down.
    let ring = ((r * nu).floor() as u64 + 1).min(u64::from(config.rings())) as u32;
    let sectors = config.sectors();
    let mut theta = h.arg();
    if theta < 0.0 {
        theta += TAU;
    }
    // The wrap theta = 2*pi and any floating-point spill clamp to the top
    // sector's lower neighbour, matching the lower-index tie rule.
    let sector = (((theta / TAU) * sectors as f64).floor() as u64).min(sectors - 1) as u32;
    QuantizedGain::Cell { ring, sector }
}

/// Midpoint representative of a finite cell; the Infinity cell has none.
pub fn representative(config: &QuantizerConfig, cell: QuantizedGain) -> Option<Complex64> {
    match cell {
        QuantizedGain::Infinity => None,
        QuantizedGain::Cell { ring, sector } => {
            let nu = f64::from(config.nu);
            let mag = (f64::from(ring) - 0.5) / nu;
            let ang = (f64::from(sector) + 0.5) * TAU / config.sectors() as f64;
            Some(Complex64::from_polar(mag, ang))
        }
    }
}

/// Rotates a cell by omega_L^j = exp(i 2 pi j / L): pure index arithmetic,
/// sector += j * nu^2 (mod nu^2 L), ring unchanged. Infinity stays Infinity.
pub fn rotate(config: &QuantizerConfig, cell: QuantizedGain, j: i64) -> QuantizedGain {
    match cell {
        QuantizedGain::Infinity => QuantizedGain::Infinity,
        QuantizedGain::Cell { ring, sector } => {
            let sectors = config.sectors() as i64;
            let step = i64::from(config.nu) * i64::from(config.nu);
            let sector = (i64::from(sector) + j.wrapping_mul(step)).rem_euclid(sectors);
            QuantizedGain::Cell { ring, sector: sector as u32 }
        }
    }
}

/// Draws a gain distributed as CN(0,1) conditioned on landing in `cell`:
/// |h|^2 is Exp(1) truncated to the ring's squared-magnitude interval
/// (sampled by inverse CDF) and the angle is uniform over the sector.
/// Used to synthesize matched tuples without running the matcher.
pub fn sample_within<R: Rng>(
    config: &QuantizerConfig,
    cell: QuantizedGain,
    rng: &mut R,
) -> Result<Complex64> {
    let QuantizedGain::Cell { ring, sector } = cell else {
        return Err(Error::Domain("cannot sample within the Infinity cell".into()));
    };
    let nu = f64::from(config.nu);
    let r_lo = (f64::from(ring) - 1.0) / nu;
    let r_hi = f64::from(ring) / nu;
    let (a, b) = (r_lo * r_lo, r_hi * r_hi);
    // Inverse CDF of Exp(1) truncated to [a, b), in the shifted form
    // x = a - ln(1 - u (1 - e^{a-b})) so far rings (where e^{-a}
    // underflows) stay finite.
    let u: f64 = rng.gen();
    let x = a - (1.0 + u * (a - b).exp_m1()).ln();
    let sectors = config.sectors() as f64;
    let ang_lo = f64::from(sector) * TAU / sectors;
    let ang = ang_lo + rng.gen::<f64>() * TAU / sectors;
    // u < 1 keeps x strictly below b, so the magnitude stays inside the
    // half-open ring interval.
    Ok(Complex64::from_polar(x.sqrt(), ang))
}
