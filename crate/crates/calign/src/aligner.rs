//! Alignment precoding and matched filtering.
//!
//! Given a matched tuple's quantized base matrix, every transmit vector here
//! has the closed form v = rho * F^p * 1, where F = diag(1, w, w^2, ...) with
//! w = exp(i 2 pi / L), p is the vector's Fourier power, and rho collects
//! channel-gain factors and rational normalizers. Because the quantized
//! channel over a tuple acts as hhat_{m,k} * F^{d_{m,k}} (the matcher's
//! rotation pattern), passing through link (m,k) just adds d_{m,k} to the
//! Fourier power. A matched filter is the unit vector F^p 1 / sqrt(L); the
//! exact identity 1^T F^a 1 = L * 1{a = 0 mod L} (the resonance sum equals
//! L, not 1) makes distinct powers exactly orthogonal, so each filter output
//! is a single-symbol subchannel whose participants are the streams that
//! land on its power.
//!
//! Two constructions:
//!
//! * two-user: transmitter 1 uses the recursion v_{1,l} = b_l * (h22 h11 /
//!   (h21 h12)) F^{-1} v_{1,l-1} starting from the all-ones vector, and
//!   transmitter 2 scales those by h11/h12, giving 2L-1 streams whose
//!   collisions at the receivers carry coefficients (1,1) and (b_{l+1}, 1);
//! * general K at power level I: the family V of monomials
//!   prod (b^(a)_{m,k} .. ) hhat_{m,k}^{a_{m,k}} F^{a_{m,k} d_{m,k}} 1 over
//!   exponents a_{m,k} in {0..I-1}. Since d_{m,k} are distinct powers of
//!   I+1, the Fourier power determines the exponent matrix uniquely (its
//!   base-(I+1) digits), which is what pins down each filter's aligned set.
//!
//! Normalizers b are always of the form n or 1/n for the smallest natural n
//! that pulls the running magnitude into [1,2); they are kept as exact
//! rationals so the integer subchannel coefficients a_k = rho_tilde * b_k
//! come out of exact arithmetic, never from rounding floats.

use num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use crate::error::Error;
use crate::fading::GainSequence;
use crate::matcher::{MatchPattern, MatchedTuple, PatternKind};
use crate::quantizer::{representative, rotate, QuantizedGain, QuantizerConfig};
use crate::Result;

/// Exact rational of the form n or 1/n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Normalizer {
    pub n: u64,
    pub inverted: bool,
}

impl Normalizer {
    pub const ONE: Normalizer = Normalizer { n: 1, inverted: false };

    /// Smallest n (trying both n and 1/n) such that g * b lands in [1,2).
    /// Closed form: g < 1 wants multiplication by ceil(1/g); g >= 2 wants
    /// division by the smallest integer exceeding g/2; g in [1,2) wants 1.
    pub fn for_magnitude(g: f64) -> Result<Normalizer> {
        if !g.is_finite() || g <= 0.0 {
            return Err(Error::Domain(format!("normalizer needs finite g > 0, got {g}")));
        }
        let mut b = if g >= 2.0 {
            Normalizer { n: (g / 2.0).floor() as u64 + 1, inverted: true }
        } else if g < 1.0 {
            Normalizer { n: (1.0 / g).ceil() as u64, inverted: false }
        } else {
            Normalizer::ONE
        };
        // The closed forms are exact over the reals, but rounding in 1/g or
        // g/2 can leave the product a hair outside [1,2) (e.g. 1/g landing
        // on an integer from below). Step n until the invariant holds on
        // the floats we actually have; each loop moves the product
        // monotonically and terminates within a step or two.
        while g * b.value() < 1.0 {
            if b.inverted {
                b.n -= 1;
            } else {
                b.n += 1;
            }
        }
        while g * b.value() >= 2.0 {
            if b.inverted {
                b.n += 1;
            } else {
                b.n -= 1;
            }
        }
        debug_assert!((1.0..2.0).contains(&(g * b.value())), "g={g} b={b:?}");
        Ok(b)
    }

    pub fn value(&self) -> f64 {
        if self.inverted {
            1.0 / self.n as f64
        } else {
            self.n as f64
        }
    }

    /// max{b, 1/b} = n.
    pub fn magnitude_spread(&self) -> f64 {
        self.n as f64
    }
}

/// One transmit vector v = rho * F^fourier_power * 1.
#[derive(Debug, Clone)]
pub struct TransmitVector {
    /// Transmitter that sends this stream (0-based).
    pub owner: usize,
    /// Stream id within the owner: the recursion index l-1 for two-user
    /// mode, the Fourier power for general mode.
    pub stream: u64,
    /// Exponent matrix a_{m,k} (row-major K x K); empty in two-user mode,
    /// where vectors are not monomials in the gains.
    pub exponents: Vec<u32>,
    pub rho: Complex64,
    /// Normalizers applied in construction order.
    pub normalizers: Vec<Normalizer>,
    pub fourier_power: u64,
}

impl TransmitVector {
    /// Component at slot index ell (0-based within the tuple).
    #[inline]
    pub fn component(&self, l: u32, ell: usize) -> Complex64 {
        self.rho * omega_pow(l, self.fourier_power * ell as u64)
    }

    /// ||v|| / sqrt(L) = |rho|.
    pub fn norm_over_sqrt_l(&self) -> f64 {
        self.rho.norm()
    }
}

/// w_L^e, reduced mod L before the trig call so repeated powers never
/// accumulate phase error.
#[inline]
pub fn omega_pow(l: u32, e: u64) -> Complex64 {
    Complex64::from_polar(1.0, TAU * (e % u64::from(l)) as f64 / f64::from(l))
}

/// Which scheme the vectors implement; mirrors the matcher's pattern kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    TwoUser,
    General { i: u32 },
}

/// The full precoder family for one quantized base matrix, plus everything
/// the filter/subchannel arithmetic needs (cell representatives, rotation
/// pattern, normalizer tables).
#[derive(Debug, Clone)]
pub struct TransmitVectorSet {
    pub mode: AlignMode,
    pub k: usize,
    pub l: u32,
    /// c(Hhat) = prod max{|hhat|, 1/|hhat|}.
    pub c: f64,
    /// Cell representatives hhat_{m,k}, row-major.
    pub base: Vec<Complex64>,
    pub base_cells: Vec<QuantizedGain>,
    pub vectors: Vec<TransmitVector>,
    /// Rotation exponents d_{m,k} from the matching pattern.
    d: Vec<u64>,
    /// General mode: norm_tables[m*k+kk][a] = b^(a)_{m,kk} for a = 0..=I,
    /// with b^(0) = 1. Empty in two-user mode.
    norm_tables: Vec<Vec<Normalizer>>,
    /// Lookup (owner, fourier_power) -> index into vectors.
    index: BTreeMap<(usize, u64), usize>,
    quantizer: QuantizerConfig,
}

/// A matched filter F^p 1 / sqrt(L) at one receiver, with the streams that
/// align on it.
#[derive(Debug, Clone)]
pub struct MatchedFilter {
    pub receiver: usize,
    pub fourier_power: u64,
    /// Filter exponent matrix alpha-tilde (general mode; empty otherwise).
    pub exponents: Vec<u32>,
    /// Indices into the vector set, ordered by owner.
    pub aligned: Vec<usize>,
}

/// Integer coefficient of one participating stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct SubchannelCoefficient {
    pub owner: usize,
    /// Index into the vector set.
    pub vector: usize,
    pub a: u64,
}

/// One single-symbol subchannel r = beta * sum_k a_k s_k + mu after the
/// receiver derotates by the common phase and scales by rho_tilde.
#[derive(Debug, Clone)]
pub struct SubchannelSpec {
    pub receiver: usize,
    pub filter_power: u64,
    pub coefficients: Vec<SubchannelCoefficient>,
    /// Common complex gain of the aligned streams with the b_k factored
    /// out, including the sqrt(L) filter gain; beta = |common| / rho_tilde.
    pub common: Complex64,
    pub beta: f64,
    /// rho_tilde: the denominator-clearing post-scale.
    pub post_scale: f64,
    /// Per-stream mismatch power bound gamma^2 = 4 L^2 (pi+1)^2 c^2 / nu^2.
    pub gamma2: f64,
    /// Total leakage power bound sigma^2.
    pub sigma2: f64,
    /// Per-symbol transmit power P-tilde for this mode.
    pub p_tilde: f64,
}

/// Signal accounting of one subchannel over one tuple, against the true
/// gains: desired carries the quantized-channel coefficients, mismatch the
/// aligned streams' residuals through Upsilon = D - Dhat, leakage the
/// non-aligned streams' residuals (their quantized part is exactly
/// orthogonal), and noise the unit-variance filter output.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SinrDecomposition {
    pub desired_power: f64,
    pub mismatch_power: f64,
    pub leakage_power: f64,
    pub noise_power: f64,
    pub empirical_sinr: f64,
    pub theoretical_lower_bound: f64,
}

/// Which lower-bound formula applies to a subchannel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverCase {
    TwoUserRx1,
    TwoUserRx2,
    General { k: usize },
}

/// Worst-case SINR lower bound for a subchannel class. `nu` may be
/// infinite, which drops the quantization-mismatch term.
pub fn sinr_lower_bound(case: ReceiverCase, c: f64, p: f64, l: u32, nu: f64) -> f64 {
    let l = f64::from(l);
    let mismatch = 2.0 * l * l * (PI + 1.0) * (PI + 1.0) * p / (nu * nu);
    match case {
        ReceiverCase::TwoUserRx1 => (p / (4.0 * c.powi(4))) / (1.0 + mismatch),
        ReceiverCase::TwoUserRx2 => (p / (16.0 * c.powi(6))) / (1.0 + mismatch),
        ReceiverCase::General { k } => {
            let k = k as f64;
            p / (2f64.powf(4.0 * k + 2.0 * k * k) * c.powi(4))
        }
    }
}

/// Per-symbol power so that E||x_k||^2 <= T P holds for every transmitter:
/// P/(4 L c^2) for two-user, P/(4^{K^2} L) in general.
pub fn per_symbol_power(mode: AlignMode, k: usize, l: u32, c: f64, p: f64) -> f64 {
    match mode {
        AlignMode::TwoUser => p / (4.0 * f64::from(l) * c * c),
        AlignMode::General { .. } => p / (4f64.powi((k * k) as i32) * f64::from(l)),
    }
}

/// c(Hhat) = prod_{m,k} max{|hhat|, 1/|hhat|}.
pub fn c_of(base: &[Complex64]) -> f64 {
    base.iter().map(|h| h.norm().max(1.0 / h.norm())).product()
}

/// Recovers the exponent matrix from a Fourier power by base-(I+1) digit
/// expansion: digit at position (kk*K + m) is a_{m,kk}. The inverse of
/// p = sum a_{m,k} d_{m,k}; unique because the d are distinct powers of I+1.
pub fn exponents_from_power(p: u64, k: usize, i: u32) -> Vec<u32> {
    let base = u64::from(i) + 1;
    let mut digits = vec![0u32; k * k];
    let mut rest = p;
    for pos in 0..k * k {
        let (kk, m) = (pos / k, pos % k);
        digits[m * k + kk] = (rest % base) as u32;
        rest /= base;
    }
    debug_assert_eq!(rest, 0);
    digits
}

impl TransmitVectorSet {
    pub fn vector_by(&self, owner: usize, fourier_power: u64) -> Option<&TransmitVector> {
        self.index.get(&(owner, fourier_power)).map(|&i| &self.vectors[i])
    }

    /// Rotation exponent d_{m,k} of the underlying matching pattern.
    #[inline]
    pub fn rotation(&self, m: usize, kk: usize) -> u64 {
        self.d[m * self.k + kk]
    }

    /// Quantized channel value on link (m,kk) at tuple slot ell: the
    /// representative of the base cell rotated ell * d_{m,kk} steps. This
    /// exact expression is also what the noiseless-exact channel override
    /// transmits, so Upsilon vanishes bitwise there.
    pub fn quantized_gain_at(&self, m: usize, kk: usize, ell: usize) -> Complex64 {
        let cell = rotate(
            &self.quantizer,
            self.base_cells[m * self.k + kk],
            (ell as u64 * self.rotation(m, kk)) as i64,
        );
        representative(&self.quantizer, cell).expect("base cells are finite")
    }

    pub fn gamma2(&self) -> f64 {
        let l = f64::from(self.l);
        let nu = f64::from(self.quantizer.nu);
        4.0 * l * l * (PI + 1.0) * (PI + 1.0) * self.c * self.c / (nu * nu)
    }

    pub fn receiver_case(&self, receiver: usize) -> ReceiverCase {
        match self.mode {
            AlignMode::TwoUser if receiver == 0 => ReceiverCase::TwoUserRx1,
            AlignMode::TwoUser => ReceiverCase::TwoUserRx2,
            AlignMode::General { .. } => ReceiverCase::General { k: self.k },
        }
    }
}

/// Builds the transmit vector family for one quantized base matrix.
pub fn build_transmit_vectors(
    qcfg: &QuantizerConfig,
    pattern: &MatchPattern,
    base_cells: &[QuantizedGain],
) -> Result<TransmitVectorSet> {
    qcfg.validate()?;
    let k = pattern.k;
    if base_cells.len() != k * k {
        return Err(Error::Domain(format!(
            "base matrix has {} cells, expected {}",
            base_cells.len(),
            k * k
        )));
    }
    if pattern.l != qcfg.l {
        return Err(Error::Domain(format!(
            "pattern l = {} does not match quantizer l = {}",
            pattern.l, qcfg.l
        )));
    }
    let base: Vec<Complex64> = base_cells
        .iter()
        .map(|&cell| {
            representative(qcfg, cell)
                .ok_or_else(|| Error::Domain("Infinity cell in base matrix".into()))
        })
        .collect::<Result<_>>()?;
    let c = c_of(&base);
    let l = pattern.l;

    let (mode, vectors, norm_tables) = match pattern.kind {
        PatternKind::TwoUser => {
            if k != 2 {
                return Err(Error::Domain("two-user pattern needs k = 2".into()));
            }
            (AlignMode::TwoUser, two_user_vectors(&base, l)?, Vec::new())
        }
        PatternKind::General { i } => {
            let (vectors, tables) = general_vectors(&base, k, l, i, &pattern.d)?;
            (AlignMode::General { i }, vectors, tables)
        }
    };

    let mut index = BTreeMap::new();
    for (idx, v) in vectors.iter().enumerate() {
        if index.insert((v.owner, v.fourier_power), idx).is_some() {
            return Err(Error::Domain(format!(
                "duplicate fourier power {} for owner {}",
                v.fourier_power, v.owner
            )));
        }
    }

    Ok(TransmitVectorSet {
        mode,
        k,
        l,
        c,
        base,
        base_cells: base_cells.to_vec(),
        vectors,
        d: pattern.d.clone(),
        norm_tables,
        index,
        quantizer: *qcfg,
    })
}

/// Two-user recursion: 2L-1 vectors, Fourier powers stepping -1 per index.
fn two_user_vectors(base: &[Complex64], l: u32) -> Result<Vec<TransmitVector>> {
    let (h11, h12, h21, h22) = (base[0], base[1], base[2], base[3]);
    let ratio = h22 * h11 / (h21 * h12);
    let cross = h11 / h12;
    let ll = u64::from(l);
    let mut vectors = Vec::with_capacity(2 * l as usize - 1);
    let mut rho = Complex64::new(1.0, 0.0);
    let mut normalizers: Vec<Normalizer> = Vec::new();
    for ell in 0..u64::from(l) {
        if ell > 0 {
            let b = Normalizer::for_magnitude((ratio * rho).norm())?;
            normalizers.push(b);
            rho = ratio * rho * b.value();
        }
        vectors.push(TransmitVector {
            owner: 0,
            stream: ell,
            exponents: Vec::new(),
            rho,
            normalizers: normalizers.clone(),
            fourier_power: (ll - ell) % ll,
        });
    }
    // Transmitter 2 reuses transmitter 1's first L-1 vectors scaled by
    // h11/h12 (same Fourier powers, same normalizer history).
    for ell in 0..u64::from(l) - 1 {
        let v1 = &vectors[ell as usize];
        vectors.push(TransmitVector {
            owner: 1,
            stream: ell,
            exponents: Vec::new(),
            rho: cross * v1.rho,
            normalizers: v1.normalizers.clone(),
            fourier_power: v1.fourier_power,
        });
    }
    Ok(vectors)
}

/// General-K monomial family: I^{K^2} vectors per transmitter plus the
/// per-link normalizer tables b^(a) for a = 0..=I.
#[allow(clippy::type_complexity)]
fn general_vectors(
    base: &[Complex64],
    k: usize,
    l: u32,
    i: u32,
    d: &[u64],
) -> Result<(Vec<TransmitVector>, Vec<Vec<Normalizer>>)> {
    // norm_tables[link][a]: b^(a), with the running product B(a) g^a kept in
    // [1,2); b^(0) = 1 by convention.
    let mut norm_tables = Vec::with_capacity(k * k);
    for h in base {
        let g = h.norm();
        let mut table = vec![Normalizer::ONE];
        let mut running = 1.0;
        for _a in 1..=i {
            let b = Normalizer::for_magnitude(running * g)?;
            running = running * g * b.value();
            table.push(b);
        }
        norm_tables.push(table);
    }

    let count = (i as u64).pow((k * k) as u32);
    let mut vectors = Vec::with_capacity((count as usize) * k);
    for owner in 0..k {
        // Enumerate exponent matrices as base-I counters so stream ids are
        // dense and deterministic.
        let mut exps = vec![0u32; k * k];
        loop {
            let mut rho = Complex64::new(1.0, 0.0);
            let mut power = 0u64;
            let mut normalizers = Vec::new();
            for idx in 0..k * k {
                let a = exps[idx];
                for step in 1..=a {
                    normalizers.push(norm_tables[idx][step as usize]);
                }
                let bprod: f64 =
                    (1..=a).map(|s| norm_tables[idx][s as usize].value()).product();
                rho *= base[idx].powu(a) * bprod;
                power += u64::from(a) * d[idx];
            }
            debug_assert!(power < u64::from(l));
            vectors.push(TransmitVector {
                owner,
                stream: power,
                exponents: exps.clone(),
                rho,
                normalizers,
                fourier_power: power,
            });
            // Increment the exponent counter.
            let mut pos = 0;
            loop {
                if pos == k * k {
                    break;
                }
                exps[pos] += 1;
                if exps[pos] < i {
                    break;
                }
                exps[pos] = 0;
                pos += 1;
            }
            if pos == k * k {
                break;
            }
        }
    }
    Ok((vectors, norm_tables))
}

/// Matched filters at one receiver. Two-user mode mirrors the construction
/// exactly: receiver 1 normalizes transmitter 1's L vectors, receiver 2
/// transmitter 2's L-1 (the stray singleton direction at Fourier power 1 is
/// deliberately unused). General mode keeps one filter per distinct observed
/// power.
pub fn matched_filters(set: &TransmitVectorSet, receiver: usize) -> Vec<MatchedFilter> {
    let aligned_at = |p: u64| -> Vec<usize> {
        let mut hit: Vec<usize> = set
            .vectors
            .iter()
            .enumerate()
            .filter(|(_, v)| {
                (v.fourier_power + set.rotation(receiver, v.owner)) % u64::from(set.l) == p
            })
            .map(|(idx, _)| idx)
            .collect();
        hit.sort_by_key(|&idx| set.vectors[idx].owner);
        hit
    };
    match set.mode {
        AlignMode::TwoUser => {
            let own = if receiver == 0 { 0 } else { 1 };
            set.vectors
                .iter()
                .filter(|v| v.owner == own)
                .map(|v| {
                    let p = (v.fourier_power + set.rotation(receiver, own)) % u64::from(set.l);
                    MatchedFilter {
                        receiver,
                        fourier_power: p,
                        exponents: Vec::new(),
                        aligned: aligned_at(p),
                    }
                })
                .collect()
        }
        AlignMode::General { i } => {
            let mut powers: Vec<u64> = set
                .vectors
                .iter()
                .map(|v| v.fourier_power + set.rotation(receiver, v.owner))
                .collect();
            powers.sort_unstable();
            powers.dedup();
            powers
                .into_iter()
                .map(|p| MatchedFilter {
                    receiver,
                    fourier_power: p,
                    exponents: exponents_from_power(p, set.k, i),
                    aligned: aligned_at(p),
                })
                .collect()
        }
    }
}

/// Builds the per-receiver subchannel descriptions (exact arithmetic only;
/// no per-tuple numerics).
pub fn subchannel_specs(set: &TransmitVectorSet, p_total: f64) -> Result<Vec<SubchannelSpec>> {
    let p_tilde = per_symbol_power(set.mode, set.k, set.l, set.c, p_total);
    let gamma2 = set.gamma2();
    let mut specs = Vec::new();
    for receiver in 0..set.k {
        for filter in matched_filters(set, receiver) {
            specs.push(spec_for_filter(set, &filter, p_tilde, gamma2)?);
        }
    }
    Ok(specs)
}

fn spec_for_filter(
    set: &TransmitVectorSet,
    filter: &MatchedFilter,
    p_tilde: f64,
    gamma2: f64,
) -> Result<SubchannelSpec> {
    let m = filter.receiver;
    let sqrt_l = f64::from(set.l).sqrt();
    let sigma2 = match set.mode {
        AlignMode::TwoUser => 2.0 * (f64::from(set.l) - 1.0) * gamma2 * p_tilde,
        // Crude stream-count bound on the leaked power in general mode.
        AlignMode::General { .. } => (set.vectors.len() as f64) * gamma2 * p_tilde,
    };

    // Per-participant rational b_k and the shared rho_tilde.
    let (coefficients, post_scale, common) = match set.mode {
        AlignMode::TwoUser => {
            let mut coefficients = Vec::new();
            // Aligned vectors are ordered by owner; participants are at most
            // one stream per transmitter.
            let lead = filter.aligned[0];
            let v_lead = &set.vectors[lead];
            if m == 0 {
                // Receiver 1: equal coefficients (1, 1) or the singleton.
                let common = set.base[0] * v_lead.rho * sqrt_l;
                for &idx in &filter.aligned {
                    coefficients.push(SubchannelCoefficient {
                        owner: set.vectors[idx].owner,
                        vector: idx,
                        a: 1,
                    });
                }
                (coefficients, 1.0, common)
            } else {
                // Receiver 2 at filter j: aligned = {v_{1,j+1}, v_{2,j}};
                // the cross stream carries b_{j+1}, the direct one carries 1.
                let v2 = filter
                    .aligned
                    .iter()
                    .map(|&idx| &set.vectors[idx])
                    .find(|v| v.owner == 1)
                    .ok_or_else(|| Error::Domain("receiver-2 filter lost its own stream".into()))?;
                let v1 = filter
                    .aligned
                    .iter()
                    .map(|&idx| &set.vectors[idx])
                    .find(|v| v.owner == 0)
                    .ok_or_else(|| Error::Domain("receiver-2 filter lost the cross stream".into()))?;
                let b = *v1
                    .normalizers
                    .last()
                    .ok_or_else(|| Error::Domain("cross stream has no normalizer".into()))?;
                let common = set.base[3] * v2.rho * sqrt_l;
                let (rho_tilde, a1, a2) =
                    if b.inverted { (b.n as f64, 1, b.n) } else { (1.0, b.n, 1) };
                for &idx in &filter.aligned {
                    let v = &set.vectors[idx];
                    coefficients.push(SubchannelCoefficient {
                        owner: v.owner,
                        vector: idx,
                        a: if v.owner == 0 { a1 } else { a2 },
                    });
                }
                (coefficients, rho_tilde, common)
            }
        }
        AlignMode::General { .. } => {
            // Row-m normalizers at the filter's exponents; b^(0) = 1.
            let row: Vec<Normalizer> = (0..set.k)
                .map(|kk| {
                    let a = filter.exponents[m * set.k + kk] as usize;
                    set.norm_tables[m * set.k + kk][a]
                })
                .collect();
            let mut rho_tilde_num: u128 = 1;
            for b in &row {
                if b.inverted {
                    rho_tilde_num = rho_tilde_num.saturating_mul(u128::from(b.n));
                }
            }
            let mut coefficients = Vec::new();
            for &idx in &filter.aligned {
                let v = &set.vectors[idx];
                // a_k = rho_tilde * prod_{k'!=k} b_{k'}: inverted factors
                // cancel against rho_tilde, leaving naturals.
                let mut a: u128 = 1;
                for (kk, b) in row.iter().enumerate() {
                    if kk == v.owner {
                        if b.inverted {
                            a = a.saturating_mul(u128::from(b.n));
                        }
                    } else if !b.inverted {
                        a = a.saturating_mul(u128::from(b.n));
                    }
                }
                let a = u64::try_from(a)
                    .map_err(|_| Error::Domain("integer coefficient overflows u64".into()))?;
                coefficients.push(SubchannelCoefficient { owner: v.owner, vector: idx, a });
            }
            // common = coef_k / b_k for any participant; use the first.
            let lead = &set.vectors[filter.aligned[0]];
            let b_lead: f64 = row
                .iter()
                .enumerate()
                .filter(|&(kk, _)| kk != lead.owner)
                .map(|(_, b)| b.value())
                .product();
            let common =
                set.base[m * set.k + lead.owner] * lead.rho * sqrt_l / b_lead;
            (coefficients, rho_tilde_num as f64, common)
        }
    };

    Ok(SubchannelSpec {
        receiver: m,
        filter_power: filter.fourier_power,
        coefficients,
        common,
        beta: common.norm() / post_scale,
        post_scale,
        gamma2,
        sigma2,
        p_tilde,
    })
}

/// True gains over a tuple, slot-major: gains[ell * k * k + m * k + kk].
pub fn tuple_gains(seq: &GainSequence, tuple: &MatchedTuple) -> Vec<Complex64> {
    let k = seq.config.k;
    let mut out = Vec::with_capacity(tuple.slots.len() * k * k);
    for &slot in &tuple.slots {
        for m in 0..k {
            for kk in 0..k {
                out.push(seq.gain(slot, m, kk));
            }
        }
    }
    out
}

/// Signal accounting of one subchannel against the true gains of one tuple.
///
/// Residual coefficients go through Upsilon = D_true - Dhat directly (not as
/// a difference of filter outputs), so exact-representative gains produce
/// bitwise-zero mismatch and leakage.
pub fn sinr_decomposition(
    set: &TransmitVectorSet,
    spec: &SubchannelSpec,
    gains: &[Complex64],
    p_total: f64,
) -> SinrDecomposition {
    let k = set.k;
    let l = set.l as usize;
    debug_assert_eq!(gains.len(), l * k * k);
    let m = spec.receiver;
    let sqrt_l = f64::from(set.l).sqrt();

    let desired_power: f64 = spec
        .coefficients
        .iter()
        .map(|cf| (spec.beta * cf.a as f64).powi(2) * spec.p_tilde)
        .sum();

    let aligned: std::collections::HashSet<usize> =
        spec.coefficients.iter().map(|cf| cf.vector).collect();

    let mut mismatch_power = 0.0;
    let mut leakage_power = 0.0;
    for (idx, v) in set.vectors.iter().enumerate() {
        // (1/sqrt(L)) sum_ell w^{-p_f ell} Upsilon_{m,owner}[ell] v[ell].
        let mut resid = Complex64::new(0.0, 0.0);
        let ll = u64::from(set.l);
        let diff = (v.fourier_power + ll - spec.filter_power % ll) % ll;
        for ell in 0..l {
            let upsilon = gains[ell * k * k + m * k + v.owner]
                - set.quantized_gain_at(m, v.owner, ell);
            if upsilon != Complex64::new(0.0, 0.0) {
                resid += upsilon * v.rho * omega_pow(set.l, diff * ell as u64);
            }
        }
        let power = (resid / sqrt_l).norm_sqr() * spec.p_tilde;
        if aligned.contains(&idx) {
            mismatch_power += power;
        } else {
            leakage_power += power;
        }
    }

    let noise_power = 1.0;
    let nu = f64::from(set.quantizer.nu);
    SinrDecomposition {
        desired_power,
        mismatch_power,
        leakage_power,
        noise_power,
        empirical_sinr: desired_power / (mismatch_power + leakage_power + noise_power),
        theoretical_lower_bound: sinr_lower_bound(
            set.receiver_case(m),
            set.c,
            p_total,
            set.l,
            nu,
        ),
    }
}

/// Convenience wrapper: specs plus per-tuple decompositions in one call.
pub fn extract_subchannels(
    set: &TransmitVectorSet,
    seq: &GainSequence,
    tuple: &MatchedTuple,
    p_total: f64,
) -> Result<Vec<(SubchannelSpec, SinrDecomposition)>> {
    let gains = tuple_gains(seq, tuple);
    subchannel_specs(set, p_total)?
        .into_iter()
        .map(|spec| {
            let sinr = sinr_decomposition(set, &spec, &gains, p_total);
            Ok((spec, sinr))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::sample_within;
    use crate::rng::{stream_rng, StreamKind};
    use rand::Rng;

    /// Oracle: literally try n = 1, 2, ... in both forms and take the first
    /// that lands g * b in [1,2).
    fn normalizer_by_search(g: f64) -> Normalizer {
        for n in 1..1_000_000u64 {
            let plain = Normalizer { n, inverted: false };
            if (1.0..2.0).contains(&(g * plain.value())) {
                return plain;
            }
            let inv = Normalizer { n, inverted: true };
            if (1.0..2.0).contains(&(g * inv.value())) {
                return inv;
            }
        }
        panic!("no normalizer found for {g}");
    }

    #[test]
    fn normalizer_matches_exhaustive_search() {
        let mut rng = stream_rng(7, StreamKind::Bootstrap, [1, 0, 0, 0]);
        for _ in 0..4000 {
            // Log-uniform magnitudes across ten decades.
            let g = 10f64.powf(rng.gen_range(-5.0..5.0));
            assert_eq!(Normalizer::for_magnitude(g).unwrap(), normalizer_by_search(g), "g = {g}");
        }
        // Boundary-ish rationals.
        for &g in &[0.5, 1.0, 1.999, 2.0, 3.0, 4.0, 0.25, 2.0 / 3.0] {
            assert_eq!(Normalizer::for_magnitude(g).unwrap(), normalizer_by_search(g), "g = {g}");
        }
    }

    #[test]
    fn normalizer_known_values() {
        // Magnitude 5: the smallest n is 3 (5/3 in [1,2)), not 4.
        assert_eq!(
            Normalizer::for_magnitude(5.0).unwrap(),
            Normalizer { n: 3, inverted: true }
        );
        assert_eq!(
            Normalizer::for_magnitude(0.3).unwrap(),
            Normalizer { n: 4, inverted: false }
        );
        assert_eq!(Normalizer::for_magnitude(1.5).unwrap(), Normalizer::ONE);
        assert_eq!(
            Normalizer::for_magnitude(2.0).unwrap(),
            Normalizer { n: 2, inverted: true }
        );
        assert!(Normalizer::for_magnitude(0.0).is_err());
        assert!(Normalizer::for_magnitude(f64::INFINITY).is_err());
    }

    #[test]
    fn normalizer_spread_bounded_by_step_gain() {
        // When the running magnitude enters a step as prev in [1,2) and the
        // step multiplies by g, the chosen b satisfies
        // max{b, 1/b} <= 2 max{g, 1/g}.
        let mut rng = stream_rng(11, StreamKind::Bootstrap, [2, 0, 0, 0]);
        for _ in 0..4000 {
            let prev = rng.gen_range(1.0..2.0);
            let g = 10f64.powf(rng.gen_range(-3.0..3.0));
            let b = Normalizer::for_magnitude(prev * g).unwrap();
            assert!(
                b.magnitude_spread() <= 2.0 * g.max(1.0 / g) + 1e-9,
                "prev={prev} g={g} b={b:?}"
            );
        }
    }

    fn random_finite_cells<R: Rng>(qcfg: &QuantizerConfig, k: usize, rng: &mut R) -> Vec<QuantizedGain> {
        (0..k * k)
            .map(|_| QuantizedGain::Cell {
                ring: rng.gen_range(1..=qcfg.rings()),
                sector: rng.gen_range(0..qcfg.sectors()) as u32,
            })
            .collect()
    }

    fn two_user_set(seed: u64, nu: u32, l: u32) -> TransmitVectorSet {
        let qcfg = QuantizerConfig { nu, l };
        let pattern = MatchPattern::two_user(l).unwrap();
        let mut rng = stream_rng(seed, StreamKind::Bootstrap, [3, 0, 0, 0]);
        let cells = random_finite_cells(&qcfg, 2, &mut rng);
        build_transmit_vectors(&qcfg, &pattern, &cells).unwrap()
    }

    fn general_set(seed: u64, nu: u32, k: usize, i: u32) -> TransmitVectorSet {
        let pattern = MatchPattern::general(k, i).unwrap();
        let qcfg = QuantizerConfig { nu, l: pattern.l };
        let mut rng = stream_rng(seed, StreamKind::Bootstrap, [4, 0, 0, 0]);
        let cells = random_finite_cells(&qcfg, k, &mut rng);
        build_transmit_vectors(&qcfg, &pattern, &cells).unwrap()
    }

    #[test]
    fn two_user_vectors_satisfy_recursion_and_norms() {
        for seed in 0..20 {
            let set = two_user_set(seed, 8, 4);
            let l = set.l as usize;
            assert_eq!(set.vectors.len(), 2 * l - 1);
            let ratio = set.base[3] * set.base[0] / (set.base[2] * set.base[1]);
            let cross = set.base[0] / set.base[1];
            for v in &set.vectors {
                if v.owner == 0 {
                    assert!(
                        (1.0..2.0).contains(&v.norm_over_sqrt_l()),
                        "|rho| = {}",
                        v.norm_over_sqrt_l()
                    );
                    assert_eq!(v.fourier_power, (set.l as u64 - v.stream) % set.l as u64);
                    assert_eq!(v.normalizers.len(), v.stream as usize);
                    if v.stream > 0 {
                        let prev = set
                            .vector_by(0, (set.l as u64 - (v.stream - 1)) % set.l as u64)
                            .unwrap();
                        let b = v.normalizers.last().unwrap().value();
                        let expect = ratio * prev.rho * b;
                        assert!((v.rho - expect).norm() < 1e-12 * expect.norm());
                    }
                } else {
                    let v1 = set.vector_by(0, v.fourier_power).unwrap();
                    assert_eq!(v.rho, cross * v1.rho);
                    // |rho_2| within [1/c, 2c].
                    let r = v.norm_over_sqrt_l();
                    assert!(r >= 1.0 / set.c - 1e-12 && r <= 2.0 * set.c + 1e-12);
                }
            }
        }
    }

    #[test]
    fn general_vectors_norms_and_factorization_round_trip() {
        let set = general_set(3, 16, 2, 2);
        assert_eq!(set.l, 81);
        assert_eq!(set.vectors.len(), 2 * 16); // K * I^{K^2}
        for v in &set.vectors {
            let r = v.norm_over_sqrt_l();
            assert!(r >= 1.0 - 1e-12 && r < 2f64.powi(4), "|rho| = {r}");
            // Fourier power = sum of exponent-weighted rotations, and its
            // base-(I+1) digits recover the exponent matrix.
            let p: u64 = v
                .exponents
                .iter()
                .enumerate()
                .map(|(idx, &a)| u64::from(a) * set.rotation(idx / 2, idx % 2))
                .sum();
            assert_eq!(v.fourier_power, p);
            assert_eq!(exponents_from_power(p, 2, 2), v.exponents);
        }
        // All I^{K^2} powers are distinct per owner.
        let owner0: std::collections::BTreeSet<u64> = set
            .vectors
            .iter()
            .filter(|v| v.owner == 0)
            .map(|v| v.fourier_power)
            .collect();
        assert_eq!(owner0.len(), 16);

        // Degenerate I = 1: one all-ones vector per transmitter.
        let set1 = general_set(4, 8, 3, 1);
        assert_eq!(set1.vectors.len(), 3);
        for v in &set1.vectors {
            assert_eq!(v.exponents, vec![0; 9]);
            assert_eq!(v.fourier_power, 0);
            assert_eq!(v.rho, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn two_user_filters_follow_the_pairing_table() {
        let set = two_user_set(5, 8, 4);
        let l = set.l as u64;
        let rx1 = matched_filters(&set, 0);
        let rx2 = matched_filters(&set, 1);
        assert_eq!(rx1.len(), l as usize);
        assert_eq!(rx2.len(), l as usize - 1);
        for (j0, f) in rx1.iter().enumerate() {
            // Filter j aligns (1,j) and (2,j); the last is a singleton.
            let owners: Vec<usize> = f.aligned.iter().map(|&i| set.vectors[i].owner).collect();
            if j0 as u64 == l - 1 {
                assert_eq!(owners, vec![0]);
            } else {
                assert_eq!(owners, vec![0, 1]);
                for &idx in &f.aligned {
                    assert_eq!(set.vectors[idx].stream, j0 as u64);
                }
            }
        }
        for (j0, f) in rx2.iter().enumerate() {
            // Filter j aligns (1,j+1) and (2,j).
            let mut pairs: Vec<(usize, u64)> =
                f.aligned.iter().map(|&i| (set.vectors[i].owner, set.vectors[i].stream)).collect();
            pairs.sort_unstable();
            assert_eq!(pairs, vec![(0, j0 as u64 + 1), (1, j0 as u64)]);
        }
    }

    #[test]
    fn general_filters_partition_streams_per_receiver() {
        let set = general_set(9, 16, 2, 2);
        for receiver in 0..set.k {
            let filters = matched_filters(&set, receiver);
            assert!(filters.len() <= 81); // (I+1)^{K^2}
            let mut seen = vec![0u32; set.vectors.len()];
            for f in &filters {
                assert!(!f.aligned.is_empty());
                for &idx in &f.aligned {
                    seen[idx] += 1;
                    let v = &set.vectors[idx];
                    // Filter exponents = stream exponents bumped at
                    // (receiver, owner).
                    let mut bumped = v.exponents.clone();
                    bumped[receiver * set.k + v.owner] += 1;
                    assert_eq!(f.exponents, bumped);
                }
            }
            // Every stream aligns on exactly one filter.
            assert!(seen.iter().all(|&s| s == 1));
        }
    }

    #[test]
    fn subchannel_coefficients_are_consistent_integers() {
        // The exact-rational integers must reproduce the numeric inner
        // products: coefficient of stream k equals common * b_k, and
        // beta * a_k = |common * b_k|.
        for seed in 0..10 {
            for set in [two_user_set(100 + seed, 8, 4), general_set(200 + seed, 16, 2, 2)] {
                let sqrt_l = f64::from(set.l).sqrt();
                for spec in subchannel_specs(&set, 64.0).unwrap() {
                    assert!(spec.beta > 0.0);
                    assert!(spec.post_scale >= 1.0);
                    for cf in &spec.coefficients {
                        assert!(cf.a >= 1);
                        let v = &set.vectors[cf.vector];
                        let raw = set.base[spec.receiver * set.k + v.owner] * v.rho * sqrt_l;
                        let predicted = spec.beta * cf.a as f64;
                        assert!(
                            (raw.norm() - predicted).abs() < 1e-9 * predicted,
                            "seed {seed} rx {} filter {}: |raw| = {} vs beta*a = {}",
                            spec.receiver,
                            spec.filter_power,
                            raw.norm(),
                            predicted
                        );
                        // Phase of every participant matches the common gain
                        // (b_k is positive real).
                        let cross = raw * spec.common.conj();
                        assert!(cross.im.abs() < 1e-9 * cross.norm());
                    }
                }
            }
        }
    }

    #[test]
    fn two_user_coefficient_pattern() {
        let set = two_user_set(42, 8, 4);
        let specs = subchannel_specs(&set, 16.0).unwrap();
        for spec in specs {
            let mut by_owner: Vec<(usize, u64)> = spec
                .coefficients
                .iter()
                .map(|cf| (cf.owner, cf.a))
                .collect();
            by_owner.sort_unstable();
            if spec.receiver == 0 {
                // (1,1) pairs or the trailing singleton.
                assert!(by_owner == vec![(0, 1), (1, 1)] || by_owner == vec![(0, 1)]);
                assert_eq!(spec.post_scale, 1.0);
            } else {
                // (n,1) or (1,n) with n from the cross stream's normalizer.
                let v1 = spec
                    .coefficients
                    .iter()
                    .find(|cf| cf.owner == 0)
                    .map(|cf| &set.vectors[cf.vector])
                    .unwrap();
                let b = v1.normalizers.last().unwrap();
                let expect = if b.inverted {
                    vec![(0, 1), (1, b.n)]
                } else {
                    vec![(0, b.n), (1, 1)]
                };
                assert_eq!(by_owner, expect);
            }
        }
    }

    #[test]
    fn filter_outputs_match_specs_numerically() {
        // Brute-force the inner products (1/sqrt(L)) sum_ell conj(w^{p_f l})
        // hq_{m,k}[ell] v[ell] against each subchannel spec: aligned streams produce
        // common * b_k = beta * a_k (up to phase), others vanish.
        for set in [two_user_set(77, 8, 4), general_set(78, 16, 2, 2)] {
            let l = set.l as usize;
            let sqrt_l = f64::from(set.l).sqrt();
            for spec in subchannel_specs(&set, 4.0).unwrap() {
                let scale = spec.common.norm();
                for (idx, v) in set.vectors.iter().enumerate() {
                    let mut inner = Complex64::new(0.0, 0.0);
                    for ell in 0..l {
                        let hq = set.quantized_gain_at(spec.receiver, v.owner, ell);
                        let fwd = omega_pow(set.l, v.fourier_power * ell as u64);
                        let back = omega_pow(set.l, spec.filter_power * ell as u64).conj();
                        inner += back * hq * v.rho * fwd;
                    }
                    inner /= sqrt_l;
                    match spec.coefficients.iter().find(|cf| cf.vector == idx) {
                        Some(cf) => {
                            let expect = spec.beta * cf.a as f64;
                            assert!(
                                (inner.norm() - expect).abs() < 1e-9 * scale,
                                "aligned stream {idx}: |inner| = {} vs {expect}",
                                inner.norm()
                            );
                        }
                        None => assert!(
                            inner.norm() < 1e-9 * scale.max(1.0),
                            "stray stream {idx} leaks {}",
                            inner.norm()
                        ),
                    }
                }
            }
        }
    }

    #[test]
    fn decomposition_is_bitwise_exact_on_representative_gains() {
        for set in [two_user_set(31, 64, 4), general_set(32, 64, 2, 2)] {
            let l = set.l as usize;
            let k = set.k;
            // True gains exactly equal to the rotated representatives.
            let mut gains = vec![Complex64::new(0.0, 0.0); l * k * k];
            for ell in 0..l {
                for m in 0..k {
                    for kk in 0..k {
                        gains[ell * k * k + m * k + kk] = set.quantized_gain_at(m, kk, ell);
                    }
                }
            }
            for spec in subchannel_specs(&set, 100.0).unwrap() {
                let d = sinr_decomposition(&set, &spec, &gains, 100.0);
                assert_eq!(d.mismatch_power, 0.0);
                assert_eq!(d.leakage_power, 0.0);
                assert!(d.desired_power > 0.0);
                assert_eq!(d.empirical_sinr, d.desired_power);
                assert_eq!(d.noise_power, 1.0);
            }
        }
    }

    #[test]
    fn empirical_sinr_clears_the_lower_bound_within_cells() {
        // True gains sampled anywhere inside the matched cells must keep
        // every subchannel above its worst-case bound.
        let mut rng = stream_rng(55, StreamKind::Bootstrap, [6, 0, 0, 0]);
        for trial in 0..15 {
            let set = two_user_set(300 + trial, 64, 4);
            let l = set.l as usize;
            let mut gains = vec![Complex64::new(0.0, 0.0); l * 4];
            for ell in 0..l {
                for m in 0..2 {
                    for kk in 0..2 {
                        let cell = rotate(
                            &set.quantizer,
                            set.base_cells[m * 2 + kk],
                            (ell as u64 * set.rotation(m, kk)) as i64,
                        );
                        gains[ell * 4 + m * 2 + kk] =
                            sample_within(&set.quantizer, cell, &mut rng).unwrap();
                    }
                }
            }
            for spec in subchannel_specs(&set, 100.0).unwrap() {
                let d = sinr_decomposition(&set, &spec, &gains, 100.0);
                assert!(
                    d.empirical_sinr >= d.theoretical_lower_bound,
                    "trial {trial} rx {} filter {}: {} < {}",
                    spec.receiver,
                    spec.filter_power,
                    d.empirical_sinr,
                    d.theoretical_lower_bound
                );
            }
        }
    }

    #[test]
    fn bound_and_power_known_values() {
        assert!((sinr_lower_bound(ReceiverCase::TwoUserRx1, 1.0, 16.0, 4, f64::INFINITY) - 4.0).abs() < 1e-12);
        assert!((sinr_lower_bound(ReceiverCase::TwoUserRx2, 1.0, 16.0, 4, f64::INFINITY) - 1.0).abs() < 1e-12);
        assert!(
            (sinr_lower_bound(ReceiverCase::General { k: 2 }, 1.0, 655360.0, 81, 256.0) - 10.0)
                .abs()
                < 1e-12
        );
        assert!((per_symbol_power(AlignMode::TwoUser, 2, 4, 2.0, 400.0) - 6.25).abs() < 1e-12);
        assert!(
            (per_symbol_power(AlignMode::General { i: 2 }, 2, 81, 9.9, 256.0 * 81.0) - 1.0).abs()
                < 1e-12
        );
        // Finite nu shrinks the two-user bound.
        let strict = sinr_lower_bound(ReceiverCase::TwoUserRx1, 1.0, 16.0, 4, 64.0);
        assert!(strict < 4.0 && strict > 0.0);
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        let qcfg = QuantizerConfig { nu: 4, l: 4 };
        let pattern = MatchPattern::two_user(4).unwrap();
        // Infinity cell in the base matrix.
        let mut cells = vec![
            QuantizedGain::Cell { ring: 1, sector: 0 };
            4
        ];
        cells[2] = QuantizedGain::Infinity;
        assert!(build_transmit_vectors(&qcfg, &pattern, &cells).is_err());
        // Wrong matrix size.
        let three = vec![QuantizedGain::Cell { ring: 1, sector: 0 }; 3];
        assert!(build_transmit_vectors(&qcfg, &pattern, &three).is_err());
        // Quantizer / pattern L mismatch.
        let qcfg2 = QuantizerConfig { nu: 4, l: 8 };
        let four = vec![QuantizedGain::Cell { ring: 1, sector: 0 }; 4];
        assert!(build_transmit_vectors(&qcfg2, &pattern, &four).is_err());
    }

    #[test]
    fn extract_subchannels_runs_end_to_end_on_a_real_match() {
        use crate::fading::{FadingConfig, Process};
        use crate::matcher::match_tuples;
        // Tiny quantizer so matches happen in a short block.
        let qcfg = QuantizerConfig { nu: 2, l: 2 };
        let pattern = MatchPattern::two_user(2).unwrap();
        let cfg = FadingConfig { k: 2, t: 4000, process: Process::Iid, seed: 12 };
        let seq = crate::fading::generate(&cfg).unwrap();
        let result = match_tuples(&seq, &qcfg, &pattern).unwrap();
        assert!(!result.tuples.is_empty(), "expected at least one tuple");
        let tuple = &result.tuples[0];
        let set = build_transmit_vectors(&qcfg, &pattern, &tuple.base).unwrap();
        let subs = extract_subchannels(&set, &seq, tuple, 10.0).unwrap();
        assert_eq!(subs.len(), 2 * 2 - 1); // L + (L-1) subchannels
        for (spec, d) in &subs {
            assert!(d.desired_power > 0.0);
            assert!(d.mismatch_power >= 0.0 && d.leakage_power >= 0.0);
            assert!(!spec.coefficients.is_empty());
        }
    }
}
