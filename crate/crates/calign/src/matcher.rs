//! Ergodic gain matching.
//!
//! The block of T slots is split into L equal subblocks. A matched tuple is
//! a choice of one slot per subblock, (t_1, ..., t_L), whose quantized gain
//! matrices repeat the subblock-1 matrix up to known phase rotations:
//!
//!   qhat_{m,k}[t_l] = omega_L^{(l-1) d_{m,k}} * qhat_{m,k}[t_1],
//!
//! where the integer rotation pattern d_{m,k} depends on the scheme:
//!
//! * two-user: d_{2,1} = 1 and every other entry 0 — only the cross gain
//!   from transmitter 1 to receiver 2 advances in phase;
//! * general K with power level I: d_{m,k} = (I+1)^{(k-1)K + m - 1} over
//!   L = (I+1)^{K^2} subblocks, which makes every entry's rotation exponent
//!   a distinct digit position in base I+1 (the uniqueness the aligner's
//!   factorization relies on).
//!
//! Rotations act on cells exactly (sector index arithmetic), so matching is
//! exact integer cell comparison — no floating-point tolerance anywhere.
//! The greedy matcher walks subblock 1 in time order and takes the earliest
//! unused slot of the required class in each later subblock, achieving the
//! per-class minimum across subblocks.
//!
//! Typicality is checked with the whole-block empirical distribution as the
//! reference: every class count in every subblock must reach (1 - eta) times
//! its share p_hat * T / L. Counts are exact integers; no fractional-slot
//! smoothing is applied.

use std::collections::HashMap;
use std::collections::VecDeque;

use crate::error::Error;
use crate::fading::GainSequence;
use crate::quantizer::{quantize, rotate, QuantizedGain, QuantizerConfig};
use crate::Result;

/// Which rotation pattern the tuple search enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PatternKind {
    TwoUser,
    General { i: u32 },
}

/// Rotation pattern over the K x K links plus the subblock count L.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchPattern {
    pub k: usize,
    pub kind: PatternKind,
    pub l: u32,
    /// Rotation exponents d_{m,k}, row-major: d[m * k + kk].
    pub d: Vec<u64>,
}

impl MatchPattern {
    /// Two-user pattern: K = 2, any L >= 1 (L = 1 degenerates to per-slot
    /// tuples and is allowed for testing; the scheme itself uses L >= 2).
    pub fn two_user(l: u32) -> Result<Self> {
        if l < 1 {
            return Err(Error::InvalidConfig("two_user needs l >= 1".into()));
        }
        Ok(MatchPattern { k: 2, kind: PatternKind::TwoUser, l, d: vec![0, 0, 1, 0] })
    }

    /// General-K pattern at power level I: exponents are distinct powers of
    /// I+1 and L = (I+1)^(K^2).
    pub fn general(k: usize, i: u32) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig("general pattern needs k >= 2".into()));
        }
        if i < 1 {
            return Err(Error::InvalidConfig("general pattern needs i >= 1".into()));
        }
        let base = u64::from(i) + 1;
        let bits = (k * k) as u32;
        let l = base
            .checked_pow(bits)
            .filter(|&l| l <= u64::from(u32::MAX))
            .ok_or_else(|| {
                Error::InvalidConfig(format!("(i+1)^(k^2) = {base}^{bits} exceeds u32"))
            })?;
        let mut d = vec![0u64; k * k];
        for col in 0..k {
            for m in 0..k {
                d[m * k + col] = base.pow((col * k + m) as u32);
            }
        }
        Ok(MatchPattern { k, kind: PatternKind::General { i }, l: l as u32, d })
    }

    /// Rotation exponent for link (m, kk), 0-based.
    #[inline]
    pub fn exponent(&self, m: usize, kk: usize) -> u64 {
        self.d[m * self.k + kk]
    }
}

/// One matched tuple: the chosen slot per subblock and the quantized base
/// matrix at t_1 (row-major, all entries finite).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedTuple {
    pub slots: Vec<usize>,
    pub base: Vec<QuantizedGain>,
}

/// Outcome of a matching pass.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub tuples: Vec<MatchedTuple>,
    /// (#tuples) * L / T against the original block length.
    pub matched_fraction: f64,
    /// Slots actually considered: T rounded down to a multiple of L.
    pub t_used: usize,
}

/// Typicality check outcome.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TypicalityReport {
    pub pass: bool,
    pub eta: f64,
    pub t_used: usize,
    pub subblock_len: usize,
    /// Number of distinct quantized matrices observed.
    pub class_count: usize,
    /// min over classes and subblocks of count / (p_hat * T / L); pass
    /// means this is >= 1 - eta.
    pub min_ratio: f64,
}

fn quantize_matrix(
    seq: &GainSequence,
    qcfg: &QuantizerConfig,
    t: usize,
    k: usize,
) -> Vec<QuantizedGain> {
    let mut cells = Vec::with_capacity(k * k);
    for m in 0..k {
        for kk in 0..k {
            cells.push(quantize(qcfg, seq.gain(t, m, kk)));
        }
    }
    cells
}

/// Checks empirical typicality of the quantized matrix process against its
/// own whole-block distribution.
pub fn check_typicality(
    seq: &GainSequence,
    qcfg: &QuantizerConfig,
    l: u32,
    eta: f64,
) -> Result<TypicalityReport> {
    qcfg.validate()?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("eta must lie in [0,1], got {eta}")));
    }
    let k = seq.config.k;
    let l = l as usize;
    let t_used = seq.len() - seq.len() % l;
    if t_used == 0 {
        return Err(Error::Domain("block shorter than the subblock count".into()));
    }
    let sub_len = t_used / l;
    let mut counts: HashMap<Vec<QuantizedGain>, Vec<u32>> = HashMap::new();
    for t in 0..t_used {
        let class = quantize_matrix(seq, qcfg, t, k);
        counts.entry(class).or_insert_with(|| vec![0; l])[t / sub_len] += 1;
    }
    let mut min_ratio = f64::INFINITY;
    for per_block in counts.values() {
        let total: u32 = per_block.iter().sum();
        let share = f64::from(total) / l as f64;
        for &c in per_block {
            min_ratio = min_ratio.min(f64::from(c) / share);
        }
    }
    Ok(TypicalityReport {
        pass: min_ratio >= 1.0 - eta,
        eta,
        t_used,
        subblock_len: sub_len,
        class_count: counts.len(),
        min_ratio,
    })
}

/// Greedy first-fit tuple matching (`match` is a keyword, hence the name).
///
/// Walks subblock 1 in time order; for each slot whose matrix is fully
/// finite, takes the earliest unused slot of the rotated class in each later
/// subblock. A tuple is emitted only when every subblock can supply one, and
/// failed probes consume nothing.
pub fn match_tuples(
    seq: &GainSequence,
    qcfg: &QuantizerConfig,
    pattern: &MatchPattern,
) -> Result<MatchResult> {
    qcfg.validate()?;
    if seq.config.k != pattern.k {
        return Err(Error::Domain(format!(
            "sequence has k = {}, pattern expects {}",
            seq.config.k, pattern.k
        )));
    }
    if pattern.l != qcfg.l {
        return Err(Error::Domain(format!(
            "pattern l = {} does not match quantizer l = {}",
            pattern.l, qcfg.l
        )));
    }
    let k = pattern.k;
    let l = pattern.l as usize;
    let t = seq.len();
    let t_used = t - t % l;
    if t_used == 0 {
        return Err(Error::Domain("block shorter than the subblock count".into()));
    }
    let sub_len = t_used / l;

    // Slot queues per class for subblocks 2..L, earliest first.
    let mut queues: Vec<HashMap<Vec<QuantizedGain>, VecDeque<usize>>> =
        (0..l.saturating_sub(1)).map(|_| HashMap::new()).collect();
    for (sub, queue) in queues.iter_mut().enumerate() {
        let offset = (sub + 1) * sub_len;
        for slot in offset..offset + sub_len {
            let class = quantize_matrix(seq, qcfg, slot, k);
            queue.entry(class).or_default().push_back(slot);
        }
    }

    let mut tuples = Vec::new();
    let mut target = vec![QuantizedGain::Infinity; k * k];
    'outer: for t1 in 0..sub_len {
        let base = quantize_matrix(seq, qcfg, t1, k);
        if base.iter().any(|c| !c.is_finite()) {
            continue;
        }
        // Probe every later subblock before consuming anything.
        for (sub, queue) in queues.iter().enumerate() {
            let step = (sub + 1) as u64;
            for (idx, &cell) in base.iter().enumerate() {
                let (m, kk) = (idx / k, idx % k);
                target[idx] =
                    rotate(qcfg, cell, (step * pattern.exponent(m, kk)) as i64);
            }
            match queue.get(&target) {
                Some(q) if !q.is_empty() => {}
                _ => continue 'outer,
            }
        }
        let mut slots = Vec::with_capacity(l);
        slots.push(t1);
        for (sub, queue) in queues.iter_mut().enumerate() {
            let step = (sub + 1) as u64;
            for (idx, &cell) in base.iter().enumerate() {
                let (m, kk) = (idx / k, idx % k);
                target[idx] =
                    rotate(qcfg, cell, (step * pattern.exponent(m, kk)) as i64);
            }
            slots.push(queue.get_mut(&target).unwrap().pop_front().unwrap());
        }
        tuples.push(MatchedTuple { slots, base });
    }

    let matched_fraction = tuples.len() as f64 * l as f64 / t as f64;
    Ok(MatchResult { tuples, matched_fraction, t_used })
}

/// Independent post-hoc verifier: re-quantizes every slot of every tuple and
/// checks the exact rotation pattern, subblock placement, finiteness of the
/// base matrix, and pairwise slot disjointness. Used by tests and by the
/// acceptance suite; deliberately shares no state with the matcher beyond
/// the quantizer itself.
pub fn verify_tuples(
    seq: &GainSequence,
    qcfg: &QuantizerConfig,
    pattern: &MatchPattern,
    tuples: &[MatchedTuple],
) -> Result<()> {
    let k = pattern.k;
    let l = pattern.l as usize;
    let t_used = seq.len() - seq.len() % l;
    let sub_len = t_used / l;
    let mut seen = std::collections::HashSet::new();
    for (id, tuple) in tuples.iter().enumerate() {
        if tuple.slots.len() != l || tuple.base.len() != k * k {
            return Err(Error::Domain(format!("tuple {id}: wrong arity")));
        }
        if tuple.base.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("tuple {id}: infinite base cell")));
        }
        for (sub, &slot) in tuple.slots.iter().enumerate() {
            if slot / sub_len != sub || slot >= t_used {
                return Err(Error::Domain(format!(
                    "tuple {id}: slot {slot} outside subblock {sub}"
                )));
            }
            if !seen.insert(slot) {
                return Err(Error::Domain(format!("tuple {id}: slot {slot} reused")));
            }
            for m in 0..k {
                for kk in 0..k {
                    let expect = rotate(
                        qcfg,
                        tuple.base[m * k + kk],
                        (sub as u64 * pattern.exponent(m, kk)) as i64,
                    );
                    let got = quantize(qcfg, seq.gain(slot, m, kk));
                    if got != expect {
                        return Err(Error::Domain(format!(
                            "tuple {id}: link ({m},{kk}) at slot {slot} is {got}, expected {expect}"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}
