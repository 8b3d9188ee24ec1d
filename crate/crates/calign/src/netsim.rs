//! End-to-end network experiments: fading → quantize → match → align →
//! encode → channel → filter → decode → invert, over a single layer or a
//! concatenation of `D` layers with independent fading.
//!
//! One trial of a `D`-layer experiment works as follows. Every layer draws
//! its own fading block, quantizes it, and collects matched tuples (either
//! by running the matcher or by direct synthesis at fine quantizers where
//! the matching probability is negligible). Tuples are grouped by their
//! quantized base matrix; each group gets its own transmit-vector family,
//! matched filters, and integer subchannel coefficients, and carries one
//! lattice codeword per data stream across its tuples. Receivers decode one
//! integer equation per subchannel; each relay forwards exactly as many
//! decoded equation values as its next-layer transmitter has data streams,
//! chosen as a deterministic full-rank selection, so message sizes never
//! grow with depth and the alphabet Z_q is preserved end to end. The
//! destination receives the last layer's values over lossless bit pipes and
//! inverts the layers' (invertible) linear systems in reverse order.
//!
//! Two reporting conventions matter below:
//!
//! - The per-layer *offered* rate counts the symbols the layer's own
//!   matched tuples can carry; the end-to-end rate is the minimum over
//!   layers, which is also the budget the payload pipeline actually uses
//!   (every layer transports `min_d N_d` tuples worth of symbols).
//! - A failed typicality check is recorded as an outage but does not abort
//!   the trial: at desk-scale block lengths the per-subblock exact-count
//!   surrogate fails for almost every block even though every matched tuple
//!   is individually exact under the rotation verifier, so aborting would
//!   make every desk-scale experiment degenerate. Decode errors are counted
//!   from the actual pipeline instead, and the outage fraction is reported
//!   alongside.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aligner::{
    build_transmit_vectors, omega_pow, sinr_decomposition, subchannel_specs, tuple_gains,
    SubchannelSpec, TransmitVectorSet,
};
use crate::bounds;
use crate::error::Error;
use crate::fading::{complex_gaussian, generate_at, generate_noise, FadingConfig, Process};
use crate::function_system::{
    evaluate_rows, inv_mod, is_prime, mul_mod, recover_messages, smallest_prime_above,
    target_equations, EquationSystem,
};
use crate::lattice_codec::{decode_equation, draw_dither, encode, CodecConfig, SubchannelModel};
use crate::matcher::{check_typicality, match_tuples, MatchPattern};
use crate::quantizer::{quantize, rotate, sample_within, QuantizedGain, QuantizerConfig};
use crate::rng::{stream_rng, StreamKind};
use crate::Result;

/// Which alignment scheme the experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SchemeMode {
    /// K = 2 recursion over L subblocks: 2L-1 data streams.
    TwoUser { l: u32 },
    /// Monomial construction with per-link exponents below I:
    /// K * I^(K^2) streams over L = (I+1)^(K^2) subblocks.
    General { i: u32 },
}

/// How the physical channel behaves during payload transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChannelMode {
    /// True fading gains plus unit-variance receiver noise.
    Noisy,
    /// Gains overridden by their cell representatives and zero noise: the
    /// exact integer pipeline, end to end.
    NoiselessExact,
}

/// Where a layer's matched tuples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TupleSource {
    /// Run the matcher on the drawn fading block.
    Matched,
    /// Synthesize `count` tuples per layer directly: base cells drawn from
    /// the fading distribution conditioned on finiteness, slot gains
    /// sampled within the rotated cells. Used where the per-slot matching
    /// probability is negligible (fine quantizers, long patterns).
    Synthesized { count: usize },
}

/// Full description of one experiment. Everything an experiment emits is a
/// deterministic function of this configuration (including `seed`).
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    /// Transmitters / receivers per layer.
    pub k: usize,
    /// Network depth D >= 1.
    pub layers: usize,
    /// Per-transmitter average power constraint.
    pub p: f64,
    /// Block length per layer, in channel uses.
    pub t: usize,
    pub mode: SchemeMode,
    /// Quantizer fineness.
    pub nu: u32,
    /// Typicality slack in [0, 1].
    pub eta: f64,
    /// Pinned modulus (must be prime). `None` applies the policy per trial:
    /// the smallest prime exceeding 2 max |a_k| over every subchannel of
    /// every layer in the trial, so all layers of a trial share one
    /// alphabet.
    pub q: Option<u64>,
    pub seed: u64,
    pub trials: u64,
    pub channel: ChannelMode,
    pub source: TupleSource,
    /// Fading process (iid Rayleigh unless stated otherwise).
    pub process: Process,
}

impl ExperimentConfig {
    /// Subblock count L implied by the mode.
    pub fn l(&self) -> Result<u32> {
        Ok(self.pattern()?.l)
    }

    /// The matching pattern implied by the mode.
    pub fn pattern(&self) -> Result<MatchPattern> {
        match self.mode {
            SchemeMode::TwoUser { l } => {
                if self.k != 2 {
                    return Err(Error::InvalidConfig(format!(
                        "two-user mode needs k = 2, got {}",
                        self.k
                    )));
                }
                MatchPattern::two_user(l)
            }
            SchemeMode::General { i } => MatchPattern::general(self.k, i),
        }
    }

    /// Data streams per transmitter: [L, L-1] for two-user, I^(K^2) each in
    /// general mode. Index = transmitter.
    pub fn stream_counts(&self) -> Result<Vec<usize>> {
        match self.mode {
            SchemeMode::TwoUser { l } => Ok(vec![l as usize, l as usize - 1]),
            SchemeMode::General { i } => {
                let per = (i as usize).pow((self.k * self.k) as u32);
                Ok(vec![per; self.k])
            }
        }
    }

    /// Total data streams per matched tuple, summed over transmitters.
    pub fn total_streams(&self) -> Result<usize> {
        Ok(self.stream_counts()?.iter().sum())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("k must be >= 2, got {}", self.k)));
        }
        if self.layers < 1 {
            return Err(Error::InvalidConfig("layers must be >= 1".into()));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidConfig(format!("p must be positive, got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidConfig(format!("eta must lie in [0,1], got {}", self.eta)));
        }
        if self.trials < 1 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        let pattern = self.pattern()?;
        if let SchemeMode::TwoUser { l } = self.mode {
            if l < 2 {
                return Err(Error::InvalidConfig("two-user mode needs l >= 2".into()));
            }
        }
        QuantizerConfig::new(self.nu, pattern.l)?;
        let l = pattern.l as usize;
        if self.t < l {
            return Err(Error::InvalidConfig(format!(
                "block length {} shorter than the subblock count {l}",
                self.t
            )));
        }
        if let TupleSource::Synthesized { count } = self.source {
            if count == 0 {
                return Err(Error::InvalidConfig("synthesized tuple count must be >= 1".into()));
            }
            if count * l > self.t {
                return Err(Error::InvalidConfig(format!(
                    "{count} synthesized tuples need {} slots but t = {}",
                    count * l,
                    self.t
                )));
            }
        }
        if let Some(q) = self.q {
            if !is_prime(q) {
                return Err(Error::InvalidConfig(format!("pinned modulus {q} is not prime")));
            }
        }
        Ok(())
    }
}

/// Aggregate of empirical subchannel SINRs, with the worst margin against
/// the matching theoretical lower bound. All zero when `count` is zero.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SinrSummary {
    pub count: u64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// min over subchannels of (empirical SINR - lower bound).
    pub min_margin: f64,
}

/// Per-layer outcome of an experiment, averaged over trials.
#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    /// 0-based layer index (layer 0 is fed by the sources).
    pub layer: usize,
    pub trials: u64,
    /// Fraction of trials whose typicality check failed. Recorded, not
    /// fatal; see the module docs.
    pub outage_fraction: f64,
    /// Mean matched fraction (#tuples * L / T).
    pub matched_fraction: f64,
    /// Mean usable matched tuples per trial.
    pub mean_tuples: f64,
    /// Fraction of tuple groups dropped because the modulus could not carry
    /// their coefficients or no full-rank forwarding selection existed.
    pub dropped_group_fraction: f64,
    /// Data streams per matched tuple summed over transmitters (2L-1 in
    /// two-user mode).
    pub streams_per_tuple: usize,
    /// Closed-form achievable sum rate at this configuration (clamped at
    /// zero; desk-scale parameters usually clamp).
    pub rate_formula: f64,
    /// Mean offered computation sum rate, bits per channel use.
    pub empirical_rate: f64,
    /// 95% bootstrap interval on the offered sum rate over trials.
    pub rate_ci: [f64; 2],
    /// Mean offered per-transmitter rates; unequal in two-user mode (L vs
    /// L-1 streams) and deliberately not equalized.
    pub per_transmitter_rates: Vec<f64>,
    pub sinr: SinrSummary,
    /// 95% bootstrap interval on the per-trial mean empirical SINR.
    pub sinr_ci: [f64; 2],
    /// Wrong decoded equation rows / total decoded rows.
    pub equation_error_rate: f64,
    /// Fraction of trials in which at least one row decoded wrong.
    pub layer_error_rate: f64,
    /// Mean modulus in use (constant when pinned).
    pub mean_q: f64,
}

/// Whole-network outcome.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkReport {
    pub config: ExperimentConfig,
    pub layers: Vec<LayerReport>,
    /// Mean over trials of the minimum per-layer offered rate; in the
    /// symmetric construction this is what the destination can take end to
    /// end.
    pub end_to_end_rate: f64,
    /// Fraction of trials where the destination failed to recover every
    /// source message exactly.
    pub end_to_end_error_rate: f64,
    /// Sum of per-layer error rates: the union-bound reference.
    pub per_layer_error_sum: f64,
    /// Trial-wise check that every end-to-end failure coincided with at
    /// least one layer failure (no noise accumulation pathway exists
    /// outside the layers themselves).
    pub union_bound_satisfied: bool,
    /// Cut-set upper bound K log2(1 + 4K^2 P) for context.
    pub cutset_upper: f64,
    /// Capacity lower bound K log2 P - 7K^3 (clamped) for context.
    pub capacity_lower: f64,
}

/// Synthesizes one matched tuple: finite base cells drawn from the fading
/// distribution, slot gains sampled within the rotated cells. The returned
/// gains are slot-major (`gains[ell * k * k + m * k + kk]`), exactly the
/// layout the alignment decomposition consumes.
pub fn synthesize_tuple<R: Rng>(
    qcfg: &QuantizerConfig,
    pattern: &MatchPattern,
    rng: &mut R,
) -> Result<(Vec<QuantizedGain>, Vec<Complex64>)> {
    let k = pattern.k;
    let l = pattern.l as usize;
    let mut cells = Vec::with_capacity(k * k);
    for _ in 0..k * k {
        loop {
            let cell = quantize(qcfg, complex_gaussian(rng));
            if cell.is_finite() {
                cells.push(cell);
                break;
            }
        }
    }
    let mut gains = Vec::with_capacity(l * k * k);
    for ell in 0..l {
        for m in 0..k {
            for kk in 0..k {
                let steps = (ell as u64).wrapping_mul(pattern.exponent(m, kk)) as i64;
                let cell = rotate(qcfg, cells[m * k + kk], steps);
                gains.push(sample_within(qcfg, cell, rng)?);
            }
        }
    }
    Ok((cells, gains))
}

/// One tuple group before modulus selection: the vector family for its base
/// matrix, all subchannel specs, and the per-tuple channel gains (true or
/// representative-overridden, per the channel mode).
struct RawGroup {
    set: TransmitVectorSet,
    specs: Vec<SubchannelSpec>,
    /// Per tuple: slot-major gains, length L * K * K.
    gains: Vec<Vec<Complex64>>,
    /// Per tuple: the L physical slot indices (noise indexing).
    slots: Vec<Vec<usize>>,
    p_tilde: f64,
}

/// A group after selecting the forwarded rows: `specs` holds exactly
/// sum_m stream_count(m) subchannels whose stacked system `sys` is square
/// and invertible, with stream_count(m) rows at receiver m.
struct BuiltGroup {
    set: TransmitVectorSet,
    specs: Vec<SubchannelSpec>,
    sys: EquationSystem,
    gains: Vec<Vec<Complex64>>,
    slots: Vec<Vec<usize>>,
    p_tilde: f64,
}

struct LayerBuilt {
    groups: Vec<BuiltGroup>,
    matched_fraction: f64,
    outage: bool,
    /// Usable tuples (sum over surviving groups).
    tuples: usize,
    dropped_groups: usize,
    total_groups: usize,
}

/// Per-(trial, layer) statistics carried back to the accumulators.
struct TrialLayerStats {
    outage: bool,
    matched_fraction: f64,
    tuples: usize,
    dropped_groups: usize,
    total_groups: usize,
    rate: f64,
    per_tx_rate: Vec<f64>,
    rows_total: u64,
    rows_wrong: u64,
    layer_error: bool,
    sinr_count: u64,
    sinr_sum: f64,
    sinr_min: f64,
    sinr_max: f64,
    min_margin: f64,
    q: u64,
}

fn resolve_gains(
    set: &TransmitVectorSet,
    true_gains: Vec<Complex64>,
    channel: ChannelMode,
) -> Vec<Complex64> {
    match channel {
        ChannelMode::Noisy => true_gains,
        ChannelMode::NoiselessExact => {
            let k = set.k;
            let l = set.l as usize;
            let mut out = Vec::with_capacity(l * k * k);
            for ell in 0..l {
                for m in 0..k {
                    for kk in 0..k {
                        out.push(set.quantized_gain_at(m, kk, ell));
                    }
                }
            }
            out
        }
    }
}

/// Collects one layer's tuple groups for one trial (everything before the
/// modulus is known).
fn gather_layer(
    cfg: &ExperimentConfig,
    pattern: &MatchPattern,
    qcfg: &QuantizerConfig,
    trial: u64,
    layer: u64,
) -> Result<(Vec<RawGroup>, f64, bool)> {
    let k = cfg.k;
    let l = pattern.l as usize;
    // (base cells) -> (per-tuple gains, per-tuple slots), in canonical
    // (BTreeMap) group order.
    let mut grouped: BTreeMap<Vec<QuantizedGain>, (Vec<Vec<Complex64>>, Vec<Vec<usize>>)> =
        BTreeMap::new();
    let (matched_fraction, outage) = match cfg.source {
        TupleSource::Matched => {
            let fcfg =
                FadingConfig { k, t: cfg.t, process: cfg.process, seed: cfg.seed };
            let seq = generate_at(&fcfg, trial, layer)?;
            let typicality = check_typicality(&seq, qcfg, pattern.l, cfg.eta)?;
            let result = match_tuples(&seq, qcfg, pattern)?;
            for tuple in &result.tuples {
                let entry = grouped.entry(tuple.base.clone()).or_default();
                entry.0.push(tuple_gains(&seq, tuple));
                entry.1.push(tuple.slots.clone());
            }
            (result.matched_fraction, !typicality.pass)
        }
        TupleSource::Synthesized { count } => {
            let mut rng = stream_rng(cfg.seed, StreamKind::Synth, [trial, layer, 0, 0]);
            for i in 0..count {
                let (cells, gains) = synthesize_tuple(qcfg, pattern, &mut rng)?;
                let slots: Vec<usize> = (0..l).map(|ell| i * l + ell).collect();
                let entry = grouped.entry(cells).or_default();
                entry.0.push(gains);
                entry.1.push(slots);
            }
            ((count * l) as f64 / cfg.t as f64, false)
        }
    };

    let mut groups = Vec::with_capacity(grouped.len());
    for (cells, (gains, slots)) in grouped {
        let set = build_transmit_vectors(qcfg, pattern, &cells)?;
        let specs = subchannel_specs(&set, cfg.p)?;
        let p_tilde = specs
            .first()
            .map(|s| s.p_tilde)
            .ok_or_else(|| Error::Domain("group produced no subchannels".into()))?;
        let gains = gains
            .into_iter()
            .map(|g| resolve_gains(&set, g, cfg.channel))
            .collect();
        groups.push(RawGroup { set, specs, gains, slots, p_tilde });
    }
    Ok((groups, matched_fraction, outage))
}

/// Picks, per receiver, exactly as many rows as its next-layer transmitter
/// has streams, such that the stacked system over Z_q has full column rank
/// on every stream. Greedy in canonical spec order with incremental
/// elimination; returns the selected spec indices or `None` when no such
/// selection exists under the budgets.
fn select_forwarded_rows(
    set: &TransmitVectorSet,
    specs: &[SubchannelSpec],
    stream_counts: &[usize],
    q: u64,
) -> Option<Vec<usize>> {
    let n_cols = set.vectors.len();
    let mut keys: Vec<(usize, usize)> =
        set.vectors.iter().enumerate().map(|(idx, v)| (v.owner, idx)).collect();
    keys.sort_unstable();
    let col_of = |owner: usize, vector: usize| -> usize {
        keys.binary_search(&(owner, vector)).expect("stream key present")
    };

    let mut budgets = stream_counts.to_vec();
    // Echelon basis: lead column -> normalized row.
    let mut basis: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut selected = Vec::with_capacity(n_cols);
    for (idx, spec) in specs.iter().enumerate() {
        if selected.len() == n_cols {
            break;
        }
        if budgets[spec.receiver] == 0 {
            continue;
        }
        let mut row = vec![0u64; n_cols];
        let mut carried = true;
        for c in &spec.coefficients {
            let a = c.a % q;
            if a == 0 {
                carried = false;
                break;
            }
            row[col_of(c.owner, c.vector)] = a;
        }
        if !carried {
            // The modulus collapses a coefficient; the whole group is
            // rejected (the caller drops it) to keep semantics honest.
            return None;
        }
        // Reduce against the basis.
        let mut col = 0;
        while col < n_cols {
            if row[col] != 0 {
                if let Some(b) = basis.get(&col) {
                    let f = row[col];
                    for (dst, &src) in row.iter_mut().zip(b).skip(col) {
                        let sub = mul_mod(f, src, q);
                        *dst = (*dst + q - sub) % q;
                    }
                } else {
                    break;
                }
            }
            col += 1;
        }
        if col == n_cols {
            continue; // dependent on already-selected rows
        }
        let inv = inv_mod(row[col], q);
        for v in row.iter_mut().skip(col) {
            *v = mul_mod(*v, inv, q);
        }
        basis.insert(col, row);
        budgets[spec.receiver] -= 1;
        selected.push(idx);
    }
    (selected.len() == n_cols).then_some(selected)
}

/// Finalizes a layer's groups once the trial modulus is known.
fn finish_layer(
    raw: Vec<RawGroup>,
    matched_fraction: f64,
    outage: bool,
    stream_counts: &[usize],
    q: u64,
) -> Result<LayerBuilt> {
    let total_groups = raw.len();
    let mut groups = Vec::with_capacity(total_groups);
    let mut dropped = 0usize;
    for g in raw {
        let Some(chosen) = select_forwarded_rows(&g.set, &g.specs, stream_counts, q) else {
            dropped += 1;
            continue;
        };
        let specs: Vec<SubchannelSpec> =
            chosen.into_iter().map(|idx| g.specs[idx].clone()).collect();
        let sys = target_equations(&specs, q)?;
        debug_assert_eq!(sys.streams.len(), g.set.vectors.len());
        debug_assert_eq!(sys.rows.len(), sys.streams.len());
        groups.push(BuiltGroup {
            set: g.set,
            specs,
            sys,
            gains: g.gains,
            slots: g.slots,
            p_tilde: g.p_tilde,
        });
    }
    let tuples = groups.iter().map(|g| g.gains.len()).sum();
    Ok(LayerBuilt { groups, matched_fraction, outage, tuples, dropped_groups: dropped, total_groups })
}

/// Runs one layer's physical transmission for one trial: encodes every
/// stream of every group, pushes the superposition through the (true or
/// overridden) channel, matched-filters, decodes every forwarded equation,
/// and returns each relay's decoded values in canonical order.
#[allow(clippy::too_many_arguments)]
fn simulate_layer(
    cfg: &ExperimentConfig,
    layer: &LayerBuilt,
    inputs: &[Vec<u64>],
    q: u64,
    trial: u64,
    layer_idx: u64,
    stats: &mut TrialLayerStats,
) -> Result<Vec<Vec<u64>>> {
    let k = cfg.k;
    let noise = match cfg.channel {
        ChannelMode::Noisy => generate_noise(cfg.seed, trial, layer_idx, cfg.t, k),
        ChannelMode::NoiselessExact => Vec::new(),
    };
    let mut cursors = vec![0usize; k];
    let mut outputs: Vec<Vec<u64>> = vec![Vec::new(); k];

    for (g_idx, group) in layer.groups.iter().enumerate() {
        let l = group.set.l as usize;
        let n_g = group.gains.len();
        let kappa = 2 * n_g;
        let ccfg = CodecConfig::new(q, kappa, group.p_tilde)?;
        let streams = &group.sys.streams;

        // Messages, dithers, and codewords per stream, in sys.streams order.
        let mut w = Vec::with_capacity(streams.len());
        for &(owner, _) in streams {
            let from = cursors[owner];
            w.push(inputs[owner][from..from + kappa].to_vec());
            cursors[owner] = from + kappa;
        }
        let dithers: Vec<Vec<f64>> = (0..streams.len())
            .map(|s_idx| {
                let mut rng = stream_rng(
                    cfg.seed,
                    StreamKind::Dither,
                    [trial, layer_idx, g_idx as u64, s_idx as u64],
                );
                draw_dither(&ccfg, &mut rng)
            })
            .collect();
        let x: Vec<Vec<Complex64>> = streams
            .iter()
            .zip(&w)
            .zip(&dithers)
            .map(|((_, wi), di)| encode(&ccfg, wi, di))
            .collect::<Result<_>>()?;

        // Transmit superpositions per (transmitter, tuple, slot), then the
        // receive samples per (receiver, tuple, slot).
        let vcomp: Vec<Vec<Complex64>> = streams
            .iter()
            .map(|&(_, vidx)| {
                (0..l).map(|ell| group.set.vectors[vidx].component(group.set.l, ell)).collect()
            })
            .collect();
        let zero = Complex64::new(0.0, 0.0);
        let mut received = vec![zero; k * n_g * l];
        for j in 0..n_g {
            for ell in 0..l {
                let mut tx = vec![zero; k];
                for (s_idx, &(owner, _)) in streams.iter().enumerate() {
                    tx[owner] += vcomp[s_idx][ell] * x[s_idx][j];
                }
                for m in 0..k {
                    let mut y = zero;
                    for (kk, &sig) in tx.iter().enumerate() {
                        y += group.gains[j][ell * k * k + m * k + kk] * sig;
                    }
                    if cfg.channel == ChannelMode::Noisy {
                        y += noise[group.slots[j][ell] * k + m];
                    }
                    received[(m * n_g + j) * l + ell] = y;
                }
            }
        }

        // Matched filter + common-phase derotation + equation decoding.
        let sqrt_l = (l as f64).sqrt();
        let mut decoded_rows = Vec::with_capacity(group.specs.len());
        for spec in &group.specs {
            let m = spec.receiver;
            let phase = (spec.common / spec.common.norm()).conj();
            let block: Vec<Complex64> = (0..n_g)
                .map(|j| {
                    let mut r = zero;
                    for ell in 0..l {
                        r += omega_pow(group.set.l, spec.filter_power * ell as u64).conj()
                            * received[(m * n_g + j) * l + ell];
                    }
                    r / sqrt_l * phase
                })
                .collect();
            let model = SubchannelModel {
                beta: spec.beta,
                a: spec.coefficients.iter().map(|c| c.a).collect(),
                gamma2: spec.gamma2,
                sigma2: spec.sigma2,
                k,
            };
            let dith_refs: Vec<&[f64]> = spec
                .coefficients
                .iter()
                .map(|c| {
                    let s_idx = streams
                        .binary_search(&(c.owner, c.vector))
                        .expect("coefficient stream present");
                    dithers[s_idx].as_slice()
                })
                .collect();
            let row = decode_equation(&ccfg, &block, &model, &dith_refs)?;
            outputs[m].extend_from_slice(&row);
            decoded_rows.push(row);
        }

        // Error accounting against the actually transmitted messages.
        let truth = evaluate_rows(&group.sys, &w)?;
        for (got, want) in decoded_rows.iter().zip(&truth) {
            stats.rows_total += 1;
            if got != want {
                stats.rows_wrong += 1;
                stats.layer_error = true;
            }
        }

        // Subchannel SINR accounting against the same gains the payload saw.
        for spec in &group.specs {
            for gains in &group.gains {
                let dec = sinr_decomposition(&group.set, spec, gains, cfg.p);
                stats.sinr_count += 1;
                stats.sinr_sum += dec.empirical_sinr;
                stats.sinr_min = stats.sinr_min.min(dec.empirical_sinr);
                stats.sinr_max = stats.sinr_max.max(dec.empirical_sinr);
                stats.min_margin =
                    stats.min_margin.min(dec.empirical_sinr - dec.theoretical_lower_bound);
            }
        }
    }
    Ok(outputs)
}

/// Destination-side inversion of one layer: from the relays' (estimated)
/// output values back to the layer's (estimated) input messages.
fn invert_layer(layer: &LayerBuilt, outputs: &[Vec<u64>], k: usize) -> Result<Vec<Vec<u64>>> {
    let mut cursors = vec![0usize; k];
    let mut inputs: Vec<Vec<u64>> = vec![Vec::new(); k];
    for group in &layer.groups {
        let kappa = 2 * group.gains.len();
        let mut rows = Vec::with_capacity(group.specs.len());
        for spec in &group.specs {
            let m = spec.receiver;
            let from = cursors[m];
            rows.push(outputs[m][from..from + kappa].to_vec());
            cursors[m] = from + kappa;
        }
        let msgs = recover_messages(&group.sys, &rows)?;
        for (s_idx, &(owner, _)) in group.sys.streams.iter().enumerate() {
            inputs[owner].extend_from_slice(&msgs[s_idx]);
        }
    }
    Ok(inputs)
}

/// Truncates a layer's groups, in canonical order, to at most `budget`
/// tuples in total (the cross-layer symbol budget).
fn truncate_layer(layer: &mut LayerBuilt, budget: usize) {
    let mut remaining = budget;
    layer.groups.retain_mut(|g| {
        if remaining == 0 {
            return false;
        }
        let take = g.gains.len().min(remaining);
        g.gains.truncate(take);
        g.slots.truncate(take);
        remaining -= take;
        true
    });
}

struct TrialOutcome {
    per_layer: Vec<TrialLayerStats>,
    e2e_error: bool,
    min_rate: f64,
}

fn run_trial(
    cfg: &ExperimentConfig,
    pattern: &MatchPattern,
    qcfg: &QuantizerConfig,
    stream_counts: &[usize],
    trial: u64,
) -> Result<TrialOutcome> {
    let d = cfg.layers;
    let mut raw = Vec::with_capacity(d);
    for layer in 0..d {
        raw.push(gather_layer(cfg, pattern, qcfg, trial, layer as u64)?);
    }
    let q = match cfg.q {
        Some(q) => q,
        None => {
            let max_a = raw
                .iter()
                .flat_map(|(groups, _, _)| groups.iter())
                .flat_map(|g| g.specs.iter())
                .flat_map(|s| s.coefficients.iter().map(|c| c.a))
                .max()
                .unwrap_or(1);
            smallest_prime_above(2 * max_a)
        }
    };

    let mut layers = Vec::with_capacity(d);
    for (groups, matched_fraction, outage) in raw {
        layers.push(finish_layer(groups, matched_fraction, outage, stream_counts, q)?);
    }

    let total_streams: usize = stream_counts.iter().sum();
    let bits_per_symbol = (q as f64).log2();
    let mut per_layer: Vec<TrialLayerStats> = layers
        .iter()
        .map(|layer| TrialLayerStats {
            outage: layer.outage,
            matched_fraction: layer.matched_fraction,
            tuples: layer.tuples,
            dropped_groups: layer.dropped_groups,
            total_groups: layer.total_groups,
            rate: 2.0 * bits_per_symbol * (total_streams * layer.tuples) as f64 / cfg.t as f64,
            per_tx_rate: stream_counts
                .iter()
                .map(|&s| 2.0 * bits_per_symbol * (s * layer.tuples) as f64 / cfg.t as f64)
                .collect(),
            rows_total: 0,
            rows_wrong: 0,
            layer_error: false,
            sinr_count: 0,
            sinr_sum: 0.0,
            sinr_min: f64::INFINITY,
            sinr_max: f64::NEG_INFINITY,
            min_margin: f64::INFINITY,
            q,
        })
        .collect();
    let min_rate = per_layer.iter().map(|s| s.rate).fold(f64::INFINITY, f64::min);

    let budget = layers.iter().map(|l| l.tuples).min().unwrap_or(0);
    let mut e2e_error = false;
    if budget > 0 {
        for layer in &mut layers {
            truncate_layer(layer, budget);
        }
        // Fresh source messages: one flat symbol stream per transmitter.
        let originals: Vec<Vec<u64>> = stream_counts
            .iter()
            .enumerate()
            .map(|(m, &s)| {
                let mut rng = stream_rng(cfg.seed, StreamKind::Message, [trial, m as u64, 0, 0]);
                (0..s * 2 * budget).map(|_| rng.gen_range(0..q)).collect()
            })
            .collect();

        let mut current = originals.clone();
        for (idx, layer) in layers.iter().enumerate() {
            current =
                simulate_layer(cfg, layer, &current, q, trial, idx as u64, &mut per_layer[idx])?;
        }
        // Destination: lossless pipes from the last layer, then invert the
        // composition layer by layer.
        let mut estimate = current;
        let mut inverted = true;
        for layer in layers.iter().rev() {
            match invert_layer(layer, &estimate, cfg.k) {
                Ok(prev) => estimate = prev,
                Err(_) => {
                    inverted = false;
                    break;
                }
            }
        }
        e2e_error = !inverted || estimate != originals;
    }

    Ok(TrialOutcome { per_layer, e2e_error, min_rate: if budget > 0 { min_rate } else { 0.0 } })
}

/// 95% percentile bootstrap interval for the mean of `samples`.
fn bootstrap_ci(samples: &[f64], rng: &mut ChaCha8Rng) -> [f64; 2] {
    if samples.is_empty() {
        return [0.0, 0.0];
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    if samples.len() < 2 {
        return [mean, mean];
    }
    const ITERS: usize = 2000;
    let mut means = Vec::with_capacity(ITERS);
    for _ in 0..ITERS {
        let sum: f64 =
            (0..samples.len()).map(|_| samples[rng.gen_range(0..samples.len())]).sum();
        means.push(sum / samples.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite bootstrap means"));
    let lo = ((ITERS as f64) * 0.025).floor() as usize;
    let hi = ((ITERS as f64) * 0.975).ceil() as usize - 1;
    [means[lo], means[hi]]
}

/// The closed-form achievable sum rate matching the configuration, clamped
/// at zero. Depends only on the configuration, so identical per-layer
/// configurations yield identical values at any depth.
pub fn formula_rate(cfg: &ExperimentConfig) -> Result<f64> {
    let elogc = bounds::expected_log_c(cfg.k);
    let raw = match cfg.mode {
        SchemeMode::TwoUser { l } => {
            bounds::achievable_k2(cfg.p, l, f64::from(cfg.nu), elogc, 0.0)
        }
        SchemeMode::General { i } => bounds::achievable_general(cfg.p, cfg.k, i, elogc),
    };
    Ok(bounds::clamp_rate(raw))
}

/// Runs the full multi-layer experiment described by `cfg`.
pub fn run_multilayer(cfg: &ExperimentConfig) -> Result<NetworkReport> {
    cfg.validate()?;
    let pattern = cfg.pattern()?;
    let qcfg = QuantizerConfig::new(cfg.nu, pattern.l)?;
    let stream_counts = cfg.stream_counts()?;
    let d = cfg.layers;
    let rate_formula = formula_rate(cfg)?;

    // Per-layer accumulators across trials.
    let mut rates: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.trials as usize); d];
    let mut trial_mean_sinr: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut per_tx_rate_sums: Vec<Vec<f64>> = vec![vec![0.0; cfg.k]; d];
    let mut outages = vec![0u64; d];
    let mut matched_sum = vec![0.0f64; d];
    let mut tuple_sum = vec![0.0f64; d];
    let mut dropped_sum = vec![0u64; d];
    let mut groups_sum = vec![0u64; d];
    let mut rows_total = vec![0u64; d];
    let mut rows_wrong = vec![0u64; d];
    let mut layer_err_trials = vec![0u64; d];
    let mut q_sum = vec![0.0f64; d];
    let mut sinr_count = vec![0u64; d];
    let mut sinr_sum = vec![0.0f64; d];
    let mut sinr_min = vec![f64::INFINITY; d];
    let mut sinr_max = vec![f64::NEG_INFINITY; d];
    let mut min_margin = vec![f64::INFINITY; d];

    let mut e2e_errors = 0u64;
    let mut min_rate_sum = 0.0f64;
    let mut union_ok = true;

    for trial in 0..cfg.trials {
        let outcome = run_trial(cfg, &pattern, &qcfg, &stream_counts, trial)?;
        if outcome.e2e_error && !outcome.per_layer.iter().any(|s| s.layer_error) {
            union_ok = false;
        }
        if outcome.e2e_error {
            e2e_errors += 1;
        }
        min_rate_sum += outcome.min_rate;
        for (idx, s) in outcome.per_layer.into_iter().enumerate() {
            rates[idx].push(s.rate);
            for (acc, r) in per_tx_rate_sums[idx].iter_mut().zip(&s.per_tx_rate) {
                *acc += r;
            }
            outages[idx] += u64::from(s.outage);
            matched_sum[idx] += s.matched_fraction;
            tuple_sum[idx] += s.tuples as f64;
            dropped_sum[idx] += s.dropped_groups as u64;
            groups_sum[idx] += s.total_groups as u64;
            rows_total[idx] += s.rows_total;
            rows_wrong[idx] += s.rows_wrong;
            layer_err_trials[idx] += u64::from(s.layer_error);
            q_sum[idx] += s.q as f64;
            if s.sinr_count > 0 {
                trial_mean_sinr[idx].push(s.sinr_sum / s.sinr_count as f64);
                sinr_count[idx] += s.sinr_count;
                sinr_sum[idx] += s.sinr_sum;
                sinr_min[idx] = sinr_min[idx].min(s.sinr_min);
                sinr_max[idx] = sinr_max[idx].max(s.sinr_max);
                min_margin[idx] = min_margin[idx].min(s.min_margin);
            }
        }
    }

    let trials_f = cfg.trials as f64;
    let total_streams: usize = stream_counts.iter().sum();
    let mut layers = Vec::with_capacity(d);
    for idx in 0..d {
        let mut rate_rng =
            stream_rng(cfg.seed, StreamKind::Bootstrap, [idx as u64, 0, 0, 0]);
        let mut sinr_rng =
            stream_rng(cfg.seed, StreamKind::Bootstrap, [idx as u64, 1, 0, 0]);
        let empirical_rate = rates[idx].iter().sum::<f64>() / trials_f;
        let have_sinr = sinr_count[idx] > 0;
        layers.push(LayerReport {
            layer: idx,
            trials: cfg.trials,
            outage_fraction: outages[idx] as f64 / trials_f,
            matched_fraction: matched_sum[idx] / trials_f,
            mean_tuples: tuple_sum[idx] / trials_f,
            dropped_group_fraction: if groups_sum[idx] == 0 {
                0.0
            } else {
                dropped_sum[idx] as f64 / groups_sum[idx] as f64
            },
            streams_per_tuple: total_streams,
            rate_formula,
            empirical_rate,
            rate_ci: bootstrap_ci(&rates[idx], &mut rate_rng),
            per_transmitter_rates: per_tx_rate_sums[idx].iter().map(|s| s / trials_f).collect(),
            sinr: SinrSummary {
                count: sinr_count[idx],
                min: if have_sinr { sinr_min[idx] } else { 0.0 },
                mean: if have_sinr { sinr_sum[idx] / sinr_count[idx] as f64 } else { 0.0 },
                max: if have_sinr { sinr_max[idx] } else { 0.0 },
                min_margin: if have_sinr { min_margin[idx] } else { 0.0 },
            },
            sinr_ci: bootstrap_ci(&trial_mean_sinr[idx], &mut sinr_rng),
            equation_error_rate: if rows_total[idx] == 0 {
                0.0
            } else {
                rows_wrong[idx] as f64 / rows_total[idx] as f64
            },
            layer_error_rate: layer_err_trials[idx] as f64 / trials_f,
            mean_q: q_sum[idx] / trials_f,
        });
    }

    let per_layer_error_sum = layers.iter().map(|l| l.layer_error_rate).sum();
    Ok(NetworkReport {
        config: cfg.clone(),
        layers,
        end_to_end_rate: min_rate_sum / trials_f,
        end_to_end_error_rate: e2e_errors as f64 / trials_f,
        per_layer_error_sum,
        union_bound_satisfied: union_ok,
        cutset_upper: bounds::cutset_upper_closed(cfg.k, cfg.p),
        capacity_lower: bounds::clamp_rate(bounds::capacity_lower(cfg.k, cfg.p)),
    })
}

/// Runs a single-layer experiment: exactly the multi-layer engine at depth
/// one, reporting the one layer.
pub fn run_single_layer(cfg: &ExperimentConfig) -> Result<LayerReport> {
    let mut single = cfg.clone();
    single.layers = 1;
    let report = run_multilayer(&single)?;
    Ok(report.layers.into_iter().next().expect("depth-one report has one layer"))
}
