//! Acceptance suite: one test per acceptance criterion, each ending with a
//! single `acceptance criterion N (...): PASS` line (criterion 2 prints a
//! FAIL line instead before its honest assertion; see that test). Run with
//! `cargo test --test acceptance -- --nocapture` to see every line.
//!
//! Every numeric gate here is checked against arithmetic done inside this
//! file — integer cell-count formulas, Gaussian-tail integration, an
//! independent Z_q elimination, the amplitude identity for aligned
//! coefficients — or against constants frozen from closed-form derivations,
//! not against the library's own bookkeeping.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};
use std::time::Instant;

use calign::aligner::{
    build_transmit_vectors, exponents_from_power, sinr_decomposition, subchannel_specs, AlignMode,
    TransmitVectorSet,
};
use calign::bounds;
use calign::fading::{generate_at, FadingConfig, Process};
use calign::function_system::{evaluate_rows, modulus_for, recover_messages, target_equations};
use calign::lattice_codec::{decode_equation, draw_dither, encode, CodecConfig, SubchannelModel};
use calign::matcher::{match_tuples, verify_tuples, MatchPattern};
use calign::netsim::{
    run_multilayer, synthesize_tuple, ChannelMode, ExperimentConfig, SchemeMode, TupleSource,
};
use calign::quantizer::{quantize, representative, rotate, QuantizedGain, QuantizerConfig};
use calign::rng::{stream_rng, StreamKind};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn pass(n: usize, name: &str, detail: String) {
    println!("acceptance criterion {n} ({name}): PASS ({detail})");
}

// ---------------------------------------------------------------------------
// 1. Quantizer geometry
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_quantizer_geometry() {
    let t0 = Instant::now();
    let mut worst_ratio = 0.0f64;
    for &(nu, l) in &[(2u32, 1u32), (2, 2), (2, 4), (4, 1), (4, 2), (4, 4)] {
        let qcfg = QuantizerConfig::new(nu, l).unwrap();

        // Cell count nu^4 L + 1, recomputed here in exact integers.
        let expect = u64::from(nu).pow(4) * u64::from(l) + 1;
        assert_eq!(qcfg.cell_count(), expect, "cell count at nu={nu} l={l}");

        // Max quantization error over 1e5 disk-uniform samples vs (pi+1)/nu.
        let bound = (PI + 1.0) / f64::from(nu);
        assert!((qcfg.error_bound() - bound).abs() < 1e-15);
        let mut rng = stream_rng(41, StreamKind::Gain, [u64::from(nu), u64::from(l), 0, 0]);
        let mut max_err = 0.0f64;
        for _ in 0..100_000 {
            let r = f64::from(nu) * rng.gen::<f64>().sqrt();
            let h = Complex64::from_polar(r, rng.gen::<f64>() * TAU);
            let cell = quantize(&qcfg, h);
            assert!(cell.is_finite(), "|h| <= nu must land in a finite cell");
            let err = (h - representative(&qcfg, cell).unwrap()).norm();
            max_err = max_err.max(err);
        }
        assert!(
            max_err <= bound,
            "nu={nu} l={l}: max quantization error {max_err} exceeds {bound}"
        );
        worst_ratio = worst_ratio.max(max_err / bound);

        // Rotation closure over every finite cell and every step count:
        // exact identity at 0 and L steps, exact inverses, finiteness
        // preserved, and the representative advancing by exactly j root
        // steps on the same magnitude ring.
        for ring in 1..=qcfg.rings() {
            for sector in 0..qcfg.sectors() as u32 {
                let cell = QuantizedGain::Cell { ring, sector };
                assert_eq!(rotate(&qcfg, cell, 0), cell);
                assert_eq!(rotate(&qcfg, cell, i64::from(l)), cell, "full cycle = identity");
                let rep = representative(&qcfg, cell).unwrap();
                for j in 1..i64::from(l) {
                    let stepped = rotate(&qcfg, cell, j);
                    assert!(stepped.is_finite());
                    assert_eq!(rotate(&qcfg, stepped, -j), cell, "rotation inverts exactly");
                    let expect =
                        rep * Complex64::from_polar(1.0, TAU * j as f64 / f64::from(l));
                    let got = representative(&qcfg, stepped).unwrap();
                    assert!(
                        (got - expect).norm() <= 1e-12 * expect.norm(),
                        "representative must advance by exactly the root step"
                    );
                }
            }
        }
        assert_eq!(rotate(&qcfg, QuantizedGain::Infinity, 3), QuantizedGain::Infinity);
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "quantizer checks took {dt:?}, limit 10 s");
    pass(
        1,
        "quantizer geometry",
        format!("worst observed error / bound = {worst_ratio:.3}, {dt:.2?}"),
    );
}

// ---------------------------------------------------------------------------
// 2. Gain matching
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_gain_matching() {
    let t0 = Instant::now();
    let t = 400_000usize;
    let fcfg = FadingConfig { k: 2, t, process: Process::Iid, seed: 1 };
    let seq = generate_at(&fcfg, 0, 0).unwrap();
    let qcfg = QuantizerConfig::new(2, 2).unwrap();
    let pattern = MatchPattern::two_user(2).unwrap();

    // Measured per-gain overload probability delta_hat.
    let mut overloads = 0u64;
    for slot in 0..t {
        for m in 0..2 {
            for kk in 0..2 {
                if !quantize(&qcfg, seq.gain(slot, m, kk)).is_finite() {
                    overloads += 1;
                }
            }
        }
    }
    let delta_hat = overloads as f64 / (t as f64 * 4.0);

    let res = match_tuples(&seq, &qcfg, &pattern).unwrap();
    verify_tuples(&seq, &qcfg, &pattern, &res.tuples)
        .expect("every emitted tuple must pass the exact rotation verifier");

    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 60.0, "matching run took {dt:?}, limit 60 s");

    let required = 0.9 * (1.0 - delta_hat) * (1.0 - delta_hat);
    let ok = res.matched_fraction >= required;
    if ok {
        pass(
            2,
            "gain matching",
            format!(
                "{} tuples, matched_fraction {:.5} >= {:.5}, verifier clean, {dt:.2?}",
                res.tuples.len(),
                res.matched_fraction,
                required
            ),
        );
    } else {
        println!(
            "acceptance criterion 2 (gain matching): FAIL (matched_fraction {:.5} < required \
             {:.5}; the exact-rotation verifier and the 60 s budget both passed)",
            res.matched_fraction, required
        );
    }
    assert!(
        ok,
        "matched_fraction {:.5} < 0.9 (1 - {:.5})^2 = {:.5} at T = 4e5. At nu = 2 the \
         quantized 2x2 matrix classes number ~1.05e6, so per-class subblock counts are \
         Poisson with mean O(1) and pairing loses a ~1/sqrt(count) fraction of every class; \
         the 0.9 (1-delta)^2 target is an asymptotic-in-T property that becomes reachable \
         only around T ~ 1e9, far beyond the 60 s budget. The exactness (verifier) and \
         runtime gates above did pass; the threshold is asserted faithfully and fails.",
        res.matched_fraction,
        delta_hat,
        required
    );
}

// ---------------------------------------------------------------------------
// 3. Alignment exactness
// ---------------------------------------------------------------------------

fn random_finite_cells(
    qcfg: &QuantizerConfig,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<QuantizedGain> {
    (0..k * k)
        .map(|_| QuantizedGain::Cell {
            ring: rng.gen_range(1..=qcfg.rings()),
            sector: rng.gen_range(0..qcfg.sectors()) as u32,
        })
        .collect()
}

/// Exact-representative gain block for a vector set, slot-major.
fn representative_gains(set: &TransmitVectorSet) -> Vec<Complex64> {
    let (k, l) = (set.k, set.l as usize);
    let mut gains = Vec::with_capacity(l * k * k);
    for ell in 0..l {
        for m in 0..k {
            for kk in 0..k {
                gains.push(set.quantized_gain_at(m, kk, ell));
            }
        }
    }
    gains
}

/// Checks every subchannel of one vector set on exact-representative gains:
/// bitwise-zero mismatch and leakage, and integer coefficients satisfying
/// the amplitude identity  common * a / post_scale == hhat_{m,owner} * rho_k
/// * sqrt(L)  for every participating stream (the coefficients really are
/// the intended integers, not merely some integers).
fn assert_exact_alignment(set: &TransmitVectorSet, p: f64) -> usize {
    let gains = representative_gains(set);
    let sqrt_l = f64::from(set.l).sqrt();
    let specs = subchannel_specs(set, p).unwrap();
    assert!(!specs.is_empty());
    for spec in &specs {
        let dec = sinr_decomposition(set, spec, &gains, p);
        assert_eq!(dec.mismatch_power, 0.0, "mismatch must vanish bitwise");
        assert_eq!(dec.leakage_power, 0.0, "leakage must vanish bitwise");
        assert!(dec.desired_power > 0.0);

        for cf in &spec.coefficients {
            assert!(cf.a >= 1, "equation coefficients are nonzero naturals");
            let v = &set.vectors[cf.vector];
            assert_eq!(v.owner, cf.owner);
            let lhs = set.base[spec.receiver * set.k + v.owner] * v.rho * sqrt_l;
            let rhs = spec.common * cf.a as f64 / spec.post_scale;
            assert!(
                (lhs - rhs).norm() <= 1e-9 * rhs.norm(),
                "amplitude identity violated at receiver {}: {lhs} vs {rhs}",
                spec.receiver
            );
        }

        if matches!(set.mode, AlignMode::TwoUser) {
            if spec.receiver == 0 {
                // Direct receiver: every aligned stream enters with weight 1.
                assert!(spec.coefficients.iter().all(|c| c.a == 1));
            } else {
                // Cross receiver: pairwise equations with the smaller
                // coefficient normalized to 1.
                assert_eq!(spec.coefficients.len(), 2);
                assert_eq!(spec.coefficients.iter().map(|c| c.a).min(), Some(1));
            }
        }
    }
    specs.len()
}

#[test]
fn criterion_3_alignment_exactness() {
    let t0 = Instant::now();
    let mut subchannels = 0usize;

    // Two-user recursion across subblock counts L in {2, 4, 8}.
    for &l in &[2u32, 4, 8] {
        let qcfg = QuantizerConfig::new(8, l).unwrap();
        let pattern = MatchPattern::two_user(l).unwrap();
        let mut rng = stream_rng(31, StreamKind::Bootstrap, [u64::from(l), 0, 0, 0]);
        for _ in 0..12 {
            let cells = random_finite_cells(&qcfg, 2, &mut rng);
            let set = build_transmit_vectors(&qcfg, &pattern, &cells).unwrap();
            assert_eq!(set.vectors.len(), 2 * l as usize - 1);
            subchannels += assert_exact_alignment(&set, 100.0);
        }
    }

    // General monomial construction, K = 2, I in {1, 2}.
    for &i in &[1u32, 2] {
        let pattern = MatchPattern::general(2, i).unwrap();
        assert_eq!(pattern.l, (i + 1).pow(4), "L = (I+1)^(K^2)");
        let qcfg = QuantizerConfig::new(4, pattern.l).unwrap();
        let mut rng = stream_rng(33, StreamKind::Bootstrap, [u64::from(i), 0, 0, 0]);
        for _ in 0..8 {
            let cells = random_finite_cells(&qcfg, 2, &mut rng);
            let set = build_transmit_vectors(&qcfg, &pattern, &cells).unwrap();
            assert_eq!(set.vectors.len(), 2 * (i as usize).pow(4), "K * I^(K^2) vectors");
            subchannels += assert_exact_alignment(&set, 100.0);

            // Unique factorization: the exponent digits of every transmit
            // vector invert its composite rotation power, and no two vectors
            // of one transmitter share a power.
            let mut seen = BTreeSet::new();
            for v in &set.vectors {
                assert_eq!(
                    exponents_from_power(v.fourier_power, 2, i),
                    v.exponents,
                    "exponent digits must invert the composite power"
                );
                assert!(seen.insert((v.owner, v.fourier_power)), "duplicate power");
            }
        }
    }

    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 30.0, "alignment checks took {dt:?}, limit 30 s");
    pass(
        3,
        "alignment exactness",
        format!("{subchannels} subchannels bitwise-clean with intended coefficients, {dt:.2?}"),
    );
}

// ---------------------------------------------------------------------------
// 4. Subchannel SINR lower bounds
// ---------------------------------------------------------------------------

fn sinr_suite(
    qcfg: &QuantizerConfig,
    pattern: &MatchPattern,
    p: f64,
    tuples: usize,
    seed: u64,
) -> (usize, f64) {
    let mut rng = stream_rng(seed, StreamKind::Synth, [0, 0, 0, 0]);
    let mut checked = 0usize;
    let mut min_margin = f64::INFINITY;
    for n in 0..tuples {
        let (cells, gains) = synthesize_tuple(qcfg, pattern, &mut rng).unwrap();
        let set = build_transmit_vectors(qcfg, pattern, &cells).unwrap();
        for spec in subchannel_specs(&set, p).unwrap() {
            let dec = sinr_decomposition(&set, &spec, &gains, p);
            assert!(
                dec.empirical_sinr >= dec.theoretical_lower_bound,
                "tuple {n}, receiver {}, filter {}: empirical SINR {} below bound {}",
                spec.receiver,
                spec.filter_power,
                dec.empirical_sinr,
                dec.theoretical_lower_bound
            );
            min_margin = min_margin.min(dec.empirical_sinr / dec.theoretical_lower_bound);
            checked += 1;
        }
    }
    (checked, min_margin)
}

#[test]
fn criterion_4_subchannel_sinr_bounds() {
    // Two-user scheme at nu = 64, L = 4, P = 100.
    let qcfg = QuantizerConfig::new(64, 4).unwrap();
    let pattern = MatchPattern::two_user(4).unwrap();
    let (n2, m2) = sinr_suite(&qcfg, &pattern, 100.0, 1000, 4);

    // General scheme, K = 2, I = 2 (so L = 81) at nu = 256, P = 100.
    let pattern_g = MatchPattern::general(2, 2).unwrap();
    let qcfg_g = QuantizerConfig::new(256, pattern_g.l).unwrap();
    let (ng, mg) = sinr_suite(&qcfg_g, &pattern_g, 100.0, 1000, 5);

    pass(
        4,
        "subchannel SINR bounds",
        format!(
            "zero violations: two-user {n2} subchannels (min empirical/bound {m2:.2}), \
             general {ng} subchannels (min {mg:.2})"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Lattice codec
// ---------------------------------------------------------------------------

/// Upper Gaussian tail Q(x) by Simpson integration on [x, x+14].
fn q_tail(x: f64) -> f64 {
    let steps = 20_000usize;
    let h = 14.0 / steps as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
    let mut acc = pdf(x) + pdf(x + 14.0);
    for s in 1..steps {
        let w = if s % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * pdf(x + s as f64 * h);
    }
    acc * h / 3.0
}

/// Symbol error rate of the codec over a pure AWGN subchannel at the given
/// SINR. The RNG stream depends only on `seed`, so sweeping SINR at a fixed
/// seed replays the same message/dither/noise draws (common random numbers),
/// which makes the monotonicity check deterministic.
fn awgn_symbol_error_rate(q: u64, sinr: f64, samples: usize, seed: u64) -> f64 {
    let cfg = CodecConfig::new(q, 2, sinr).unwrap();
    let model = SubchannelModel { beta: 1.0, a: vec![1], gamma2: 0.0, sigma2: 0.0, k: 1 };
    let mut rng = stream_rng(seed, StreamKind::Noise, [q, 0, 0, 0]);
    let mut errors = 0u64;
    for _ in 0..samples {
        let w: Vec<u64> = (0..2).map(|_| rng.gen_range(0..q)).collect();
        let d = draw_dither(&cfg, &mut rng);
        let x = encode(&cfg, &w, &d).unwrap();
        let nr: f64 = StandardNormal.sample(&mut rng);
        let ni: f64 = StandardNormal.sample(&mut rng);
        let r = vec![x[0] + Complex64::new(nr, ni) * 0.5f64.sqrt()];
        let u = decode_equation(&cfg, &r, &model, &[&d]).unwrap();
        errors += u64::from(u[0] != w[0]) + u64::from(u[1] != w[1]);
    }
    errors as f64 / (2.0 * samples as f64)
}

#[test]
fn criterion_5_lattice_codec() {
    // (a) Noiseless decoding is exact for every message pair at q = 3,
    // kappa = 1, over every nonzero coefficient pair, with fresh random
    // dithers and a non-unit channel scale.
    let c3 = CodecConfig::new(3, 1, 2.0).unwrap();
    let mut rng = stream_rng(51, StreamKind::Dither, [0, 0, 0, 0]);
    for a in 0..3u64 {
        for b in 0..3u64 {
            if a == 0 && b == 0 {
                continue;
            }
            let model =
                SubchannelModel { beta: 0.37, a: vec![a, b], gamma2: 0.0, sigma2: 0.0, k: 2 };
            for w1 in 0..3u64 {
                for w2 in 0..3u64 {
                    let d1 = draw_dither(&c3, &mut rng);
                    let d2 = draw_dither(&c3, &mut rng);
                    let x1 = encode(&c3, &[w1], &d1).unwrap();
                    let x2 = encode(&c3, &[w2], &d2).unwrap();
                    let r: Vec<Complex64> = x1
                        .iter()
                        .zip(&x2)
                        .map(|(s1, s2)| model.beta * (a as f64 * s1 + b as f64 * s2))
                        .collect();
                    assert_eq!(
                        decode_equation(&c3, &r, &model, &[&d1, &d2]).unwrap(),
                        vec![(a * w1 + b * w2) % 3],
                        "noiseless decode must be exact at a={a} b={b} w=({w1},{w2})"
                    );
                }
            }
        }
    }

    // (b) + (c): AWGN sweep across SINR = 10..30 dB. q = 17 keeps the
    // Gaussian-tail oracle measurable over the whole range; the fixed seed
    // gives common random numbers across points, so the observed error is
    // deterministically non-increasing in SINR.
    let q = 17u64;
    let mut last = f64::INFINITY;
    let mut worst = 1.0f64;
    for db in 10..=30u32 {
        let sinr = 10f64.powf(f64::from(db) / 10.0);
        let measured = awgn_symbol_error_rate(q, sinr, 120_000, 55);
        let cfg = CodecConfig::new(q, 2, sinr).unwrap();
        let oracle = (2.0 * q_tail(cfg.gamma_s() / (2.0 * q as f64 * 0.5f64.sqrt()))).min(1.0);
        assert!(
            measured <= 3.0 * oracle && measured >= oracle / 3.0,
            "at {db} dB: measured {measured:.3e} outside [1/3, 3] x oracle {oracle:.3e}"
        );
        worst = worst.max(measured / oracle).max(oracle / measured);
        assert!(
            measured <= last,
            "error rate must be non-increasing in SINR: {measured} after {last} at {db} dB"
        );
        last = measured;
    }
    pass(
        5,
        "lattice codec",
        format!("noiseless exact; AWGN within oracle factor {worst:.2} (allowed 3), monotone"),
    );
}

// ---------------------------------------------------------------------------
// 6. Equation systems
// ---------------------------------------------------------------------------

fn mul_mod_oracle(a: u64, b: u64, q: u64) -> u64 {
    ((u128::from(a) * u128::from(b)) % u128::from(q)) as u64
}

fn pow_mod_oracle(mut b: u64, mut e: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    b %= q;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod_oracle(acc, b, q);
        }
        b = mul_mod_oracle(b, b, q);
        e >>= 1;
    }
    acc
}

/// Column rank over Z_q (q prime) by Gaussian elimination, written here
/// independently of the library's linear algebra.
fn rank_oracle(rows: &[Vec<u64>], cols: usize, q: u64) -> usize {
    let mut m: Vec<Vec<u64>> = rows.iter().map(|r| r.iter().map(|&x| x % q).collect()).collect();
    let mut rank = 0usize;
    for col in 0..cols {
        let Some(p) = (rank..m.len()).find(|&r| m[r][col] != 0) else { continue };
        m.swap(rank, p);
        let inv = pow_mod_oracle(m[rank][col], q - 2, q); // Fermat inverse
        for c in 0..cols {
            m[rank][c] = mul_mod_oracle(m[rank][c], inv, q);
        }
        for r in 0..m.len() {
            if r != rank && m[r][col] != 0 {
                let f = m[r][col];
                for c in 0..cols {
                    let sub = mul_mod_oracle(f, m[rank][c], q);
                    m[r][c] = (m[r][c] + q - sub) % q;
                }
            }
        }
        rank += 1;
        if rank == m.len() {
            break;
        }
    }
    rank
}

#[test]
fn criterion_6_equation_systems() {
    let two_user = MatchPattern::two_user(4).unwrap();
    let qcfg_two = QuantizerConfig::new(8, 4).unwrap();
    let general = MatchPattern::general(2, 2).unwrap();
    let qcfg_gen = QuantizerConfig::new(8, general.l).unwrap();

    let mut rng = stream_rng(61, StreamKind::Bootstrap, [0, 0, 0, 0]);
    let mut msg_rng = stream_rng(62, StreamKind::Message, [0, 0, 0, 0]);
    let mut min_rows = usize::MAX;
    let mut max_rows = 0usize;
    for trial in 0..1000 {
        let (qcfg, pattern) =
            if trial % 2 == 0 { (&qcfg_two, &two_user) } else { (&qcfg_gen, &general) };
        let cells = random_finite_cells(qcfg, 2, &mut rng);
        let set = build_transmit_vectors(qcfg, pattern, &cells).unwrap();
        let specs = subchannel_specs(&set, 100.0).unwrap();
        let q = modulus_for(&specs);
        let sys = target_equations(&specs, q).unwrap();

        // Independent rank oracle: the emitted rows must have full column
        // rank over Z_q, i.e. jointly determine every aligned stream.
        assert_eq!(sys.streams.len(), set.vectors.len());
        let rows: Vec<Vec<u64>> = sys.rows.iter().map(|r| r.coefficients.clone()).collect();
        assert!(rows.iter().all(|r| r.len() == sys.streams.len()));
        assert_eq!(
            rank_oracle(&rows, sys.streams.len(), q),
            sys.streams.len(),
            "trial {trial}: equation system is rank-deficient over Z_{q}"
        );
        min_rows = min_rows.min(rows.len());
        max_rows = max_rows.max(rows.len());

        // Round trip: random messages -> row values -> recovered messages.
        let messages: Vec<Vec<u64>> = (0..sys.streams.len())
            .map(|_| (0..3).map(|_| msg_rng.gen_range(0..q)).collect())
            .collect();
        let decoded = evaluate_rows(&sys, &messages).unwrap();
        let recovered = recover_messages(&sys, &decoded).unwrap();
        assert_eq!(recovered, messages, "trial {trial}: round trip must be exact");
    }
    pass(
        6,
        "equation systems",
        format!("1000 random systems full rank + exact round trip ({min_rows}..{max_rows} rows)"),
    );
}

// ---------------------------------------------------------------------------
// 7. Capacity bounds
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_capacity_bounds() {
    // Per-gain constant: 1e6-sample Monte Carlo against the frozen window
    // and the closed form (gamma - 2 Ei(-1)) log2 e. With k = 1 the MC helper
    // averages exactly one gain per sample, so doubling it yields the
    // per-gain constant E[log2 max(r, 1/r)], r ~ Exp(1).
    let mc = 2.0 * bounds::expected_log_c_monte_carlo(1, 1_000_000, 7);
    assert!((mc - 1.4661).abs() <= 0.005, "Monte Carlo per-gain constant {mc}");
    assert!(mc <= 1.5);
    let closed = bounds::per_gain_constant();
    assert!((closed - 1.4661).abs() <= 0.005 && closed <= 1.5);
    assert!((mc - closed).abs() <= 0.005);
    assert!((closed - 1.465_754_405_683_124_2).abs() < 1e-12);

    // Closed-form cut-set bound vs its relaxation, achievable rates, and the
    // pointwise gap, on a 10-points-per-decade grid over P in [1, 1e6].
    let dense: Vec<f64> = (0..=60).map(|i| 10f64.powf(f64::from(i) / 10.0)).collect();
    for &k in &[2usize, 3, 4] {
        let kf = k as f64;
        let elogc = bounds::expected_log_c(k);
        let (gap, cf_gap) = bounds::gap_constants(k, 1);
        // Exact formula identities, recomputed here.
        assert_eq!(gap, 7.0 * kf * kf * kf + 5.0 * kf * kf.log2());
        assert_eq!(cf_gap, 4.0 * 2.0 * kf);
        for &p in &dense {
            let exact = bounds::cutset_upper_closed(k, p);
            let relaxed = bounds::upper_relaxed(k, p);
            assert!(
                exact <= relaxed + 1e-9,
                "K={k} P={p}: K log2(1+4K^2 P) = {exact} above K log2 P + 5K log2 K = {relaxed}"
            );
            let ach = bounds::general_limit(p, k, elogc);
            assert!(ach <= exact + 1e-9, "achievable must not exceed the cut-set bound");
            assert!(
                exact - ach <= gap + 1e-9,
                "K={k} P={p}: capacity gap {} exceeds 7K^3 + 5K log2 K = {gap}",
                exact - ach
            );
            let report = bounds::bound_report(k, p, 1).unwrap();
            assert!(report.lower <= report.upper_exact + 1e-12);
            assert_eq!(report.gap, gap);
        }
        // Water-filling solves on the decade grid: numeric bound below the
        // closed form, multiplier above 1/(4KP), budget spent exactly.
        for exp in 0..=6 {
            let p = 10f64.powi(exp);
            let wf = bounds::cutset_upper_waterfill(k, p).unwrap();
            let closed_form = bounds::cutset_upper_closed(k, p);
            assert!(
                wf.value <= closed_form + 1e-9,
                "K={k} P={p}: water-filling {} above closed form {closed_form}",
                wf.value
            );
            assert!(
                wf.mu > 1.0 / (4.0 * kf * p),
                "K={k} P={p}: multiplier {} not above 1/(4KP)",
                wf.mu
            );
            assert!((wf.budget - kf * p).abs() <= 1e-6 * kf * p, "power budget not exhausted");
        }
    }

    // Frozen gap constants and depth independence.
    assert_eq!(bounds::gap_constants(2, 1).0, 66.0);
    assert!((bounds::gap_constants(3, 1).0 - 212.774_437_510_817_34).abs() < 1e-12);
    assert_eq!(bounds::gap_constants(4, 1).0, 488.0);
    for &k in &[2usize, 3, 4] {
        for &d in &[1usize, 2, 3, 7] {
            let (g, cf) = bounds::gap_constants(k, d);
            assert_eq!(g, bounds::gap_constants(k, 1).0, "gap is depth-independent");
            assert_eq!(cf, 4.0 * (d as f64 + 1.0) * k as f64);
        }
    }
    pass(
        7,
        "capacity bounds",
        format!("MC per-gain {mc:.5} vs closed form {closed:.5}; gaps 66 / 212.77 / 488"),
    );
}

// ---------------------------------------------------------------------------
// 8. Multi-layer network
// ---------------------------------------------------------------------------

fn matched_cfg(layers: usize, trials: u64, channel: ChannelMode) -> ExperimentConfig {
    ExperimentConfig {
        k: 2,
        layers,
        p: 100.0,
        t: 10_000,
        mode: SchemeMode::TwoUser { l: 2 },
        nu: 2,
        eta: 0.2,
        q: Some(101),
        seed: 8,
        trials,
        channel,
        source: TupleSource::Matched,
        process: Process::Iid,
    }
}

#[test]
fn criterion_8_multilayer_network() {
    // Matched-tuple runs at depths 1, 2, 3 with identical per-layer configs.
    let reports: Vec<_> = (1..=3)
        .map(|d| run_multilayer(&matched_cfg(d, 1000, ChannelMode::Noisy)).unwrap())
        .collect();

    // (a) The rate formula evaluates identically (bitwise) for every layer
    // of every depth.
    let f0 = reports[0].layers[0].rate_formula;
    for report in &reports {
        for layer in &report.layers {
            assert_eq!(layer.rate_formula, f0, "rate formula must not depend on depth or layer");
        }
    }

    // Layer ell replays the same fading stream at every depth, so its
    // offered rate is bitwise depth-independent; deeper layers are fresh
    // draws of the same distribution.
    for d in 1..3 {
        for li in 0..reports[d - 1].layers.len() {
            assert_eq!(
                reports[d].layers[li].empirical_rate,
                reports[d - 1].layers[li].empirical_rate
            );
        }
    }

    // (b) Statistical equality of per-layer empirical rates within 2%.
    let rates: Vec<f64> = reports[2].layers.iter().map(|l| l.empirical_rate).collect();
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().copied().fold(0.0f64, f64::max);
    assert!(lo > 0.0);
    let spread = (hi - lo) / lo;
    assert!(spread <= 0.02, "per-layer empirical rates differ by {spread:.4} > 2%: {rates:?}");

    // (d) Union bound: end-to-end error within the per-layer error sum.
    for report in &reports {
        assert!(report.end_to_end_error_rate <= report.per_layer_error_sum + 1e-12);
        assert!(report.union_bound_satisfied);
    }

    // (c) Noiseless end-to-end recovery is exact at depth 3.
    let clean = run_multilayer(&matched_cfg(3, 200, ChannelMode::NoiselessExact)).unwrap();
    assert_eq!(clean.end_to_end_error_rate, 0.0, "noiseless recovery must be exact");
    for layer in &clean.layers {
        assert_eq!(layer.equation_error_rate, 0.0);
        assert_eq!(layer.layer_error_rate, 0.0);
    }
    assert!(clean.end_to_end_rate > 0.0);

    // Depth-independence of the formula where it is strictly positive
    // (fine quantizer, high power), plus bitwise per-layer agreement for
    // the deterministic synthesized source.
    let positive: Vec<_> = (1..=3)
        .map(|d| {
            run_multilayer(&ExperimentConfig {
                k: 2,
                layers: d,
                p: 1e7,
                t: 256,
                mode: SchemeMode::TwoUser { l: 2 },
                nu: 32_768,
                eta: 0.2,
                q: Some(101),
                seed: 9,
                trials: 50,
                channel: ChannelMode::Noisy,
                source: TupleSource::Synthesized { count: 40 },
                process: Process::Iid,
            })
            .unwrap()
        })
        .collect();
    let fpos = positive[0].layers[0].rate_formula;
    assert!(fpos > 0.0, "rate formula must be positive in the fine-quantizer regime");
    for report in &positive {
        for layer in &report.layers {
            assert_eq!(layer.rate_formula, fpos);
            assert_eq!(layer.empirical_rate, positive[0].layers[0].empirical_rate);
        }
        assert!(report.end_to_end_error_rate <= report.per_layer_error_sum + 1e-12);
        assert!(report.union_bound_satisfied);
    }

    // Union bound again in an interior regime (per-layer errors strictly
    // between 0 and 1).
    let interior = run_multilayer(&ExperimentConfig {
        k: 2,
        layers: 3,
        p: 1000.0,
        t: 4096,
        mode: SchemeMode::TwoUser { l: 4 },
        nu: 64,
        eta: 0.2,
        q: None,
        seed: 10,
        trials: 300,
        channel: ChannelMode::Noisy,
        source: TupleSource::Synthesized { count: 64 },
        process: Process::Iid,
    })
    .unwrap();
    assert!(interior.end_to_end_error_rate <= interior.per_layer_error_sum + 1e-12);
    assert!(interior.union_bound_satisfied);

    pass(
        8,
        "multi-layer network",
        format!(
            "formula rates bitwise depth-independent; per-layer empirical spread {:.2}%; \
             noiseless depth-3 recovery exact; union bound holds on all runs",
            100.0 * spread
        ),
    );
}
