//! `codec`: AWGN error-rate sweep for the hypercube lattice codec.
//!
//! One stream, beta = 1, no mismatch or leakage; the per-complex-symbol
//! power equals the target SINR because the channel noise has unit
//! variance. Emits `codec.csv`:
//! `sinr_db,q,n,error_rate,lemma3_rate,codec_rate`.
//!
//! Noise, messages, and dithers are common random numbers across the SINR
//! grid (streams are tagged by modulus and trial, not by SINR), so each
//! per-trial error indicator — and therefore the measured error-rate
//! column — is non-increasing in SINR by construction rather than only in
//! expectation.

use calign::lattice_codec::{
    codec_rate, computation_rate, decode_equation, draw_dither, encode, CodecConfig,
    SubchannelModel,
};
use calign::rng::{stream_rng, StreamKind};
use clap::Args;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::artifact::{csv, fmt_f64, ArtifactSet};
use crate::config::{opt, pick, Settings};
use crate::error::CliResult;
use crate::grid;

#[derive(Args, Debug)]
pub struct CodecArgs {
    /// SINR grid in dB: a:b:step, a:b:log, or a comma list [default: 0:30:2]
    #[arg(long = "sinr-db")]
    pub sinr_db: Option<String>,
    /// Moduli q (prime), comma-separated [default: 5]
    #[arg(long)]
    pub q: Option<String>,
    /// Message length per codeword [default: 64]
    #[arg(long)]
    pub kappa: Option<String>,
    /// Codewords per grid point [default: 200]
    #[arg(long)]
    pub trials: Option<String>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<String>,
    /// Flat key=value config file; flags override file values
    #[arg(long)]
    pub config: Option<String>,
    /// Output directory for artifacts [default: out]
    #[arg(long)]
    pub out: Option<String>,
}

pub fn run(args: CodecArgs) -> CliResult<()> {
    let mut file = Settings::load(args.config.as_deref())?;
    let sinrs = opt(
        "sinr-db",
        pick(args.sinr_db, file.take("sinr_db")),
        grid::f64_grid("0:30:2").expect("default grid"),
        grid::f64_grid,
    )?;
    let qs = opt("q", pick(args.q, file.take("q")), vec![5u64], grid::u64_list)?;
    let kappa = opt("kappa", pick(args.kappa, file.take("kappa")), 64, grid::scalar_usize)?;
    let trials = opt("trials", pick(args.trials, file.take("trials")), 200, grid::scalar_u64)?;
    let seed = opt("seed", pick(args.seed, file.take("seed")), 0, grid::scalar_u64)?;
    let out = pick(args.out, file.take("out")).unwrap_or_else(|| "out".to_string());
    let config_path = file.path().map(String::from);
    file.finish()?;

    let mut rows = Vec::with_capacity(qs.len() * sinrs.len());
    for (qi, &q) in qs.iter().enumerate() {
        eprintln!("codec: q = {q} ({}/{})", qi + 1, qs.len());
        for &db in &sinrs {
            let p = 10f64.powf(db / 10.0);
            let ccfg = CodecConfig::new(q, kappa, p)?;
            let model =
                SubchannelModel { beta: 1.0, a: vec![1], gamma2: 0.0, sigma2: 0.0, k: 1 };
            let mut wrong = 0u64;
            let mut total = 0u64;
            for trial in 0..trials {
                let tags = [qi as u64, trial, 0, 0];
                let mut mrng = stream_rng(seed, StreamKind::Message, tags);
                let w: Vec<u64> = (0..kappa).map(|_| mrng.gen_range(0..q)).collect();
                let mut drng = stream_rng(seed, StreamKind::Dither, tags);
                let dither = draw_dither(&ccfg, &mut drng);
                let x = encode(&ccfg, &w, &dither)?;
                let mut nrng = stream_rng(seed, StreamKind::Noise, tags);
                let y: Vec<Complex64> = x
                    .iter()
                    .map(|&xi| {
                        let re: f64 = nrng.sample(StandardNormal);
                        let im: f64 = nrng.sample(StandardNormal);
                        xi + Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                    })
                    .collect();
                let u = decode_equation(&ccfg, &y, &model, &[&dither])?;
                total += kappa as u64;
                wrong += u.iter().zip(&w).filter(|(got, want)| got != want).count() as u64;
            }
            rows.push(format!(
                "{},{},{},{},{},{}",
                fmt_f64(db),
                q,
                ccfg.n(),
                fmt_f64(wrong as f64 / total as f64),
                fmt_f64(computation_rate(&model, p)),
                fmt_f64(codec_rate(q, 1)),
            ));
        }
    }

    let mut art = ArtifactSet::create(&out)?;
    art.write("codec.csv", &csv("sinr_db,q,n,error_rate,lemma3_rate,codec_rate", &rows))?;
    art.finish("codec", config_path.as_deref(), Some(seed))
}
