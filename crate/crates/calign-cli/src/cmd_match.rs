//! `match`: gain matching statistics on one fading block.
//!
//! Draws a single K x K iid-Rayleigh block, runs the typicality check and
//! the greedy matcher, re-verifies every tuple with the independent
//! rotation verifier, and emits `tuples.csv`
//! (`t1,cell_m_k…,tuple_id` — base cells as ring:sector strings) plus
//! `match.json` with the matched fraction and typicality report.

use calign::fading::{generate_at, FadingConfig, Process};
use calign::matcher::{check_typicality, match_tuples, verify_tuples, MatchPattern, TypicalityReport};
use calign::quantizer::QuantizerConfig;
use clap::Args;
use serde::Serialize;

use crate::artifact::{csv, ArtifactSet};
use crate::config::{opt, opt_some, pick, Settings};
use crate::error::{CliError, CliResult};
use crate::grid;

#[derive(Args, Debug)]
pub struct MatchArgs {
    /// Transmitters [default: 2]
    #[arg(long)]
    pub k: Option<String>,
    /// Two-user recursion depth L (K = 2 only; excludes --i) [default: 2]
    #[arg(long)]
    pub l: Option<String>,
    /// General-construction exponent limit I (excludes --l)
    #[arg(long)]
    pub i: Option<String>,
    /// Quantizer fineness [default: 2]
    #[arg(long)]
    pub nu: Option<String>,
    /// Block length in channel uses (accepts 4e5) [default: 100000]
    #[arg(long)]
    pub t: Option<String>,
    /// Typicality slack in [0,1] [default: 0.2]
    #[arg(long)]
    pub eta: Option<String>,
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

#[derive(Serialize)]
struct MatchSummary {
    schema_version: u32,
    k: usize,
    mode: &'static str,
    l: u32,
    i: Option<u32>,
    nu: u32,
    t: usize,
    eta: f64,
    seed: u64,
    t_used: usize,
    tuple_count: usize,
    matched_fraction: f64,
    verifier_pass: bool,
    typicality: TypicalityReport,
}

pub fn run(args: MatchArgs) -> CliResult<()> {
    let mut file = Settings::load(args.config.as_deref())?;
    let k = opt("k", pick(args.k, file.take("k")), 2, grid::scalar_usize)?;
    let l = opt_some("l", pick(args.l, file.take("l")), grid::scalar_u32)?;
    let i = opt_some("i", pick(args.i, file.take("i")), grid::scalar_u32)?;
    let nu = opt("nu", pick(args.nu, file.take("nu")), 2, grid::scalar_u32)?;
    let t = opt("t", pick(args.t, file.take("t")), 100_000, grid::scalar_usize)?;
    let eta = opt("eta", pick(args.eta, file.take("eta")), 0.2, grid::scalar_f64)?;
    let seed = opt("seed", pick(args.seed, file.take("seed")), 0, grid::scalar_u64)?;
    let out = pick(args.out, file.take("out")).unwrap_or_else(|| "out".to_string());
    let config_path = file.path().map(String::from);
    file.finish()?;

    let (pattern, mode) = match (l, i) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "give either --l (two-user) or --i (general), not both".to_string(),
            ))
        }
        (None, Some(i)) => (MatchPattern::general(k, i)?, "general"),
        (Some(l), None) => {
            if k != 2 {
                return Err(CliError::Usage("--l (two-user mode) needs --k 2".to_string()));
            }
            (MatchPattern::two_user(l)?, "two_user")
        }
        (None, None) => {
            if k != 2 {
                return Err(CliError::Usage(
                    "for k != 2 give --i (general construction)".to_string(),
                ));
            }
            (MatchPattern::two_user(2)?, "two_user")
        }
    };
    let qcfg = QuantizerConfig::new(nu, pattern.l)?;
    let fcfg = FadingConfig { k, t, process: Process::Iid, seed };
    eprintln!("match: drawing {t} slots and matching (L = {})", pattern.l);
    let seq = generate_at(&fcfg, 0, 0)?;
    let typicality = check_typicality(&seq, &qcfg, pattern.l, eta)?;
    let result = match_tuples(&seq, &qcfg, &pattern)?;
    verify_tuples(&seq, &qcfg, &pattern, &result.tuples)?;

    let mut header = String::from("t1");
    for m in 0..k {
        for kk in 0..k {
            header.push_str(&format!(",cell_{m}_{kk}"));
        }
    }
    header.push_str(",tuple_id");
    let rows: Vec<String> = result
        .tuples
        .iter()
        .enumerate()
        .map(|(id, tuple)| {
            let mut row = tuple.slots[0].to_string();
            for cell in &tuple.base {
                row.push_str(&format!(",{cell}"));
            }
            row.push_str(&format!(",{id}"));
            row
        })
        .collect();

    let summary = MatchSummary {
        schema_version: 1,
        k,
        mode,
        l: pattern.l,
        i,
        nu,
        t,
        eta,
        seed,
        t_used: result.t_used,
        tuple_count: result.tuples.len(),
        matched_fraction: result.matched_fraction,
        verifier_pass: true,
        typicality,
    };

    let mut art = ArtifactSet::create(&out)?;
    art.write("tuples.csv", &csv(&header, &rows))?;
    art.write_json("match.json", &summary)?;
    art.finish("match", config_path.as_deref(), Some(seed))
}
