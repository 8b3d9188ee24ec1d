//! `simulate`: full network Monte Carlo over an optional power grid.
//!
//! Emits one `report_NNN.json` per power point (the complete
//! `NetworkReport`), `layers.csv` with one row per (point, layer),
//! `network.csv` with one row per point, and `manifest.json`. Progress goes
//! to standard error only.

use calign::fading::Process;
use calign::netsim::{run_multilayer, ChannelMode, ExperimentConfig, NetworkReport, SchemeMode, TupleSource};
use clap::Args;
use serde::Serialize;

use crate::artifact::{csv, fmt_f64, ArtifactSet};
use crate::config::{opt, opt_some, pick, Settings};
use crate::error::{CliError, CliResult};
use crate::grid;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Transmitters per layer [default: 2]
    #[arg(long)]
    pub k: Option<String>,
    /// Network depth D (layers) [default: 1]
    #[arg(long)]
    pub d: Option<String>,
    /// Power grid: a:b:log, a:b:step, or a comma list [default: 100]
    #[arg(long)]
    pub p: Option<String>,
    /// Block length per layer in channel uses [default: 4096]
    #[arg(long)]
    pub t: Option<String>,
    /// Two-user recursion depth L (K = 2 only; excludes --i) [default: 2]
    #[arg(long)]
    pub l: Option<String>,
    /// General-construction exponent limit I (excludes --l)
    #[arg(long)]
    pub i: Option<String>,
    /// Quantizer fineness [default: 4]
    #[arg(long)]
    pub nu: Option<String>,
    /// Typicality slack in [0,1] [default: 0.2]
    #[arg(long)]
    pub eta: Option<String>,
    /// Pinned prime modulus; omit for the smallest-safe-prime policy
    #[arg(long)]
    pub q: Option<String>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<String>,
    /// Monte Carlo trials [default: 10]
    #[arg(long)]
    pub trials: Option<String>,
    /// Channel: noisy | noiseless [default: noisy]
    #[arg(long)]
    pub channel: Option<String>,
    /// Tuple source: matched | synthesized [default: matched]
    #[arg(long)]
    pub source: Option<String>,
    /// Synthesized tuples per layer (source = synthesized) [default: 64]
    #[arg(long)]
    pub count: Option<String>,
    /// Fading process: iid | ar1 [default: iid]
    #[arg(long)]
    pub process: Option<String>,
    /// AR(1) coefficient (process = ar1) [default: 0.9]
    #[arg(long)]
    pub rho: Option<String>,
    /// Flat key=value config file; flags override file values
    #[arg(long)]
    pub config: Option<String>,
    /// Output directory for artifacts [default: out]
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Serialize)]
struct ReportArtifact<'a> {
    schema_version: u32,
    report: &'a NetworkReport,
}

pub fn run(args: SimulateArgs) -> CliResult<()> {
    let mut file = Settings::load(args.config.as_deref())?;
    let k = opt("k", pick(args.k, file.take("k")), 2, grid::scalar_usize)?;
    let layers = opt("d", pick(args.d, file.take("d")), 1, grid::scalar_usize)?;
    let ps = opt("p", pick(args.p, file.take("p")), vec![100.0], grid::f64_grid)?;
    let t = opt("t", pick(args.t, file.take("t")), 4096, grid::scalar_usize)?;
    let l = opt_some("l", pick(args.l, file.take("l")), grid::scalar_u32)?;
    let i = opt_some("i", pick(args.i, file.take("i")), grid::scalar_u32)?;
    let nu = opt("nu", pick(args.nu, file.take("nu")), 4, grid::scalar_u32)?;
    let eta = opt("eta", pick(args.eta, file.take("eta")), 0.2, grid::scalar_f64)?;
    let q = opt_some("q", pick(args.q, file.take("q")), grid::scalar_u64)?;
    let seed = opt("seed", pick(args.seed, file.take("seed")), 0, grid::scalar_u64)?;
    let trials = opt("trials", pick(args.trials, file.take("trials")), 10, grid::scalar_u64)?;
    let channel_raw =
        pick(args.channel, file.take("channel")).unwrap_or_else(|| "noisy".to_string());
    let source_raw = pick(args.source, file.take("source")).unwrap_or_else(|| "matched".to_string());
    let count = opt("count", pick(args.count, file.take("count")), 64, grid::scalar_usize)?;
    let process_raw = pick(args.process, file.take("process")).unwrap_or_else(|| "iid".to_string());
    let rho = opt("rho", pick(args.rho, file.take("rho")), 0.9, grid::scalar_f64)?;
    let out = pick(args.out, file.take("out")).unwrap_or_else(|| "out".to_string());
    let config_path = file.path().map(String::from);
    file.finish()?;

    let mode = match (l, i) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "give either --l (two-user) or --i (general), not both".to_string(),
            ))
        }
        (None, Some(i)) => SchemeMode::General { i },
        (Some(l), None) => SchemeMode::TwoUser { l },
        (None, None) => SchemeMode::TwoUser { l: 2 },
    };
    let channel = match channel_raw.as_str() {
        "noisy" => ChannelMode::Noisy,
        "noiseless" => ChannelMode::NoiselessExact,
        other => return Err(CliError::Usage(format!("unknown channel {other:?} (noisy|noiseless)"))),
    };
    let source = match source_raw.as_str() {
        "matched" => TupleSource::Matched,
        "synthesized" => TupleSource::Synthesized { count },
        other => {
            return Err(CliError::Usage(format!(
                "unknown source {other:?} (matched|synthesized)"
            )))
        }
    };
    let process = match process_raw.as_str() {
        "iid" => Process::Iid,
        "ar1" => Process::Ar1 { rho },
        other => return Err(CliError::Usage(format!("unknown process {other:?} (iid|ar1)"))),
    };

    let mut art = ArtifactSet::create(&out)?;
    let mut layer_rows = Vec::new();
    let mut network_rows = Vec::new();
    for (pi, &p) in ps.iter().enumerate() {
        eprintln!("simulate: point {}/{} (p = {p})", pi + 1, ps.len());
        let cfg = ExperimentConfig {
            k,
            layers,
            p,
            t,
            mode,
            nu,
            eta,
            q,
            seed,
            trials,
            channel,
            source,
            process,
        };
        let report = run_multilayer(&cfg)?;
        art.write_json(
            &format!("report_{pi:03}.json"),
            &ReportArtifact { schema_version: 1, report: &report },
        )?;
        for layer in &report.layers {
            layer_rows.push(format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(p),
                layer.layer,
                layer.trials,
                fmt_f64(layer.outage_fraction),
                fmt_f64(layer.matched_fraction),
                fmt_f64(layer.mean_tuples),
                fmt_f64(layer.dropped_group_fraction),
                layer.streams_per_tuple,
                fmt_f64(layer.rate_formula),
                fmt_f64(layer.empirical_rate),
                fmt_f64(layer.rate_ci[0]),
                fmt_f64(layer.rate_ci[1]),
                layer.sinr.count,
                fmt_f64(layer.sinr.min),
                fmt_f64(layer.sinr.mean),
                fmt_f64(layer.sinr.max),
                fmt_f64(layer.sinr.min_margin),
                fmt_f64(layer.sinr_ci[0]),
                fmt_f64(layer.sinr_ci[1]),
                fmt_f64(layer.equation_error_rate),
                fmt_f64(layer.layer_error_rate),
                fmt_f64(layer.mean_q),
            ));
        }
        network_rows.push(format!(
            "{},{},{},{},{},{},{},{}",
            fmt_f64(p),
            report.layers.len(),
            fmt_f64(report.end_to_end_rate),
            fmt_f64(report.end_to_end_error_rate),
            fmt_f64(report.per_layer_error_sum),
            report.union_bound_satisfied,
            fmt_f64(report.cutset_upper),
            fmt_f64(report.capacity_lower),
        ));
    }

    art.write(
        "layers.csv",
        &csv(
            "p,layer,trials,outage_fraction,matched_fraction,mean_tuples,dropped_group_fraction,\
             streams_per_tuple,rate_formula,empirical_rate,rate_ci_lo,rate_ci_hi,sinr_count,\
             sinr_min,sinr_mean,sinr_max,sinr_min_margin,sinr_ci_lo,sinr_ci_hi,\
             equation_error_rate,layer_error_rate,mean_q",
            &layer_rows,
        ),
    )?;
    art.write(
        "network.csv",
        &csv(
            "p,layers,end_to_end_rate,end_to_end_error_rate,per_layer_error_sum,\
             union_bound_satisfied,cutset_upper,capacity_lower",
            &network_rows,
        ),
    )?;
    art.finish("simulate", config_path.as_deref(), Some(seed))
}
