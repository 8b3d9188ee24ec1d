//! `bounds`: capacity-bound sweep over a (K, P, D) grid.
//!
//! Emits `bounds.csv` with one row per grid point:
//! `k,p,d,lower,upper_exact,upper_relaxed,achievable,gap,cf_gap`
//! where lower = K log2 P - 7K^3 (clamped at 0), upper_exact =
//! K log2(1+4K^2 P), upper_relaxed = K log2 P + 5K log2 K, achievable =
//! the general-construction limit rate at the closed-form E[log c]
//! (clamped), gap = 7K^3 + 5K log2 K, and cf_gap = 4(D+1)K.

use calign::bounds::bound_report;
use clap::Args;

use crate::artifact::{csv, fmt_f64, ArtifactSet};
use crate::config::{opt, pick, req, Settings};
use crate::error::CliResult;
use crate::grid;

#[derive(Args, Debug)]
pub struct BoundsArgs {
    /// Transmitter counts K, comma-separated (e.g. 2,3,4). Required.
    #[arg(long)]
    pub k: Option<String>,
    /// Power grid: a:b:log (decades), a:b:step, or a comma list [default: 1:1e6:log]
    #[arg(long)]
    pub p: Option<String>,
    /// Network depths D, comma-separated [default: 1]
    #[arg(long)]
    pub d: Option<String>,
    /// Flat key=value config file; flags override file values
    #[arg(long)]
    pub config: Option<String>,
    /// Output directory for artifacts [default: out]
    #[arg(long)]
    pub out: Option<String>,
}

pub fn run(args: BoundsArgs) -> CliResult<()> {
    let mut file = Settings::load(args.config.as_deref())?;
    let ks = req("k", pick(args.k, file.take("k")), grid::usize_list)?;
    let ps = opt(
        "p",
        pick(args.p, file.take("p")),
        grid::f64_grid("1:1e6:log").expect("default grid"),
        grid::f64_grid,
    )?;
    let ds = opt("d", pick(args.d, file.take("d")), vec![1usize], grid::usize_list)?;
    let out = pick(args.out, file.take("out")).unwrap_or_else(|| "out".to_string());
    let config_path = file.path().map(String::from);
    file.finish()?;

    let mut rows = Vec::with_capacity(ks.len() * ps.len() * ds.len());
    for &k in &ks {
        for &p in &ps {
            for &d in &ds {
                let r = bound_report(k, p, d)?;
                rows.push(format!(
                    "{},{},{},{},{},{},{},{},{}",
                    r.k,
                    fmt_f64(r.p),
                    r.d,
                    fmt_f64(r.lower),
                    fmt_f64(r.upper_exact),
                    fmt_f64(r.upper_relaxed),
                    fmt_f64(r.achievable),
                    fmt_f64(r.gap),
                    fmt_f64(r.cf_gap),
                ));
            }
        }
    }

    let mut art = ArtifactSet::create(&out)?;
    art.write(
        "bounds.csv",
        &csv("k,p,d,lower,upper_exact,upper_relaxed,achievable,gap,cf_gap", &rows),
    )?;
    art.finish("bounds", config_path.as_deref(), None)
}
