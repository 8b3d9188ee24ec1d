//! `quantizer`: property checks and the cell table.
//!
//! Emits `cells.csv` (`cell,ring,sector,re,im` — every finite cell with its
//! representative) and `quantizer.json` (cell count, observed maximum
//! quantization error against the (pi+1)/nu bound over random samples from
//! the covered disk, rotation-closure result). With `--check-all` the main
//! results are also printed to standard output.

use calign::quantizer::{quantize, representative, rotate, QuantizedGain, QuantizerConfig};
use calign::rng::{stream_rng, StreamKind};
use clap::Args;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::artifact::{csv, fmt_f64, ArtifactSet};
use crate::config::{opt, pick, Settings};
use crate::error::{CliError, CliResult};
use crate::grid;

#[derive(Args, Debug)]
pub struct QuantizerArgs {
    /// Quantizer fineness [default: 2]
    #[arg(long)]
    pub nu: Option<String>,
    /// Subblock count L [default: 2]
    #[arg(long)]
    pub l: Option<String>,
    /// Samples for the max-error estimate [default: 100000]
    #[arg(long)]
    pub samples: Option<String>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<String>,
    /// Print the check results to standard output
    #[arg(long = "check-all")]
    pub check_all: bool,
    /// Flat key=value config file; flags override file values
    #[arg(long)]
    pub config: Option<String>,
    /// Output directory for artifacts [default: out]
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Serialize)]
struct QuantizerSummary {
    schema_version: u32,
    nu: u32,
    l: u32,
    cell_count: u64,
    finite_cell_count: u64,
    samples: u64,
    max_error_observed: f64,
    error_bound: f64,
    max_error_ok: bool,
    rotation_closure_ok: bool,
}

pub fn run(args: QuantizerArgs) -> CliResult<()> {
    let mut file = Settings::load(args.config.as_deref())?;
    let nu = opt("nu", pick(args.nu, file.take("nu")), 2, grid::scalar_u32)?;
    let l = opt("l", pick(args.l, file.take("l")), 2, grid::scalar_u32)?;
    let samples = opt("samples", pick(args.samples, file.take("samples")), 100_000, grid::scalar_u64)?;
    let seed = opt("seed", pick(args.seed, file.take("seed")), 0, grid::scalar_u64)?;
    let check_all = args.check_all
        || opt("check-all", file.take("check_all"), false, grid::scalar_bool)?;
    let out = pick(args.out, file.take("out")).unwrap_or_else(|| "out".to_string());
    let config_path = file.path().map(String::from);
    file.finish()?;

    let qcfg = QuantizerConfig::new(nu, l)?;
    let sectors = u32::try_from(qcfg.sectors())
        .map_err(|_| CliError::Usage("nu^2 * L exceeds the sector index range".to_string()))?;

    // Cell table with representatives.
    let mut cell_rows = Vec::with_capacity((qcfg.rings() as usize) * (sectors as usize));
    for ring in 1..=qcfg.rings() {
        for sector in 0..sectors {
            let cell = QuantizedGain::Cell { ring, sector };
            let rep = representative(&qcfg, cell).expect("finite cell has a representative");
            cell_rows.push(format!("{cell},{ring},{sector},{},{}", fmt_f64(rep.re), fmt_f64(rep.im)));
        }
    }

    // Max quantization error over the covered disk |h| <= nu.
    let mut rng = stream_rng(seed, StreamKind::Gain, [u64::from(nu), u64::from(l), 0, 0]);
    let mut max_error = 0.0f64;
    for _ in 0..samples {
        let r = f64::from(nu) * rng.gen::<f64>().sqrt();
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        let h = Complex64::from_polar(r, theta);
        if let Some(rep) = representative(&qcfg, quantize(&qcfg, h)) {
            max_error = max_error.max((h - rep).norm());
        }
    }
    let error_bound = qcfg.error_bound();
    let max_error_ok = max_error <= error_bound;

    // Rotation closure: rotating any finite cell stays finite, a full turn
    // is the identity, and rotation is invertible — all in exact index
    // arithmetic.
    let mut rotation_ok = true;
    for ring in 1..=qcfg.rings() {
        for sector in 0..sectors {
            let cell = QuantizedGain::Cell { ring, sector };
            rotation_ok &= rotate(&qcfg, cell, i64::from(l)) == cell;
            for j in 0..i64::from(l) {
                let rc = rotate(&qcfg, cell, j);
                rotation_ok &= rc.is_finite();
                rotation_ok &= rotate(&qcfg, rc, -j) == cell;
            }
        }
    }

    let summary = QuantizerSummary {
        schema_version: 1,
        nu,
        l,
        cell_count: qcfg.cell_count(),
        finite_cell_count: qcfg.cell_count() - 1,
        samples,
        max_error_observed: max_error,
        error_bound,
        max_error_ok,
        rotation_closure_ok: rotation_ok,
    };

    if check_all {
        println!("cell count {}", summary.cell_count);
        println!(
            "max-error bound {} (observed {} <= {})",
            if max_error_ok { "pass" } else { "FAIL" },
            fmt_f64(max_error),
            fmt_f64(error_bound),
        );
        println!("rotation closure {}", if rotation_ok { "pass" } else { "FAIL" });
    }

    let mut art = ArtifactSet::create(&out)?;
    art.write("cells.csv", &csv("cell,ring,sector,re,im", &cell_rows))?;
    art.write_json("quantizer.json", &summary)?;
    art.finish("quantizer", config_path.as_deref(), Some(seed))?;

    if !(max_error_ok && rotation_ok) {
        return Err(CliError::Runtime("quantizer property check failed".to_string()));
    }
    Ok(())
}
