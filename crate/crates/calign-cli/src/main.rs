//! Experiment driver for the computation-alignment simulator.
//!
//! Five subcommands: `bounds` (closed-form bound sweeps), `simulate` (full
//! network Monte Carlo), `codec` (lattice codec AWGN sweeps), `match`
//! (gain matching statistics), and `quantizer` (quantizer property
//! checks). Every subcommand reads an optional flat key=value config file
//! (flags override file values), writes its artifacts plus a
//! `manifest.json` with content hashes into the output directory, and is
//! byte-for-byte reproducible from its arguments and master seed. Progress
//! goes to standard error; artifacts carry no timestamps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod artifact;
mod cmd_bounds;
mod cmd_codec;
mod cmd_match;
mod cmd_quantizer;
mod cmd_simulate;
mod config;
mod error;
mod grid;

use clap::{CommandFactory, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "calign",
    version,
    about = "Computation-alignment experiment driver",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Capacity-bound sweep over a (K, P, D) grid -> bounds.csv
    Bounds(cmd_bounds::BoundsArgs),
    /// Network Monte Carlo -> report JSONs, layers.csv, network.csv
    Simulate(cmd_simulate::SimulateArgs),
    /// Lattice codec AWGN error-rate sweep -> codec.csv
    Codec(cmd_codec::CodecArgs),
    /// Gain matching statistics on one fading block -> tuples.csv, match.json
    #[command(name = "match")]
    Match(cmd_match::MatchArgs),
    /// Quantizer property checks -> cells.csv, quantizer.json
    Quantizer(cmd_quantizer::QuantizerArgs),
}

fn main() {
    let cli = Cli::parse();
    let sub = match &cli.command {
        Command::Bounds(_) => "bounds",
        Command::Simulate(_) => "simulate",
        Command::Codec(_) => "codec",
        Command::Match(_) => "match",
        Command::Quantizer(_) => "quantizer",
    };
    let result = match cli.command {
        Command::Bounds(args) => cmd_bounds::run(args),
        Command::Simulate(args) => cmd_simulate::run(args),
        Command::Codec(args) => cmd_codec::run(args),
        Command::Match(args) => cmd_match::run(args),
        Command::Quantizer(args) => cmd_quantizer::run(args),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            let mut cmd = Cli::command();
            let usage = cmd
                .find_subcommand_mut(sub)
                .expect("subcommand is registered")
                .render_usage();
            eprintln!("error: {msg}\n\n{usage}\n\nFor more information, try '--help'.");
            std::process::exit(2);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}
