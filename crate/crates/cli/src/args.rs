use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "missioncli", version, about = "Nanosatellite payload mission simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

/// Scenario selection shared by every simulation subcommand.
#[derive(Clone, Debug, Default, Args)]
pub struct ScenarioArgs {
    /// Scenario TOML file; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub scenario: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides `duration_days`.
    #[arg(long, value_name = "N")]
    pub days: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a scenario to completion and write the report.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Directory for events.log, telemetry.csv, report.json, report.txt,
        /// manifest.txt and scenario.toml.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Print the JSON report instead of the text one.
        #[arg(long)]
        json: bool,
    },
    /// Summarise an event log.
    Report {
        /// Event log, or a run directory containing events.log.
        log: PathBuf,
        /// Also write summary.json and summary.txt here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Host the operator endpoint over HTTP.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_name = "HOST:PORT", default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Simulation steps per tick.
        #[arg(long, default_value_t = 6)]
        steps_per_tick: u32,
        /// Wall-clock milliseconds between ticks; 0 holds the clock.
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
    },
    /// Print contact windows for each scenario day.
    Passgen {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        json: bool,
    },
    /// Corrupt a protected file and show how the integrity monitor reacts.
    Inject {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Logical file name, e.g. flight/app.bin.
        #[arg(long, value_name = "NAME")]
        file: String,
        /// Corrupt the primary and every backup.
        #[arg(long)]
        all_copies: bool,
        /// Seed for the bit position.
        #[arg(long, value_name = "N", default_value_t = 1)]
        flip_seed: u64,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Compress a PNG or raw raster into a progressive stream.
    Encode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 75)]
        quality: u8,
        #[arg(long)]
        lossless: bool,
    },
    /// Decode a progressive stream (or a prefix of it) to PNG.
    Decode {
        input: PathBuf,
        output: PathBuf,
        /// Use at most this many segments.
        #[arg(long)]
        segments: Option<usize>,
    },
}
