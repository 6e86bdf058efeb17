//! Command-line surface and configuration resolution.
//!
//! A JSON config file supplies defaults; explicit flags override it; built-in
//! defaults fill the rest.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "acdn", version, about = "Anycast CDN measurement pipeline")]
pub struct Cli {
    /// JSON config file with default thresholds.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel classification (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic campaigns, flow logs, and ground truth.
    Simulate(SimulateArgs),
    /// Classify measurement files into per-target anycast verdicts.
    Detect(DetectArgs),
    /// Run the full active census over targets, resolutions, and probes.
    Census(CensusArgs),
    /// Parse flow logs and annotate them with FQDNs from a DNS log.
    Ingest(IngestArgs),
    /// Aggregate annotated flows into traffic summaries and series.
    Analyze(AnalyzeArgs),
    /// Detect routing-change events per /24.
    Events(EventsArgs),
    /// Merge census, traffic, and event outputs into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario document (JSON).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Measurement file: `vp_id, vp_lat, vp_lon, target_ip, rtt_ms, ts`.
    #[arg(long)]
    pub measurements: PathBuf,
    /// City database for geolocation: `name, country, lat, lon, population`.
    #[arg(long)]
    pub cities: Option<PathBuf>,
    /// Propagation speed in km/ms.
    #[arg(long)]
    pub km_per_ms: Option<f64>,
    /// Output file (one JSON record per target).
    #[arg(long)]
    pub out: PathBuf,
    /// Warnings file (line-delimited JSON).
    #[arg(long)]
    pub warnings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CensusArgs {
    /// Ranked target list: `rank,url`.
    #[arg(long)]
    pub targets: PathBuf,
    /// Resolution map: `host,ip[,ip...]`.
    #[arg(long)]
    pub resolutions: PathBuf,
    /// Vantage points: `vp_id,lat,lon`.
    #[arg(long)]
    pub vps: PathBuf,
    /// Measurement file backing the prober.
    #[arg(long)]
    pub measurements: PathBuf,
    /// City database for geolocation.
    #[arg(long)]
    pub cities: Option<PathBuf>,
    /// Owner names: `slash24,owner`.
    #[arg(long)]
    pub owners: Option<PathBuf>,
    /// Conservative filter: anycast /24s below this location count are
    /// excluded (>= 2).
    #[arg(long)]
    pub min_locations: Option<usize>,
    /// Member /32s probed per /24.
    #[arg(long)]
    pub representatives: Option<usize>,
    #[arg(long)]
    pub km_per_ms: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Flow log.
    #[arg(long)]
    pub flows: PathBuf,
    /// DNS observation log: `ts client_id fqdn ip[,ip...]`.
    #[arg(long)]
    pub dns: PathBuf,
    /// Keep only flows into these /24s (one per line).
    #[arg(long)]
    pub anycast_set: Option<PathBuf>,
    /// Annotated flow log output.
    #[arg(long)]
    pub out: PathBuf,
    /// Error-record output (line-delimited JSON).
    #[arg(long)]
    pub errors: Option<PathBuf>,
    #[arg(long)]
    pub cache_capacity: Option<usize>,
    #[arg(long)]
    pub cache_ttl_s: Option<f64>,
    #[arg(long)]
    pub reorder_window_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Annotated flow log (unfiltered: web activity series needs all flows).
    #[arg(long)]
    pub flows: PathBuf,
    /// Anycast /24 set (one per line).
    #[arg(long)]
    pub anycast_set: PathBuf,
    /// DNS observation log for the load-balancing CDFs.
    #[arg(long)]
    pub dns: Option<PathBuf>,
    /// Analysis window `start:end` in UTC seconds (default: span of the log).
    #[arg(long)]
    pub window: Option<String>,
    /// Time bin for the user-activity series, seconds.
    #[arg(long)]
    pub bin_s: Option<u64>,
    /// Subnets with at most this many users fold into the Others row.
    #[arg(long)]
    pub others_cutoff: Option<u64>,
    /// Rows per service table.
    #[arg(long)]
    pub top_services: Option<usize>,
    /// Emit a within-subnet load-balancing CDF for this /24 (repeatable).
    #[arg(long)]
    pub lb_subnet: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EventsArgs {
    /// Annotated (optionally filtered) flow log.
    #[arg(long)]
    pub flows: PathBuf,
    #[arg(long)]
    pub bin_s: Option<u64>,
    #[arg(long)]
    pub abs_min_ms: Option<f64>,
    #[arg(long)]
    pub rel_min: Option<f64>,
    #[arg(long)]
    pub persistence_bins: Option<usize>,
    #[arg(long)]
    pub min_samples: Option<u32>,
    #[arg(long)]
    pub min_support: Option<u32>,
    /// Events within this many bins corroborate each other.
    #[arg(long)]
    pub window_bins: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Census report (JSON) from `acdn census`.
    #[arg(long)]
    pub census: PathBuf,
    /// Traffic summary (JSON) from `acdn analyze`.
    #[arg(long)]
    pub summary: PathBuf,
    /// Event log (line-delimited JSON) from `acdn events`.
    #[arg(long)]
    pub events: PathBuf,
    /// Owner names: `slash24,owner`.
    #[arg(long)]
    pub owners: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Optional defaults loaded from `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub km_per_ms: Option<f64>,
    pub min_locations: Option<usize>,
    pub representatives: Option<usize>,
    pub bin_s: Option<u64>,
    pub abs_min_ms: Option<f64>,
    pub rel_min: Option<f64>,
    pub persistence_bins: Option<usize>,
    pub min_samples: Option<u32>,
    pub min_support: Option<u32>,
    pub window_bins: Option<u64>,
    pub others_cutoff: Option<u64>,
    pub top_services: Option<usize>,
    pub reorder_window_s: Option<f64>,
    pub cache_capacity: Option<usize>,
    pub cache_ttl_s: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Flag, then config file, then built-in default.
pub fn pick<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
