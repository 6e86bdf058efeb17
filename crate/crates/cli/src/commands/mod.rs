//! Subcommand implementations.

mod analyze;
mod census;
mod detect;
mod events;
mod ingest;
mod report;
mod simulate;

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::Context;

use acdn_core::detect::CityDb;
use acdn_core::flow::{FlowLine, FlowLogReader, FlowRecord, LineError};
use acdn_core::net::Slash24;

use crate::config::{Cli, Command, FileConfig};
use crate::{CliError, CliResult};

pub fn dispatch(cli: Cli) -> CliResult {
    let file_config = FileConfig::load(cli.config.as_ref())?;
    let threads = cli.threads.or(file_config.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // Ignore the error if a pool already exists (tests call this twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    match cli.command {
        Command::Simulate(args) => simulate::run(args, &file_config),
        Command::Detect(args) => detect::run(args, &file_config),
        Command::Census(args) => census::run(args, &file_config),
        Command::Ingest(args) => ingest::run(args, &file_config),
        Command::Analyze(args) => analyze::run(args, &file_config),
        Command::Events(args) => events::run(args, &file_config),
        Command::Report(args) => report::run(args, &file_config),
    }
}

/// Loads a city database.
pub(crate) fn load_cities(path: &Path) -> CliResult<CityDb> {
    let reader = crate::util::open_reader(path)?;
    CityDb::from_reader(reader)
        .map_err(|e| CliError::Data(anyhow::anyhow!("city db {}: {e}", path.display())))
}

/// Loads an anycast /24 set, one prefix per line.
pub(crate) fn load_slash24_set(path: &Path) -> CliResult<BTreeSet<Slash24>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading anycast set {}", path.display()))?;
    let mut set = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let s: Slash24 = trimmed.parse().map_err(|e| {
            CliError::Data(anyhow::anyhow!(
                "anycast set {} line {}: {e}",
                path.display(),
                idx + 1
            ))
        })?;
        set.insert(s);
    }
    Ok(set)
}

/// Reads a whole flow log into memory, separating records from error lines.
pub(crate) fn load_flows(
    path: &Path,
    reorder_window_s: f64,
) -> CliResult<(Vec<FlowRecord>, Vec<LineError>)> {
    let reader = crate::util::open_reader(path)?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for item in FlowLogReader::with_reorder_window(reader, reorder_window_s) {
        match item.with_context(|| format!("reading {}", path.display()))? {
            FlowLine::Record(r) => records.push(r),
            FlowLine::Malformed(e) => errors.push(e),
        }
    }
    Ok((records, errors))
}

/// Loads a `slash24,owner` map.
pub(crate) fn load_owners(
    path: &Path,
) -> CliResult<std::collections::BTreeMap<Slash24, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading owners {}", path.display()))?;
    let mut map = std::collections::BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((subnet, owner)) = trimmed.split_once(',') else {
            return Err(CliError::Data(anyhow::anyhow!(
                "owners {} line {}: missing comma",
                path.display(),
                idx + 1
            )));
        };
        let s: Slash24 = subnet.trim().parse().map_err(|e| {
            CliError::Data(anyhow::anyhow!(
                "owners {} line {}: {e}",
                path.display(),
                idx + 1
            ))
        })?;
        map.insert(s, owner.trim().to_string());
    }
    Ok(map)
}

/// Filesystem-safe name for a /24: the network address.
pub(crate) fn subnet_file_stem(s: Slash24) -> String {
    s.network().to_string()
}
