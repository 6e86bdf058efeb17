//! `acdn report`: merge the census, traffic summary, and event log into one
//! table, one row per /24.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use anyhow::Context;
use serde::Serialize;
use serde_json::json;

use acdn_core::census::{CensusReport, Continent, SubnetVerdict};
use acdn_core::events::{EventKind, RoutingEvent};
use acdn_core::net::Slash24;

use super::analyze::SummaryDoc;
use crate::config::{FileConfig, ReportArgs};
use crate::util::{in_dir, write_atomic, write_json, Manifest};
use crate::CliResult;

const CONTINENTS: [Continent; 6] = [
    Continent::Europe,
    Continent::NorthAmerica,
    Continent::SouthAmerica,
    Continent::Asia,
    Continent::Africa,
    Continent::Oceania,
];

#[derive(Debug, Serialize)]
struct ReportRow {
    slash24: Slash24,
    owner: Option<String>,
    verdict: Option<SubnetVerdict>,
    locations: Option<usize>,
    continents: Vec<&'static str>,
    distinct_ip32: u64,
    volume_bytes: u64,
    volume_gb: f64,
    flows: u64,
    users: u64,
    fqdns: u64,
    rtt_change: bool,
    ttl_change: bool,
    ttfb_change: bool,
}

pub fn run(args: ReportArgs, _file_config: &FileConfig) -> CliResult {
    let census: CensusReport = serde_json::from_str(
        &std::fs::read_to_string(&args.census)
            .with_context(|| format!("reading {}", args.census.display()))?,
    )
    .with_context(|| format!("parsing {}", args.census.display()))?;
    let summary: SummaryDoc = serde_json::from_str(
        &std::fs::read_to_string(&args.summary)
            .with_context(|| format!("reading {}", args.summary.display()))?,
    )
    .with_context(|| format!("parsing {}", args.summary.display()))?;

    let mut events: Vec<RoutingEvent> = Vec::new();
    for (idx, line) in std::fs::read_to_string(&args.events)
        .with_context(|| format!("reading {}", args.events.display()))?
        .lines()
        .enumerate()
    {
        if line.trim().is_empty() {
            continue;
        }
        let e: RoutingEvent = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", args.events.display(), idx + 1))?;
        events.push(e);
    }

    let owners = args
        .owners
        .as_ref()
        .map(|p| super::load_owners(p))
        .transpose()?
        .unwrap_or_default();

    let census_by_subnet: BTreeMap<Slash24, &acdn_core::census::SubnetReport> = census
        .subnets
        .iter()
        .map(|s| (s.slash24, s))
        .collect();
    let mut changes: BTreeMap<Slash24, BTreeSet<EventKind>> = BTreeMap::new();
    for e in &events {
        changes
            .entry(e.slash24)
            .or_default()
            .extend(e.corroborated_by.iter().copied());
    }

    let rows: Vec<ReportRow> = summary
        .rows
        .iter()
        .map(|r| {
            let census_entry = census_by_subnet.get(&r.slash24);
            let kinds = changes.get(&r.slash24);
            let has = |k: EventKind| kinds.is_some_and(|s| s.contains(&k));
            ReportRow {
                slash24: r.slash24,
                owner: owners
                    .get(&r.slash24)
                    .cloned()
                    .or_else(|| census_entry.and_then(|c| c.owner.clone())),
                verdict: census_entry.map(|c| c.verdict),
                locations: census_entry.map(|c| c.location_count),
                continents: census_entry
                    .map(|c| {
                        CONTINENTS
                            .iter()
                            .filter(|cont| c.continents.contains(cont))
                            .map(|cont| cont.code())
                            .collect()
                    })
                    .unwrap_or_default(),
                distinct_ip32: r.distinct_ip32,
                volume_bytes: r.volume_bytes,
                volume_gb: r.volume_bytes as f64 / 1e9,
                flows: r.flow_count,
                users: r.user_count,
                fqdns: r.fqdn_count,
                rtt_change: has(EventKind::RttShift),
                ttl_change: has(EventKind::TtlPatternChange),
                ttfb_change: has(EventKind::TtfbShift),
            }
        })
        .collect();

    let out = &args.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let json_path = in_dir(out, "table.json");
    write_json(
        &json_path,
        &json!({
            "window": summary.window,
            "rows": rows,
            "others": summary.others,
        }),
    )?;

    let csv_path = in_dir(out, "table.csv");
    write_atomic(&csv_path, |w| {
        writeln!(
            w,
            "slash24,owner,locations,EU,NA,SA,AS,AF,OC,ip32,volume_gb,flows_k,users,fqdns,rtt_change,ttl_change,ttfb_change"
        )?;
        let mark = |b: bool| if b { "yes" } else { "" };
        for r in &rows {
            let cont = |c: Continent| {
                if r.continents.contains(&c.code()) {
                    "yes"
                } else {
                    ""
                }
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{:.3},{:.1},{},{},{},{},{}",
                r.slash24,
                r.owner.as_deref().unwrap_or("-"),
                r.locations.map_or("-".to_string(), |n| n.to_string()),
                cont(Continent::Europe),
                cont(Continent::NorthAmerica),
                cont(Continent::SouthAmerica),
                cont(Continent::Asia),
                cont(Continent::Africa),
                cont(Continent::Oceania),
                r.distinct_ip32,
                r.volume_gb,
                r.flows as f64 / 1e3,
                r.users,
                r.fqdns,
                mark(r.rtt_change),
                mark(r.ttl_change),
                mark(r.ttfb_change),
            )?;
        }
        if let Some(o) = &summary.others {
            writeln!(
                w,
                "Others({}),-,-,,,,,,,{},{:.3},{:.1},{},{},,,",
                o.subnet_count,
                o.distinct_ip32,
                o.volume_bytes as f64 / 1e9,
                o.flow_count as f64 / 1e3,
                o.user_count,
                o.fqdn_count,
            )?;
        }
        Ok(())
    })?;

    eprintln!("report: {} rows", rows.len());

    let mut manifest = Manifest::new("report", json!({}));
    manifest.add_input(&args.census)?;
    manifest.add_input(&args.summary)?;
    manifest.add_input(&args.events)?;
    if let Some(p) = &args.owners {
        manifest.add_input(p)?;
    }
    manifest.add_output(&json_path)?;
    manifest.add_output(&csv_path)?;
    manifest.finish(out)
}
