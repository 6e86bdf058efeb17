//! `acdn analyze`: traffic summaries, activity series, discovery curve,
//! service tables, load-balancing CDFs, and the TTFB data-quality check.

use std::io::Write;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::json;

use acdn_core::characterize::{
    active_user_series, discovery_curve, fqdn_ip_map, lb_cdf, service_table, subnet_aggregates,
    summarize, LbScope, OthersSummary, SubnetSummary, DEFAULT_OTHERS_CUTOFF,
};
use acdn_core::events::ttfb_floor_warnings;
use acdn_core::flow::read_dns_log;
use acdn_core::net::Slash24;

use crate::config::{AnalyzeArgs, FileConfig};
use crate::util::{in_dir, write_atomic, write_json, write_ndjson, Manifest};
use crate::{CliError, CliResult};

/// `summary.json` document; also consumed by `acdn report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub window: (f64, f64),
    pub rows: Vec<SubnetSummary>,
    pub others: Option<OthersSummary>,
}

pub fn run(args: AnalyzeArgs, file_config: &FileConfig) -> CliResult {
    let bin_s = crate::config::pick(args.bin_s, file_config.bin_s, 3600);
    if bin_s == 0 {
        return Err(CliError::Usage("--bin-s must be positive".into()));
    }
    let others_cutoff = crate::config::pick(
        args.others_cutoff,
        file_config.others_cutoff,
        DEFAULT_OTHERS_CUTOFF,
    );
    let top_services = crate::config::pick(args.top_services, file_config.top_services, 10);
    let reorder = crate::config::pick(None, file_config.reorder_window_s, 60.0);

    let (flows, parse_errors) = super::load_flows(&args.flows, reorder)?;
    let anycast = super::load_slash24_set(&args.anycast_set)?;

    let window = match &args.window {
        Some(spec) => parse_window(spec)?,
        None => {
            let min = flows.iter().map(|f| f.ts_start).fold(f64::INFINITY, f64::min);
            let max = flows
                .iter()
                .map(|f| f.ts_start)
                .fold(f64::NEG_INFINITY, f64::max);
            if flows.is_empty() {
                (0.0, 0.0)
            } else {
                (min.floor(), max.floor() + 1.0)
            }
        }
    };

    let in_window = |f: &&acdn_core::flow::FlowRecord| {
        f.ts_start >= window.0 && f.ts_start < window.1
    };
    let anycast_flows: Vec<&acdn_core::flow::FlowRecord> = flows
        .iter()
        .filter(in_window)
        .filter(|f| anycast.contains(&f.slash24()))
        .collect();

    let out = &args.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = Manifest::new(
        "analyze",
        json!({
            "bin_s": bin_s,
            "others_cutoff": others_cutoff,
            "top_services": top_services,
            "window": [window.0, window.1],
        }),
    );

    // Per-/24 summary table.
    let table = summarize(
        subnet_aggregates(anycast_flows.iter().copied(), window),
        window,
        Some(others_cutoff),
    );
    let summary_path = in_dir(out, "summary.json");
    write_json(
        &summary_path,
        &SummaryDoc {
            window,
            rows: table.rows.clone(),
            others: table.others.clone(),
        },
    )?;
    let summary_csv = in_dir(out, "summary.csv");
    write_atomic(&summary_csv, |w| {
        writeln!(
            w,
            "slash24,distinct_ip32,volume_bytes,volume_gb,flows,users,fqdns"
        )?;
        for r in &table.rows {
            writeln!(
                w,
                "{},{},{},{:.3},{},{},{}",
                r.slash24,
                r.distinct_ip32,
                r.volume_bytes,
                r.volume_bytes as f64 / 1e9,
                r.flow_count,
                r.user_count,
                r.fqdn_count
            )?;
        }
        if let Some(o) = &table.others {
            writeln!(
                w,
                "Others({}),{},{},{:.3},{},{},{}",
                o.subnet_count,
                o.distinct_ip32,
                o.volume_bytes,
                o.volume_bytes as f64 / 1e9,
                o.flow_count,
                o.user_count,
                o.fqdn_count
            )?;
        }
        Ok(())
    })?;
    manifest.add_output(&summary_path)?;
    manifest.add_output(&summary_csv)?;

    // Fraction of web-active clients touching an anycast subnet per bin.
    let series = active_user_series(
        flows.iter().filter(in_window).collect::<Vec<_>>(),
        &anycast,
        bin_s,
    )
    .map_err(|e| CliError::Data(anyhow::anyhow!("user series: {e}")))?;
    let series_path = in_dir(out, "user_series.csv");
    write_atomic(&series_path, |w| {
        writeln!(w, "bin_start,fraction")?;
        for (bin, frac) in &series {
            writeln!(w, "{bin},{frac}")?;
        }
        Ok(())
    })?;
    manifest.add_output(&series_path)?;

    // Discovery of distinct anycast servers over time.
    let curve = discovery_curve(anycast_flows.iter().copied())
        .map_err(|e| CliError::Data(anyhow::anyhow!("discovery curve: {e}")))?;
    let discovery_path = in_dir(out, "discovery.csv");
    write_atomic(&discovery_path, |w| {
        writeln!(w, "ts,distinct_ip32")?;
        for (ts, n) in &curve {
            writeln!(w, "{ts},{n}")?;
        }
        Ok(())
    })?;
    manifest.add_output(&discovery_path)?;

    // Top services per summarized subnet.
    for row in &table.rows {
        let subnet_flows: Vec<&acdn_core::flow::FlowRecord> = anycast_flows
            .iter()
            .copied()
            .filter(|f| f.slash24() == row.slash24)
            .collect();
        let rows = service_table(subnet_flows, top_services);
        let path = in_dir(
            out,
            &format!("services_{}.csv", super::subnet_file_stem(row.slash24)),
        );
        write_atomic(&path, |w| {
            writeln!(w, "service,servers,volume_bytes,volume_mb,flows,users,fqdns")?;
            for r in &rows {
                writeln!(
                    w,
                    "{},{},{},{:.3},{},{},{}",
                    r.service,
                    r.servers,
                    r.volume_bytes,
                    r.volume_bytes as f64 / 1e6,
                    r.flows,
                    r.users,
                    r.fqdn_count
                )?;
            }
            Ok(())
        })?;
        manifest.add_output(&path)?;
    }

    // DNS load-balancing CDFs.
    if let Some(dns_path) = &args.dns {
        let (observations, _) = read_dns_log(crate::util::open_reader(dns_path)?)
            .with_context(|| format!("reading {}", dns_path.display()))?;
        let map = fqdn_ip_map(&observations);
        if !map.is_empty() {
            let global = lb_cdf(&map, LbScope::Global)
                .map_err(|e| CliError::Data(anyhow::anyhow!("global lb cdf: {e}")))?;
            let path = in_dir(out, "lb_global.csv");
            write_cdf(&path, &global)?;
            manifest.add_output(&path)?;
        }
        for subnet in &args.lb_subnet {
            let slash24: Slash24 = subnet
                .parse()
                .map_err(|e| CliError::Usage(format!("--lb-subnet {subnet}: {e}")))?;
            match lb_cdf(&map, LbScope::Within(slash24)) {
                Ok(cdf) => {
                    let path = in_dir(
                        out,
                        &format!("lb_{}.csv", super::subnet_file_stem(slash24)),
                    );
                    write_cdf(&path, &cdf)?;
                    manifest.add_output(&path)?;
                }
                Err(e) => {
                    return Err(CliError::Data(anyhow::anyhow!(
                        "scoped lb cdf for {slash24}: {e}"
                    )))
                }
            }
        }
        manifest.add_input(dns_path)?;
    }

    // TTFB floor check over everything in the window.
    let quality = ttfb_floor_warnings(
        &flows
            .iter()
            .filter(in_window)
            .cloned()
            .collect::<Vec<_>>(),
        bin_s,
    )
    .map_err(|e| CliError::Data(anyhow::anyhow!("quality check: {e}")))?;
    let quality_path = in_dir(out, "quality.ndjson");
    write_ndjson(&quality_path, &quality)?;
    manifest.add_output(&quality_path)?;

    let errors_path = in_dir(out, "errors.ndjson");
    write_ndjson(&errors_path, &parse_errors)?;
    manifest.add_output(&errors_path)?;

    eprintln!(
        "analyze: {} flows in window ({} anycast), {} summary rows, {} quality warnings",
        flows.iter().filter(in_window).count(),
        anycast_flows.len(),
        table.rows.len(),
        quality.len()
    );

    manifest.add_input(&args.flows)?;
    manifest.add_input(&args.anycast_set)?;
    manifest.finish(out)
}

fn write_cdf(path: &std::path::Path, cdf: &[acdn_core::characterize::CdfPoint]) -> CliResult {
    write_atomic(path, |w| {
        writeln!(w, "x,y")?;
        for p in cdf {
            writeln!(w, "{},{}", p.x, p.y)?;
        }
        Ok(())
    })
}

fn parse_window(spec: &str) -> CliResult<(f64, f64)> {
    let Some((a, b)) = spec.split_once(':') else {
        return Err(CliError::Usage(format!(
            "--window must be start:end, got {spec:?}"
        )));
    };
    let start: f64 = a
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid window start {a:?}")))?;
    let end: f64 = b
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid window end {b:?}")))?;
    if end < start {
        return Err(CliError::Usage("window end before start".into()));
    }
    Ok((start, end))
}
