//! `acdn events`: routing-change detection per /24.

use std::collections::BTreeMap;
use std::io::Write;

use anyhow::Context;
use serde_json::json;

use acdn_core::events::{
    build_series, build_ttl_series, correlate_events, detect_level_shifts,
    detect_ttl_pattern_changes, MetricKind, RoutingEvent, ShiftConfig, DEFAULT_MIN_SAMPLES,
    DEFAULT_MIN_SUPPORT,
};
use acdn_core::flow::FlowRecord;
use acdn_core::net::Slash24;

use crate::config::{EventsArgs, FileConfig};
use crate::util::{in_dir, write_atomic, write_ndjson, Manifest};
use crate::{CliError, CliResult};

pub fn run(args: EventsArgs, file_config: &FileConfig) -> CliResult {
    let bin_s = crate::config::pick(args.bin_s, file_config.bin_s, 3600);
    if bin_s == 0 {
        return Err(CliError::Usage("--bin-s must be positive".into()));
    }
    let cfg = ShiftConfig {
        abs_min_ms: crate::config::pick(args.abs_min_ms, file_config.abs_min_ms, 5.0),
        rel_min: crate::config::pick(args.rel_min, file_config.rel_min, 0.5),
        persistence_bins: crate::config::pick(
            args.persistence_bins,
            file_config.persistence_bins,
            2,
        ),
    };
    if cfg.persistence_bins == 0 {
        return Err(CliError::Usage("--persistence-bins must be positive".into()));
    }
    let min_samples = crate::config::pick(args.min_samples, file_config.min_samples, DEFAULT_MIN_SAMPLES);
    let min_support = crate::config::pick(args.min_support, file_config.min_support, DEFAULT_MIN_SUPPORT);
    let window_bins = crate::config::pick(args.window_bins, file_config.window_bins, 2);
    let reorder = crate::config::pick(None, file_config.reorder_window_s, 60.0);

    let (flows, parse_errors) = super::load_flows(&args.flows, reorder)?;

    let mut by_subnet: BTreeMap<Slash24, Vec<FlowRecord>> = BTreeMap::new();
    for f in flows {
        by_subnet.entry(f.slash24()).or_default().push(f);
    }

    let out = &args.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let series_dir = out.join("series");
    std::fs::create_dir_all(&series_dir)
        .with_context(|| format!("creating {}", series_dir.display()))?;

    let mut manifest = Manifest::new(
        "events",
        json!({
            "bin_s": bin_s,
            "abs_min_ms": cfg.abs_min_ms,
            "rel_min": cfg.rel_min,
            "persistence_bins": cfg.persistence_bins,
            "min_samples": min_samples,
            "min_support": min_support,
            "window_bins": window_bins,
        }),
    );

    let mut all_events: Vec<RoutingEvent> = Vec::new();
    for (slash24, subnet_flows) in &by_subnet {
        let data_err = |e: acdn_core::events::EventsError| {
            CliError::Data(anyhow::anyhow!("subnet {slash24}: {e}"))
        };
        let rtt = build_series(subnet_flows, *slash24, bin_s, MetricKind::Rtt, min_samples)
            .map_err(data_err)?;
        let ttfb = build_series(subnet_flows, *slash24, bin_s, MetricKind::Ttfb, min_samples)
            .map_err(data_err)?;
        let ttl = build_ttl_series(subnet_flows, *slash24, bin_s, min_support).map_err(data_err)?;

        let rtt_events = detect_level_shifts(&rtt, &cfg);
        let ttfb_events = detect_level_shifts(&ttfb, &cfg);
        let ttl_events = detect_ttl_pattern_changes(&ttl, cfg.persistence_bins);
        let merged = correlate_events(&rtt_events, &ttl_events, &ttfb_events, window_bins)
            .map_err(data_err)?;
        all_events.extend(merged);

        let stem = super::subnet_file_stem(*slash24);
        let rtt_path = series_dir.join(format!("{stem}_rtt.txt"));
        let ttfb_path = series_dir.join(format!("{stem}_ttfb.txt"));
        let ttl_path = series_dir.join(format!("{stem}_ttl.txt"));
        for (path, series) in [(&rtt_path, &rtt), (&ttfb_path, &ttfb)] {
            write_atomic(path, |w| {
                for b in &series.bins {
                    writeln!(w, "{} {} {}", b.bin_start, b.level, b.samples)?;
                }
                Ok(())
            })?;
            manifest.add_output(path)?;
        }
        write_atomic(&ttl_path, |w| {
            for b in &ttl.bins {
                let pattern: Vec<String> = b
                    .pattern
                    .iter()
                    .map(|(initial, hops)| format!("{initial}:{hops}"))
                    .collect();
                writeln!(w, "{} {}", b.bin_start, pattern.join(","))?;
            }
            Ok(())
        })?;
        manifest.add_output(&ttl_path)?;
    }

    all_events.sort_by(|a, b| {
        a.slash24
            .cmp(&b.slash24)
            .then_with(|| a.ts.cmp(&b.ts))
            .then_with(|| a.kind.cmp(&b.kind))
    });
    let events_path = in_dir(out, "events.ndjson");
    write_ndjson(&events_path, &all_events)?;
    manifest.add_output(&events_path)?;

    let errors_path = in_dir(out, "errors.ndjson");
    write_ndjson(&errors_path, &parse_errors)?;
    manifest.add_output(&errors_path)?;

    eprintln!(
        "events: {} subnets, {} events",
        by_subnet.len(),
        all_events.len()
    );

    manifest.add_input(&args.flows)?;
    manifest.finish(out)
}
