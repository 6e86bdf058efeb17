//! `acdn ingest`: parse, annotate, and optionally filter a flow log.

use std::io::Write;

use anyhow::Context;
use serde::Serialize;
use serde_json::json;

use acdn_core::flow::{
    format_flow_line, read_dns_log, Annotator, DnsCache, FlowLine, FlowLogReader,
    DEFAULT_DNS_CAPACITY, DEFAULT_DNS_TTL_S, DEFAULT_REORDER_WINDOW_S,
};

use crate::config::{FileConfig, IngestArgs};
use crate::util::{write_atomic, write_ndjson, Manifest};
use crate::{CliError, CliResult};

#[derive(Debug, Serialize)]
struct SourcedLineError {
    source: &'static str,
    line: usize,
    message: String,
}

pub fn run(args: IngestArgs, file_config: &FileConfig) -> CliResult {
    let capacity = crate::config::pick(
        args.cache_capacity,
        file_config.cache_capacity,
        DEFAULT_DNS_CAPACITY,
    );
    if capacity == 0 {
        return Err(CliError::Usage("--cache-capacity must be positive".into()));
    }
    let ttl_s = crate::config::pick(args.cache_ttl_s, file_config.cache_ttl_s, DEFAULT_DNS_TTL_S);
    let reorder = crate::config::pick(
        args.reorder_window_s,
        file_config.reorder_window_s,
        DEFAULT_REORDER_WINDOW_S,
    );

    let (observations, dns_errors) = read_dns_log(crate::util::open_reader(&args.dns)?)
        .with_context(|| format!("reading {}", args.dns.display()))?;
    let anycast_set = args
        .anycast_set
        .as_ref()
        .map(|p| super::load_slash24_set(p))
        .transpose()?;

    let mut errors: Vec<SourcedLineError> = dns_errors
        .into_iter()
        .map(|e| SourcedLineError {
            source: "dns",
            line: e.line,
            message: e.message,
        })
        .collect();

    let flows_reader = FlowLogReader::with_reorder_window(
        crate::util::open_reader(&args.flows)?,
        reorder,
    );
    let annotator = Annotator::new(flows_reader, &observations, DnsCache::new(capacity, ttl_s));

    let mut kept = 0u64;
    let mut dropped = 0u64;
    let mut annotated = 0u64;
    write_atomic(&args.out, |w| {
        for item in annotator {
            match item? {
                FlowLine::Record(rec) => {
                    if let Some(set) = &anycast_set {
                        if !set.contains(&rec.slash24()) {
                            dropped += 1;
                            continue;
                        }
                    }
                    if rec.fqdn.is_some() {
                        annotated += 1;
                    }
                    kept += 1;
                    writeln!(w, "{}", format_flow_line(&rec))?;
                }
                FlowLine::Malformed(e) => errors.push(SourcedLineError {
                    source: "flows",
                    line: e.line,
                    message: e.message,
                }),
            }
        }
        Ok(())
    })?;

    if let Some(errors_path) = &args.errors {
        write_ndjson(errors_path, &errors)?;
    }
    eprintln!(
        "ingest: kept {kept} flows ({annotated} annotated), dropped {dropped}, {} error lines",
        errors.len()
    );

    let out_dir = args.out.parent().unwrap_or(std::path::Path::new("."));
    let mut manifest = Manifest::new(
        "ingest",
        json!({
            "cache_capacity": capacity,
            "cache_ttl_s": ttl_s,
            "reorder_window_s": reorder,
            "filtered": anycast_set.is_some(),
        }),
    );
    manifest.add_input(&args.flows)?;
    manifest.add_input(&args.dns)?;
    if let Some(p) = &args.anycast_set {
        manifest.add_input(p)?;
    }
    manifest.add_output(&args.out)?;
    if let Some(p) = &args.errors {
        manifest.add_output(p)?;
    }
    manifest.finish(out_dir)
}
