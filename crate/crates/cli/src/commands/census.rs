//! `acdn census`: the full active pipeline over file-backed effects.

use anyhow::Context;
use serde_json::json;

use acdn_core::census::{
    export_geojson, extract_hostnames, filter_conservative, resolve_targets, run_census,
    CensusOptions, CensusWarning, StaticProber, StaticResolver, TargetList,
};
use acdn_core::detect::{read_measurements, read_vantage_points};
use acdn_core::geo::DEFAULT_FIBER_KM_PER_MS;

use crate::config::{CensusArgs, FileConfig};
use crate::util::{in_dir, write_json, write_ndjson, Manifest};
use crate::{CliError, CliResult};

pub fn run(args: CensusArgs, file_config: &FileConfig) -> CliResult {
    let min_locations = crate::config::pick(args.min_locations, file_config.min_locations, 3);
    if min_locations < 2 {
        return Err(CliError::Usage(format!(
            "--min-locations must be at least 2, got {min_locations}"
        )));
    }
    let representatives =
        crate::config::pick(args.representatives, file_config.representatives, 4);
    if representatives == 0 {
        return Err(CliError::Usage("--representatives must be positive".into()));
    }
    let km_per_ms = crate::config::pick(
        args.km_per_ms,
        file_config.km_per_ms,
        DEFAULT_FIBER_KM_PER_MS,
    );

    let mut warnings: Vec<CensusWarning> = Vec::new();

    let (targets, target_warnings) =
        TargetList::from_reader(crate::util::open_reader(&args.targets)?)
            .map_err(|e| CliError::Data(anyhow::anyhow!("target list: {e}")))?;
    warnings.extend(target_warnings);

    let (hosts, extract_warnings) = extract_hostnames(&targets);
    warnings.extend(extract_warnings);

    let (resolver, resolver_warnings) =
        StaticResolver::from_reader(crate::util::open_reader(&args.resolutions)?)
            .with_context(|| format!("reading {}", args.resolutions.display()))?;
    warnings.extend(resolver_warnings);

    let (resolved, resolve_warnings) = resolve_targets(&hosts, &resolver);
    warnings.extend(resolve_warnings);

    let (vps, vp_warnings) = read_vantage_points(crate::util::open_reader(&args.vps)?)
        .with_context(|| format!("reading {}", args.vps.display()))?;
    warnings.extend(
        vp_warnings
            .into_iter()
            .map(|w| CensusWarning::new("vps", &format!("line {}", w.line), &w.message)),
    );

    let (measurements, m_warnings) =
        read_measurements(crate::util::open_reader(&args.measurements)?)
            .with_context(|| format!("reading {}", args.measurements.display()))?;
    warnings.extend(
        m_warnings
            .into_iter()
            .map(|w| CensusWarning::new("measurements", &format!("line {}", w.line), &w.message)),
    );
    let prober = StaticProber::from_measurements(&measurements);

    let cities = args
        .cities
        .as_ref()
        .map(|p| super::load_cities(p))
        .transpose()?;

    let opts = CensusOptions {
        representatives_per_slash24: representatives,
        km_per_ms,
        campaign_ts: measurements.first().map(|m| m.timestamp).unwrap_or(0),
    };
    let (mut report, census_warnings) =
        run_census(&resolved, &prober, &vps, cities.as_ref(), &opts);
    warnings.extend(census_warnings);
    report.stats.urls = targets.entries().len() as u64;
    report.stats.hostnames = hosts.len() as u64;

    if let Some(owners_path) = &args.owners {
        let owners = super::load_owners(owners_path)?;
        for subnet in &mut report.subnets {
            subnet.owner = owners.get(&subnet.slash24).cloned();
        }
    }

    let report = filter_conservative(report, min_locations)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let out = &args.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let report_path = in_dir(out, "report.json");
    let geojson_path = in_dir(out, "map.geojson");
    let warnings_path = in_dir(out, "warnings.ndjson");
    write_json(&report_path, &report)?;
    write_json(&geojson_path, &export_geojson(&report))?;
    write_ndjson(&warnings_path, &warnings)?;

    eprintln!(
        "census: {} /24s ({} anycast), {} warnings",
        report.subnets.len(),
        report.anycast_slash24s().len(),
        warnings.len()
    );

    let mut manifest = Manifest::new(
        "census",
        json!({
            "min_locations": min_locations,
            "representatives": representatives,
            "km_per_ms": km_per_ms,
        }),
    );
    for input in [
        Some(&args.targets),
        Some(&args.resolutions),
        Some(&args.vps),
        Some(&args.measurements),
        args.cities.as_ref(),
        args.owners.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        manifest.add_input(input)?;
    }
    manifest.add_output(&report_path)?;
    manifest.add_output(&geojson_path)?;
    manifest.add_output(&warnings_path)?;
    manifest.finish(out)
}
