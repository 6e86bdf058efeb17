//! `acdn detect`: per-target anycast classification of a measurement file.

use std::io::Write;

use anyhow::Context;
use serde_json::json;

use acdn_core::detect::{classify_batch, group_by_target, read_measurements, TargetOutcome, Verdict};
use acdn_core::geo::DEFAULT_FIBER_KM_PER_MS;

use crate::config::{DetectArgs, FileConfig};
use crate::util::{write_atomic, write_ndjson, Manifest};
use crate::{CliError, CliResult};

pub fn run(args: DetectArgs, file_config: &FileConfig) -> CliResult {
    let km_per_ms = crate::config::pick(
        args.km_per_ms,
        file_config.km_per_ms,
        DEFAULT_FIBER_KM_PER_MS,
    );
    if !(km_per_ms.is_finite() && km_per_ms > 0.0) {
        return Err(CliError::Usage(format!(
            "--km-per-ms must be positive, got {km_per_ms}"
        )));
    }

    let reader = crate::util::open_reader(&args.measurements)?;
    let (measurements, input_warnings) = read_measurements(reader)
        .with_context(|| format!("reading {}", args.measurements.display()))?;
    let cities = args
        .cities
        .as_ref()
        .map(|p| super::load_cities(p))
        .transpose()?;

    let groups = group_by_target(measurements);
    let outcomes = classify_batch(&groups, cities.as_ref(), km_per_ms);
    verify_outcomes(&outcomes)?;

    write_atomic(&args.out, |w| {
        for o in &outcomes {
            writeln!(w, "{}", serde_json::to_string(o).expect("serializable"))?;
        }
        Ok(())
    })?;
    if let Some(warnings_path) = &args.warnings {
        write_ndjson(warnings_path, &input_warnings)?;
    }

    let anycast = outcomes
        .iter()
        .filter_map(TargetOutcome::as_classified)
        .filter(|r| r.verdict == Verdict::Anycast)
        .count();
    eprintln!(
        "detect: {} targets, {} anycast, {} warnings",
        outcomes.len(),
        anycast,
        input_warnings.len()
    );

    let out_dir = args.out.parent().unwrap_or(std::path::Path::new("."));
    let mut manifest = Manifest::new(
        "detect",
        json!({
            "km_per_ms": km_per_ms,
            "measurements": args.measurements.display().to_string(),
        }),
    );
    manifest.add_input(&args.measurements)?;
    if let Some(c) = &args.cities {
        manifest.add_input(c)?;
    }
    manifest.add_output(&args.out)?;
    if let Some(w) = &args.warnings {
        manifest.add_output(w)?;
    }
    manifest.finish(out_dir)
}

/// Classification invariant: anycast iff a witness pair exists iff at least
/// two replica sites were enumerated.
fn verify_outcomes(outcomes: &[TargetOutcome]) -> CliResult {
    for o in outcomes {
        if let Some(r) = o.as_classified() {
            let anycast = r.verdict == Verdict::Anycast;
            if anycast != r.witness_pair.is_some() || anycast != (r.num_locations >= 2) {
                return Err(CliError::Internal(format!(
                    "target {}: verdict/witness/location-count disagree",
                    r.target
                )));
            }
        }
    }
    Ok(())
}
