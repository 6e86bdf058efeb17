//! `acdn simulate`: synthetic campaigns, flow logs, and ground truth.

use std::io::Write;

use anyhow::Context;
use serde_json::json;

use acdn_core::detect::format_measurement;
use acdn_core::flow::{format_dns_line, format_flow_line};
use acdn_core::geo::DEFAULT_FIBER_KM_PER_MS;
use acdn_core::sim::{
    build_deployments, build_vps, campaign_measurements, gen_flowlog, CensusTruth, Scenario,
    Truth,
};

use crate::config::{FileConfig, SimulateArgs};
use crate::util::{in_dir, write_atomic, write_json, Manifest};
use crate::CliResult;

pub fn run(args: SimulateArgs, file_config: &FileConfig) -> CliResult {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let scenario: Scenario = serde_json::from_str(&text)
        .with_context(|| format!("parsing scenario {}", args.scenario.display()))?;
    let seed = args.seed.or(file_config.seed).unwrap_or(scenario.seed);

    let out = &args.out_dir;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = Manifest::new(
        "simulate",
        json!({ "seed": seed, "scenario": args.scenario.display().to_string() }),
    );
    manifest.add_input(&args.scenario)?;
    let mut truth = Truth::default();

    if let Some(census) = &scenario.census {
        let vps = build_vps(&census.vps).context("building vantage points")?;
        let deployments = build_deployments(census, seed).context("building deployments")?;
        let model = census.rtt.model(seed);
        model.validate().context("rtt model")?;
        let measurements = campaign_measurements(
            &deployments,
            &vps,
            &model,
            DEFAULT_FIBER_KM_PER_MS,
            census.campaign_ts,
        );

        let vps_path = in_dir(out, "vps.csv");
        write_atomic(&vps_path, |w| {
            for vp in &vps {
                writeln!(
                    w,
                    "{},{},{}",
                    vp.id,
                    vp.location.lat_deg(),
                    vp.location.lon_deg()
                )?;
            }
            Ok(())
        })?;

        let measurements_path = in_dir(out, "measurements.txt");
        write_atomic(&measurements_path, |w| {
            for m in &measurements {
                writeln!(w, "{}", format_measurement(m))?;
            }
            Ok(())
        })?;

        let targets_path = in_dir(out, "targets.csv");
        let resolutions_path = in_dir(out, "resolutions.csv");
        write_atomic(&targets_path, |w| {
            for i in 0..deployments.len() {
                writeln!(w, "{},http://www.d{:03}.example/", i + 1, i)?;
            }
            Ok(())
        })?;
        write_atomic(&resolutions_path, |w| {
            for (i, d) in deployments.iter().enumerate() {
                writeln!(w, "www.d{:03}.example,{}", i, d.target)?;
            }
            Ok(())
        })?;

        truth.census = Some(CensusTruth::from_deployments(&deployments, vps.len()));
        manifest.add_output(&vps_path)?;
        manifest.add_output(&measurements_path)?;
        manifest.add_output(&targets_path)?;
        manifest.add_output(&resolutions_path)?;
    }

    if let Some(traffic) = &scenario.traffic {
        let log = gen_flowlog(traffic, seed).context("generating flow log")?;

        let flows_path = in_dir(out, "flows.log");
        write_atomic(&flows_path, |w| {
            for f in &log.flows {
                writeln!(w, "{}", format_flow_line(f))?;
            }
            Ok(())
        })?;

        let dns_path = in_dir(out, "dns.log");
        write_atomic(&dns_path, |w| {
            for o in &log.dns {
                writeln!(w, "{}", format_dns_line(o))?;
            }
            Ok(())
        })?;

        let set_path = in_dir(out, "anycast_slash24s.txt");
        write_atomic(&set_path, |w| {
            for s in &log.truth.anycast_slash24s {
                writeln!(w, "{s}")?;
            }
            Ok(())
        })?;

        eprintln!(
            "simulate: {} flows, {} dns observations, {} truth events",
            log.truth.flows,
            log.truth.dns_observations,
            log.truth.events.len()
        );
        truth.traffic = Some(log.truth);
        manifest.add_output(&flows_path)?;
        manifest.add_output(&dns_path)?;
        manifest.add_output(&set_path)?;
    }

    let truth_path = in_dir(out, "truth.json");
    write_json(&truth_path, &truth)?;
    manifest.add_output(&truth_path)?;
    manifest.finish(out)
}
