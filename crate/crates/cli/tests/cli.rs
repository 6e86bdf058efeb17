//! Command-line behavior: exit codes, file-based composition, config
//! precedence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn acdn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_acdn"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn acdn");
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn small_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(
        &path,
        r#"{
  "seed": 9,
  "census": {
    "campaign_ts": 1409529600,
    "vps": { "fibonacci": { "count": 30 } },
    "rtt": { "inflation": 1.3, "jitter_ms": 0.3 },
    "deployments": [
      { "target": "20.0.0.1",
        "sites": { "explicit": [[40.71, -74.01], [51.51, -0.13], [35.68, 139.65]] } },
      { "target": "30.0.0.1", "sites": { "explicit": [[48.86, 2.35]] } }
    ]
  },
  "traffic": {
    "start_ts": 1409529600,
    "duration_hours": 30,
    "clients": 40,
    "flows_per_client_hour": 5.0,
    "subnets": [
      { "slash24": "20.0.0.0", "servers": 4, "anycast": true, "weight": 2.0,
        "base_rtt_ms": 9.0, "ttl_initials": [64, 128], "hop_count": 11,
        "services": [ { "fqdns": ["www.any.example"], "weight": 1.0, "servers": 2 } ] },
      { "slash24": "30.0.0.0", "servers": 2, "anycast": false, "weight": 1.0,
        "base_rtt_ms": 25.0, "ttl_initials": [64], "hop_count": 9,
        "services": [ { "fqdns": ["www.uni.example"], "weight": 1.0, "servers": 1 } ] }
    ]
  }
}"#,
    )
    .unwrap();
    path
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let out = acdn().arg("detect").arg("--no-such-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "no usage text: {stderr}");
}

#[test]
fn missing_input_file_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = acdn()
        .arg("detect")
        .arg("--measurements")
        .arg(tmp.path().join("nope.txt"))
        .arg("--out")
        .arg(tmp.path().join("out.ndjson"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_threshold_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m.txt");
    fs::write(&m, "a,0,0,1.2.3.4,10,0\n").unwrap();
    let out = acdn()
        .arg("census")
        .arg("--targets").arg(&m)
        .arg("--resolutions").arg(&m)
        .arg("--vps").arg(&m)
        .arg("--measurements").arg(&m)
        .arg("--min-locations").arg("1")
        .arg("--out-dir").arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_empty_flow_log_succeeds_with_empty_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let flows = tmp.path().join("flows.log");
    let set = tmp.path().join("set.txt");
    fs::write(&flows, "").unwrap();
    fs::write(&set, "10.0.0.0/24\n").unwrap();
    run_ok(
        acdn()
            .arg("analyze")
            .arg("--flows").arg(&flows)
            .arg("--anycast-set").arg(&set)
            .arg("--out-dir").arg(tmp.path().join("out")),
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 0);
    assert!(summary["others"].is_null());
    let user_series = fs::read_to_string(tmp.path().join("out/user_series.csv")).unwrap();
    assert_eq!(user_series.lines().count(), 1, "header only");
}

#[test]
fn simulate_then_detect_agrees_with_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = small_scenario(tmp.path());
    let sim = tmp.path().join("sim");
    run_ok(
        acdn()
            .arg("simulate")
            .arg("--scenario").arg(&scenario)
            .arg("--out-dir").arg(&sim),
    );

    let detect_out = tmp.path().join("detect.ndjson");
    run_ok(
        acdn()
            .arg("detect")
            .arg("--measurements").arg(sim.join("measurements.txt"))
            .arg("--cities").arg(workspace_file("data/sample_cities.csv"))
            .arg("--out").arg(&detect_out),
    );

    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim.join("truth.json")).unwrap()).unwrap();
    let mut expected: std::collections::BTreeMap<String, u64> = Default::default();
    for d in truth["census"]["deployments"].as_array().unwrap() {
        expected.insert(
            d["target"].as_str().unwrap().to_string(),
            d["site_count"].as_u64().unwrap(),
        );
    }

    for line in fs::read_to_string(&detect_out).unwrap().lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        let target = rec["target"].as_str().unwrap();
        let sites = expected[target];
        let verdict = rec["verdict"].as_str().unwrap();
        if sites >= 2 {
            assert_eq!(verdict, "anycast", "{target} should be anycast");
            assert!(rec["num_locations"].as_u64().unwrap() <= sites);
        } else {
            assert_eq!(verdict, "unicast", "{target} should be unicast");
        }
    }
}

#[test]
fn full_pipeline_composes_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = small_scenario(tmp.path());
    let sim = tmp.path().join("sim");
    run_ok(acdn().arg("simulate").arg("--scenario").arg(&scenario).arg("--out-dir").arg(&sim));

    let census_dir = tmp.path().join("census");
    run_ok(
        acdn()
            .arg("census")
            .arg("--targets").arg(sim.join("targets.csv"))
            .arg("--resolutions").arg(sim.join("resolutions.csv"))
            .arg("--vps").arg(sim.join("vps.csv"))
            .arg("--measurements").arg(sim.join("measurements.txt"))
            .arg("--cities").arg(workspace_file("data/sample_cities.csv"))
            .arg("--out-dir").arg(&census_dir),
    );

    let annotated = tmp.path().join("annotated.log");
    run_ok(
        acdn()
            .arg("ingest")
            .arg("--flows").arg(sim.join("flows.log"))
            .arg("--dns").arg(sim.join("dns.log"))
            .arg("--out").arg(&annotated),
    );

    let analyze_dir = tmp.path().join("analyze");
    run_ok(
        acdn()
            .arg("analyze")
            .arg("--flows").arg(&annotated)
            .arg("--anycast-set").arg(sim.join("anycast_slash24s.txt"))
            .arg("--dns").arg(sim.join("dns.log"))
            .arg("--others-cutoff").arg("5")
            .arg("--out-dir").arg(&analyze_dir),
    );

    let events_dir = tmp.path().join("events");
    run_ok(
        acdn()
            .arg("events")
            .arg("--flows").arg(&annotated)
            .arg("--out-dir").arg(&events_dir),
    );

    let report_dir = tmp.path().join("report");
    run_ok(
        acdn()
            .arg("report")
            .arg("--census").arg(census_dir.join("report.json"))
            .arg("--summary").arg(analyze_dir.join("summary.json"))
            .arg("--events").arg(events_dir.join("events.ndjson"))
            .arg("--out-dir").arg(&report_dir),
    );

    let table = fs::read_to_string(report_dir.join("table.csv")).unwrap();
    assert!(table.lines().count() >= 2, "at least one data row:\n{table}");
    assert!(table.contains("20.0.0.0/24"));
    // Every subcommand left a manifest.
    for dir in [&sim, &census_dir, &analyze_dir, &events_dir, &report_dir] {
        assert!(dir.join("manifest.json").is_file(), "{dir:?} manifest");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let flows = tmp.path().join("flows.log");
    // Two bins of five flows each so min_samples decides bin emission.
    let mut lines = String::new();
    for bin in 0..2 {
        for k in 0..5 {
            let ts = bin * 3600 + k * 60;
            lines.push_str(&format!(
                "{ts} {} c{k} 10.0.0.1 80 HTTP 100 8 116 20 www.a.example\n",
                ts + 1
            ));
        }
    }
    fs::write(&flows, &lines).unwrap();

    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{ "min_samples": 9 }"#).unwrap();

    // With min_samples 9 from the config, no bin qualifies.
    let out_a = tmp.path().join("a");
    run_ok(
        acdn()
            .arg("--config").arg(&config)
            .arg("events")
            .arg("--flows").arg(&flows)
            .arg("--out-dir").arg(&out_a),
    );
    let series = fs::read_to_string(out_a.join("series/10.0.0.0_rtt.txt")).unwrap();
    assert_eq!(series.lines().count(), 0);

    // The flag overrides the config.
    let out_b = tmp.path().join("b");
    run_ok(
        acdn()
            .arg("--config").arg(&config)
            .arg("events")
            .arg("--flows").arg(&flows)
            .arg("--min-samples").arg("5")
            .arg("--out-dir").arg(&out_b),
    );
    let series = fs::read_to_string(out_b.join("series/10.0.0.0_rtt.txt")).unwrap();
    assert_eq!(series.lines().count(), 2);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{ "no_such_knob": 1 }"#).unwrap();
    let out = acdn()
        .arg("--config").arg(&config)
        .arg("events")
        .arg("--flows").arg(tmp.path().join("flows.log"))
        .arg("--out-dir").arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
