//! Cross-module integration: simulator output driven through the active and
//! passive pipelines.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use acdn_core::census::{resolve_targets, run_census, CensusOptions, Prober, RankedHost,
    StaticResolver, SubnetVerdict};
use acdn_core::detect::VantagePoint;
use acdn_core::events::{
    build_series, build_ttl_series, correlate_events, detect_level_shifts,
    detect_ttl_pattern_changes, EventKind, MetricKind, ShiftConfig,
};
use acdn_core::flow::{Annotator, DnsCache, FlowLine, FlowRecord};
use acdn_core::geo::{GeoPoint, DEFAULT_FIBER_KM_PER_MS};
use acdn_core::sim::{
    fibonacci_vps, gen_flowlog, simulate_ping, EventSpec, RttModel, ServiceSpec, SubnetScenario,
    SyntheticDeployment, TrafficScenario,
};
use acdn_core::Slash24;

struct SimProber {
    deployments: BTreeMap<Ipv4Addr, SyntheticDeployment>,
    model: RttModel,
}

impl Prober for SimProber {
    fn probe(&self, vp: &VantagePoint, target: Ipv4Addr) -> Option<f64> {
        let d = self.deployments.get(&target)?;
        Some(simulate_ping(vp, d, &self.model, DEFAULT_FIBER_KM_PER_MS, 0).rtt_ms)
    }
}

#[test]
fn census_pipeline_recovers_simulated_deployments() {
    // Three deployments: 5-site anycast, 2-site anycast, unicast.
    let mk = |lat: f64, lon: f64| GeoPoint::new(lat, lon).unwrap();
    let specs: Vec<(Ipv4Addr, Vec<GeoPoint<f64>>)> = vec![
        (
            "20.0.0.1".parse().unwrap(),
            vec![
                mk(40.71, -74.01),
                mk(51.51, -0.13),
                mk(35.68, 139.65),
                mk(-33.87, 151.21),
                mk(-23.55, -46.64),
            ],
        ),
        (
            "30.0.0.1".parse().unwrap(),
            vec![mk(48.86, 2.35), mk(37.77, -122.42)],
        ),
        ("40.0.0.1".parse().unwrap(), vec![mk(52.52, 13.40)]),
    ];
    let deployments: BTreeMap<Ipv4Addr, SyntheticDeployment> = specs
        .iter()
        .map(|(target, sites)| {
            (
                *target,
                SyntheticDeployment::new(*target, sites.clone(), vec![], 7).unwrap(),
            )
        })
        .collect();

    let hosts: Vec<RankedHost> = specs
        .iter()
        .enumerate()
        .map(|(i, _)| RankedHost {
            rank: i as u32 + 1,
            host: format!("h{i}.example"),
        })
        .collect();
    let resolver = StaticResolver::new(
        specs
            .iter()
            .enumerate()
            .map(|(i, (target, _))| (format!("h{i}.example"), vec![*target]))
            .collect(),
    );
    let (resolved, _) = resolve_targets(&hosts, &resolver);

    let prober = SimProber {
        deployments,
        model: RttModel {
            inflation: 1.4,
            jitter_ms: 0.8,
            seed: 11,
        },
    };
    let vps = fibonacci_vps(60, "vp");
    let (report, _) = run_census(&resolved, &prober, &vps, None, &CensusOptions::default());

    let by_subnet: BTreeMap<Slash24, &acdn_core::census::SubnetReport> = report
        .subnets
        .iter()
        .map(|s| (s.slash24, s))
        .collect();
    let anycast5 = by_subnet[&"20.0.0.0/24".parse().unwrap()];
    assert_eq!(anycast5.verdict, SubnetVerdict::Anycast);
    assert!(anycast5.location_count >= 2);
    assert!(anycast5.location_count <= 5, "never exceeds the true count");
    let anycast2 = by_subnet[&"30.0.0.0/24".parse().unwrap()];
    assert_eq!(anycast2.verdict, SubnetVerdict::Anycast);
    assert!(anycast2.location_count <= 2);
    let unicast = by_subnet[&"40.0.0.0/24".parse().unwrap()];
    assert_eq!(unicast.verdict, SubnetVerdict::Unicast);
}

fn traffic_scenario() -> TrafficScenario {
    TrafficScenario {
        start_ts: 1_409_529_600,
        duration_hours: 240,
        clients: 300,
        flows_per_client_hour: 5.0,
        other_l7_share: 0.02,
        subnets: vec![
            SubnetScenario {
                slash24: "93.184.220.0".parse().unwrap(),
                servers: 6,
                anycast: true,
                weight: 3.0,
                base_rtt_ms: 8.0,
                rtt_jitter_ms: 0.4,
                think_time_ms: 20.0,
                ttl_initials: vec![128, 64],
                hop_count: 12,
                tls_share: 0.5,
                services: vec![
                    ServiceSpec {
                        fqdns: vec!["www.acme.example".into(), "acme.example".into()],
                        weight: 2.0,
                        servers: 2,
                    },
                    ServiceSpec {
                        fqdns: vec!["cdn.widgets.example".into()],
                        weight: 1.0,
                        servers: 4,
                    },
                ],
                events: vec![
                    EventSpec::RttStep {
                        at_hour: 96,
                        to_ms: 28.0,
                        revert_hour: Some(168),
                    },
                    EventSpec::TtlChange {
                        at_hour: 96,
                        to: vec![64],
                        revert_hour: None,
                    },
                ],
            },
            SubnetScenario {
                slash24: "10.7.7.0".parse().unwrap(),
                servers: 2,
                anycast: false,
                weight: 2.0,
                base_rtt_ms: 30.0,
                rtt_jitter_ms: 0.5,
                think_time_ms: 25.0,
                ttl_initials: vec![64],
                hop_count: 10,
                tls_share: 0.5,
                services: vec![ServiceSpec {
                    fqdns: vec!["www.plain.example".into()],
                    weight: 1.0,
                    servers: 1,
                }],
                events: vec![],
            },
        ],
    }
}

#[test]
fn passive_pipeline_detects_injected_events_and_nothing_else() {
    let scenario = traffic_scenario();
    let log = gen_flowlog(&scenario, 1234).unwrap();
    assert!(log.truth.flows > 50_000, "scenario too small");

    // Annotate through the cache, as the ingest step would.
    let annotated: Vec<FlowRecord> = Annotator::new(
        log.flows.iter().cloned().map(|f| Ok(FlowLine::Record(f))),
        &log.dns,
        DnsCache::default(),
    )
    .map(|r| match r.unwrap() {
        FlowLine::Record(rec) => rec,
        FlowLine::Malformed(e) => panic!("unexpected parse error {e:?}"),
    })
    .collect();
    let unannotated = annotated.iter().filter(|f| f.fqdn.is_none()).count();
    assert_eq!(unannotated, 0, "dns log must cover every flow");

    // Event detection per subnet.
    let cfg = ShiftConfig::default();
    let anycast: Slash24 = "93.184.220.0".parse().unwrap();
    let quiet: Slash24 = "10.7.7.0".parse().unwrap();
    let mut by_subnet: BTreeMap<Slash24, Vec<FlowRecord>> = BTreeMap::new();
    for f in annotated {
        by_subnet.entry(f.slash24()).or_default().push(f);
    }

    for (slash24, flows) in &by_subnet {
        let rtt = build_series(flows, *slash24, 3600, MetricKind::Rtt, 5).unwrap();
        let ttfb = build_series(flows, *slash24, 3600, MetricKind::Ttfb, 5).unwrap();
        let ttl = build_ttl_series(flows, *slash24, 3600, 3).unwrap();
        let rtt_events = detect_level_shifts(&rtt, &cfg);
        let ttfb_events = detect_level_shifts(&ttfb, &cfg);
        let ttl_events = detect_ttl_pattern_changes(&ttl, cfg.persistence_bins);

        if *slash24 == quiet {
            assert!(rtt_events.is_empty(), "false alarm on stationary subnet");
            assert!(ttfb_events.is_empty());
            assert!(ttl_events.is_empty());
            continue;
        }
        assert_eq!(*slash24, anycast);
        // Step and revert on RTT and TTFB, one TTL switch.
        assert_eq!(rtt_events.len(), 2);
        assert_eq!(ttfb_events.len(), 2);
        assert_eq!(ttl_events.len(), 1);
        let step_ts = scenario.start_ts + 96 * 3600;
        let revert_ts = scenario.start_ts + 168 * 3600;
        assert_eq!(rtt_events[0].ts, step_ts);
        assert_eq!(rtt_events[1].ts, revert_ts);
        assert_eq!(ttl_events[0].ts, step_ts);

        let merged = correlate_events(&rtt_events, &ttl_events, &ttfb_events, 2).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].confidence, 3, "step corroborated by all metrics");
        assert_eq!(merged[0].corroborated_by.len(), 3);
        assert_eq!(merged[1].confidence, 2, "revert has no ttl component");
        assert!(merged[1]
            .corroborated_by
            .iter()
            .all(|k| *k != EventKind::TtlPatternChange));
    }
}

#[test]
fn generated_flows_always_respect_the_ttfb_floor() {
    let log = gen_flowlog(&traffic_scenario(), 77).unwrap();
    assert!(log
        .flows
        .iter()
        .all(|f| f.ttfb_ms >= 2.0 * f.min_rtt_ms));
    // And the quality check stays quiet on the clean log.
    let warnings = acdn_core::events::ttfb_floor_warnings(&log.flows, 3600).unwrap();
    assert!(warnings.is_empty());
}
