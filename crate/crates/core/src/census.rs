//! End-to-end active census pipeline: ranked URL list -> hostnames ->
//! addresses -> /24 groups -> probe campaign -> classification -> /24
//! verdicts -> conservative filter -> map export.
//!
//! Name resolution and probing are injected effects so the pipeline runs
//! against files, simulators, or (out of scope here) real clients. Warnings
//! are data, not logs: every skipped URL, failed resolution, and missing
//! probe is a record in the output.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::detect::{
    classify_batch, group_by_target, AnycastInstance, CityDb, PingMeasurement, TargetOutcome,
    VantagePoint, Verdict,
};
use crate::net::Slash24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CensusError {
    #[error("line {line}: {message}")]
    MalformedTargetList { line: usize, message: String },
    #[error("duplicate rank {0}")]
    DuplicateRank(u32),
    #[error("rank must be positive")]
    ZeroRank,
    #[error("conservative filter needs min_locations >= 2, got {0}")]
    InvalidMinLocations(usize),
}

/// Ranked URL list driving the census.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetList {
    entries: Vec<(u32, String)>,
}

impl TargetList {
    /// Ranks must be unique and positive.
    pub fn new(entries: Vec<(u32, String)>) -> Result<Self, CensusError> {
        let mut seen = BTreeSet::new();
        for (rank, _) in &entries {
            if *rank == 0 {
                return Err(CensusError::ZeroRank);
            }
            if !seen.insert(*rank) {
                return Err(CensusError::DuplicateRank(*rank));
            }
        }
        Ok(Self { entries })
    }

    /// Loads `rank,url` lines; the URL is everything after the first comma.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<(Self, Vec<CensusWarning>), CensusError> {
        let mut entries = Vec::new();
        let mut warnings = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| CensusError::MalformedTargetList {
                line: line_no,
                message: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((rank_str, url)) = trimmed.split_once(',') else {
                warnings.push(CensusWarning::new(
                    "target-list",
                    trimmed,
                    "missing comma separator",
                ));
                continue;
            };
            match rank_str.trim().parse::<u32>() {
                Ok(rank) => entries.push((rank, url.trim().to_string())),
                Err(_) => warnings.push(CensusWarning::new("target-list", trimmed, "invalid rank")),
            }
        }
        Ok((Self::new(entries)?, warnings))
    }

    pub fn entries(&self) -> &[(u32, String)] {
        &self.entries
    }
}

/// A hostname with the best (smallest) rank it appeared at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankedHost {
    pub rank: u32,
    pub host: String,
}

/// Pipeline warning record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusWarning {
    pub stage: String,
    pub subject: String,
    pub message: String,
}

impl CensusWarning {
    pub fn new(stage: &str, subject: &str, message: &str) -> Self {
        Self {
            stage: stage.to_string(),
            subject: subject.to_string(),
            message: message.to_string(),
        }
    }
}

/// Extracts lowercase hostnames from the URL list, deduplicating on the best
/// rank. Malformed URLs are skipped with a warning record.
pub fn extract_hostnames(targets: &TargetList) -> (Vec<RankedHost>, Vec<CensusWarning>) {
    let mut best: BTreeMap<String, u32> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (rank, url) in targets.entries() {
        let candidate = if url.contains("://") {
            url.clone()
        } else {
            format!("http://{url}")
        };
        let host = match url::Url::parse(&candidate) {
            Ok(parsed) => parsed.host_str().map(|h| h.to_ascii_lowercase()),
            Err(_) => None,
        };
        match host {
            Some(host) if !host.is_empty() => {
                let entry = best.entry(host).or_insert(*rank);
                *entry = (*entry).min(*rank);
            }
            _ => warnings.push(CensusWarning::new("extract", url, "not a parsable URL")),
        }
    }
    let mut hosts: Vec<RankedHost> = best
        .into_iter()
        .map(|(host, rank)| RankedHost { rank, host })
        .collect();
    hosts.sort_by(|a, b| a.rank.cmp(&b.rank).then_with(|| a.host.cmp(&b.host)));
    (hosts, warnings)
}

/// Name resolution effect.
pub trait Resolver {
    fn resolve(&self, host: &str) -> Result<Vec<Ipv4Addr>, String>;
}

/// File-backed resolver: a fixed host -> addresses map.
#[derive(Debug, Clone, Default)]
pub struct StaticResolver {
    map: BTreeMap<String, Vec<Ipv4Addr>>,
}

impl StaticResolver {
    pub fn new(map: BTreeMap<String, Vec<Ipv4Addr>>) -> Self {
        Self { map }
    }

    /// Loads `host,ip[,ip...]` lines.
    pub fn from_reader<R: BufRead>(
        reader: R,
    ) -> std::io::Result<(Self, Vec<CensusWarning>)> {
        let mut map: BTreeMap<String, Vec<Ipv4Addr>> = BTreeMap::new();
        let mut warnings = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split(',').map(str::trim);
            let Some(host) = fields.next().filter(|h| !h.is_empty()) else {
                warnings.push(CensusWarning::new("resolutions", trimmed, "missing host"));
                continue;
            };
            let mut ips = Vec::new();
            let mut bad = false;
            for f in fields {
                match f.parse::<Ipv4Addr>() {
                    Ok(ip) => ips.push(ip),
                    Err(_) => {
                        warnings.push(CensusWarning::new("resolutions", trimmed, "invalid ip"));
                        bad = true;
                        break;
                    }
                }
            }
            if !bad {
                map.entry(host.to_ascii_lowercase()).or_default().extend(ips);
            }
        }
        Ok((Self { map }, warnings))
    }
}

impl Resolver for StaticResolver {
    fn resolve(&self, host: &str) -> Result<Vec<Ipv4Addr>, String> {
        self.map
            .get(host)
            .cloned()
            .ok_or_else(|| "no resolution entry".to_string())
    }
}

/// Resolved address set and its /24 grouping.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResolvedTargets {
    pub ip32s: BTreeSet<Ipv4Addr>,
    pub groups: BTreeMap<Slash24, BTreeSet<Ipv4Addr>>,
}

/// Resolves every hostname and groups the unique addresses by /24. Failed
/// or empty resolutions become warning records.
pub fn resolve_targets<R: Resolver>(
    hosts: &[RankedHost],
    resolver: &R,
) -> (ResolvedTargets, Vec<CensusWarning>) {
    let mut out = ResolvedTargets::default();
    let mut warnings = Vec::new();
    for h in hosts {
        match resolver.resolve(&h.host) {
            Ok(ips) if ips.is_empty() => {
                warnings.push(CensusWarning::new("resolve", &h.host, "zero addresses"));
            }
            Ok(ips) => {
                for ip in ips {
                    out.ip32s.insert(ip);
                    out.groups.entry(Slash24::containing(ip)).or_default().insert(ip);
                }
            }
            Err(message) => warnings.push(CensusWarning::new("resolve", &h.host, &message)),
        }
    }
    (out, warnings)
}

/// Probing effect: one RTT sample per (vantage point, target), or `None`
/// when the probe went unanswered.
pub trait Prober: Sync {
    fn probe(&self, vp: &VantagePoint, target: Ipv4Addr) -> Option<f64>;
}

/// File-backed prober: a fixed (vantage point, target) -> RTT map.
#[derive(Debug, Clone, Default)]
pub struct StaticProber {
    map: BTreeMap<(String, Ipv4Addr), f64>,
}

impl StaticProber {
    pub fn from_measurements(ms: &[PingMeasurement]) -> Self {
        let map = ms
            .iter()
            .map(|m| ((m.vp_id.clone(), m.target), m.rtt_ms))
            .collect();
        Self { map }
    }
}

impl Prober for StaticProber {
    fn probe(&self, vp: &VantagePoint, target: Ipv4Addr) -> Option<f64> {
        self.map.get(&(vp.id.clone(), target)).copied()
    }
}

/// Continents used for location labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Continent {
    #[serde(rename = "EU")]
    Europe,
    #[serde(rename = "NA")]
    NorthAmerica,
    #[serde(rename = "SA")]
    SouthAmerica,
    #[serde(rename = "AS")]
    Asia,
    #[serde(rename = "AF")]
    Africa,
    #[serde(rename = "OC")]
    Oceania,
}

impl Continent {
    pub fn code(&self) -> &'static str {
        match self {
            Continent::Europe => "EU",
            Continent::NorthAmerica => "NA",
            Continent::SouthAmerica => "SA",
            Continent::Asia => "AS",
            Continent::Africa => "AF",
            Continent::Oceania => "OC",
        }
    }
}

/// Maps an ISO 3166-1 alpha-2 country code to its continent.
pub fn country_to_continent(code: &str) -> Option<Continent> {
    use Continent::*;
    let c = match code {
        "AD" | "AL" | "AT" | "BA" | "BE" | "BG" | "BY" | "CH" | "CY" | "CZ" | "DE" | "DK"
        | "EE" | "ES" | "FI" | "FO" | "FR" | "GB" | "GR" | "HR" | "HU" | "IE" | "IS" | "IT"
        | "LI" | "LT" | "LU" | "LV" | "MC" | "MD" | "ME" | "MK" | "MT" | "NL" | "NO" | "PL"
        | "PT" | "RO" | "RS" | "RU" | "SE" | "SI" | "SK" | "SM" | "UA" | "VA" | "XK" => Europe,
        "AG" | "BB" | "BS" | "BZ" | "CA" | "CR" | "CU" | "DM" | "DO" | "GD" | "GT" | "HN"
        | "HT" | "JM" | "KN" | "LC" | "MX" | "NI" | "PA" | "PR" | "SV" | "TT" | "US" | "VC" => {
            NorthAmerica
        }
        "AR" | "BO" | "BR" | "CL" | "CO" | "EC" | "FK" | "GF" | "GY" | "PE" | "PY" | "SR"
        | "UY" | "VE" => SouthAmerica,
        "AE" | "AF" | "AM" | "AZ" | "BD" | "BH" | "BN" | "BT" | "CN" | "GE" | "HK" | "ID"
        | "IL" | "IN" | "IQ" | "IR" | "JO" | "JP" | "KG" | "KH" | "KP" | "KR" | "KW" | "KZ"
        | "LA" | "LB" | "LK" | "MM" | "MN" | "MO" | "MY" | "NP" | "OM" | "PH" | "PK" | "QA"
        | "SA" | "SG" | "SY" | "TH" | "TJ" | "TM" | "TR" | "TW" | "UZ" | "VN" | "YE" => Asia,
        "AO" | "BF" | "BI" | "BJ" | "BW" | "CD" | "CF" | "CG" | "CI" | "CM" | "CV" | "DJ"
        | "DZ" | "EG" | "ER" | "ET" | "GA" | "GH" | "GM" | "GN" | "GQ" | "GW" | "KE" | "LR"
        | "LS" | "LY" | "MA" | "MG" | "ML" | "MR" | "MU" | "MW" | "MZ" | "NA" | "NE" | "NG"
        | "RW" | "SC" | "SD" | "SL" | "SN" | "SO" | "SS" | "SZ" | "TD" | "TG" | "TN" | "TZ"
        | "UG" | "ZA" | "ZM" | "ZW" => Africa,
        "AU" | "FJ" | "FM" | "KI" | "MH" | "NR" | "NZ" | "PG" | "PW" | "SB" | "TO" | "TV"
        | "VU" | "WS" => Oceania,
        _ => return None,
    };
    Some(c)
}

/// Classification state of one /24 in the census.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubnetVerdict {
    Unicast,
    Anycast,
    /// Anycast, but below the conservative location threshold.
    ExcludedConservative,
}

/// Census result for one /24.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetReport {
    pub slash24: Slash24,
    pub verdict: SubnetVerdict,
    /// Maximum replica count over the probed member /32s.
    pub location_count: usize,
    pub continents: BTreeSet<Continent>,
    pub member_ip32s: Vec<Ipv4Addr>,
    /// Instances of the member with the most replicas.
    pub instances: Vec<AnycastInstance>,
    pub owner: Option<String>,
}

/// Aggregate counters for one census run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CensusStats {
    pub urls: u64,
    pub hostnames: u64,
    pub unique_ip32s: u64,
    pub slash24s: u64,
    pub probed_ip32s: u64,
    pub measurements: u64,
    pub vantage_points: u64,
}

/// Full census output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub stats: CensusStats,
    pub subnets: Vec<SubnetReport>,
}

impl CensusReport {
    pub fn anycast_slash24s(&self) -> BTreeSet<Slash24> {
        self.subnets
            .iter()
            .filter(|s| s.verdict == SubnetVerdict::Anycast)
            .map(|s| s.slash24)
            .collect()
    }
}

/// Census tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensusOptions {
    /// Up to this many member /32s are probed per /24.
    pub representatives_per_slash24: usize,
    pub km_per_ms: f64,
    pub campaign_ts: u64,
}

impl Default for CensusOptions {
    fn default() -> Self {
        Self {
            representatives_per_slash24: 4,
            km_per_ms: crate::geo::DEFAULT_FIBER_KM_PER_MS,
            campaign_ts: 0,
        }
    }
}

/// Probes representative members of every /24 from every vantage point,
/// classifies the samples, and aggregates verdicts per /24: a subnet is
/// anycast iff at least one probed member is, and its location count is the
/// maximum over members.
pub fn run_census<P: Prober>(
    resolved: &ResolvedTargets,
    prober: &P,
    vps: &[VantagePoint],
    cities: Option<&CityDb>,
    opts: &CensusOptions,
) -> (CensusReport, Vec<CensusWarning>) {
    let mut warnings = Vec::new();
    if vps.len() < 2 {
        warnings.push(CensusWarning::new(
            "census",
            "vantage-points",
            "fewer than 2 vantage points: no pair can witness anycast",
        ));
    }

    // Probe campaign over the representative sample.
    let mut campaign: Vec<PingMeasurement> = Vec::new();
    let mut probed = 0u64;
    for members in resolved.groups.values() {
        for target in members.iter().take(opts.representatives_per_slash24) {
            probed += 1;
            for vp in vps {
                match prober.probe(vp, *target) {
                    Some(rtt_ms) => {
                        match PingMeasurement::new(vp, *target, rtt_ms, opts.campaign_ts) {
                            Ok(m) => campaign.push(m),
                            Err(e) => warnings.push(CensusWarning::new(
                                "probe",
                                &format!("{} -> {}", vp.id, target),
                                &e.to_string(),
                            )),
                        }
                    }
                    None => warnings.push(CensusWarning::new(
                        "probe",
                        &format!("{} -> {}", vp.id, target),
                        "no response",
                    )),
                }
            }
        }
    }
    let measurements = campaign.len() as u64;

    let groups = group_by_target(campaign);
    let outcomes = classify_batch(&groups, cities, opts.km_per_ms);
    let mut by_target: BTreeMap<Ipv4Addr, &TargetOutcome> = BTreeMap::new();
    for o in &outcomes {
        by_target.insert(o.target(), o);
    }

    let mut subnets = Vec::new();
    for (slash24, members) in &resolved.groups {
        let mut verdict = SubnetVerdict::Unicast;
        let mut location_count = 0usize;
        let mut instances: Vec<AnycastInstance> = Vec::new();
        for target in members {
            let Some(outcome) = by_target.get(target) else {
                continue;
            };
            match outcome {
                TargetOutcome::Classified(r) => {
                    if r.verdict == Verdict::Anycast {
                        verdict = SubnetVerdict::Anycast;
                    }
                    if r.num_locations > location_count {
                        location_count = r.num_locations;
                        instances = r.instances.clone();
                    }
                }
                TargetOutcome::Failed(f) => {
                    warnings.push(CensusWarning::new(
                        "classify",
                        &f.target.to_string(),
                        &f.error,
                    ));
                }
            }
        }
        let continents = instances
            .iter()
            .filter_map(|i| i.location.as_ref())
            .filter_map(|loc| {
                let c = country_to_continent(&loc.country);
                if c.is_none() {
                    warnings.push(CensusWarning::new(
                        "continent",
                        &loc.country,
                        "unknown country code",
                    ));
                }
                c
            })
            .collect();
        subnets.push(SubnetReport {
            slash24: *slash24,
            verdict,
            location_count,
            continents,
            member_ip32s: members.iter().copied().collect(),
            instances,
            owner: None,
        });
    }

    let report = CensusReport {
        stats: CensusStats {
            urls: 0,
            hostnames: 0,
            unique_ip32s: resolved.ip32s.len() as u64,
            slash24s: resolved.groups.len() as u64,
            probed_ip32s: probed,
            measurements,
            vantage_points: vps.len() as u64,
        },
        subnets,
    };
    (report, warnings)
}

/// Demotes anycast /24s seen in fewer than `min_locations` locations to
/// "excluded (conservative)"; everything else passes through unchanged.
pub fn filter_conservative(
    mut report: CensusReport,
    min_locations: usize,
) -> Result<CensusReport, CensusError> {
    if min_locations < 2 {
        return Err(CensusError::InvalidMinLocations(min_locations));
    }
    for subnet in &mut report.subnets {
        if subnet.verdict == SubnetVerdict::Anycast && subnet.location_count < min_locations {
            subnet.verdict = SubnetVerdict::ExcludedConservative;
        }
    }
    Ok(report)
}

/// Renders the located instances of anycast /24s as a GeoJSON
/// FeatureCollection: one point feature per located instance, deterministic
/// order, with the count of unlocated instances recorded at the top level.
pub fn export_geojson(report: &CensusReport) -> serde_json::Value {
    let mut features = Vec::new();
    let mut unlocated = 0u64;
    for subnet in &report.subnets {
        if subnet.verdict != SubnetVerdict::Anycast {
            continue;
        }
        for inst in &subnet.instances {
            let Some(loc) = &inst.location else {
                unlocated += 1;
                continue;
            };
            features.push(json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [loc.coords.lon_deg(), loc.coords.lat_deg()],
                },
                "properties": {
                    "slash24": subnet.slash24.to_string(),
                    "owner": subnet.owner,
                    "city": loc.city,
                    "country": loc.country,
                    "population": loc.population,
                    "radius_km": inst.disk.radius_km(),
                    "confidence": if inst.high_confidence { "high" } else { "normal" },
                },
            }));
        }
    }
    json!({
        "type": "FeatureCollection",
        "properties": { "unlocated_instances": unlocated },
        "features": features,
    })
}
