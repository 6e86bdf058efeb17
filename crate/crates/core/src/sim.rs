//! Synthetic ground-truth generator.
//!
//! Stands in for a real vantage-point fleet and an ISP vantage: builds
//! anycast deployments with an RTT model for the active pipeline, and
//! per-flow logs with scheduled routing events for the passive pipeline.
//! Everything is a pure function of (scenario, seed); truth files are
//! first-class outputs so downstream validation never reaches into the
//! generator's internals.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{PingMeasurement, VantagePoint};
use crate::events::{EventChange, EventKind};
use crate::flow::{DnsObservation, FlowRecord, L7};
use crate::geo::{haversine_km, GeoError, GeoPoint};
use crate::net::Slash24;

/// TTL initial values operating systems actually use.
pub const TTL_INITIALS: [u8; 4] = [32, 64, 128, 255];

/// Default minimum pairwise separation between generated sites, km.
pub const DEFAULT_SITE_SEPARATION_KM: f64 = 500.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("deployment needs at least one site")]
    NoSites,
    #[error("sites must be pairwise apart; {0} and {1} coincide")]
    CoincidentSites(usize, usize),
    #[error("could not place {requested} sites with {min_separation_km} km separation (placed {placed})")]
    InfeasibleSeparation {
        requested: usize,
        placed: usize,
        min_separation_km: f64,
    },
    #[error("ttl initial {0} not one of 32/64/128/255")]
    InvalidTtlInitial(u8),
    #[error("rtt model: inflation must be >= 1, got {0}")]
    InvalidInflation(f64),
    #[error("rtt model: jitter must be nonnegative, got {0}")]
    InvalidJitter(f64),
    #[error("subnet {slash24}: {message}")]
    InvalidSubnet { slash24: Slash24, message: String },
    #[error("subnet {slash24}: contradictory {kind} events at hour {hour}")]
    ContradictoryEvents {
        slash24: Slash24,
        kind: &'static str,
        hour: u32,
    },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// 64-bit FNV-1a, used to derive independent deterministic RNG streams.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &byte in *part {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // Separator so ("ab","c") and ("a","bc") differ.
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn rng_stream(label: &str, seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut all: Vec<&[u8]> = vec![label.as_bytes()];
    let seed_bytes = seed.to_le_bytes();
    all.push(&seed_bytes);
    all.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(fnv1a(&all))
}

/// Geographic sampling region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl RegionBounds {
    /// Inhabited latitudes, all longitudes.
    pub fn world() -> Self {
        Self {
            lat_min: -55.0,
            lat_max: 70.0,
            lon_min: -180.0,
            lon_max: 180.0,
        }
    }

    pub fn europe() -> Self {
        Self {
            lat_min: 36.0,
            lat_max: 60.0,
            lon_min: -10.0,
            lon_max: 30.0,
        }
    }

    /// Area-uniform sample inside the bounds.
    fn sample(&self, rng: &mut ChaCha8Rng) -> GeoPoint<f64> {
        let z_min = self.lat_min.to_radians().sin();
        let z_max = self.lat_max.to_radians().sin();
        let z = rng.random_range(z_min..=z_max);
        let lat = z.asin().to_degrees();
        let lon = rng.random_range(self.lon_min..=self.lon_max);
        GeoPoint::new(lat, lon).expect("bounds produce valid coordinates")
    }
}

impl Default for RegionBounds {
    fn default() -> Self {
        Self::world()
    }
}

/// Ground-truth anycast deployment: one target address served from `sites`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticDeployment {
    pub target: Ipv4Addr,
    pub sites: Vec<GeoPoint<f64>>,
    /// Per-site TTL initial value, same length as `sites`.
    pub ttl_initials: Vec<u8>,
    pub seed: u64,
}

impl SyntheticDeployment {
    pub fn new(
        target: Ipv4Addr,
        sites: Vec<GeoPoint<f64>>,
        ttl_initials: Vec<u8>,
        seed: u64,
    ) -> Result<Self, SimError> {
        if sites.is_empty() {
            return Err(SimError::NoSites);
        }
        for (i, a) in sites.iter().enumerate() {
            for (j, b) in sites.iter().enumerate().skip(i + 1) {
                if haversine_km(*a, *b) <= 0.0 {
                    return Err(SimError::CoincidentSites(i, j));
                }
            }
        }
        for &ttl in &ttl_initials {
            if !TTL_INITIALS.contains(&ttl) {
                return Err(SimError::InvalidTtlInitial(ttl));
            }
        }
        let mut ttl_initials = ttl_initials;
        if ttl_initials.is_empty() {
            ttl_initials = sites.iter().map(|_| 64).collect();
        }
        ttl_initials.resize(sites.len(), *ttl_initials.last().expect("nonempty"));
        Ok(Self {
            target,
            sites,
            ttl_initials,
            seed,
        })
    }

    /// Index and location of the site nearest to `from` (ties by index).
    pub fn nearest_site(&self, from: GeoPoint<f64>) -> (usize, GeoPoint<f64>) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, site) in self.sites.iter().enumerate() {
            let d = haversine_km(from, *site);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        (best, self.sites[best])
    }
}

/// RTT generator: great-circle floor, multiplicative path stretch, additive
/// half-normal jitter. Never produces an RTT below the propagation floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RttModel {
    pub inflation: f64,
    pub jitter_ms: f64,
    pub seed: u64,
}

impl Default for RttModel {
    fn default() -> Self {
        Self {
            inflation: 1.5,
            jitter_ms: 0.0,
            seed: 0,
        }
    }
}

impl RttModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.inflation.is_finite() || self.inflation < 1.0 {
            return Err(SimError::InvalidInflation(self.inflation));
        }
        if !self.jitter_ms.is_finite() || self.jitter_ms < 0.0 {
            return Err(SimError::InvalidJitter(self.jitter_ms));
        }
        Ok(())
    }
}

/// Simulates one ping: the vantage point reaches its geodesically nearest
/// site (a stand-in for routing proximity), and the RTT is the light-time
/// floor times the inflation factor plus nonnegative jitter. Deterministic
/// per (vantage point, target, model seed).
pub fn simulate_ping(
    vp: &VantagePoint,
    deployment: &SyntheticDeployment,
    model: &RttModel,
    km_per_ms: f64,
    timestamp: u64,
) -> PingMeasurement {
    let (_, site) = deployment.nearest_site(vp.location);
    let distance_km = haversine_km(vp.location, site);
    let floor_ms = 2.0 * distance_km / km_per_ms;
    let mut rtt_ms = floor_ms * model.inflation;
    if model.jitter_ms > 0.0 {
        let mut rng = rng_stream(
            "ping",
            model.seed,
            &[vp.id.as_bytes(), &deployment.target.octets()],
        );
        let noise = Normal::new(0.0, model.jitter_ms)
            .expect("validated jitter")
            .sample(&mut rng);
        rtt_ms += noise.abs();
    }
    PingMeasurement::new(vp, deployment.target, rtt_ms, timestamp)
        .expect("model produces nonnegative finite RTT")
}

/// Samples `n_sites` sites inside `bounds` with a minimum pairwise
/// separation, by bounded rejection.
pub fn gen_deployment(
    target: Ipv4Addr,
    n_sites: usize,
    bounds: &RegionBounds,
    min_separation_km: f64,
    ttl_choices: &[u8],
    seed: u64,
) -> Result<SyntheticDeployment, SimError> {
    if n_sites == 0 {
        return Err(SimError::NoSites);
    }
    for &ttl in ttl_choices {
        if !TTL_INITIALS.contains(&ttl) {
            return Err(SimError::InvalidTtlInitial(ttl));
        }
    }
    let mut rng = rng_stream("deployment", seed, &[&target.octets()]);
    let mut sites: Vec<GeoPoint<f64>> = Vec::with_capacity(n_sites);
    let budget = 1000 + n_sites * 400;
    let mut attempts = 0;
    while sites.len() < n_sites {
        if attempts >= budget {
            return Err(SimError::InfeasibleSeparation {
                requested: n_sites,
                placed: sites.len(),
                min_separation_km,
            });
        }
        attempts += 1;
        let candidate = bounds.sample(&mut rng);
        if sites
            .iter()
            .all(|s| haversine_km(*s, candidate) >= min_separation_km)
        {
            sites.push(candidate);
        }
    }
    let choices = if ttl_choices.is_empty() {
        &[64u8, 128][..]
    } else {
        ttl_choices
    };
    let ttl_initials = (0..n_sites)
        .map(|_| choices[rng.random_range(0..choices.len())])
        .collect();
    SyntheticDeployment::new(target, sites, ttl_initials, seed)
}

/// Deterministic, well-spread vantage points on a Fibonacci spiral.
pub fn fibonacci_vps(count: usize, id_prefix: &str) -> Vec<VantagePoint> {
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    (0..count)
        .map(|i| {
            let z = -1.0 + 2.0 * (i as f64 + 0.5) / count as f64;
            let lat = z.asin().to_degrees();
            let lon = (360.0 * (i as f64 / golden)) % 360.0;
            VantagePoint {
                id: format!("{id_prefix}{i:03}"),
                location: GeoPoint::new(lat, lon).expect("spiral stays in range"),
            }
        })
        .collect()
}

/// Full measurement campaign: one ping per (vantage point, deployment).
pub fn campaign_measurements(
    deployments: &[SyntheticDeployment],
    vps: &[VantagePoint],
    model: &RttModel,
    km_per_ms: f64,
    timestamp: u64,
) -> Vec<PingMeasurement> {
    deployments
        .iter()
        .flat_map(|d| {
            vps.iter()
                .map(move |vp| simulate_ping(vp, d, model, km_per_ms, timestamp))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scenario documents
// ---------------------------------------------------------------------------

/// Top-level scenario document: either measurement plane may be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default)]
    pub census: Option<CensusScenario>,
    #[serde(default)]
    pub traffic: Option<TrafficScenario>,
}

/// Active-side scenario: vantage points, deployments, and an RTT model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusScenario {
    #[serde(default)]
    pub campaign_ts: u64,
    pub vps: VpSpec,
    #[serde(default)]
    pub rtt: RttParams,
    pub deployments: Vec<DeploymentSpec>,
}

/// Vantage-point specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VpSpec {
    /// `count` points on a Fibonacci spiral: deterministic and well spread.
    Fibonacci { count: usize },
    Explicit(Vec<VpPoint>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpPoint {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

/// RTT model parameters without the seed (the scenario seed is used).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RttParams {
    pub inflation: f64,
    #[serde(default)]
    pub jitter_ms: f64,
}

impl Default for RttParams {
    fn default() -> Self {
        Self {
            inflation: 1.5,
            jitter_ms: 0.0,
        }
    }
}

impl RttParams {
    pub fn model(&self, seed: u64) -> RttModel {
        RttModel {
            inflation: self.inflation,
            jitter_ms: self.jitter_ms,
            seed,
        }
    }
}

/// One deployment to synthesize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSpec {
    pub target: Ipv4Addr,
    pub sites: SiteSpec,
    #[serde(default)]
    pub ttl_initials: Vec<u8>,
}

fn default_min_separation() -> f64 {
    DEFAULT_SITE_SEPARATION_KM
}

/// Site placement: explicit coordinates or random with separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteSpec {
    Explicit(Vec<[f64; 2]>),
    Random {
        count: usize,
        #[serde(default)]
        bounds: Option<RegionBounds>,
        #[serde(default = "default_min_separation")]
        min_separation_km: f64,
    },
}

/// Builds the vantage-point fleet of a census scenario.
pub fn build_vps(spec: &VpSpec) -> Result<Vec<VantagePoint>, SimError> {
    match spec {
        VpSpec::Fibonacci { count } => Ok(fibonacci_vps(*count, "vp")),
        VpSpec::Explicit(points) => points
            .iter()
            .map(|p| {
                Ok(VantagePoint {
                    id: p.id.clone(),
                    location: GeoPoint::new(p.lat, p.lon)?,
                })
            })
            .collect(),
    }
}

/// Materializes every deployment of a census scenario.
pub fn build_deployments(
    scenario: &CensusScenario,
    seed: u64,
) -> Result<Vec<SyntheticDeployment>, SimError> {
    scenario
        .deployments
        .iter()
        .map(|spec| match &spec.sites {
            SiteSpec::Explicit(coords) => {
                let sites = coords
                    .iter()
                    .map(|[lat, lon]| Ok(GeoPoint::new(*lat, *lon)?))
                    .collect::<Result<Vec<_>, SimError>>()?;
                SyntheticDeployment::new(spec.target, sites, spec.ttl_initials.clone(), seed)
            }
            SiteSpec::Random {
                count,
                bounds,
                min_separation_km,
            } => gen_deployment(
                spec.target,
                *count,
                &bounds.unwrap_or_default(),
                *min_separation_km,
                &spec.ttl_initials,
                seed,
            ),
        })
        .collect()
}

/// Ground truth for one synthesized deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentTruth {
    pub target: Ipv4Addr,
    pub sites: Vec<[f64; 2]>,
    pub site_count: usize,
    pub ttl_initials: Vec<u8>,
}

/// Ground truth for the active side of a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CensusTruth {
    pub deployments: Vec<DeploymentTruth>,
    pub vantage_points: u64,
}

impl CensusTruth {
    pub fn from_deployments(deployments: &[SyntheticDeployment], vp_count: usize) -> Self {
        Self {
            deployments: deployments
                .iter()
                .map(|d| DeploymentTruth {
                    target: d.target,
                    sites: d.sites.iter().map(|s| [s.lat_deg(), s.lon_deg()]).collect(),
                    site_count: d.sites.len(),
                    ttl_initials: d.ttl_initials.clone(),
                })
                .collect(),
            vantage_points: vp_count as u64,
        }
    }
}

/// Combined ground truth emitted next to generated artifacts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Truth {
    #[serde(default)]
    pub census: Option<CensusTruth>,
    #[serde(default)]
    pub traffic: Option<TrafficTruth>,
}

// ---------------------------------------------------------------------------
// Traffic scenario
// ---------------------------------------------------------------------------

fn default_flows_per_client_hour() -> f64 {
    4.0
}
fn default_other_l7_share() -> f64 {
    0.02
}
fn default_rtt_jitter() -> f64 {
    0.3
}
fn default_think_time() -> f64 {
    20.0
}
fn default_ttl_initials() -> Vec<u8> {
    vec![64, 128]
}
fn default_hop_count() -> u8 {
    12
}
fn default_tls_share() -> f64 {
    0.5
}
fn default_service_servers() -> u8 {
    1
}

/// Passive-side scenario: clients, subnets, services, and scheduled events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficScenario {
    pub start_ts: u64,
    pub duration_hours: u32,
    pub clients: u32,
    /// Flow rate per active client at peak activity.
    #[serde(default = "default_flows_per_client_hour")]
    pub flows_per_client_hour: f64,
    /// Share of flows carrying a non-web protocol label.
    #[serde(default = "default_other_l7_share")]
    pub other_l7_share: f64,
    pub subnets: Vec<SubnetScenario>,
}

/// One server /24 and the traffic it attracts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetScenario {
    pub slash24: Slash24,
    /// Number of distinct /32 servers (hosts .1 ..= .servers).
    pub servers: u8,
    pub anycast: bool,
    /// Relative share of generated flows.
    pub weight: f64,
    pub base_rtt_ms: f64,
    #[serde(default = "default_rtt_jitter")]
    pub rtt_jitter_ms: f64,
    /// Server think time added on top of two RTTs to form the TTFB.
    #[serde(default = "default_think_time")]
    pub think_time_ms: f64,
    /// Mixture of TTL initial values across the serving hosts.
    #[serde(default = "default_ttl_initials")]
    pub ttl_initials: Vec<u8>,
    #[serde(default = "default_hop_count")]
    pub hop_count: u8,
    #[serde(default = "default_tls_share")]
    pub tls_share: f64,
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

/// A service: a set of FQDNs resolved to a subset of the subnet's servers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub fqdns: Vec<String>,
    pub weight: f64,
    /// How many of the subnet's servers carry this service.
    #[serde(default = "default_service_servers")]
    pub servers: u8,
}

/// A scheduled routing change, expressed in hours from scenario start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventSpec {
    /// Path change: the subnet's base RTT jumps to `to_ms`.
    RttStep {
        at_hour: u32,
        to_ms: f64,
        #[serde(default)]
        revert_hour: Option<u32>,
    },
    /// Catchment change: servers now draw TTL initials from `to`.
    TtlChange {
        at_hour: u32,
        to: Vec<u8>,
        #[serde(default)]
        revert_hour: Option<u32>,
    },
    /// Server-side slowdown: think time jumps to `to_ms` (TTFB-only shift).
    ThinkStep {
        at_hour: u32,
        to_ms: f64,
        #[serde(default)]
        revert_hour: Option<u32>,
    },
}

impl EventSpec {
    fn at_hour(&self) -> u32 {
        match self {
            EventSpec::RttStep { at_hour, .. }
            | EventSpec::TtlChange { at_hour, .. }
            | EventSpec::ThinkStep { at_hour, .. } => *at_hour,
        }
    }

    fn revert_hour(&self) -> Option<u32> {
        match self {
            EventSpec::RttStep { revert_hour, .. }
            | EventSpec::TtlChange { revert_hour, .. }
            | EventSpec::ThinkStep { revert_hour, .. } => *revert_hour,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            EventSpec::RttStep { .. } => "rtt",
            EventSpec::TtlChange { .. } => "ttl",
            EventSpec::ThinkStep { .. } => "think",
        }
    }
}

/// A level or pattern transition at an absolute hour.
#[derive(Debug, Clone)]
struct Timeline<T> {
    transitions: Vec<(u32, T)>,
}

impl<T: Clone> Timeline<T> {
    fn new(base: T) -> Self {
        Self {
            transitions: vec![(0, base)],
        }
    }

    fn push(&mut self, hour: u32, value: T) {
        self.transitions.push((hour, value));
    }

    fn at(&self, hour: u32) -> &T {
        let idx = self.transitions.partition_point(|(h, _)| *h <= hour);
        &self.transitions[idx - 1].1
    }

    /// Value in force strictly before `hour`.
    fn before(&self, hour: u32) -> &T {
        let idx = self.transitions.partition_point(|(h, _)| *h < hour);
        &self.transitions[idx.max(1) - 1].1
    }
}

struct SubnetState {
    rtt: Timeline<f64>,
    think: Timeline<f64>,
    ttl_mix: Timeline<Vec<u8>>,
    /// Server addresses assigned to each service.
    service_servers: Vec<Vec<Ipv4Addr>>,
    cumulative_service_weight: Vec<f64>,
}

/// One injected ground-truth event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub slash24: Slash24,
    pub ts: u64,
    pub kind: EventKind,
    #[serde(flatten)]
    pub change: EventChange,
}

/// Ground truth for the passive side of a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrafficTruth {
    pub anycast_slash24s: Vec<Slash24>,
    pub events: Vec<TruthEvent>,
    pub flows: u64,
    pub dns_observations: u64,
    pub clients: u32,
}

/// Generated flow log plus the truth describing it.
#[derive(Debug, Clone, Default)]
pub struct FlowLog {
    pub flows: Vec<FlowRecord>,
    pub dns: Vec<DnsObservation>,
    pub truth: TrafficTruth,
}

/// Fraction of clients active at an hour of day: trough at 03:00, peak at
/// 15:00.
fn diurnal_activity(hour_of_day: u32) -> f64 {
    let x = ((hour_of_day + 24 - 3) % 24) as f64 / 24.0;
    let s = (std::f64::consts::PI * x).sin();
    0.15 + 0.85 * s * s
}

fn validate_subnet(s: &SubnetScenario) -> Result<(), SimError> {
    let fail = |message: &str| {
        Err(SimError::InvalidSubnet {
            slash24: s.slash24,
            message: message.to_string(),
        })
    };
    if s.servers == 0 {
        return fail("needs at least one server");
    }
    if !(s.weight.is_finite() && s.weight > 0.0) {
        return fail("weight must be positive");
    }
    if !(s.base_rtt_ms.is_finite() && s.base_rtt_ms > 0.0) {
        return fail("base_rtt_ms must be positive");
    }
    if s.rtt_jitter_ms < 0.0 || s.think_time_ms < 0.0 {
        return fail("jitter and think time must be nonnegative");
    }
    if s.ttl_initials.is_empty() {
        return fail("ttl_initials must be nonempty");
    }
    for &ttl in &s.ttl_initials {
        if !TTL_INITIALS.contains(&ttl) {
            return Err(SimError::InvalidTtlInitial(ttl));
        }
        if s.hop_count >= ttl {
            return fail("hop_count must be smaller than every ttl initial");
        }
    }
    if s.services.is_empty() {
        return fail("needs at least one service");
    }
    for svc in &s.services {
        if svc.fqdns.is_empty() || !(svc.weight.is_finite() && svc.weight > 0.0) {
            return fail("each service needs fqdns and a positive weight");
        }
    }
    Ok(())
}

/// Sorts same-kind events and rejects overlapping or duplicate schedules.
fn validate_events(s: &SubnetScenario, duration_hours: u32) -> Result<(), SimError> {
    for kind in ["rtt", "ttl", "think"] {
        let mut evs: Vec<&EventSpec> = s
            .events
            .iter()
            .filter(|e| e.kind_name() == kind)
            .collect();
        evs.sort_by_key(|e| e.at_hour());
        let mut prev_end: Option<u32> = None;
        for e in &evs {
            let at = e.at_hour();
            if at >= duration_hours {
                return Err(SimError::ContradictoryEvents {
                    slash24: s.slash24,
                    kind: e.kind_name(),
                    hour: at,
                });
            }
            if let Some(end) = prev_end {
                if at < end {
                    return Err(SimError::ContradictoryEvents {
                        slash24: s.slash24,
                        kind: e.kind_name(),
                        hour: at,
                    });
                }
            }
            if let Some(rev) = e.revert_hour() {
                if rev <= at {
                    return Err(SimError::ContradictoryEvents {
                        slash24: s.slash24,
                        kind: e.kind_name(),
                        hour: rev,
                    });
                }
            }
            prev_end = Some(e.revert_hour().unwrap_or(at).max(at) + 1);
        }
    }
    Ok(())
}

fn ttl_pattern(mix: &[u8], hops: u8) -> Vec<(u8, u8)> {
    let mut p: Vec<(u8, u8)> = mix.iter().map(|&i| (i, hops)).collect();
    p.sort_unstable();
    p.dedup();
    p
}

fn build_state(
    s: &SubnetScenario,
    start_ts: u64,
    truth_events: &mut Vec<TruthEvent>,
) -> SubnetState {
    let mut rtt = Timeline::new(s.base_rtt_ms);
    let mut think = Timeline::new(s.think_time_ms);
    let mut ttl_mix = Timeline::new(s.ttl_initials.clone());

    let mut ordered = s.events.clone();
    ordered.sort_by_key(|e| e.at_hour());
    for e in &ordered {
        match e {
            EventSpec::RttStep {
                at_hour,
                to_ms,
                revert_hour,
            } => {
                let before = *rtt.before(*at_hour);
                rtt.push(*at_hour, *to_ms);
                if let Some(rev) = revert_hour {
                    rtt.push(*rev, before);
                }
            }
            EventSpec::TtlChange {
                at_hour,
                to,
                revert_hour,
            } => {
                let before = ttl_mix.before(*at_hour).clone();
                ttl_mix.push(*at_hour, to.clone());
                if let Some(rev) = revert_hour {
                    ttl_mix.push(*rev, before);
                }
            }
            EventSpec::ThinkStep {
                at_hour,
                to_ms,
                revert_hour,
            } => {
                let before = *think.before(*at_hour);
                think.push(*at_hour, *to_ms);
                if let Some(rev) = revert_hour {
                    think.push(*rev, before);
                }
            }
        }
    }

    // Truth events: one per transition, with the TTFB shift implied by any
    // RTT transition recorded as well (the TTFB floor is twice the RTT).
    for e in &ordered {
        let mut hours = vec![e.at_hour()];
        hours.extend(e.revert_hour());
        for &h in &hours {
            let ts = start_ts + u64::from(h) * 3600;
            match e {
                EventSpec::RttStep { .. } => {
                    let before = *rtt.before(h);
                    let after = *rtt.at(h);
                    truth_events.push(TruthEvent {
                        slash24: s.slash24,
                        ts,
                        kind: EventKind::RttShift,
                        change: EventChange::Level { before, after },
                    });
                    let think_now = *think.at(h);
                    truth_events.push(TruthEvent {
                        slash24: s.slash24,
                        ts,
                        kind: EventKind::TtfbShift,
                        change: EventChange::Level {
                            before: 2.0 * before + think_now,
                            after: 2.0 * after + think_now,
                        },
                    });
                }
                EventSpec::TtlChange { .. } => {
                    let before = ttl_pattern(ttl_mix.before(h), s.hop_count);
                    let after = ttl_pattern(ttl_mix.at(h), s.hop_count);
                    truth_events.push(TruthEvent {
                        slash24: s.slash24,
                        ts,
                        kind: EventKind::TtlPatternChange,
                        change: EventChange::Pattern { before, after },
                    });
                }
                EventSpec::ThinkStep { .. } => {
                    let rtt_now = *rtt.at(h);
                    let before = *think.before(h);
                    let after = *think.at(h);
                    truth_events.push(TruthEvent {
                        slash24: s.slash24,
                        ts,
                        kind: EventKind::TtfbShift,
                        change: EventChange::Level {
                            before: 2.0 * rtt_now + before,
                            after: 2.0 * rtt_now + after,
                        },
                    });
                }
            }
        }
    }

    // Deterministic service->server assignment: service k starts at server
    // offset k and wraps around.
    let service_servers = s
        .services
        .iter()
        .enumerate()
        .map(|(k, svc)| {
            let n = svc.servers.clamp(1, s.servers);
            (0..n)
                .map(|j| {
                    let host = 1 + ((k as u8).wrapping_add(j)) % s.servers;
                    s.slash24.host(host)
                })
                .collect()
        })
        .collect();
    let mut acc = 0.0;
    let cumulative_service_weight = s
        .services
        .iter()
        .map(|svc| {
            acc += svc.weight;
            acc
        })
        .collect();

    SubnetState {
        rtt,
        think,
        ttl_mix,
        service_servers,
        cumulative_service_weight,
    }
}

fn pick_weighted(cumulative: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cumulative.last().expect("nonempty weights");
    let x = rng.random_range(0.0..total);
    cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1)
}

/// Generates a time-ordered flow log, its DNS log, and the ground truth for
/// a traffic scenario. Deterministic per (scenario, seed).
pub fn gen_flowlog(scenario: &TrafficScenario, seed: u64) -> Result<FlowLog, SimError> {
    for s in &scenario.subnets {
        validate_subnet(s)?;
        validate_events(s, scenario.duration_hours)?;
    }
    if scenario.subnets.is_empty() || scenario.clients == 0 || scenario.duration_hours == 0 {
        return Ok(FlowLog {
            truth: TrafficTruth {
                clients: scenario.clients,
                ..TrafficTruth::default()
            },
            ..FlowLog::default()
        });
    }

    let mut truth_events = Vec::new();
    let states: Vec<SubnetState> = scenario
        .subnets
        .iter()
        .map(|s| build_state(s, scenario.start_ts, &mut truth_events))
        .collect();
    truth_events.sort_by(|a, b| {
        a.ts.cmp(&b.ts)
            .then_with(|| a.slash24.cmp(&b.slash24))
            .then_with(|| a.kind.cmp(&b.kind))
    });

    let mut cum_subnet_weight = Vec::with_capacity(scenario.subnets.len());
    let mut acc = 0.0;
    for s in &scenario.subnets {
        acc += s.weight;
        cum_subnet_weight.push(acc);
    }

    let mut flows: Vec<FlowRecord> = Vec::new();
    let mut dns: Vec<DnsObservation> = Vec::new();
    // Client's latest emitted (client, server) -> (service fqdn, ts).
    let mut dns_view: HashMap<(u32, Ipv4Addr), (String, f64)> = HashMap::new();
    let refresh_s = crate::flow::DEFAULT_DNS_TTL_S / 2.0;

    for h in 0..scenario.duration_hours {
        let hour_ts = scenario.start_ts + u64::from(h) * 3600;
        let hour_of_day = ((scenario.start_ts / 3600 + u64::from(h)) % 24) as u32;
        let activity = diurnal_activity(hour_of_day);

        // Per-hour snapshot of every subnet's levels.
        let snapshot: Vec<(f64, f64, &Vec<u8>)> = states
            .iter()
            .map(|st| (*st.rtt.at(h), *st.think.at(h), st.ttl_mix.at(h)))
            .collect();

        for client in 0..scenario.clients {
            let mut rng = rng_stream(
                "traffic",
                seed,
                &[&h.to_le_bytes(), &client.to_le_bytes()],
            );
            if rng.random::<f64>() >= activity {
                continue;
            }
            let lambda = scenario.flows_per_client_hour * activity;
            let n_flows = if lambda > 0.0 {
                (Poisson::new(lambda).expect("positive lambda").sample(&mut rng) as u64)
                    .clamp(1, 500)
            } else {
                1
            };
            let client_id = format!("c{client:05}");
            let mut pending: Vec<(FlowRecord, String)> = Vec::with_capacity(n_flows as usize);

            for _ in 0..n_flows {
                let sn = pick_weighted(&cum_subnet_weight, &mut rng);
                let spec = &scenario.subnets[sn];
                let state = &states[sn];
                let (rtt_level, think_level, ttl_mix) = (
                    snapshot[sn].0,
                    snapshot[sn].1,
                    snapshot[sn].2,
                );

                let ts_start = hour_ts as f64 + rng.random_range(0.0..3600.0);
                let min_rtt_ms = if spec.rtt_jitter_ms > 0.0 {
                    rtt_level
                        + Normal::new(0.0, spec.rtt_jitter_ms)
                            .expect("validated jitter")
                            .sample(&mut rng)
                            .abs()
                } else {
                    rtt_level
                };
                let think_noise: f64 = rng.random_range(0.0..0.3);
                let ttfb_ms = 2.0 * min_rtt_ms + think_level * (1.0 + think_noise);
                let ttl_initial = ttl_mix[rng.random_range(0..ttl_mix.len())];
                let min_ttl = ttl_initial - spec.hop_count;

                let svc_idx = pick_weighted(&state.cumulative_service_weight, &mut rng);
                let svc = &spec.services[svc_idx];
                let fqdn = &svc.fqdns[rng.random_range(0..svc.fqdns.len())];
                let servers = &state.service_servers[svc_idx];
                let server_ip = servers[rng.random_range(0..servers.len())];

                let other: f64 = rng.random();
                let (l7, server_port) = if other < scenario.other_l7_share {
                    (L7::Other("OTHER".to_string()), 8081)
                } else if rng.random::<f64>() < spec.tls_share {
                    (L7::Tls, 443)
                } else {
                    (L7::Http, 80)
                };

                let log_bytes: f64 = Normal::new(9.0, 1.6)
                    .expect("const sigma")
                    .sample(&mut rng);
                let bytes_down = (log_bytes.exp() as u64).clamp(64, 1 << 33);
                let ts_end = ts_start + rng.random_range(0.05..20.0);

                pending.push((
                    FlowRecord {
                        ts_start,
                        ts_end,
                        client_id: client_id.clone(),
                        server_ip,
                        server_port,
                        l7,
                        bytes_down,
                        min_rtt_ms,
                        min_ttl,
                        ttfb_ms,
                        fqdn: None,
                    },
                    fqdn.clone(),
                ));
            }

            // Observations must precede the flows they explain, so walk this
            // client's flows in time order and emit one whenever the client
            // has no current mapping for the server, the service changed, or
            // the entry would have gone stale.
            pending.sort_by(|a, b| a.0.ts_start.total_cmp(&b.0.ts_start));
            for (flow, fqdn) in pending {
                let key = (client, flow.server_ip);
                let needs_obs = match dns_view.get(&key) {
                    Some((known_fqdn, last_ts)) => {
                        *known_fqdn != fqdn || flow.ts_start - last_ts > refresh_s
                    }
                    None => true,
                };
                if needs_obs {
                    dns.push(DnsObservation {
                        ts: flow.ts_start - 1.0,
                        client_id: client_id.clone(),
                        fqdn: fqdn.clone(),
                        answers: vec![flow.server_ip],
                    });
                    dns_view.insert(key, (fqdn, flow.ts_start));
                }
                flows.push(flow);
            }
        }
    }

    flows.sort_by(|a, b| {
        a.ts_start
            .total_cmp(&b.ts_start)
            .then_with(|| a.client_id.cmp(&b.client_id))
            .then_with(|| a.server_ip.cmp(&b.server_ip))
            .then_with(|| a.ts_end.total_cmp(&b.ts_end))
    });
    dns.sort_by(|a, b| {
        a.ts.total_cmp(&b.ts)
            .then_with(|| a.client_id.cmp(&b.client_id))
            .then_with(|| a.fqdn.cmp(&b.fqdn))
    });

    let truth = TrafficTruth {
        anycast_slash24s: scenario
            .subnets
            .iter()
            .filter(|s| s.anycast)
            .map(|s| s.slash24)
            .collect(),
        events: truth_events,
        flows: flows.len() as u64,
        dns_observations: dns.len() as u64,
        clients: scenario.clients,
    };

    Ok(FlowLog { flows, dns, truth })
}
