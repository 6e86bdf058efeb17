//! Anycast detection, replica enumeration, and per-instance geolocation from
//! multi-vantage-point ping measurements.
//!
//! Each RTT sample bounds the responder inside a latency disk around the
//! vantage point. Two pairwise-disjoint disks for the same target address are
//! physically incompatible with a single host, so the target is anycast. A
//! greedy pass over the disks (smallest radius first, keeping only disks
//! disjoint from every disk already kept) yields a maximal independent set:
//! a lower bound on the number of replica sites, each witnessed by one disk.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::net::Ipv4Addr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{
    disks_disjoint, point_in_disk, GeoError, GeoPoint, LatencyDisk, HIGH_CONFIDENCE_RADIUS_KM,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("no measurements for target")]
    EmptyInput,
    #[error("measurements mix targets {0} and {1}")]
    MixedTargets(Ipv4Addr, Ipv4Addr),
    #[error("duplicate vantage point {0:?} for one target")]
    DuplicateVantagePoint(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// A geolocated measurement host.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VantagePoint {
    pub id: String,
    pub location: GeoPoint<f64>,
}

/// One RTT sample from a vantage point to a target /32.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PingMeasurement {
    pub vp_id: String,
    pub vp_location: GeoPoint<f64>,
    pub target: Ipv4Addr,
    pub rtt_ms: f64,
    pub timestamp: u64,
}

impl PingMeasurement {
    /// Builds a measurement; the RTT must be finite and nonnegative.
    pub fn new(
        vp: &VantagePoint,
        target: Ipv4Addr,
        rtt_ms: f64,
        timestamp: u64,
    ) -> Result<Self, DetectError> {
        if !rtt_ms.is_finite() || rtt_ms < 0.0 {
            return Err(GeoError::NegativeRtt(rtt_ms).into());
        }
        Ok(Self {
            vp_id: vp.id.clone(),
            vp_location: vp.location,
            target,
            rtt_ms,
            timestamp,
        })
    }

    /// Latency disk implied by this sample.
    pub fn disk(&self, km_per_ms: f64) -> Result<LatencyDisk<f64>, GeoError> {
        LatencyDisk::from_rtt(self.vp_location, self.rtt_ms, km_per_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Unicast,
    Anycast,
}

/// Geolocation label attached to an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceLocation {
    pub city: String,
    pub country: String,
    pub coords: GeoPoint<f64>,
    pub population: u64,
}

/// One inferred replica site: a latency disk plus an optional geolocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnycastInstance {
    pub disk: LatencyDisk<f64>,
    pub witness_vp: String,
    /// True when the disk radius is small enough (<= 300 km) for the
    /// geolocation to be trusted.
    pub high_confidence: bool,
    pub location: Option<InstanceLocation>,
}

impl AnycastInstance {
    fn from_measurement(m: &PingMeasurement, km_per_ms: f64) -> Result<Self, GeoError> {
        let disk = m.disk(km_per_ms)?;
        Ok(Self {
            disk,
            witness_vp: m.vp_id.clone(),
            high_confidence: disk.radius_km() <= HIGH_CONFIDENCE_RADIUS_KM,
            location: None,
        })
    }
}

/// Full classification of one target address.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub target: Ipv4Addr,
    pub verdict: Verdict,
    /// First violating vantage-point pair under deterministic ordering
    /// (smallest combined radius, ties by id), present iff anycast.
    pub witness_pair: Option<(String, String)>,
    pub instances: Vec<AnycastInstance>,
    pub num_locations: usize,
}

/// A city candidate for geolocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct City {
    pub name: String,
    pub country: String,
    pub location: GeoPoint<f64>,
    pub population: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CityDbError {
    #[error("city database is empty")]
    Empty,
    #[error("duplicate city {name:?} in {country:?}")]
    Duplicate { name: String, country: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Geolocation candidate set.
#[derive(Debug, Clone)]
pub struct CityDb {
    entries: Vec<City>,
}

impl CityDb {
    pub fn new(entries: Vec<City>) -> Result<Self, CityDbError> {
        if entries.is_empty() {
            return Err(CityDbError::Empty);
        }
        let mut seen = HashSet::new();
        for c in &entries {
            if !seen.insert((c.name.clone(), c.country.clone())) {
                return Err(CityDbError::Duplicate {
                    name: c.name.clone(),
                    country: c.country.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Loads `name, country, lat, lon, population` lines. The name is
    /// everything left of the last four comma-separated fields, so it may
    /// itself contain commas. Blank lines and `#` comments are skipped.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, CityDbError> {
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| CityDbError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.rsplitn(5, ',').map(str::trim);
            let err = |message: &str| CityDbError::Malformed {
                line: line_no,
                message: message.to_string(),
            };
            let population = fields
                .next()
                .ok_or_else(|| err("missing population"))?
                .parse::<u64>()
                .map_err(|_| err("invalid population"))?;
            let lon = fields
                .next()
                .ok_or_else(|| err("missing longitude"))?
                .parse::<f64>()
                .map_err(|_| err("invalid longitude"))?;
            let lat = fields
                .next()
                .ok_or_else(|| err("missing latitude"))?
                .parse::<f64>()
                .map_err(|_| err("invalid latitude"))?;
            let country = fields.next().ok_or_else(|| err("missing country"))?;
            let name = fields.next().ok_or_else(|| err("missing name"))?;
            if name.is_empty() {
                return Err(err("empty name"));
            }
            entries.push(City {
                name: name.to_string(),
                country: country.to_string(),
                location: GeoPoint::new(lat, lon)?,
                population,
            });
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[City] {
        &self.entries
    }
}

/// Verdict plus witness pair, before enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub verdict: Verdict,
    pub witness_pair: Option<(String, String)>,
}

fn validate_group(ms: &[PingMeasurement]) -> Result<(), DetectError> {
    let first = ms.first().ok_or(DetectError::EmptyInput)?;
    let mut vps = HashSet::with_capacity(ms.len());
    for m in ms {
        if m.target != first.target {
            return Err(DetectError::MixedTargets(first.target, m.target));
        }
        if !vps.insert(m.vp_id.as_str()) {
            return Err(DetectError::DuplicateVantagePoint(m.vp_id.clone()));
        }
    }
    Ok(())
}

fn disks_for(
    ms: &[PingMeasurement],
    km_per_ms: f64,
) -> Result<Vec<LatencyDisk<f64>>, DetectError> {
    ms.iter().map(|m| Ok(m.disk(km_per_ms)?)).collect()
}

/// Decides whether one target is anycast: true iff some pair of measurement
/// disks is disjoint, which no single host location can explain.
pub fn detect_anycast(
    ms: &[PingMeasurement],
    km_per_ms: f64,
) -> Result<Detection, DetectError> {
    validate_group(ms)?;
    let disks = disks_for(ms, km_per_ms)?;

    // The witness is the violating pair with the smallest combined radius
    // (ties by vantage-point ids): the tightest physical contradiction.
    let mut best: Option<(f64, (&str, &str))> = None;
    for i in 0..disks.len() {
        for j in (i + 1)..disks.len() {
            if disks_disjoint(disks[i], disks[j]) {
                let combined = disks[i].radius_km() + disks[j].radius_km();
                let (a, b) = order_pair(&ms[i].vp_id, &ms[j].vp_id);
                match &best {
                    Some((r, pair)) if (combined, (a, b)) >= (*r, *pair) => {}
                    _ => best = Some((combined, (a, b))),
                }
            }
        }
    }

    Ok(match best {
        Some((_, (a, b))) => Detection {
            verdict: Verdict::Anycast,
            witness_pair: Some((a.to_string(), b.to_string())),
        },
        None => Detection {
            verdict: Verdict::Unicast,
            witness_pair: None,
        },
    })
}

fn order_pair<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Greedy maximal independent set over the measurement disks: repeatedly
/// keep the smallest-radius disk disjoint from everything already kept.
///
/// The result is pairwise disjoint and maximal, so its size is a lower bound
/// on the number of replica sites. Disks covering the whole sphere carry no
/// information and are skipped.
pub fn enumerate_instances(
    ms: &[PingMeasurement],
    km_per_ms: f64,
) -> Result<Vec<AnycastInstance>, DetectError> {
    validate_group(ms)?;
    let mut indexed: Vec<(LatencyDisk<f64>, &PingMeasurement)> = ms
        .iter()
        .map(|m| Ok::<_, DetectError>((m.disk(km_per_ms)?, m)))
        .collect::<Result<_, _>>()?;
    indexed.retain(|(d, _)| !d.covers_sphere());
    indexed.sort_by(|(da, ma), (db, mb)| {
        da.radius_km()
            .total_cmp(&db.radius_km())
            .then_with(|| ma.vp_id.cmp(&mb.vp_id))
    });

    let mut selected: Vec<(LatencyDisk<f64>, &PingMeasurement)> = Vec::new();
    for (disk, m) in indexed {
        if selected.iter().all(|(kept, _)| disks_disjoint(*kept, disk)) {
            selected.push((disk, m));
        }
    }

    selected
        .into_iter()
        .map(|(_, m)| Ok(AnycastInstance::from_measurement(m, km_per_ms)?))
        .collect()
}

/// Fills the instance location with the most populous city inside its disk
/// (ties by name then country). Leaves the location empty when no candidate
/// city falls inside the disk.
pub fn geolocate_instance(inst: &AnycastInstance, cities: &CityDb) -> AnycastInstance {
    let best = cities
        .entries()
        .iter()
        .filter(|c| point_in_disk(c.location, inst.disk))
        .min_by(|a, b| {
            b.population
                .cmp(&a.population)
                .then_with(|| a.name.cmp(&b.name))
                .then_with(|| a.country.cmp(&b.country))
        });
    AnycastInstance {
        location: best.map(|c| InstanceLocation {
            city: c.name.clone(),
            country: c.country.clone(),
            coords: c.location,
            population: c.population,
        }),
        ..inst.clone()
    }
}

/// Detection, enumeration, and geolocation for one target.
pub fn classify_target(
    ms: &[PingMeasurement],
    cities: Option<&CityDb>,
    km_per_ms: f64,
) -> Result<DetectionResult, DetectError> {
    let detection = detect_anycast(ms, km_per_ms)?;
    let mut instances = enumerate_instances(ms, km_per_ms)?;
    if let Some(db) = cities {
        instances = instances
            .iter()
            .map(|inst| geolocate_instance(inst, db))
            .collect();
    }
    let num_locations = instances.len();
    Ok(DetectionResult {
        target: ms[0].target,
        verdict: detection.verdict,
        witness_pair: detection.witness_pair,
        num_locations,
        instances,
    })
}

/// Per-target failure record emitted by [`classify_batch`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetFailure {
    pub target: Ipv4Addr,
    pub error: String,
}

/// Outcome of one target in a batch: a result or an isolated failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TargetOutcome {
    Classified(DetectionResult),
    Failed(TargetFailure),
}

impl TargetOutcome {
    pub fn target(&self) -> Ipv4Addr {
        match self {
            TargetOutcome::Classified(r) => r.target,
            TargetOutcome::Failed(f) => f.target,
        }
    }

    pub fn as_classified(&self) -> Option<&DetectionResult> {
        match self {
            TargetOutcome::Classified(r) => Some(r),
            TargetOutcome::Failed(_) => None,
        }
    }
}

/// Groups a campaign by target address.
pub fn group_by_target(
    campaign: impl IntoIterator<Item = PingMeasurement>,
) -> BTreeMap<Ipv4Addr, Vec<PingMeasurement>> {
    let mut groups: BTreeMap<Ipv4Addr, Vec<PingMeasurement>> = BTreeMap::new();
    for m in campaign {
        groups.entry(m.target).or_default().push(m);
    }
    groups
}

/// Classifies every target of a campaign, in parallel, producing outcomes in
/// target-address order. A malformed target group becomes a failure record
/// and never aborts the rest of the batch.
pub fn classify_batch(
    groups: &BTreeMap<Ipv4Addr, Vec<PingMeasurement>>,
    cities: Option<&CityDb>,
    km_per_ms: f64,
) -> Vec<TargetOutcome> {
    let entries: Vec<(&Ipv4Addr, &Vec<PingMeasurement>)> = groups.iter().collect();
    entries
        .par_iter()
        .map(|(target, ms)| match classify_target(ms, cities, km_per_ms) {
            Ok(result) => TargetOutcome::Classified(result),
            Err(e) => TargetOutcome::Failed(TargetFailure {
                target: **target,
                error: e.to_string(),
            }),
        })
        .collect()
}

/// Warning produced while reading an input file; kept as data so runs stay
/// auditable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputWarning {
    pub line: usize,
    pub message: String,
}

/// Reads `vp_id, vp_lat, vp_lon, target_ip, rtt_ms, ts` lines. Malformed
/// lines become warnings, not errors; blank lines and `#` comments are
/// skipped.
pub fn read_measurements<R: BufRead>(
    reader: R,
) -> std::io::Result<(Vec<PingMeasurement>, Vec<InputWarning>)> {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_measurement_line(trimmed) {
            Ok(m) => out.push(m),
            Err(message) => warnings.push(InputWarning {
                line: line_no,
                message,
            }),
        }
    }
    Ok((out, warnings))
}

fn parse_measurement_line(line: &str) -> Result<PingMeasurement, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, got {}", fields.len()));
    }
    let vp_id = fields[0];
    if vp_id.is_empty() {
        return Err("empty vp_id".into());
    }
    let lat: f64 = fields[1].parse().map_err(|_| "invalid vp_lat".to_string())?;
    let lon: f64 = fields[2].parse().map_err(|_| "invalid vp_lon".to_string())?;
    let target: Ipv4Addr = fields[3]
        .parse()
        .map_err(|_| "invalid target_ip".to_string())?;
    let rtt_ms: f64 = fields[4]
        .parse()
        .map_err(|_| "invalid rtt_ms".to_string())?;
    let ts: u64 = fields[5].parse().map_err(|_| "invalid ts".to_string())?;
    let location = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    PingMeasurement::new(
        &VantagePoint {
            id: vp_id.to_string(),
            location,
        },
        target,
        rtt_ms,
        ts,
    )
    .map_err(|e| e.to_string())
}

/// Canonical text form of a measurement, inverse of the reader.
pub fn format_measurement(m: &PingMeasurement) -> String {
    format!(
        "{},{},{},{},{},{}",
        m.vp_id,
        m.vp_location.lat_deg(),
        m.vp_location.lon_deg(),
        m.target,
        m.rtt_ms,
        m.timestamp
    )
}

/// Reads `vp_id,lat,lon` lines.
pub fn read_vantage_points<R: BufRead>(
    reader: R,
) -> std::io::Result<(Vec<VantagePoint>, Vec<InputWarning>)> {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed = (|| -> Result<VantagePoint, String> {
            if fields.len() != 3 {
                return Err(format!("expected 3 fields, got {}", fields.len()));
            }
            let lat: f64 = fields[1].parse().map_err(|_| "invalid lat".to_string())?;
            let lon: f64 = fields[2].parse().map_err(|_| "invalid lon".to_string())?;
            Ok(VantagePoint {
                id: fields[0].to_string(),
                location: GeoPoint::new(lat, lon).map_err(|e| e.to_string())?,
            })
        })();
        match parsed {
            Ok(vp) => out.push(vp),
            Err(message) => warnings.push(InputWarning {
                line: line_no,
                message,
            }),
        }
    }
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::DEFAULT_FIBER_KM_PER_MS;
    use proptest::prelude::*;

    const V: f64 = DEFAULT_FIBER_KM_PER_MS;

    fn vp(id: &str, lat: f64, lon: f64) -> VantagePoint {
        VantagePoint {
            id: id.to_string(),
            location: GeoPoint::new(lat, lon).unwrap(),
        }
    }

    fn m(id: &str, lat: f64, lon: f64, rtt: f64) -> PingMeasurement {
        PingMeasurement::new(&vp(id, lat, lon), Ipv4Addr::new(1, 2, 3, 4), rtt, 0).unwrap()
    }

    #[test]
    fn single_measurement_is_unicast() {
        let d = detect_anycast(&[m("a", 0.0, 0.0, 10.0)], V).unwrap();
        assert_eq!(d.verdict, Verdict::Unicast);
        assert!(d.witness_pair.is_none());
    }

    #[test]
    fn rome_and_nyc_fast_pings_prove_anycast() {
        let ms = [m("rome", 41.9, 12.5, 10.0), m("nyc", 40.7, -74.0, 10.0)];
        let d = detect_anycast(&ms, V).unwrap();
        assert_eq!(d.verdict, Verdict::Anycast);
        assert_eq!(
            d.witness_pair,
            Some(("nyc".to_string(), "rome".to_string()))
        );
    }

    #[test]
    fn nearby_vps_with_fast_pings_stay_unicast() {
        // 1,500 km apart, 999.3 km radius each: disks overlap.
        let ms = [
            m("a", 0.0, 0.0, 10.0),
            m("b", 0.0, 13.489_824_088_780_958, 10.0),
        ];
        let d = detect_anycast(&ms, V).unwrap();
        assert_eq!(d.verdict, Verdict::Unicast);
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(detect_anycast(&[], V), Err(DetectError::EmptyInput));
        assert_eq!(enumerate_instances(&[], V), Err(DetectError::EmptyInput));
    }

    #[test]
    fn mixed_targets_rejected() {
        let a = m("a", 0.0, 0.0, 10.0);
        let mut b = m("b", 10.0, 10.0, 10.0);
        b.target = Ipv4Addr::new(9, 9, 9, 9);
        assert!(matches!(
            detect_anycast(&[a, b], V),
            Err(DetectError::MixedTargets(_, _))
        ));
    }

    #[test]
    fn duplicate_vp_rejected() {
        let a = m("a", 0.0, 0.0, 10.0);
        let b = m("a", 10.0, 10.0, 12.0);
        assert!(matches!(
            detect_anycast(&[a, b], V),
            Err(DetectError::DuplicateVantagePoint(_))
        ));
    }

    #[test]
    fn witness_pair_prefers_smallest_combined_radius() {
        // Three mutually violating VPs; the two with the smallest radii are
        // Rome and NYC (10 ms each), Tokyo is larger (20 ms).
        let ms = [
            m("tokyo", 35.68, 139.65, 20.0),
            m("rome", 41.9, 12.5, 10.0),
            m("nyc", 40.7, -74.0, 10.0),
        ];
        let d = detect_anycast(&ms, V).unwrap();
        assert_eq!(
            d.witness_pair,
            Some(("nyc".to_string(), "rome".to_string()))
        );
    }

    #[test]
    fn single_disk_enumerates_one_instance() {
        let inst = enumerate_instances(&[m("a", 0.0, 0.0, 10.0)], V).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].witness_vp, "a");
    }

    #[test]
    fn mutually_overlapping_disks_collapse_to_one() {
        // 20 VPs in a tight cluster, all with generous radii: one instance.
        let ms: Vec<PingMeasurement> = (0..20)
            .map(|i| m(&format!("vp{i:02}"), 40.0 + (i as f64) * 0.1, 10.0, 30.0))
            .collect();
        let inst = enumerate_instances(&ms, V).unwrap();
        assert_eq!(inst.len(), 1);
    }

    /// Exhaustive maximum-independent-set oracle over all disk subsets.
    fn brute_force_mis(disks: &[LatencyDisk<f64>]) -> usize {
        let n = disks.len();
        assert!(n <= 16);
        let mut best = 0;
        'subset: for mask in 0u32..(1 << n) {
            let picked: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            for (ai, &a) in picked.iter().enumerate() {
                for &b in picked.iter().skip(ai + 1) {
                    if !disks_disjoint(disks[a], disks[b]) {
                        continue 'subset;
                    }
                }
            }
            best = best.max(picked.len());
        }
        best
    }

    #[test]
    fn four_disk_fixture_matches_brute_force() {
        // Two far-apart clusters of two overlapping disks each: optimal
        // independent set has size 2.
        let ms = [
            m("a1", 0.0, 0.0, 10.0),
            m("a2", 1.0, 1.0, 12.0),
            m("b1", 0.0, 120.0, 10.0),
            m("b2", 1.0, 121.0, 12.0),
        ];
        let disks: Vec<_> = ms.iter().map(|x| x.disk(V).unwrap()).collect();
        assert_eq!(brute_force_mis(&disks), 2);

        let inst = enumerate_instances(&ms, V).unwrap();
        assert_eq!(inst.len(), 2);
        assert_pairwise_disjoint_and_maximal(&inst, &disks);
    }

    fn assert_pairwise_disjoint_and_maximal(
        selected: &[AnycastInstance],
        all_disks: &[LatencyDisk<f64>],
    ) {
        for (i, a) in selected.iter().enumerate() {
            for b in selected.iter().skip(i + 1) {
                assert!(disks_disjoint(a.disk, b.disk), "selection not independent");
            }
        }
        for d in all_disks {
            if d.covers_sphere() {
                continue;
            }
            let disjoint_from_all = selected.iter().all(|s| disks_disjoint(s.disk, *d));
            if disjoint_from_all {
                // d itself must already be selected, otherwise not maximal.
                assert!(
                    selected.iter().any(|s| s.disk == *d),
                    "selection not maximal"
                );
            }
        }
    }

    #[test]
    fn sphere_covering_disk_is_skipped() {
        let ms = [
            m("slow", 0.0, 0.0, 250.0), // radius ~24,983 km: covers the sphere
            m("rome", 41.9, 12.5, 10.0),
            m("nyc", 40.7, -74.0, 10.0),
        ];
        let inst = enumerate_instances(&ms, V).unwrap();
        assert_eq!(inst.len(), 2);
        assert!(inst.iter().all(|i| i.witness_vp != "slow"));
        // It can never witness a violation either.
        let d = detect_anycast(&ms[..2], V).unwrap();
        assert_eq!(d.verdict, Verdict::Unicast);
    }

    fn test_city(name: &str, country: &str, lat: f64, lon: f64, pop: u64) -> City {
        City {
            name: name.to_string(),
            country: country.to_string(),
            location: GeoPoint::new(lat, lon).unwrap(),
            population: pop,
        }
    }

    #[test]
    fn geolocation_picks_most_populous_city_in_disk() {
        let db = CityDb::new(vec![
            test_city("Smallville", "XX", 40.0, 10.0, 1_000_000),
            test_city("Megacity", "YY", 41.0, 11.0, 5_000_000),
            test_city("Faraway", "ZZ", -40.0, -120.0, 30_000_000),
        ])
        .unwrap();
        let ms = m("a", 40.5, 10.5, 10.0);
        let inst = &enumerate_instances(&[ms], V).unwrap()[0];
        let located = geolocate_instance(inst, &db);
        assert_eq!(located.location.as_ref().unwrap().city, "Megacity");
    }

    #[test]
    fn zero_radius_disk_geolocates_to_exact_city() {
        let db = CityDb::new(vec![
            test_city("Here", "AA", 12.0, 34.0, 100),
            test_city("There", "BB", 12.5, 34.0, 100_000),
        ])
        .unwrap();
        let ms = m("a", 12.0, 34.0, 0.0);
        let inst = &enumerate_instances(&[ms], V).unwrap()[0];
        let located = geolocate_instance(inst, &db);
        assert_eq!(located.location.as_ref().unwrap().city, "Here");
        assert!(located.high_confidence);
    }

    #[test]
    fn empty_candidate_set_leaves_location_none() {
        let db = CityDb::new(vec![test_city("Far", "AA", -50.0, -170.0, 1_000_000)]).unwrap();
        let ms = m("a", 45.0, 10.0, 1.0);
        let inst = &enumerate_instances(&[ms], V).unwrap()[0];
        let located = geolocate_instance(inst, &db);
        assert!(located.location.is_none());
    }

    #[test]
    fn high_confidence_follows_300km_radius() {
        // 6 ms RTT -> ~599.6 km radius: not high confidence.
        let big = AnycastInstance::from_measurement(&m("a", 0.0, 0.0, 6.0), V).unwrap();
        assert!(!big.high_confidence);
        // 3 ms -> ~299.8 km: high confidence.
        let small = AnycastInstance::from_measurement(&m("a", 0.0, 0.0, 3.0), V).unwrap();
        assert!(small.high_confidence);
    }

    #[test]
    fn batch_isolates_failures() {
        let good_a = vec![m("rome", 41.9, 12.5, 10.0), m("nyc", 40.7, -74.0, 10.0)];
        let mut good_b = vec![m("rome", 41.9, 12.5, 10.0)];
        for x in &mut good_b {
            x.target = Ipv4Addr::new(2, 2, 2, 2);
        }
        // Duplicate vantage point makes this group malformed.
        let mut bad = vec![m("rome", 41.9, 12.5, 10.0), m("rome", 41.9, 12.5, 11.0)];
        for x in &mut bad {
            x.target = Ipv4Addr::new(3, 3, 3, 3);
        }

        let mut campaign = Vec::new();
        campaign.extend(good_a);
        campaign.extend(good_b);
        campaign.extend(bad);
        let groups = group_by_target(campaign);
        let outcomes = classify_batch(&groups, None, V);
        assert_eq!(outcomes.len(), 3);
        assert_eq!(
            outcomes
                .iter()
                .filter(|o| o.as_classified().is_some())
                .count(),
            2
        );
        assert_eq!(
            outcomes
                .iter()
                .filter(|o| matches!(o, TargetOutcome::Failed(_)))
                .count(),
            1
        );
        // Canonical order by target address.
        let targets: Vec<Ipv4Addr> = outcomes.iter().map(|o| o.target()).collect();
        let mut sorted = targets.clone();
        sorted.sort();
        assert_eq!(targets, sorted);
    }

    #[test]
    fn empty_campaign_classifies_to_empty_list() {
        let groups = group_by_target(Vec::new());
        assert!(classify_batch(&groups, None, V).is_empty());
    }

    #[test]
    fn anycast_verdict_iff_at_least_two_locations() {
        let ms = vec![m("rome", 41.9, 12.5, 10.0), m("nyc", 40.7, -74.0, 10.0)];
        let r = classify_target(&ms, None, V).unwrap();
        assert_eq!(r.verdict, Verdict::Anycast);
        assert!(r.witness_pair.is_some());
        assert!(r.num_locations >= 2);

        let ms1 = vec![m("rome", 41.9, 12.5, 10.0)];
        let r1 = classify_target(&ms1, None, V).unwrap();
        assert_eq!(r1.verdict, Verdict::Unicast);
        assert!(r1.witness_pair.is_none());
        assert_eq!(r1.num_locations, 1);
    }

    #[test]
    fn measurement_line_round_trip() {
        let line = "pl-rome,41.9,12.5,1.2.3.4,10,1409529600";
        let parsed = parse_measurement_line(line).unwrap();
        assert_eq!(parsed.vp_id, "pl-rome");
        assert_eq!(parsed.rtt_ms, 10.0);
        assert_eq!(format_measurement(&parsed), line);
    }

    #[test]
    fn measurement_reader_collects_warnings() {
        let text = "\
a,0,0,1.2.3.4,10,0
broken line
b,0,0,1.2.3.4,-5,0
c,91.0,0,1.2.3.4,10,0
d,0,0,1.2.3.4,10,0
";
        let (ms, warnings) = read_measurements(text.as_bytes()).unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!(warnings.len(), 3);
        assert_eq!(warnings[0].line, 2);
    }

    fn arb_measurements() -> impl Strategy<Value = Vec<PingMeasurement>> {
        proptest::collection::vec((-80.0f64..=80.0, -180.0f64..180.0, 0.1f64..120.0), 1..16)
            .prop_map(|specs| {
                specs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (lat, lon, rtt))| m(&format!("vp{i:02}"), lat, lon, rtt))
                    .collect()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn enumeration_is_independent_and_maximal(ms in arb_measurements()) {
            let disks: Vec<_> = ms.iter().map(|x| x.disk(V).unwrap()).collect();
            let inst = enumerate_instances(&ms, V).unwrap();
            assert_pairwise_disjoint_and_maximal(&inst, &disks);
        }

        #[test]
        fn greedy_never_beats_brute_force(ms in arb_measurements()) {
            prop_assume!(ms.len() <= 10);
            let disks: Vec<_> = ms.iter().map(|x| x.disk(V).unwrap()).collect();
            let inst = enumerate_instances(&ms, V).unwrap();
            prop_assert!(inst.len() <= brute_force_mis(&disks));
        }

        #[test]
        fn classification_invariant_under_permutation(ms in arb_measurements(), seed in 0u64..1000) {
            let original = classify_target(&ms, None, V).unwrap();
            let mut shuffled = ms.clone();
            // Cheap deterministic shuffle.
            let n = shuffled.len();
            let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let permuted = classify_target(&shuffled, None, V).unwrap();
            prop_assert_eq!(original, permuted);
        }

        #[test]
        fn verdict_witness_count_consistent(ms in arb_measurements()) {
            let r = classify_target(&ms, None, V).unwrap();
            let anycast = r.verdict == Verdict::Anycast;
            prop_assert_eq!(anycast, r.witness_pair.is_some());
            prop_assert_eq!(anycast, r.num_locations >= 2);
        }
    }
}
