//! Traffic aggregation over annotated anycast flows: per-subnet summaries,
//! per-service tables, user activity series, server discovery curves, and
//! DNS load-balancing CDFs.
//!
//! Every aggregate is a commutative-monoid merge of per-flow contributions,
//! so flows may be partitioned arbitrarily and partial aggregates merged;
//! distinct counts are exact (hash sets), not sketched.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{DnsObservation, FlowRecord};
use crate::net::Slash24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CharacterizeError {
    #[error("bin width must be positive")]
    ZeroBin,
    #[error("flow at {ts} out of order beyond {window}s tolerance")]
    OutOfOrder { ts: f64, window: f64 },
    #[error("fqdn to address map is empty")]
    EmptyMap,
}

/// Service label for flows with no FQDN annotation.
pub const UNKNOWN_SERVICE: &str = "(unknown)";
/// Service label for FQDNs that are a bare public suffix.
pub const INVALID_SERVICE: &str = "(invalid)";
/// Default user-count cutoff above which a subnet gets its own summary row.
pub const DEFAULT_OTHERS_CUTOFF: u64 = 1000;

/// Exact distinct-count accumulator for one /24.
#[derive(Debug, Clone, Default)]
pub struct SubnetAggregate {
    pub ip32s: HashSet<Ipv4Addr>,
    pub volume_bytes: u64,
    pub flow_count: u64,
    pub users: HashSet<String>,
    pub fqdns: HashSet<String>,
}

impl SubnetAggregate {
    pub fn absorb(&mut self, f: &FlowRecord) {
        self.ip32s.insert(f.server_ip);
        self.volume_bytes += f.bytes_down;
        self.flow_count += 1;
        self.users.insert(f.client_id.clone());
        if let Some(fqdn) = &f.fqdn {
            self.fqdns.insert(fqdn.clone());
        }
    }

    pub fn merge(&mut self, other: SubnetAggregate) {
        self.ip32s.extend(other.ip32s);
        self.volume_bytes += other.volume_bytes;
        self.flow_count += other.flow_count;
        self.users.extend(other.users);
        self.fqdns.extend(other.fqdns);
    }
}

/// Table row for one /24 over one time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetSummary {
    pub slash24: Slash24,
    pub distinct_ip32: u64,
    pub volume_bytes: u64,
    pub flow_count: u64,
    pub user_count: u64,
    pub fqdn_count: u64,
    pub window: (f64, f64),
}

/// Aggregated tail of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OthersSummary {
    pub subnet_count: u64,
    pub distinct_ip32: u64,
    pub volume_bytes: u64,
    pub flow_count: u64,
    pub user_count: u64,
    pub fqdn_count: u64,
}

/// Summary table: one row per popular /24 plus an optional aggregated tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SubnetSummary>,
    pub others: Option<OthersSummary>,
}

/// Aggregates flows whose start falls in `[window.0, window.1)` per /24.
pub fn subnet_aggregates<'a>(
    flows: impl IntoIterator<Item = &'a FlowRecord>,
    window: (f64, f64),
) -> BTreeMap<Slash24, SubnetAggregate> {
    let mut aggs: BTreeMap<Slash24, SubnetAggregate> = BTreeMap::new();
    for f in flows {
        if f.ts_start < window.0 || f.ts_start >= window.1 {
            continue;
        }
        aggs.entry(f.slash24()).or_default().absorb(f);
    }
    aggs
}

/// One summary per /24, sorted by user count descending (ties by subnet).
pub fn subnet_summary<'a>(
    flows: impl IntoIterator<Item = &'a FlowRecord>,
    window: (f64, f64),
) -> Vec<SubnetSummary> {
    summarize(subnet_aggregates(flows, window), window, None).rows
}

/// Renders aggregates into the summary table. With a cutoff, subnets whose
/// user count does not exceed it are merged into the `others` tail; distinct
/// counts in the tail are set-exact, not summed.
pub fn summarize(
    aggs: BTreeMap<Slash24, SubnetAggregate>,
    window: (f64, f64),
    others_cutoff: Option<u64>,
) -> SummaryTable {
    let mut rows = Vec::new();
    let mut tail = SubnetAggregate::default();
    let mut tail_subnets = 0u64;
    for (slash24, agg) in aggs {
        let keep = match others_cutoff {
            Some(cutoff) => agg.users.len() as u64 > cutoff,
            None => true,
        };
        if keep {
            rows.push(SubnetSummary {
                slash24,
                distinct_ip32: agg.ip32s.len() as u64,
                volume_bytes: agg.volume_bytes,
                flow_count: agg.flow_count,
                user_count: agg.users.len() as u64,
                fqdn_count: agg.fqdns.len() as u64,
                window,
            });
        } else {
            tail_subnets += 1;
            tail.merge(agg);
        }
    }
    rows.sort_by(|a, b| {
        b.user_count
            .cmp(&a.user_count)
            .then_with(|| a.slash24.cmp(&b.slash24))
    });
    let others = (tail_subnets > 0).then_some(OthersSummary {
        subnet_count: tail_subnets,
        distinct_ip32: tail.ip32s.len() as u64,
        volume_bytes: tail.volume_bytes,
        flow_count: tail.flow_count,
        user_count: tail.users.len() as u64,
        fqdn_count: tail.fqdns.len() as u64,
    });
    SummaryTable { rows, others }
}

/// Per-bin fraction of web-active clients that touched an anycast subnet.
/// Bins with no active client are absent from the result.
pub fn active_user_series<'a>(
    web_flows: impl IntoIterator<Item = &'a FlowRecord>,
    anycast: &BTreeSet<Slash24>,
    bin_s: u64,
) -> Result<Vec<(u64, f64)>, CharacterizeError> {
    if bin_s == 0 {
        return Err(CharacterizeError::ZeroBin);
    }
    let mut bins: BTreeMap<u64, (HashSet<&str>, HashSet<&str>)> = BTreeMap::new();
    for f in web_flows {
        if !f.l7.is_web() {
            continue;
        }
        let bin = (f.ts_start as u64) / bin_s * bin_s;
        let (active, touched) = bins.entry(bin).or_default();
        active.insert(f.client_id.as_str());
        if anycast.contains(&f.slash24()) {
            touched.insert(f.client_id.as_str());
        }
    }
    Ok(bins
        .into_iter()
        .filter(|(_, (active, _))| !active.is_empty())
        .map(|(bin, (active, touched))| (bin, touched.len() as f64 / active.len() as f64))
        .collect())
}

/// Cumulative count of distinct server addresses over time: one point per
/// flow. Input must be time-ordered within the standard reordering window.
pub fn discovery_curve<'a>(
    flows: impl IntoIterator<Item = &'a FlowRecord>,
) -> Result<Vec<(f64, u64)>, CharacterizeError> {
    let window = crate::flow::DEFAULT_REORDER_WINDOW_S;
    let mut seen: HashSet<Ipv4Addr> = HashSet::new();
    let mut curve = Vec::new();
    let mut max_ts = f64::NEG_INFINITY;
    for f in flows {
        if f.ts_start < max_ts - window {
            return Err(CharacterizeError::OutOfOrder {
                ts: f.ts_start,
                window,
            });
        }
        max_ts = max_ts.max(f.ts_start);
        seen.insert(f.server_ip);
        curve.push((f.ts_start, seen.len() as u64));
    }
    Ok(curve)
}

/// Service label of an FQDN: the label left of its public suffix, so
/// `www.bing.com` and `bing.it` both map to `bing`. A bare public suffix
/// maps to [`INVALID_SERVICE`].
pub fn second_level_domain(fqdn: &str) -> String {
    let name = fqdn.trim().trim_end_matches('.').to_ascii_lowercase();
    if name.is_empty() {
        return INVALID_SERVICE.to_string();
    }
    let Some(domain) = psl::domain_str(&name) else {
        return INVALID_SERVICE.to_string();
    };
    let Some(suffix) = psl::suffix_str(&name) else {
        return INVALID_SERVICE.to_string();
    };
    if domain.len() <= suffix.len() {
        return INVALID_SERVICE.to_string();
    }
    domain[..domain.len() - suffix.len() - 1].to_string()
}

/// Appendix-style row for one service within one /24.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRow {
    pub service: String,
    pub servers: u64,
    pub volume_bytes: u64,
    pub flows: u64,
    pub users: u64,
    pub fqdn_count: u64,
}

/// Groups flows by service (second-level domain of the annotation, or
/// `(unknown)`), ranks by users descending, and returns the top `top_n`.
pub fn service_table<'a>(
    flows: impl IntoIterator<Item = &'a FlowRecord>,
    top_n: usize,
) -> Vec<ServiceRow> {
    #[derive(Default)]
    struct Acc {
        servers: HashSet<Ipv4Addr>,
        volume: u64,
        flows: u64,
        users: HashSet<String>,
        fqdns: HashSet<String>,
    }
    let mut groups: BTreeMap<String, Acc> = BTreeMap::new();
    for f in flows {
        let service = match &f.fqdn {
            Some(fqdn) => second_level_domain(fqdn),
            None => UNKNOWN_SERVICE.to_string(),
        };
        let acc = groups.entry(service).or_default();
        acc.servers.insert(f.server_ip);
        acc.volume += f.bytes_down;
        acc.flows += 1;
        acc.users.insert(f.client_id.clone());
        if let Some(fqdn) = &f.fqdn {
            acc.fqdns.insert(fqdn.clone());
        }
    }
    let mut rows: Vec<ServiceRow> = groups
        .into_iter()
        .map(|(service, acc)| ServiceRow {
            service,
            servers: acc.servers.len() as u64,
            volume_bytes: acc.volume,
            flows: acc.flows,
            users: acc.users.len() as u64,
            fqdn_count: acc.fqdns.len() as u64,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.users
            .cmp(&a.users)
            .then_with(|| a.service.cmp(&b.service))
    });
    rows.truncate(top_n);
    rows
}

/// One point of an empirical CDF over per-FQDN distinct-address counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfPoint {
    /// Distinct addresses serving one FQDN.
    pub x: u64,
    /// Fraction of FQDNs with a count <= x.
    pub y: f64,
}

/// Scope of the load-balancing CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LbScope {
    /// Count every address an FQDN resolves to.
    Global,
    /// Count only addresses inside one /24.
    Within(Slash24),
}

/// FQDN -> answered addresses multimap from a DNS observation log.
pub fn fqdn_ip_map(observations: &[DnsObservation]) -> BTreeMap<String, BTreeSet<Ipv4Addr>> {
    let mut map: BTreeMap<String, BTreeSet<Ipv4Addr>> = BTreeMap::new();
    for o in observations {
        map.entry(o.fqdn.clone())
            .or_default()
            .extend(o.answers.iter().copied());
    }
    map
}

/// Empirical CDF of distinct addresses per FQDN. In scoped mode only
/// addresses of the given /24 count, and FQDNs with none are excluded.
pub fn lb_cdf(
    map: &BTreeMap<String, BTreeSet<Ipv4Addr>>,
    scope: LbScope,
) -> Result<Vec<CdfPoint>, CharacterizeError> {
    if map.is_empty() {
        return Err(CharacterizeError::EmptyMap);
    }
    let mut counts: Vec<u64> = map
        .values()
        .filter_map(|ips| {
            let n = match scope {
                LbScope::Global => ips.len(),
                LbScope::Within(sn) => ips.iter().filter(|ip| sn.contains(**ip)).count(),
            };
            (n > 0).then_some(n as u64)
        })
        .collect();
    if counts.is_empty() {
        return Err(CharacterizeError::EmptyMap);
    }
    counts.sort_unstable();
    let total = counts.len() as f64;
    let mut points: Vec<CdfPoint> = Vec::new();
    for (i, &x) in counts.iter().enumerate() {
        let y = (i + 1) as f64 / total;
        match points.last_mut() {
            Some(last) if last.x == x => last.y = y,
            _ => points.push(CdfPoint { x, y }),
        }
    }
    Ok(points)
}
