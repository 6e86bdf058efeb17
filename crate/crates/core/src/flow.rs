//! Per-flow TCP log parsing and FQDN annotation.
//!
//! Flow logs are space-delimited text, one TCP flow per line:
//!
//! ```text
//! ts_start ts_end client_id server_ip server_port l7 bytes_down min_rtt_ms min_ttl ttfb_ms [fqdn]
//! ```
//!
//! with `-` (or a missing column) for an absent FQDN. A bounded DNS cache
//! replays `ts client_id fqdn ip[,ip...]` observations and fills in the FQDN
//! a client previously resolved for the server address it is contacting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::net::Slash24;

/// Default lifetime of a cached DNS mapping, one day.
pub const DEFAULT_DNS_TTL_S: f64 = 86_400.0;
/// Default cache capacity, entries.
pub const DEFAULT_DNS_CAPACITY: usize = 1_000_000;
/// Flows earlier than this many seconds behind the newest one seen are
/// rejected as out of order.
pub const DEFAULT_REORDER_WINDOW_S: f64 = 60.0;

/// Application-layer protocol label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum L7 {
    Http,
    Tls,
    Other(String),
}

impl L7 {
    pub fn is_web(&self) -> bool {
        matches!(self, L7::Http | L7::Tls)
    }

    fn parse(token: &str) -> L7 {
        match token {
            "HTTP" => L7::Http,
            "TLS" => L7::Tls,
            other => L7::Other(other.to_string()),
        }
    }
}

impl fmt::Display for L7 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            L7::Http => f.write_str("HTTP"),
            L7::Tls => f.write_str("TLS"),
            L7::Other(s) => f.write_str(s),
        }
    }
}

/// One TCP flow as logged by the passive probe.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub ts_start: f64,
    pub ts_end: f64,
    pub client_id: String,
    pub server_ip: Ipv4Addr,
    pub server_port: u16,
    pub l7: L7,
    pub bytes_down: u64,
    pub min_rtt_ms: f64,
    pub min_ttl: u8,
    pub ttfb_ms: f64,
    pub fqdn: Option<String>,
}

impl FlowRecord {
    pub fn slash24(&self) -> Slash24 {
        Slash24::containing(self.server_ip)
    }
}

/// A malformed input line, kept as data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Parses one flow-log line into a record.
pub fn parse_flow_line(line: &str) -> Result<FlowRecord, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 10 || fields.len() > 11 {
        return Err(format!("expected 10 or 11 fields, got {}", fields.len()));
    }
    let ts_start: f64 = fields[0].parse().map_err(|_| "invalid ts_start")?;
    let ts_end: f64 = fields[1].parse().map_err(|_| "invalid ts_end")?;
    if !ts_start.is_finite() || !ts_end.is_finite() {
        return Err("non-finite timestamp".into());
    }
    if ts_end < ts_start {
        return Err("ts_end before ts_start".into());
    }
    let client_id = fields[2].to_string();
    if client_id.is_empty() {
        return Err("empty client_id".into());
    }
    let server_ip: Ipv4Addr = fields[3].parse().map_err(|_| "invalid server_ip")?;
    let server_port: u16 = fields[4].parse().map_err(|_| "invalid server_port")?;
    let l7 = L7::parse(fields[5]);
    let bytes_down: u64 = fields[6].parse().map_err(|_| "invalid bytes_down")?;
    let min_rtt_ms: f64 = fields[7].parse().map_err(|_| "invalid min_rtt_ms")?;
    if !min_rtt_ms.is_finite() || min_rtt_ms < 0.0 {
        return Err("negative min_rtt_ms".into());
    }
    let min_ttl: u8 = fields[8]
        .parse()
        .map_err(|_| "min_ttl out of range 1-255")?;
    if min_ttl == 0 {
        return Err("min_ttl out of range 1-255".into());
    }
    let ttfb_ms: f64 = fields[9].parse().map_err(|_| "invalid ttfb_ms")?;
    if !ttfb_ms.is_finite() || ttfb_ms < 0.0 {
        return Err("negative ttfb_ms".into());
    }
    let fqdn = match fields.get(10) {
        None => None,
        Some(&"-") => None,
        Some(s) => Some(s.to_string()),
    };
    Ok(FlowRecord {
        ts_start,
        ts_end,
        client_id,
        server_ip,
        server_port,
        l7,
        bytes_down,
        min_rtt_ms,
        min_ttl,
        ttfb_ms,
        fqdn,
    })
}

/// Canonical text form of a flow record, inverse of [`parse_flow_line`].
pub fn format_flow_line(f: &FlowRecord) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {} {} {}",
        f.ts_start,
        f.ts_end,
        f.client_id,
        f.server_ip,
        f.server_port,
        f.l7,
        f.bytes_down,
        f.min_rtt_ms,
        f.min_ttl,
        f.ttfb_ms,
        f.fqdn.as_deref().unwrap_or("-")
    )
}

/// A parsed flow-log line: a record or an error kept in stream position.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowLine {
    Record(FlowRecord),
    Malformed(LineError),
}

/// Streaming flow-log reader.
///
/// Yields records in input order; malformed lines and flows arriving more
/// than the reordering window behind the newest timestamp become
/// [`FlowLine::Malformed`]. I/O failures are fatal and surface as `Err`.
pub struct FlowLogReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    max_ts: f64,
    reorder_window_s: f64,
}

impl<R: BufRead> FlowLogReader<R> {
    pub fn new(reader: R) -> Self {
        Self::with_reorder_window(reader, DEFAULT_REORDER_WINDOW_S)
    }

    pub fn with_reorder_window(reader: R, reorder_window_s: f64) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            max_ts: f64::NEG_INFINITY,
            reorder_window_s,
        }
    }
}

impl<R: BufRead> Iterator for FlowLogReader<R> {
    type Item = std::io::Result<FlowLine>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e)),
            };
            self.line_no += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parsed = match parse_flow_line(trimmed) {
                Ok(rec) => {
                    if rec.ts_start < self.max_ts - self.reorder_window_s {
                        FlowLine::Malformed(LineError {
                            line: self.line_no,
                            message: format!(
                                "ts_start {} out of order beyond {}s reordering window",
                                rec.ts_start, self.reorder_window_s
                            ),
                        })
                    } else {
                        self.max_ts = self.max_ts.max(rec.ts_start);
                        FlowLine::Record(rec)
                    }
                }
                Err(message) => FlowLine::Malformed(LineError {
                    line: self.line_no,
                    message,
                }),
            };
            return Some(Ok(parsed));
        }
    }
}

/// One DNS response seen on the wire: a client resolved `fqdn` to one or
/// more addresses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DnsObservation {
    pub ts: f64,
    pub client_id: String,
    pub fqdn: String,
    pub answers: Vec<Ipv4Addr>,
}

/// Parses one `ts client_id fqdn ip[,ip...]` line.
pub fn parse_dns_line(line: &str) -> Result<DnsObservation, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, got {}", fields.len()));
    }
    let ts: f64 = fields[0].parse().map_err(|_| "invalid ts")?;
    if !ts.is_finite() {
        return Err("non-finite ts".into());
    }
    let client_id = fields[1].to_string();
    let fqdn = fields[2].to_string();
    if fqdn.is_empty() {
        return Err("empty fqdn".into());
    }
    let answers: Vec<Ipv4Addr> = fields[3]
        .split(',')
        .map(|s| s.parse().map_err(|_| format!("invalid answer ip {s:?}")))
        .collect::<Result<_, _>>()?;
    if answers.is_empty() {
        return Err("no answers".into());
    }
    Ok(DnsObservation {
        ts,
        client_id,
        fqdn,
        answers,
    })
}

pub fn format_dns_line(o: &DnsObservation) -> String {
    let answers: Vec<String> = o.answers.iter().map(|ip| ip.to_string()).collect();
    format!("{} {} {} {}", o.ts, o.client_id, o.fqdn, answers.join(","))
}

/// Reads a DNS log; observations are returned sorted by timestamp (the
/// annotation merge requires it), malformed lines become error records.
pub fn read_dns_log<R: BufRead>(
    reader: R,
) -> std::io::Result<(Vec<DnsObservation>, Vec<LineError>)> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_dns_line(trimmed) {
            Ok(o) => out.push(o),
            Err(message) => errors.push(LineError {
                line: idx + 1,
                message,
            }),
        }
    }
    out.sort_by(|a, b| {
        a.ts.total_cmp(&b.ts)
            .then_with(|| a.client_id.cmp(&b.client_id))
            .then_with(|| a.fqdn.cmp(&b.fqdn))
    });
    Ok((out, errors))
}

#[derive(Debug, Clone)]
struct CacheEntry {
    fqdn: String,
    observed_ts: f64,
    tick: u64,
}

/// Bounded (client, server address) -> FQDN cache with latest-wins updates,
/// entry expiry, and LRU eviction.
#[derive(Debug)]
pub struct DnsCache {
    entries: HashMap<(String, Ipv4Addr), CacheEntry>,
    recency: BTreeMap<u64, (String, Ipv4Addr)>,
    tick: u64,
    capacity: usize,
    ttl_s: f64,
}

impl Default for DnsCache {
    fn default() -> Self {
        Self::new(DEFAULT_DNS_CAPACITY, DEFAULT_DNS_TTL_S)
    }
}

impl DnsCache {
    pub fn new(capacity: usize, ttl_s: f64) -> Self {
        assert!(capacity > 0, "cache capacity must be positive");
        Self {
            entries: HashMap::new(),
            recency: BTreeMap::new(),
            tick: 0,
            capacity,
            ttl_s,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records one DNS observation: every answered address maps to the
    /// observed FQDN. Newer observations win; an entry never goes backwards
    /// in time.
    pub fn observe(&mut self, obs: &DnsObservation) {
        for &ip in &obs.answers {
            let key = (obs.client_id.clone(), ip);
            if let Some(existing) = self.entries.get(&key) {
                if existing.observed_ts > obs.ts {
                    continue;
                }
                self.recency.remove(&existing.tick);
            }
            self.tick += 1;
            self.recency.insert(self.tick, key.clone());
            self.entries.insert(
                key,
                CacheEntry {
                    fqdn: obs.fqdn.clone(),
                    observed_ts: obs.ts,
                    tick: self.tick,
                },
            );
        }
        while self.entries.len() > self.capacity {
            let (_, oldest) = self.recency.pop_first().expect("recency tracks entries");
            self.entries.remove(&oldest);
        }
    }

    /// Returns the FQDN this client resolved for `ip`, provided the entry
    /// was observed no later than `at_ts` (causality) and no earlier than
    /// `at_ts - ttl_s` (freshness). A hit refreshes the entry's recency.
    pub fn lookup(&mut self, client_id: &str, ip: Ipv4Addr, at_ts: f64) -> Option<String> {
        let key = (client_id.to_string(), ip);
        let entry = self.entries.get(&key)?;
        if entry.observed_ts > at_ts {
            return None;
        }
        if at_ts - entry.observed_ts > self.ttl_s {
            let tick = entry.tick;
            self.recency.remove(&tick);
            self.entries.remove(&key);
            return None;
        }
        let old_tick = entry.tick;
        self.tick += 1;
        let new_tick = self.tick;
        self.recency.remove(&old_tick);
        self.recency.insert(new_tick, key.clone());
        let entry = self.entries.get_mut(&key).expect("entry present");
        entry.tick = new_tick;
        Some(entry.fqdn.clone())
    }
}

/// Fills the missing FQDN of a flow from the cache. Flows that already
/// carry an FQDN pass through untouched, so annotation is idempotent.
pub fn annotate_flow(cache: &mut DnsCache, mut f: FlowRecord) -> FlowRecord {
    if f.fqdn.is_none() {
        f.fqdn = cache.lookup(&f.client_id, f.server_ip, f.ts_start);
    }
    f
}

/// Annotates a flow stream against a time-sorted DNS observation list,
/// feeding each observation to the cache before any flow that starts at or
/// after the observation time.
pub struct Annotator<'a, I> {
    flows: I,
    observations: std::iter::Peekable<std::slice::Iter<'a, DnsObservation>>,
    cache: DnsCache,
}

impl<'a, I> Annotator<'a, I> {
    pub fn new(flows: I, observations: &'a [DnsObservation], cache: DnsCache) -> Self {
        Self {
            flows,
            observations: observations.iter().peekable(),
            cache,
        }
    }
}

impl<I> Iterator for Annotator<'_, I>
where
    I: Iterator<Item = std::io::Result<FlowLine>>,
{
    type Item = std::io::Result<FlowLine>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.flows.next()?;
        Some(item.map(|line| match line {
            FlowLine::Record(rec) => {
                while let Some(obs) = self.observations.peek() {
                    if obs.ts <= rec.ts_start {
                        self.cache.observe(obs);
                        self.observations.next();
                    } else {
                        break;
                    }
                }
                FlowLine::Record(annotate_flow(&mut self.cache, rec))
            }
            malformed => malformed,
        }))
    }
}

/// Keeps only flows served from one of the given /24 subnets.
pub fn filter_anycast_flows<'a, I>(
    flows: I,
    anycast: &'a BTreeSet<Slash24>,
) -> impl Iterator<Item = FlowRecord> + 'a
where
    I: IntoIterator<Item = FlowRecord>,
    I::IntoIter: 'a,
{
    flows
        .into_iter()
        .filter(move |f| anycast.contains(&f.slash24()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const VALID_LINE: &str =
        "1409529600.25 1409529610.5 c001 93.184.220.7 443 TLS 53210 8.2 116 36.4 www.acme.com";

    #[test]
    fn parse_valid_line() {
        let f = parse_flow_line(VALID_LINE).unwrap();
        assert_eq!(f.ts_start, 1409529600.25);
        assert_eq!(f.server_ip, Ipv4Addr::new(93, 184, 220, 7));
        assert_eq!(f.l7, L7::Tls);
        assert_eq!(f.min_ttl, 116);
        assert_eq!(f.fqdn.as_deref(), Some("www.acme.com"));
    }

    #[test]
    fn round_trip_is_canonical() {
        let f = parse_flow_line(VALID_LINE).unwrap();
        assert_eq!(format_flow_line(&f), VALID_LINE);
    }

    #[test]
    fn missing_fqdn_column_is_none() {
        let line = "0 1 c1 1.2.3.4 80 HTTP 100 5 64 12";
        let f = parse_flow_line(line).unwrap();
        assert!(f.fqdn.is_none());
        assert_eq!(format_flow_line(&f), format!("{line} -"));
        let dash = parse_flow_line(&format!("{line} -")).unwrap();
        assert!(dash.fqdn.is_none());
    }

    #[test]
    fn ttl_zero_rejected() {
        let line = "0 1 c1 1.2.3.4 80 HTTP 100 5 0 12 -";
        assert!(parse_flow_line(line).unwrap_err().contains("min_ttl"));
    }

    #[test]
    fn ts_end_before_start_rejected() {
        let line = "10 5 c1 1.2.3.4 80 HTTP 100 5 64 12 -";
        assert!(parse_flow_line(line).unwrap_err().contains("ts_end"));
    }

    #[test]
    fn reader_yields_records_and_error_records() {
        let text = "\
0 1 c1 1.2.3.4 80 HTTP 100 5 64 12 a.example
garbage
1 2 c1 1.2.3.4 80 HTTP 100 5 0 12 -
2 3 c2 1.2.3.5 443 TLS 9 5 64 12 -
";
        let parsed: Vec<FlowLine> = FlowLogReader::new(text.as_bytes())
            .map(|r| r.unwrap())
            .collect();
        let records = parsed
            .iter()
            .filter(|l| matches!(l, FlowLine::Record(_)))
            .count();
        let errors: Vec<&LineError> = parsed
            .iter()
            .filter_map(|l| match l {
                FlowLine::Malformed(e) => Some(e),
                _ => None,
            })
            .collect();
        assert_eq!(records, 2);
        assert_eq!(errors.len(), 2);
        assert_eq!(errors[0].line, 2);
        assert_eq!(errors[1].line, 3);
    }

    #[test]
    fn empty_file_yields_nothing() {
        assert_eq!(FlowLogReader::new("".as_bytes()).count(), 0);
    }

    #[test]
    fn out_of_order_beyond_window_is_error_record() {
        let text = "\
1000 1001 c1 1.2.3.4 80 HTTP 1 5 64 12 -
950 951 c1 1.2.3.4 80 HTTP 1 5 64 12 -
941 942 c1 1.2.3.4 80 HTTP 1 5 64 12 -
939 940 c1 1.2.3.4 80 HTTP 1 5 64 12 -
";
        let parsed: Vec<FlowLine> = FlowLogReader::new(text.as_bytes())
            .map(|r| r.unwrap())
            .collect();
        // 950 and 941 are within the 60 s window of 1000; 939 is beyond it.
        assert!(matches!(parsed[1], FlowLine::Record(_)));
        assert!(matches!(parsed[2], FlowLine::Record(_)));
        assert!(matches!(parsed[3], FlowLine::Malformed(_)));
    }

    fn obs(ts: f64, client: &str, fqdn: &str, ips: &[[u8; 4]]) -> DnsObservation {
        DnsObservation {
            ts,
            client_id: client.to_string(),
            fqdn: fqdn.to_string(),
            answers: ips
                .iter()
                .map(|o| Ipv4Addr::new(o[0], o[1], o[2], o[3]))
                .collect(),
        }
    }

    #[test]
    fn dns_line_round_trip() {
        let line = "1409529599.5 c001 www.acme.com 123.1.2.3,123.1.2.4";
        let o = parse_dns_line(line).unwrap();
        assert_eq!(o.answers.len(), 2);
        assert_eq!(format_dns_line(&o), line);
    }

    #[test]
    fn observe_then_lookup_hits() {
        let mut cache = DnsCache::default();
        cache.observe(&obs(100.0, "c1", "www.acme.com", &[[123, 1, 2, 3]]));
        assert_eq!(
            cache.lookup("c1", Ipv4Addr::new(123, 1, 2, 3), 150.0),
            Some("www.acme.com".to_string())
        );
        // Different client: miss.
        assert_eq!(cache.lookup("c2", Ipv4Addr::new(123, 1, 2, 3), 150.0), None);
    }

    #[test]
    fn latest_observation_wins() {
        let mut cache = DnsCache::default();
        cache.observe(&obs(100.0, "c1", "old.example", &[[1, 1, 1, 1]]));
        cache.observe(&obs(200.0, "c1", "new.example", &[[1, 1, 1, 1]]));
        assert_eq!(
            cache.lookup("c1", Ipv4Addr::new(1, 1, 1, 1), 300.0),
            Some("new.example".to_string())
        );
        // An older observation arriving late does not clobber a newer entry.
        cache.observe(&obs(150.0, "c1", "stale.example", &[[1, 1, 1, 1]]));
        assert_eq!(
            cache.lookup("c1", Ipv4Addr::new(1, 1, 1, 1), 300.0),
            Some("new.example".to_string())
        );
    }

    #[test]
    fn capacity_evicts_least_recently_used() {
        let mut cache = DnsCache::new(2, 1e9);
        cache.observe(&obs(1.0, "c1", "a.example", &[[1, 0, 0, 1]]));
        cache.observe(&obs(2.0, "c1", "b.example", &[[1, 0, 0, 2]]));
        cache.observe(&obs(3.0, "c1", "c.example", &[[1, 0, 0, 3]]));
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.lookup("c1", Ipv4Addr::new(1, 0, 0, 1), 10.0), None);
        assert!(cache.lookup("c1", Ipv4Addr::new(1, 0, 0, 2), 10.0).is_some());
        assert!(cache.lookup("c1", Ipv4Addr::new(1, 0, 0, 3), 10.0).is_some());
    }

    #[test]
    fn expired_entries_never_returned() {
        let mut cache = DnsCache::new(16, 100.0);
        cache.observe(&obs(0.0, "c1", "a.example", &[[1, 0, 0, 1]]));
        assert!(cache
            .lookup("c1", Ipv4Addr::new(1, 0, 0, 1), 100.0)
            .is_some());
        assert_eq!(cache.lookup("c1", Ipv4Addr::new(1, 0, 0, 1), 100.5), None);
    }

    #[test]
    fn causality_entry_after_flow_start_not_used() {
        let mut cache = DnsCache::default();
        cache.observe(&obs(500.0, "c1", "late.example", &[[1, 0, 0, 1]]));
        assert_eq!(cache.lookup("c1", Ipv4Addr::new(1, 0, 0, 1), 499.0), None);
        assert!(cache
            .lookup("c1", Ipv4Addr::new(1, 0, 0, 1), 500.0)
            .is_some());
    }

    fn bare_flow(ts: f64, client: &str, ip: [u8; 4]) -> FlowRecord {
        FlowRecord {
            ts_start: ts,
            ts_end: ts + 1.0,
            client_id: client.to_string(),
            server_ip: Ipv4Addr::new(ip[0], ip[1], ip[2], ip[3]),
            server_port: 443,
            l7: L7::Tls,
            bytes_down: 1000,
            min_rtt_ms: 8.0,
            min_ttl: 116,
            ttfb_ms: 20.0,
            fqdn: None,
        }
    }

    #[test]
    fn annotation_is_idempotent() {
        let mut cache = DnsCache::default();
        cache.observe(&obs(10.0, "c1", "a.example", &[[9, 9, 9, 9]]));
        let once = annotate_flow(&mut cache, bare_flow(20.0, "c1", [9, 9, 9, 9]));
        assert_eq!(once.fqdn.as_deref(), Some("a.example"));
        // Second pass, even against a cache with a different mapping, leaves
        // the record unchanged.
        cache.observe(&obs(15.0, "c1", "b.example", &[[9, 9, 9, 9]]));
        let twice = annotate_flow(&mut cache, once.clone());
        assert_eq!(once, twice);
    }

    #[test]
    fn unmatched_flow_stays_unannotated() {
        let mut cache = DnsCache::default();
        let f = annotate_flow(&mut cache, bare_flow(20.0, "c1", [9, 9, 9, 9]));
        assert!(f.fqdn.is_none());
    }

    #[test]
    fn annotator_merges_streams_by_time() {
        let observations = vec![
            obs(10.0, "c1", "early.example", &[[9, 9, 9, 9]]),
            obs(30.0, "c1", "late.example", &[[9, 9, 9, 9]]),
        ];
        let flows = vec![
            Ok(FlowLine::Record(bare_flow(20.0, "c1", [9, 9, 9, 9]))),
            Ok(FlowLine::Record(bare_flow(40.0, "c1", [9, 9, 9, 9]))),
        ];
        let annotated: Vec<FlowLine> =
            Annotator::new(flows.into_iter(), &observations, DnsCache::default())
                .map(|r| r.unwrap())
                .collect();
        match (&annotated[0], &annotated[1]) {
            (FlowLine::Record(a), FlowLine::Record(b)) => {
                assert_eq!(a.fqdn.as_deref(), Some("early.example"));
                assert_eq!(b.fqdn.as_deref(), Some("late.example"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn filter_keeps_only_anycast_subnets() {
        let set: BTreeSet<Slash24> = ["93.184.220.0/24".parse().unwrap()].into_iter().collect();
        let flows = vec![
            bare_flow(1.0, "c1", [93, 184, 220, 7]),
            bare_flow(2.0, "c1", [10, 0, 0, 1]),
        ];
        let kept: Vec<FlowRecord> = filter_anycast_flows(flows, &set).collect();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].server_ip, Ipv4Addr::new(93, 184, 220, 7));
        let none: Vec<FlowRecord> = filter_anycast_flows(Vec::new(), &set).collect();
        assert!(none.is_empty());
    }

    /// Oracle: scan the full observation history processed so far and apply
    /// the freshness/causality rules directly.
    fn replay_oracle(
        history: &[DnsObservation],
        client: &str,
        ip: Ipv4Addr,
        at_ts: f64,
        ttl_s: f64,
    ) -> Option<String> {
        history
            .iter()
            .filter(|o| o.client_id == client && o.answers.contains(&ip))
            .filter(|o| o.ts <= at_ts && at_ts - o.ts <= ttl_s)
            .max_by(|a, b| a.ts.total_cmp(&b.ts))
            .map(|o| o.fqdn.clone())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn cache_matches_replay_oracle(
            steps in proptest::collection::vec(
                (0u8..2, 0u8..4, 0u8..4, 0u8..4, 0.0f64..1000.0), 1..80),
            ttl_s in 50.0f64..500.0,
        ) {
            // Interleaved observations (kind 0) and lookups (kind 1) over a
            // small key space, with monotonically increasing times.
            let mut cache = DnsCache::new(1024, ttl_s);
            let mut history: Vec<DnsObservation> = Vec::new();
            let mut now = 0.0;
            for (kind, c, f, i, dt) in steps {
                now += dt;
                let client = format!("c{c}");
                let ip = Ipv4Addr::new(10, 0, 0, i);
                if kind == 0 {
                    let o = DnsObservation {
                        ts: now,
                        client_id: client,
                        fqdn: format!("f{f}.example"),
                        answers: vec![ip],
                    };
                    cache.observe(&o);
                    history.push(o);
                } else {
                    let got = cache.lookup(&client, ip, now);
                    let want = replay_oracle(&history, &client, ip, now, ttl_s);
                    prop_assert_eq!(got, want);
                }
            }
        }

        #[test]
        fn bounded_cache_never_violates_rules(
            steps in proptest::collection::vec(
                (0u8..2, 0u8..4, 0u8..4, 0u8..6, 0.0f64..300.0), 1..80),
        ) {
            // With a tiny capacity the cache may forget entries, but what it
            // returns must still satisfy causality and freshness.
            let ttl_s = 200.0;
            let mut cache = DnsCache::new(2, ttl_s);
            let mut history: Vec<DnsObservation> = Vec::new();
            let mut now = 0.0;
            for (kind, c, f, i, dt) in steps {
                now += dt;
                let client = format!("c{c}");
                let ip = Ipv4Addr::new(10, 0, 0, i);
                if kind == 0 {
                    let o = DnsObservation {
                        ts: now,
                        client_id: client,
                        fqdn: format!("f{f}.example"),
                        answers: vec![ip],
                    };
                    cache.observe(&o);
                    history.push(o);
                } else if let Some(got) = cache.lookup(&client, ip, now) {
                    let witness = history.iter().any(|o| {
                        o.client_id == client
                            && o.answers.contains(&ip)
                            && o.fqdn == got
                            && o.ts <= now
                            && now - o.ts <= ttl_s
                    });
                    prop_assert!(witness, "cache invented or kept a stale entry");
                }
            }
        }

        #[test]
        fn parse_format_round_trip(
            ts in 0.0f64..2e9,
            dur in 0.0f64..1e4,
            port in 1u16..,
            bytes in 0u64..(1u64 << 40),
            rtt in 0.0f64..500.0,
            ttl in 1u8..,
            ttfb in 0.0f64..2000.0,
            has_fqdn in proptest::bool::ANY,
        ) {
            let f = FlowRecord {
                ts_start: ts,
                ts_end: ts + dur,
                client_id: "c42".into(),
                server_ip: Ipv4Addr::new(93, 184, 220, 7),
                server_port: port,
                l7: L7::Http,
                bytes_down: bytes,
                min_rtt_ms: rtt,
                min_ttl: ttl,
                ttfb_ms: ttfb,
                fqdn: has_fqdn.then(|| "www.acme.com".to_string()),
            };
            let line = format_flow_line(&f);
            let parsed = parse_flow_line(&line).unwrap();
            prop_assert_eq!(parsed, f);
        }
    }
}
