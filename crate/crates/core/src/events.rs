//! Routing-change detection from per-/24 metric series.
//!
//! Flows are summarized into per-bin robust levels (median of per-flow
//! minima); a persistent deviation from the preceding regime's baseline is a
//! level shift. TTL series are summarized into per-bin sets of
//! (initial value, hop count) pairs; a persistent change of the supported
//! set is a catchment change. Co-timed events across RTT, TTL, and TTFB
//! corroborate each other.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowRecord;
use crate::net::Slash24;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventsError {
    #[error("bin width must be positive")]
    ZeroBin,
    #[error("event inputs mix bin widths {0} and {1}")]
    MismatchedBinning(u64, u64),
    #[error("event inputs mix subnets {0} and {1}")]
    MixedSubnets(Slash24, Slash24),
}

/// Which flow metric a series tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Rtt,
    Ttfb,
}

impl MetricKind {
    fn value(&self, f: &FlowRecord) -> f64 {
        match self {
            MetricKind::Rtt => f.min_rtt_ms,
            MetricKind::Ttfb => f.ttfb_ms,
        }
    }

    pub fn event_kind(&self) -> EventKind {
        match self {
            MetricKind::Rtt => EventKind::RttShift,
            MetricKind::Ttfb => EventKind::TtfbShift,
        }
    }
}

/// One summarized time bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesBin {
    pub bin_start: u64,
    /// Median of the per-flow metric over the bin.
    pub level: f64,
    pub samples: u32,
}

/// Robust per-bin levels of one metric for one /24.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSeries {
    pub slash24: Slash24,
    pub metric: MetricKind,
    pub bin_s: u64,
    pub bins: Vec<SeriesBin>,
}

/// Per-bin supported TTL patterns for one /24.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TtlPatternSeries {
    pub slash24: Slash24,
    pub bin_s: u64,
    pub bins: Vec<PatternBin>,
}

/// The (initial TTL, hop count) pairs with enough support in one bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternBin {
    pub bin_start: u64,
    pub pattern: BTreeSet<(u8, u8)>,
}

/// Kind of routing event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RttShift,
    TtlPatternChange,
    TtfbShift,
}

/// What changed: a level or a pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventChange {
    Level { before: f64, after: f64 },
    Pattern {
        before: Vec<(u8, u8)>,
        after: Vec<(u8, u8)>,
    },
}

/// A detected persistent change in one /24's behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingEvent {
    pub slash24: Slash24,
    /// Onset, aligned to a bin boundary.
    pub ts: u64,
    pub bin_s: u64,
    pub kind: EventKind,
    #[serde(flatten)]
    pub change: EventChange,
    /// Number of distinct metric kinds corroborating this event (1-3).
    pub confidence: u8,
    pub corroborated_by: Vec<EventKind>,
}

/// Infers the sender's TTL initial value (smallest of 32/64/128/255 at or
/// above the observation) and the implied hop count.
pub fn ttl_initial_and_hops(observed_ttl: u8) -> (u8, u8) {
    debug_assert!(observed_ttl >= 1);
    for initial in [32u8, 64, 128, 255] {
        if observed_ttl <= initial {
            return (initial, initial - observed_ttl);
        }
    }
    unreachable!("u8 is always <= 255")
}

/// Detector thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    /// Absolute deviation floor, ms.
    pub abs_min_ms: f64,
    /// Relative deviation floor, fraction of the baseline.
    pub rel_min: f64,
    /// Bins a deviation must persist to count.
    pub persistence_bins: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            abs_min_ms: 5.0,
            rel_min: 0.5,
            persistence_bins: 2,
        }
    }
}

/// Default minimum flows per emitted metric bin.
pub const DEFAULT_MIN_SAMPLES: u32 = 5;
/// Default minimum flows backing a TTL pattern element per bin.
pub const DEFAULT_MIN_SUPPORT: u32 = 3;

/// Summarizes one /24's flows into per-bin medians of the chosen metric.
/// Bins with fewer than `min_samples` flows are omitted.
pub fn build_series(
    flows: &[FlowRecord],
    slash24: Slash24,
    bin_s: u64,
    metric: MetricKind,
    min_samples: u32,
) -> Result<MetricSeries, EventsError> {
    if bin_s == 0 {
        return Err(EventsError::ZeroBin);
    }
    let mut by_bin: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for f in flows {
        if f.slash24() != slash24 {
            continue;
        }
        let bin = (f.ts_start as u64) / bin_s * bin_s;
        by_bin.entry(bin).or_default().push(metric.value(f));
    }
    let bins = by_bin
        .into_iter()
        .filter(|(_, values)| values.len() as u32 >= min_samples.max(1))
        .map(|(bin_start, values)| SeriesBin {
            bin_start,
            level: stats::median(&values).expect("nonempty bin"),
            samples: values.len() as u32,
        })
        .collect();
    Ok(MetricSeries {
        slash24,
        metric,
        bin_s,
        bins,
    })
}

/// Summarizes one /24's flows into per-bin supported TTL patterns. Pattern
/// elements with fewer than `min_support` flows in a bin are dropped; bins
/// left empty are omitted.
pub fn build_ttl_series(
    flows: &[FlowRecord],
    slash24: Slash24,
    bin_s: u64,
    min_support: u32,
) -> Result<TtlPatternSeries, EventsError> {
    if bin_s == 0 {
        return Err(EventsError::ZeroBin);
    }
    let mut by_bin: BTreeMap<u64, HashMap<(u8, u8), u32>> = BTreeMap::new();
    for f in flows {
        if f.slash24() != slash24 {
            continue;
        }
        let bin = (f.ts_start as u64) / bin_s * bin_s;
        let pair = ttl_initial_and_hops(f.min_ttl);
        *by_bin.entry(bin).or_default().entry(pair).or_insert(0) += 1;
    }
    let bins = by_bin
        .into_iter()
        .filter_map(|(bin_start, counts)| {
            let pattern: BTreeSet<(u8, u8)> = counts
                .into_iter()
                .filter(|(_, n)| *n >= min_support.max(1))
                .map(|(pair, _)| pair)
                .collect();
            (!pattern.is_empty()).then_some(PatternBin { bin_start, pattern })
        })
        .collect();
    Ok(TtlPatternSeries {
        slash24,
        bin_s,
        bins,
    })
}

/// Finds persistent level shifts.
///
/// The baseline is the median of the current stable regime. A shift is
/// declared at bin `t` when every one of the `persistence_bins` bins starting
/// at `t` deviates from the baseline by at least
/// `max(abs_min_ms, rel_min * baseline)`; the regime then restarts from those
/// bins, so a later return to the old level is a second event.
pub fn detect_level_shifts(series: &MetricSeries, cfg: &ShiftConfig) -> Vec<RoutingEvent> {
    let p = cfg.persistence_bins.max(1);
    let bins = &series.bins;
    let mut events = Vec::new();
    if bins.len() < 2 * p {
        return events;
    }

    let mut regime: Vec<f64> = vec![bins[0].level];
    let mut i = 1;
    while i < bins.len() {
        let baseline = stats::median(&regime).expect("regime nonempty");
        let threshold = cfg.abs_min_ms.max(cfg.rel_min * baseline);
        let window_ok = i + p <= bins.len()
            && bins[i..i + p]
                .iter()
                .all(|b| (b.level - baseline).abs() >= threshold);
        if window_ok {
            let after_levels: Vec<f64> = bins[i..i + p].iter().map(|b| b.level).collect();
            let after = stats::median(&after_levels).expect("persistence window nonempty");
            events.push(RoutingEvent {
                slash24: series.slash24,
                ts: bins[i].bin_start,
                bin_s: series.bin_s,
                kind: series.metric.event_kind(),
                change: EventChange::Level {
                    before: baseline,
                    after,
                },
                confidence: 1,
                corroborated_by: vec![series.metric.event_kind()],
            });
            regime = after_levels;
            i += p;
        } else {
            regime.push(bins[i].level);
            i += 1;
        }
    }
    events
}

/// Finds persistent TTL pattern changes: the supported set differs from the
/// current one and the new set holds for `persistence_bins` bins.
pub fn detect_ttl_pattern_changes(
    series: &TtlPatternSeries,
    persistence_bins: usize,
) -> Vec<RoutingEvent> {
    let p = persistence_bins.max(1);
    let bins = &series.bins;
    let mut events = Vec::new();
    if bins.len() < 2 {
        return events;
    }

    let mut current = bins[0].pattern.clone();
    let mut i = 1;
    while i < bins.len() {
        let candidate = &bins[i].pattern;
        if *candidate != current
            && i + p <= bins.len()
            && bins[i..i + p].iter().all(|b| b.pattern == *candidate)
        {
            events.push(RoutingEvent {
                slash24: series.slash24,
                ts: bins[i].bin_start,
                bin_s: series.bin_s,
                kind: EventKind::TtlPatternChange,
                change: EventChange::Pattern {
                    before: current.iter().copied().collect(),
                    after: candidate.iter().copied().collect(),
                },
                confidence: 1,
                corroborated_by: vec![EventKind::TtlPatternChange],
            });
            current = candidate.clone();
            i += p;
        } else {
            i += 1;
        }
    }
    events
}

/// Merges per-metric events of one /24 that fall within `window_bins` of
/// each other; the merged event keeps the earliest onset (ties broken by
/// kind order) and its confidence counts the distinct corroborating kinds.
pub fn correlate_events(
    rtt_events: &[RoutingEvent],
    ttl_events: &[RoutingEvent],
    ttfb_events: &[RoutingEvent],
    window_bins: u64,
) -> Result<Vec<RoutingEvent>, EventsError> {
    let mut all: Vec<&RoutingEvent> = rtt_events
        .iter()
        .chain(ttl_events)
        .chain(ttfb_events)
        .collect();
    if all.is_empty() {
        return Ok(Vec::new());
    }
    let bin_s = all[0].bin_s;
    let slash24 = all[0].slash24;
    for e in &all {
        if e.bin_s != bin_s {
            return Err(EventsError::MismatchedBinning(bin_s, e.bin_s));
        }
        if e.slash24 != slash24 {
            return Err(EventsError::MixedSubnets(slash24, e.slash24));
        }
    }
    all.sort_by_key(|e| (e.ts, e.kind));

    let window_s = window_bins * bin_s;
    let mut merged: Vec<RoutingEvent> = Vec::new();
    let mut cluster: Vec<&RoutingEvent> = Vec::new();
    for e in all {
        match cluster.first() {
            Some(anchor) if e.ts - anchor.ts <= window_s => cluster.push(e),
            Some(_) => {
                merged.push(merge_cluster(&cluster));
                cluster = vec![e];
            }
            None => cluster = vec![e],
        }
    }
    merged.push(merge_cluster(&cluster));
    Ok(merged)
}

fn merge_cluster(cluster: &[&RoutingEvent]) -> RoutingEvent {
    let kinds: BTreeSet<EventKind> = cluster.iter().map(|e| e.kind).collect();
    let primary = cluster[0];
    RoutingEvent {
        confidence: kinds.len() as u8,
        corroborated_by: kinds.into_iter().collect(),
        ..primary.clone()
    }
}

/// Per-bin data-quality violation: the minimum TTFB dropped below twice the
/// minimum RTT, which transport physics forbids. Reported as a warning, not
/// an event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityWarning {
    pub slash24: Slash24,
    pub bin_start: u64,
    pub min_rtt_ms: f64,
    pub min_ttfb_ms: f64,
}

/// Checks every (subnet, bin) for the TTFB >= 2*RTT floor.
pub fn ttfb_floor_warnings(flows: &[FlowRecord], bin_s: u64) -> Result<Vec<QualityWarning>, EventsError> {
    if bin_s == 0 {
        return Err(EventsError::ZeroBin);
    }
    let mut by_key: BTreeMap<(Slash24, u64), (f64, f64)> = BTreeMap::new();
    for f in flows {
        let bin = (f.ts_start as u64) / bin_s * bin_s;
        let entry = by_key
            .entry((f.slash24(), bin))
            .or_insert((f64::INFINITY, f64::INFINITY));
        entry.0 = entry.0.min(f.min_rtt_ms);
        entry.1 = entry.1.min(f.ttfb_ms);
    }
    Ok(by_key
        .into_iter()
        .filter(|(_, (min_rtt, min_ttfb))| *min_ttfb < 2.0 * *min_rtt)
        .map(|((slash24, bin_start), (min_rtt_ms, min_ttfb_ms))| QualityWarning {
            slash24,
            bin_start,
            min_rtt_ms,
            min_ttfb_ms,
        })
        .collect())
}
