//! Measurement toolkit for anycast-enabled CDNs.
//!
//! Two measurement planes share this crate. The active plane turns
//! multi-vantage-point ping campaigns into anycast verdicts, replica
//! enumerations, and geolocated site maps ([`detect`], [`census`]). The
//! passive plane parses per-flow TCP logs, annotates them with FQDNs learned
//! from DNS traffic, aggregates traffic summaries, and flags routing changes
//! ([`flow`], [`characterize`], [`events`]). The [`sim`] module generates
//! synthetic ground truth for both planes so every pipeline can be exercised
//! and validated at desk scale.
//!
//! Geometry is generic over the scalar type via [`scalar::Scalar`]; the rest
//! of the toolkit works on the `f64` aliases exported at the crate root.

pub mod census;
pub mod characterize;
pub mod detect;
pub mod events;
pub mod flow;
pub mod geo;
pub mod net;
pub mod scalar;
pub mod sim;
pub mod stats;

/// Geographic coordinate at the toolkit's working precision.
pub type GeoPoint = geo::GeoPoint<f64>;
/// Latency disk at the toolkit's working precision.
pub type LatencyDisk = geo::LatencyDisk<f64>;

pub use geo::{disks_disjoint, haversine_km, point_in_disk, rtt_to_radius_km};
pub use net::Slash24;
