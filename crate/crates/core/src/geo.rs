//! Great-circle geometry and latency-disk primitives.
//!
//! Distances use the haversine formula on a sphere of radius
//! [`EARTH_RADIUS_KM`]. One RTT sample from a vantage point bounds how far
//! the responding host can sit: half the RTT at fiber propagation speed.
//! [`LatencyDisk`] is that reachable region, and two disks that do not
//! intersect prove the two vantage points reached different hosts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Mean Earth radius in km (spherical model).
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Speed of light in vacuum, km per millisecond.
pub const LIGHT_SPEED_KM_PER_MS: f64 = 299.792_458;

/// Default propagation speed in fiber: two thirds of c, ~199.86 km/ms.
pub const DEFAULT_FIBER_KM_PER_MS: f64 = LIGHT_SPEED_KM_PER_MS * 2.0 / 3.0;

/// Disk radii above this are clamped (half the equatorial circumference of
/// the real Earth; no two points on the spherical model are farther apart).
pub const MAX_DISK_RADIUS_KM: f64 = 20_037.5;

/// Geolocated instances with a disk radius at or below this are flagged
/// high-confidence.
pub const HIGH_CONFIDENCE_RADIUS_KM: f64 = 300.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("coordinate is not finite")]
    NonFiniteCoordinate,
    #[error("negative RTT {0} ms")]
    NegativeRtt(f64),
    #[error("negative disk radius {0} km")]
    NegativeRadius(f64),
    #[error("propagation speed must be positive, got {0} km/ms")]
    InvalidSpeed(f64),
}

/// A point on the spherical Earth, in degrees.
///
/// Latitude is validated into `[-90, 90]`; longitude is normalized into
/// `(-180, 180]` on construction (deserialization goes through the same
/// checks).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawGeoPoint<F>",
    bound(deserialize = "F: Deserialize<'de> + Scalar")
)]
pub struct GeoPoint<F> {
    lat_deg: F,
    lon_deg: F,
}

#[derive(Deserialize)]
struct RawGeoPoint<F> {
    lat_deg: F,
    lon_deg: F,
}

impl<F: Scalar> TryFrom<RawGeoPoint<F>> for GeoPoint<F> {
    type Error = GeoError;

    fn try_from(raw: RawGeoPoint<F>) -> Result<Self, GeoError> {
        GeoPoint::new(raw.lat_deg, raw.lon_deg)
    }
}

impl<F: Scalar> GeoPoint<F> {
    pub fn new(lat_deg: F, lon_deg: F) -> Result<Self, GeoError> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() {
            return Err(GeoError::NonFiniteCoordinate);
        }
        if lat_deg < F::c(-90.0) || lat_deg > F::c(90.0) {
            return Err(GeoError::InvalidLatitude(
                lat_deg.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(Self {
            lat_deg,
            lon_deg: normalize_lon(lon_deg),
        })
    }

    pub fn lat_deg(&self) -> F {
        self.lat_deg
    }

    pub fn lon_deg(&self) -> F {
        self.lon_deg
    }

    /// Point diametrically opposite this one.
    pub fn antipode(&self) -> Self {
        Self {
            lat_deg: -self.lat_deg,
            lon_deg: normalize_lon(self.lon_deg + F::c(180.0)),
        }
    }
}

/// Wraps a longitude into `(-180, 180]`.
fn normalize_lon<F: Scalar>(lon: F) -> F {
    let full = F::c(360.0);
    let half = F::c(180.0);
    let mut wrapped = lon % full;
    if wrapped <= -half {
        wrapped = wrapped + full;
    } else if wrapped > half {
        wrapped = wrapped - full;
    }
    // -180 maps to +180 so the representation is unique.
    if wrapped == -half {
        half
    } else {
        wrapped
    }
}

/// Great-circle distance between two points, in km.
///
/// Symmetric and nonnegative; at most `π * EARTH_RADIUS_KM` (~20,015 km).
pub fn haversine_km<F: Scalar>(a: GeoPoint<F>, b: GeoPoint<F>) -> F {
    let lat_a = a.lat_deg.to_radians();
    let lat_b = b.lat_deg.to_radians();
    let d_lat = (b.lat_deg - a.lat_deg).to_radians();
    let d_lon = (b.lon_deg - a.lon_deg).to_radians();

    let two = F::c(2.0);
    let sin_lat = (d_lat / two).sin();
    let sin_lon = (d_lon / two).sin();
    let h = sin_lat * sin_lat + lat_a.cos() * lat_b.cos() * sin_lon * sin_lon;
    // Guard against floating error pushing h a hair outside [0, 1].
    let h = h.max(F::zero()).min(F::one());
    two * F::c(EARTH_RADIUS_KM) * h.sqrt().asin()
}

/// Converts one RTT sample into the maximum distance the responder can be
/// from the probing vantage point: half the RTT at `km_per_ms`.
pub fn rtt_to_radius_km_at<F: Scalar>(rtt_ms: F, km_per_ms: F) -> Result<F, GeoError> {
    if !rtt_ms.is_finite() || rtt_ms < F::zero() {
        return Err(GeoError::NegativeRtt(rtt_ms.to_f64().unwrap_or(f64::NAN)));
    }
    if !km_per_ms.is_finite() || km_per_ms <= F::zero() {
        return Err(GeoError::InvalidSpeed(
            km_per_ms.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(rtt_ms / F::c(2.0) * km_per_ms)
}

/// [`rtt_to_radius_km_at`] with the default fiber propagation speed.
pub fn rtt_to_radius_km<F: Scalar>(rtt_ms: F) -> Result<F, GeoError> {
    rtt_to_radius_km_at(rtt_ms, F::c(DEFAULT_FIBER_KM_PER_MS))
}

/// Region reachable from a vantage point within one RTT sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawLatencyDisk<F>",
    bound(deserialize = "F: Deserialize<'de> + Scalar")
)]
pub struct LatencyDisk<F> {
    center: GeoPoint<F>,
    radius_km: F,
    clamped: bool,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "F: Deserialize<'de> + Scalar"))]
struct RawLatencyDisk<F> {
    center: GeoPoint<F>,
    radius_km: F,
    #[serde(default)]
    clamped: bool,
}

impl<F: Scalar> TryFrom<RawLatencyDisk<F>> for LatencyDisk<F> {
    type Error = GeoError;

    fn try_from(raw: RawLatencyDisk<F>) -> Result<Self, GeoError> {
        // The radius is re-validated; a flag set by an earlier clamp (whose
        // radius now sits exactly at the cap) is preserved.
        let mut disk = LatencyDisk::new(raw.center, raw.radius_km)?;
        disk.clamped = disk.clamped || raw.clamped;
        Ok(disk)
    }
}

impl<F: Scalar> LatencyDisk<F> {
    /// Builds a disk, clamping oversized radii to [`MAX_DISK_RADIUS_KM`] and
    /// flagging the clamp. Negative or non-finite radii are rejected.
    pub fn new(center: GeoPoint<F>, radius_km: F) -> Result<Self, GeoError> {
        if !radius_km.is_finite() || radius_km < F::zero() {
            return Err(GeoError::NegativeRadius(
                radius_km.to_f64().unwrap_or(f64::NAN),
            ));
        }
        let max = F::c(MAX_DISK_RADIUS_KM);
        if radius_km > max {
            Ok(Self {
                center,
                radius_km: max,
                clamped: true,
            })
        } else {
            Ok(Self {
                center,
                radius_km,
                clamped: false,
            })
        }
    }

    /// Disk implied by an RTT sample measured from `center`.
    pub fn from_rtt(center: GeoPoint<F>, rtt_ms: F, km_per_ms: F) -> Result<Self, GeoError> {
        Self::new(center, rtt_to_radius_km_at(rtt_ms, km_per_ms)?)
    }

    pub fn center(&self) -> GeoPoint<F> {
        self.center
    }

    pub fn radius_km(&self) -> F {
        self.radius_km
    }

    /// True when the radius was clamped at construction.
    pub fn clamped(&self) -> bool {
        self.clamped
    }

    /// True when no point of the sphere lies outside the disk. Such a disk
    /// can never witness a violation and carries no location information.
    pub fn covers_sphere(&self) -> bool {
        self.radius_km >= F::PI() * F::c(EARTH_RADIUS_KM)
    }
}

/// True iff the two disks share no point: their centers are farther apart
/// than the sum of their radii. Touching disks are not disjoint.
pub fn disks_disjoint<F: Scalar>(a: LatencyDisk<F>, b: LatencyDisk<F>) -> bool {
    haversine_km(a.center, b.center) > a.radius_km + b.radius_km
}

/// True iff `p` lies in the disk, boundary included.
pub fn point_in_disk<F: Scalar>(p: GeoPoint<F>, d: LatencyDisk<F>) -> bool {
    haversine_km(p, d.center) <= d.radius_km
}
