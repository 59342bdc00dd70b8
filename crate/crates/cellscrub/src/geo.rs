//! Domain types shared by every stage: cell identities, WGS84 points and
//! the distance metric used by clustering and Hausdorff computation.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Mean Earth radius in meters, used by the equirectangular approximation.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Upper bound on the radius a single GSM cell may span, in meters.
pub const MAX_CELL_SPAN_M: f64 = 35_000.0;

/// Meters per degree of latitude (`EARTH_RADIUS_M * π / 180`).
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("coordinates must be finite")]
    NonFiniteCoordinate,
    #[error("lac and cell_id must be positive")]
    InvalidCellKey,
}

/// Identity of a cell: optional MCC/MNC plus LAC and Cell ID.
///
/// Ordering is lexicographic over `(mcc, mnc, lac, cell_id)` with absent
/// fields sorting before present ones, which gives a strict total order
/// across keys with and without operator information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub mcc: Option<u32>,
    pub mnc: Option<u32>,
    pub lac: u32,
    pub cell_id: u32,
}

impl CellKey {
    pub fn new(
        mcc: Option<u32>,
        mnc: Option<u32>,
        lac: u32,
        cell_id: u32,
    ) -> Result<Self, GeoError> {
        if lac == 0 || cell_id == 0 {
            return Err(GeoError::InvalidCellKey);
        }
        Ok(Self {
            mcc,
            mnc,
            lac,
            cell_id,
        })
    }

    /// Key carrying only the LAC / Cell ID pair, the form observation logs use.
    pub fn lac_cell(lac: u32, cell_id: u32) -> Result<Self, GeoError> {
        Self::new(None, None, lac, cell_id)
    }

    /// True when the key carries operator information (MCC or MNC).
    pub fn has_operator(&self) -> bool {
        self.mcc.is_some() || self.mnc.is_some()
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.mcc, self.mnc) {
            (Some(mcc), Some(mnc)) => write!(f, "{}.{}.{}.{}", mcc, mnc, self.lac, self.cell_id),
            _ => write!(f, "{}.{}", self.lac, self.cell_id),
        }
    }
}

/// A WGS84 position. Always a real location: missing locations are an
/// absent `GeoPoint` at use sites, never a (0,0) sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NonFiniteCoordinate);
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Distance metric selector.
///
/// `Degrees` is the raw planar metric over coordinate values;
/// `GeodesicMeters` (the default) is an equirectangular approximation,
/// accurate at location-area scale where cells span at most
/// [`MAX_CELL_SPAN_M`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricMode {
    Degrees,
    #[default]
    GeodesicMeters,
}

impl MetricMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricMode::Degrees => "degrees",
            MetricMode::GeodesicMeters => "geodesic-meters",
        }
    }

    /// Unit suffix for report output.
    pub fn unit(&self) -> &'static str {
        match self {
            MetricMode::Degrees => "deg",
            MetricMode::GeodesicMeters => "m",
        }
    }
}

impl fmt::Display for MetricMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "degrees" => Ok(MetricMode::Degrees),
            "geodesic-meters" => Ok(MetricMode::GeodesicMeters),
            other => Err(format!(
                "unknown metric `{other}` (expected `degrees` or `geodesic-meters`)"
            )),
        }
    }
}

/// Distance between two points under the chosen metric.
///
/// Degrees mode returns `sqrt(Δlat² + Δlon²)`. Geodesic mode returns
/// `R·sqrt(Δφ² + (cos φ_m · Δλ)²)` with angles in radians and `φ_m` the
/// mean latitude. Symmetric, and zero exactly when the coordinates are
/// identical.
pub fn geo_distance(a: GeoPoint, b: GeoPoint, mode: MetricMode) -> f64 {
    match mode {
        MetricMode::Degrees => {
            let dlat = a.lat - b.lat;
            let dlon = a.lon - b.lon;
            (dlat * dlat + dlon * dlon).sqrt()
        }
        MetricMode::GeodesicMeters => {
            let dphi = (a.lat - b.lat).to_radians();
            let dlambda = (a.lon - b.lon).to_radians();
            let phi_m = ((a.lat + b.lat) / 2.0).to_radians();
            let x = phi_m.cos() * dlambda;
            EARTH_RADIUS_M * (dphi * dphi + x * x).sqrt()
        }
    }
}
