//! cellscrub converts raw GSM cell-observation logs into clean,
//! outlier-free geolocated cell sets.
//!
//! The pipeline resolves cell identities against a local cell-ID
//! database, imputes missing coordinates from user semantic tags, prunes
//! spatial outliers per location area with single-linkage clustering,
//! flags cell-oscillation pairs, and quantifies cleaning quality with
//! Hausdorff distances.

pub mod export;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod outlier;
pub mod pipeline;
pub mod report;
pub mod resolver;
pub mod semantic;
pub mod synth;

pub use geo::{geo_distance, CellKey, GeoPoint, MetricMode};
pub use resolver::{Resolution, ResolutionReport, Source};
