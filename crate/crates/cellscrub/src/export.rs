//! Emitters for pipeline outputs: GeoJSON feature collections, stage
//! CSV artifacts and the plain-text summary table. Every emitter is
//! byte-deterministic for identical inputs; the CSV artifacts round-trip
//! exactly so stages can be chained through files.

use std::collections::HashMap;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::geo::{CellKey, GeoPoint, MetricMode};
use crate::outlier::{CleanReport, LacPartition, PartitionStatus};
use crate::metrics::RetentionReport;
use crate::report::format_percentage;
use crate::resolver::{Resolution, ResolutionReport, Source};
use crate::semantic::{ClusterMember, SemanticCluster};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot export cell {0}: no coordinates (source is missing)")]
    MissingSource(CellKey),
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),
}

fn format_error(line: u64, message: impl Into<String>) -> ExportError {
    ExportError::Format {
        line,
        message: message.into(),
    }
}

/// Cluster role of a cell in a LAC partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterRole {
    Representative,
    Outlier,
    InsufficientData,
}

impl ClusterRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClusterRole::Representative => "representative",
            ClusterRole::Outlier => "outlier",
            ClusterRole::InsufficientData => "insufficient-data",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "representative" => Some(ClusterRole::Representative),
            "outlier" => Some(ClusterRole::Outlier),
            "insufficient-data" => Some(ClusterRole::InsufficientData),
            _ => None,
        }
    }
}

/// One exportable point feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub cell: CellKey,
    pub point: GeoPoint,
    pub source: Source,
    pub cluster: Option<ClusterRole>,
}

/// Features for resolved resolutions; a missing-source resolution is a
/// domain error because it has no coordinates to plot.
pub fn features_from_resolutions(
    resolutions: &[Resolution],
) -> Result<Vec<FeatureRecord>, ExportError> {
    resolutions
        .iter()
        .map(|r| match r.point {
            Some(point) => Ok(FeatureRecord {
                cell: r.cell,
                point,
                source: r.source,
                cluster: None,
            }),
            None => Err(ExportError::MissingSource(r.cell)),
        })
        .collect()
}

/// Features for partitioned cells, carrying both the resolution source
/// and the cluster role.
pub fn features_from_partitions(
    partitions: &[LacPartition],
    resolutions: &[Resolution],
) -> Vec<FeatureRecord> {
    let sources: HashMap<CellKey, Source> =
        resolutions.iter().map(|r| (r.cell, r.source)).collect();
    let mut features = Vec::new();
    for partition in partitions {
        let outlier_role = match partition.status {
            PartitionStatus::Clustered => ClusterRole::Outlier,
            PartitionStatus::InsufficientData => ClusterRole::InsufficientData,
        };
        for &(cell, point) in &partition.representative {
            features.push(FeatureRecord {
                cell,
                point,
                source: sources.get(&cell).copied().unwrap_or(Source::Db),
                cluster: Some(ClusterRole::Representative),
            });
        }
        for &(cell, point) in &partition.outliers {
            features.push(FeatureRecord {
                cell,
                point,
                source: sources.get(&cell).copied().unwrap_or(Source::Db),
                cluster: Some(outlier_role),
            });
        }
    }
    features
}

/// Rounds a coordinate to 7 decimal places (about a centimeter) so the
/// emitted text is stable for golden files.
fn quantize(value: f64) -> f64 {
    (value * 1e7).round() / 1e7
}

/// Serializes features as a GeoJSON FeatureCollection, sorted by cell
/// key, coordinates `[lon, lat]`.
pub fn to_geojson(features: &[FeatureRecord]) -> String {
    let mut sorted: Vec<&FeatureRecord> = features.iter().collect();
    sorted.sort_by_key(|f| f.cell);
    let features: Vec<Value> = sorted
        .into_iter()
        .map(|f| {
            let mut properties = Map::new();
            if let Some(mcc) = f.cell.mcc {
                properties.insert("mcc".into(), json!(mcc));
            }
            if let Some(mnc) = f.cell.mnc {
                properties.insert("mnc".into(), json!(mnc));
            }
            properties.insert("lac".into(), json!(f.cell.lac));
            properties.insert("cell_id".into(), json!(f.cell.cell_id));
            properties.insert("source".into(), json!(f.source.as_str()));
            if let Some(cluster) = f.cluster {
                properties.insert("cluster".into(), json!(cluster.as_str()));
            }
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [quantize(f.point.lon()), quantize(f.point.lat())],
                },
                "properties": Value::Object(properties),
            })
        })
        .collect();
    let collection = json!({
        "type": "FeatureCollection",
        "features": features,
    });
    let mut text = serde_json::to_string(&collection).expect("valid json value");
    text.push('\n');
    text
}

/// Parses a FeatureCollection produced by [`to_geojson`] back into
/// feature records (used by the report stage and round-trip tests).
pub fn parse_geojson(text: &str) -> Result<Vec<FeatureRecord>, ExportError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ExportError::GeoJson(e.to_string()))?;
    let features = value
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| ExportError::GeoJson("missing features array".into()))?;
    features
        .iter()
        .map(|feature| {
            let props = feature
                .get("properties")
                .and_then(Value::as_object)
                .ok_or_else(|| ExportError::GeoJson("feature without properties".into()))?;
            let coords = feature
                .pointer("/geometry/coordinates")
                .and_then(Value::as_array)
                .ok_or_else(|| ExportError::GeoJson("feature without coordinates".into()))?;
            let get_u32 = |key: &str| props.get(key).and_then(Value::as_u64).map(|v| v as u32);
            let lac = get_u32("lac")
                .ok_or_else(|| ExportError::GeoJson("feature without lac".into()))?;
            let cell_id = get_u32("cell_id")
                .ok_or_else(|| ExportError::GeoJson("feature without cell_id".into()))?;
            let cell = CellKey::new(get_u32("mcc"), get_u32("mnc"), lac, cell_id)
                .map_err(|e| ExportError::GeoJson(e.to_string()))?;
            let (lon, lat) = match (coords.first(), coords.get(1)) {
                (Some(lon), Some(lat)) => (
                    lon.as_f64()
                        .ok_or_else(|| ExportError::GeoJson("bad longitude".into()))?,
                    lat.as_f64()
                        .ok_or_else(|| ExportError::GeoJson("bad latitude".into()))?,
                ),
                _ => return Err(ExportError::GeoJson("bad coordinates".into())),
            };
            let point =
                GeoPoint::new(lat, lon).map_err(|e| ExportError::GeoJson(e.to_string()))?;
            let source = props
                .get("source")
                .and_then(Value::as_str)
                .and_then(Source::parse)
                .ok_or_else(|| ExportError::GeoJson("feature without source".into()))?;
            let cluster = match props.get("cluster").and_then(Value::as_str) {
                Some(s) => Some(
                    ClusterRole::parse(s)
                        .ok_or_else(|| ExportError::GeoJson(format!("bad cluster `{s}`")))?,
                ),
                None => None,
            };
            Ok(FeatureRecord {
                cell,
                point,
                source,
                cluster,
            })
        })
        .collect()
}

pub const RESOLUTIONS_HEADER: &str = "mcc,mnc,lac,cell_id,lat,lon,source";

/// Writes the resolutions artifact. Coordinates use shortest
/// round-trip formatting, so reading the file back reproduces the exact
/// values.
pub fn write_resolutions_csv(resolutions: &[Resolution]) -> String {
    let mut out = String::from(RESOLUTIONS_HEADER);
    out.push('\n');
    for r in resolutions {
        let (lat, lon) = match r.point {
            Some(p) => (p.lat().to_string(), p.lon().to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.cell.mcc.map(|v| v.to_string()).unwrap_or_default(),
            r.cell.mnc.map(|v| v.to_string()).unwrap_or_default(),
            r.cell.lac,
            r.cell.cell_id,
            lat,
            lon,
            r.source.as_str(),
        ));
    }
    out
}

/// Reads a resolutions artifact. Strict: this is a pipeline-internal
/// format, so any malformed row is a format error naming the line.
pub fn read_resolutions_csv(text: &str) -> Result<Vec<Resolution>, ExportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == RESOLUTIONS_HEADER => {}
        Some((_, header)) => {
            return Err(format_error(
                1,
                format!("expected header `{RESOLUTIONS_HEADER}`; found `{header}`"),
            ))
        }
        None => return Err(format_error(1, "empty file")),
    }
    let mut out = Vec::new();
    for (idx, row) in lines {
        let line = idx as u64 + 1;
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 7 {
            return Err(format_error(
                line,
                format!("expected 7 fields; found {}", fields.len()),
            ));
        }
        let opt_u32 = |s: &str, name: &str| -> Result<Option<u32>, ExportError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| format_error(line, format!("invalid {name} `{s}`")))
            }
        };
        let mcc = opt_u32(fields[0], "mcc")?;
        let mnc = opt_u32(fields[1], "mnc")?;
        let lac: u32 = fields[2]
            .parse()
            .map_err(|_| format_error(line, format!("invalid lac `{}`", fields[2])))?;
        let cell_id: u32 = fields[3]
            .parse()
            .map_err(|_| format_error(line, format!("invalid cell_id `{}`", fields[3])))?;
        let cell = CellKey::new(mcc, mnc, lac, cell_id)
            .map_err(|e| format_error(line, e.to_string()))?;
        let source = Source::parse(fields[6])
            .ok_or_else(|| format_error(line, format!("invalid source `{}`", fields[6])))?;
        let point = match (fields[4].is_empty(), fields[5].is_empty()) {
            (true, true) => None,
            (false, false) => {
                let lat: f64 = fields[4]
                    .parse()
                    .map_err(|_| format_error(line, format!("invalid lat `{}`", fields[4])))?;
                let lon: f64 = fields[5]
                    .parse()
                    .map_err(|_| format_error(line, format!("invalid lon `{}`", fields[5])))?;
                Some(GeoPoint::new(lat, lon).map_err(|e| format_error(line, e.to_string()))?)
            }
            _ => return Err(format_error(line, "lat and lon must both be set or both empty")),
        };
        match source {
            Source::Missing if point.is_some() => {
                return Err(format_error(line, "missing source with coordinates"))
            }
            Source::Db | Source::SemanticImputed if point.is_none() => {
                return Err(format_error(line, format!("{} source without coordinates", source.as_str())))
            }
            _ => {}
        }
        out.push(Resolution {
            cell,
            point,
            source,
        });
    }
    Ok(out)
}

pub const CLUSTERS_HEADER: &str = "label,mcc,mnc,lac,cell_id,frequency,incidence";

/// Writes semantic clusters, one row per member, clusters in label order.
pub fn write_clusters_csv(clusters: &[SemanticCluster]) -> String {
    let mut out = String::from(CLUSTERS_HEADER);
    out.push('\n');
    for cluster in clusters {
        for member in &cluster.members {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                cluster.label,
                member.cell.mcc.map(|v| v.to_string()).unwrap_or_default(),
                member.cell.mnc.map(|v| v.to_string()).unwrap_or_default(),
                member.cell.lac,
                member.cell.cell_id,
                member.frequency,
                cluster.incidence(),
            ));
        }
    }
    out
}

/// Reads a clusters artifact back into semantic clusters.
pub fn read_clusters_csv(text: &str) -> Result<Vec<SemanticCluster>, ExportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CLUSTERS_HEADER => {}
        Some((_, header)) => {
            return Err(format_error(
                1,
                format!("expected header `{CLUSTERS_HEADER}`; found `{header}`"),
            ))
        }
        None => return Err(format_error(1, "empty file")),
    }
    let mut clusters: Vec<SemanticCluster> = Vec::new();
    for (idx, row) in lines {
        let line = idx as u64 + 1;
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 7 {
            return Err(format_error(
                line,
                format!("expected 7 fields; found {}", fields.len()),
            ));
        }
        let label = fields[0];
        let opt_u32 = |s: &str, name: &str| -> Result<Option<u32>, ExportError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| format_error(line, format!("invalid {name} `{s}`")))
            }
        };
        let mcc = opt_u32(fields[1], "mcc")?;
        let mnc = opt_u32(fields[2], "mnc")?;
        let lac: u32 = fields[3]
            .parse()
            .map_err(|_| format_error(line, format!("invalid lac `{}`", fields[3])))?;
        let cell_id: u32 = fields[4]
            .parse()
            .map_err(|_| format_error(line, format!("invalid cell_id `{}`", fields[4])))?;
        let frequency: u64 = fields[5]
            .parse()
            .map_err(|_| format_error(line, format!("invalid frequency `{}`", fields[5])))?;
        let cell = CellKey::new(mcc, mnc, lac, cell_id)
            .map_err(|e| format_error(line, e.to_string()))?;
        let member = ClusterMember { cell, frequency };
        match clusters.last_mut() {
            Some(cluster) if cluster.label == label => cluster.members.push(member),
            _ => clusters.push(SemanticCluster {
                label: label.to_string(),
                members: vec![member],
            }),
        }
    }
    Ok(clusters)
}

/// Inputs for the plain-text summary.
#[derive(Debug, Clone, Default)]
pub struct SummaryInputs<'a> {
    pub resolution: Option<ResolutionReport>,
    pub clean: Option<&'a CleanReport>,
    pub retention: Option<&'a RetentionReport>,
    pub clusters: &'a [SemanticCluster],
}

fn push_row(out: &mut String, label: &str, count: u64, pct: String) {
    out.push_str(&format!("{label:<34} {count:>8} {pct:>7}\n"));
}

/// Fixed-width summary of resolution, cleaning and retention accounting,
/// with exact one-decimal percentages.
pub fn summary(inputs: &SummaryInputs<'_>) -> String {
    let mut out = String::new();
    if let Some(r) = inputs.resolution {
        let total = r.total_unique_cells;
        out.push_str("Cell location resolution\n");
        out.push_str("------------------------\n");
        push_row(&mut out, "Total unique cells", total, format_percentage(total, total));
        push_row(
            &mut out,
            "Resolved from cell database",
            r.resolved_db,
            format_percentage(r.resolved_db, total),
        );
        push_row(
            &mut out,
            "Resolved from semantic tags",
            r.resolved_semantic,
            format_percentage(r.resolved_semantic, total),
        );
        push_row(
            &mut out,
            "Total resolved",
            r.total_resolved(),
            format_percentage(r.total_resolved(), total),
        );
        push_row(&mut out, "Missing", r.missing, format_percentage(r.missing, total));
        out.push('\n');
    }
    if let Some(c) = inputs.clean {
        out.push_str("Spatial outlier removal\n");
        out.push_str("-----------------------\n");
        push_row(
            &mut out,
            "Input resolved cells",
            c.input_cells,
            format_percentage(c.input_cells, c.input_cells),
        );
        push_row(
            &mut out,
            "Kept (representative clusters)",
            c.kept_cells,
            format_percentage(c.kept_cells, c.input_cells),
        );
        push_row(
            &mut out,
            "Outliers removed",
            c.outliers_removed,
            format_percentage(c.outliers_removed, c.input_cells),
        );
        push_row(
            &mut out,
            "In insufficient-data LACs",
            c.insufficient_cells,
            format_percentage(c.insufficient_cells, c.input_cells),
        );
        out.push('\n');
    }
    if let Some(r) = inputs.retention {
        let unit = r.mode.unit();
        out.push_str("Cleaning quality (Hausdorff)\n");
        out.push_str("----------------------------\n");
        out.push_str(&format!(
            "Kept {} of {} resolved cells ({})\n",
            r.after_count,
            r.before_count,
            format_percentage(r.after_count, r.before_count),
        ));
        out.push_str(&format!("hausdorff(before, after)  = {:.3} {unit}\n", r.hausdorff));
        out.push_str(&format!(
            "dhd(before -> after)      = {:.3} {unit}\n",
            r.dhd_before_after
        ));
        out.push_str(&format!(
            "dhd(after -> before)      = {:.3} {unit}\n",
            r.dhd_after_before
        ));
        out.push('\n');
    }
    if !inputs.clusters.is_empty() {
        out.push_str("Semantic clusters (incidence)\n");
        out.push_str("-----------------------------\n");
        let mut rows: Vec<(&str, usize)> = inputs
            .clusters
            .iter()
            .map(|c| (c.label.as_str(), c.incidence()))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for (label, incidence) in rows {
            out.push_str(&format!("{label:<24} {incidence:>4}\n"));
        }
    }
    if out.ends_with("\n\n") {
        out.pop();
    }
    out
}
