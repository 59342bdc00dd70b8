//! Parsers for the three input files: observation logs, semantic tag
//! tables and cell-ID databases in the OpenCellID export schema.
//!
//! All three formats are comma-separated with a mandatory header row and
//! no quoting; labels may not contain commas. Malformed rows become
//! [`Diagnostic`]s with line numbers instead of aborting the parse, so
//! emitted records plus diagnostics always account for every data row.

use std::collections::HashSet;
use std::io::BufRead;

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::geo::{CellKey, GeoPoint};
use crate::report::Diagnostic;

pub const OBSERVATIONS_HEADER: &str = "timestamp,lac,cell_id,tag";
pub const CELLNAMES_HEADER: &str = "lac,cell_id,label";
pub const CELLDB_HEADER: &str =
    "radio,mcc,net,area,cell,unit,lon,lat,range,samples,changeable,created,updated,averageSignal";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing header: expected `{expected}`")]
    MissingHeader { expected: &'static str },
    #[error("bad header: expected `{expected}`, found `{found}`")]
    BadHeader {
        expected: &'static str,
        found: String,
    },
}

/// One row of a cell-tower observation log.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub timestamp: DateTime<Utc>,
    pub cell: CellKey,
    /// User-supplied place label, trimmed and non-empty when present.
    pub tag: Option<String>,
}

/// One row of a cell-ID database in OpenCellID export form.
///
/// Coordinates are either in valid WGS84 range or exactly (0,0), the
/// upstream missing-location sentinel. The sentinel survives only until
/// resolver indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDbRow {
    pub cell: CellKey,
    pub lon: f64,
    pub lat: f64,
    pub range_m: Option<u32>,
    pub samples: Option<u32>,
}

impl CellDbRow {
    /// True when the row carries the (0,0) missing-location sentinel.
    pub fn is_missing_sentinel(&self) -> bool {
        self.lat == 0.0 && self.lon == 0.0
    }

    /// The row's position, unless it is the missing sentinel.
    pub fn point(&self) -> Option<GeoPoint> {
        if self.is_missing_sentinel() {
            None
        } else {
            GeoPoint::new(self.lat, self.lon).ok()
        }
    }
}

/// Parse output: records in file order plus per-row diagnostics.
///
/// `records.len() + diagnostics.len() == data_rows` for every input.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub diagnostics: Vec<Diagnostic>,
    pub data_rows: u64,
}

struct RowReader<I> {
    lines: I,
    line_no: u64,
}

fn open_rows<R: BufRead>(
    reader: R,
    expected_header: &'static str,
) -> Result<RowReader<std::io::Lines<R>>, IngestError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        None => {
            return Err(IngestError::MissingHeader {
                expected: expected_header,
            })
        }
        Some(line) => line?,
    };
    let header = header.trim_end_matches('\r');
    if header != expected_header {
        return Err(IngestError::BadHeader {
            expected: expected_header,
            found: header.to_string(),
        });
    }
    Ok(RowReader { lines, line_no: 1 })
}

impl<R: BufRead> RowReader<std::io::Lines<R>> {
    fn next_row(&mut self) -> Option<Result<(u64, String), std::io::Error>> {
        let line = self.lines.next()?;
        self.line_no += 1;
        Some(line.map(|l| (self.line_no, l.trim_end_matches('\r').to_string())))
    }
}

fn split_fields(row: &str, expected: usize, line: u64) -> Result<Vec<&str>, Diagnostic> {
    let fields: Vec<&str> = row.split(',').collect();
    if fields.len() != expected {
        return Err(Diagnostic::at_line(
            line,
            format!("expected {} fields; found {}", expected, fields.len()),
        ));
    }
    Ok(fields)
}

fn parse_positive_u32(field: &str, name: &str, line: u64) -> Result<u32, Diagnostic> {
    match field.trim().parse::<u32>() {
        Ok(v) if v > 0 => Ok(v),
        Ok(_) => Err(Diagnostic::at_line(line, format!("{name} must be positive"))),
        Err(_) => Err(Diagnostic::at_line(
            line,
            format!("invalid {name} `{field}`"),
        )),
    }
}

fn parse_optional_u32(field: &str, name: &str, line: u64) -> Result<Option<u32>, Diagnostic> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field.parse::<u32>().map(Some).map_err(|_| {
        Diagnostic::at_line(line, format!("invalid {name} `{field}`"))
    })
}

fn parse_timestamp(field: &str, line: u64) -> Result<DateTime<Utc>, Diagnostic> {
    let field = field.trim();
    if !field.ends_with('Z') {
        return Err(Diagnostic::at_line(
            line,
            format!("timestamp `{field}` must be ISO-8601 UTC with a `Z` suffix"),
        ));
    }
    DateTime::parse_from_rfc3339(field)
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|_| Diagnostic::at_line(line, format!("invalid timestamp `{field}`")))
}

/// Parses an observation log (`timestamp,lac,cell_id,tag`; tag may be empty).
pub fn parse_observations<R: BufRead>(reader: R) -> Result<Parsed<Observation>, IngestError> {
    let mut rows = open_rows(reader, OBSERVATIONS_HEADER)?;
    let mut out = Parsed {
        records: Vec::new(),
        diagnostics: Vec::new(),
        data_rows: 0,
    };
    while let Some(row) = rows.next_row() {
        let (line, row) = row?;
        out.data_rows += 1;
        let parsed = (|| {
            let fields = split_fields(&row, 4, line)?;
            let timestamp = parse_timestamp(fields[0], line)?;
            let lac = parse_positive_u32(fields[1], "lac", line)?;
            let cell_id = parse_positive_u32(fields[2], "cell_id", line)?;
            let tag = fields[3].trim();
            let tag = if tag.is_empty() {
                None
            } else {
                Some(tag.to_string())
            };
            Ok(Observation {
                timestamp,
                cell: CellKey::lac_cell(lac, cell_id)
                    .map_err(|e| Diagnostic::at_line(line, e.to_string()))?,
                tag,
            })
        })();
        match parsed {
            Ok(obs) => out.records.push(obs),
            Err(diag) => out.diagnostics.push(diag),
        }
    }
    Ok(out)
}

/// Parses a semantic tag table (`lac,cell_id,label`); duplicate
/// (cell, label) pairs are collapsed with a diagnostic.
pub fn parse_cellnames<R: BufRead>(
    reader: R,
) -> Result<Parsed<(CellKey, String)>, IngestError> {
    let mut rows = open_rows(reader, CELLNAMES_HEADER)?;
    let mut out = Parsed {
        records: Vec::new(),
        diagnostics: Vec::new(),
        data_rows: 0,
    };
    let mut seen: HashSet<(CellKey, String)> = HashSet::new();
    while let Some(row) = rows.next_row() {
        let (line, row) = row?;
        out.data_rows += 1;
        let parsed = (|| {
            let fields = split_fields(&row, 3, line)?;
            let lac = parse_positive_u32(fields[0], "lac", line)?;
            let cell_id = parse_positive_u32(fields[1], "cell_id", line)?;
            let label = fields[2].trim();
            if label.is_empty() {
                return Err(Diagnostic::at_line(line, "empty label"));
            }
            let cell = CellKey::lac_cell(lac, cell_id)
                .map_err(|e| Diagnostic::at_line(line, e.to_string()))?;
            Ok((cell, label.to_string()))
        })();
        match parsed {
            Ok(pair) => {
                if seen.insert(pair.clone()) {
                    out.records.push(pair);
                } else {
                    out.diagnostics.push(Diagnostic::at_line(
                        line,
                        format!("duplicate tag row for cell {} label `{}`", pair.0, pair.1),
                    ));
                }
            }
            Err(diag) => out.diagnostics.push(diag),
        }
    }
    Ok(out)
}

/// Parses an OpenCellID-format cell database export. Only the mcc, net,
/// area, cell, lon, lat, range and samples columns are consumed.
pub fn parse_celldb<R: BufRead>(reader: R) -> Result<Parsed<CellDbRow>, IngestError> {
    let mut rows = open_rows(reader, CELLDB_HEADER)?;
    let mut out = Parsed {
        records: Vec::new(),
        diagnostics: Vec::new(),
        data_rows: 0,
    };
    while let Some(row) = rows.next_row() {
        let (line, row) = row?;
        out.data_rows += 1;
        let parsed = (|| {
            let fields = split_fields(&row, 14, line)?;
            let mcc = parse_optional_u32(fields[1], "mcc", line)?;
            let mnc = parse_optional_u32(fields[2], "net", line)?;
            let lac = parse_positive_u32(fields[3], "area", line)?;
            let cell_id = parse_positive_u32(fields[4], "cell", line)?;
            let lon: f64 = fields[6].trim().parse().map_err(|_| {
                Diagnostic::at_line(line, format!("invalid lon `{}`", fields[6]))
            })?;
            let lat: f64 = fields[7].trim().parse().map_err(|_| {
                Diagnostic::at_line(line, format!("invalid lat `{}`", fields[7]))
            })?;
            if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat)
                || !(-180.0..=180.0).contains(&lon)
            {
                return Err(Diagnostic::at_line(
                    line,
                    format!("coordinates ({lat}; {lon}) out of range"),
                ));
            }
            let range_m = parse_optional_u32(fields[8], "range", line)?;
            let samples = parse_optional_u32(fields[9], "samples", line)?;
            Ok(CellDbRow {
                cell: CellKey::new(mcc, mnc, lac, cell_id)
                    .map_err(|e| Diagnostic::at_line(line, e.to_string()))?,
                lon,
                lat,
                range_m,
                samples,
            })
        })();
        match parsed {
            Ok(row) => out.records.push(row),
            Err(diag) => out.diagnostics.push(diag),
        }
    }
    Ok(out)
}

/// Canonical timestamp form: ISO-8601 UTC with a `Z` suffix, fractional
/// seconds only when non-zero.
pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Serializes observations back to the native CSV schema.
pub fn write_observations_csv(observations: &[Observation]) -> String {
    let mut out = String::from(OBSERVATIONS_HEADER);
    out.push('\n');
    for obs in observations {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_timestamp(obs.timestamp),
            obs.cell.lac,
            obs.cell.cell_id,
            obs.tag.as_deref().unwrap_or(""),
        ));
    }
    out
}

/// Serializes tag pairs back to the native CSV schema.
pub fn write_cellnames_csv(pairs: &[(CellKey, String)]) -> String {
    let mut out = String::from(CELLNAMES_HEADER);
    out.push('\n');
    for (cell, label) in pairs {
        out.push_str(&format!("{},{},{}\n", cell.lac, cell.cell_id, label));
    }
    out
}

fn optional_u32_field(v: Option<u32>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Serializes cell-db rows in OpenCellID export form. Columns the parser
/// does not consume are emitted as fixed fillers.
pub fn write_celldb_csv(rows: &[CellDbRow]) -> String {
    let mut out = String::from(CELLDB_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "GSM,{},{},{},{},,{},{},{},{},1,0,0,\n",
            optional_u32_field(row.cell.mcc),
            optional_u32_field(row.cell.mnc),
            row.cell.lac,
            row.cell.cell_id,
            row.lon,
            row.lat,
            optional_u32_field(row.range_m),
            optional_u32_field(row.samples),
        ));
    }
    out
}
