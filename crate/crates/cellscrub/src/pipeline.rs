//! End-to-end orchestration: ingest → resolve → semantic clustering →
//! imputation → outlier removal → retention metrics → artifact export.
//!
//! Every stage also exists as a standalone function over the out-dir
//! artifacts, and running the stages in sequence produces byte-identical
//! files to the monolithic run.

use std::collections::BTreeSet;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::export::{
    features_from_partitions, parse_geojson, read_clusters_csv, read_resolutions_csv, summary,
    to_geojson, write_clusters_csv, write_resolutions_csv, ClusterRole, ExportError,
    SummaryInputs,
};
use crate::geo::{CellKey, GeoPoint, MetricMode, METERS_PER_DEGREE};
use crate::ingest::{parse_cellnames, parse_celldb, parse_observations, IngestError};
use crate::metrics::{retention_report, MetricsError, RetentionReport};
use crate::outlier::{clean_all, CleanReport, LacPartition, OutlierError, PartitionStatus};
use crate::report::Diagnostic;
use crate::resolver::{build_index, resolve_all, Resolution, ResolutionReport};
use crate::semantic::{build_semantic_clusters, impute, SemanticCluster, SemanticError};
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        source: IngestError,
    },
    #[error("{path}: {source}")]
    Artifact {
        path: PathBuf,
        source: ExportError,
    },
    #[error("config {path} line {line}: {message}")]
    Config {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("missing required setting `{0}`")]
    MissingSetting(&'static str),
    #[error(transparent)]
    Outlier(#[from] OutlierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl PipelineError {
    /// True for failures reading or writing files (as opposed to schema
    /// or domain violations).
    pub fn is_io(&self) -> bool {
        matches!(self, PipelineError::Io { .. })
    }
}

/// Resolved run settings. Precedence: built-in defaults, then config
/// file, then command-line flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub observations_path: Option<PathBuf>,
    pub cellnames_path: Option<PathBuf>,
    pub celldb_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub min_cluster_size: usize,
    pub prune_km: f64,
    pub osc_window_s: u64,
    pub metric: MetricMode,
    pub keep_insufficient_lacs: bool,
    pub threads: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            observations_path: None,
            cellnames_path: None,
            celldb_path: None,
            out_dir: None,
            min_cluster_size: 10,
            prune_km: 5.0,
            osc_window_s: 300,
            metric: MetricMode::GeodesicMeters,
            keep_insufficient_lacs: false,
            threads: 0,
        }
    }
}

impl Settings {
    pub fn observations(&self) -> Result<&Path, PipelineError> {
        self.observations_path
            .as_deref()
            .ok_or(PipelineError::MissingSetting("observations_path"))
    }

    pub fn cellnames(&self) -> Result<&Path, PipelineError> {
        self.cellnames_path
            .as_deref()
            .ok_or(PipelineError::MissingSetting("cellnames_path"))
    }

    pub fn celldb(&self) -> Result<&Path, PipelineError> {
        self.celldb_path
            .as_deref()
            .ok_or(PipelineError::MissingSetting("celldb_path"))
    }

    pub fn out_dir(&self) -> Result<&Path, PipelineError> {
        self.out_dir
            .as_deref()
            .ok_or(PipelineError::MissingSetting("out_dir"))
    }

    /// The pruning distance in the metric's own units. The knob is
    /// kilometers; degrees mode converts at the equatorial scale.
    pub fn prune_distance(&self) -> f64 {
        let meters = self.prune_km * 1_000.0;
        match self.metric {
            MetricMode::GeodesicMeters => meters,
            MetricMode::Degrees => meters / METERS_PER_DEGREE,
        }
    }

    fn apply_entry(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = |k: &str, v: &str| format!("bad value `{v}` for `{k}`");
        match key {
            "observations_path" => self.observations_path = Some(PathBuf::from(value)),
            "cellnames_path" => self.cellnames_path = Some(PathBuf::from(value)),
            "celldb_path" => self.celldb_path = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "min_cluster_size" => {
                self.min_cluster_size = value.parse().map_err(|_| bad(key, value))?
            }
            "prune_km" => {
                self.prune_km = value.parse().map_err(|_| bad(key, value))?;
                if !(self.prune_km > 0.0) {
                    return Err("prune_km must be positive".into());
                }
            }
            "osc_window_s" => {
                self.osc_window_s = value.parse().map_err(|_| bad(key, value))?;
                if self.osc_window_s == 0 {
                    return Err("osc_window_s must be positive".into());
                }
            }
            "metric" => self.metric = value.parse().map_err(|e: String| e)?,
            "keep_insufficient_lacs" => {
                self.keep_insufficient_lacs = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad(key, value)),
                }
            }
            "threads" => self.threads = value.parse().map_err(|_| bad(key, value))?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// Layers a flat `key = value` config file over the current settings.
    pub fn apply_config_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text = read_file(path)?;
        for (line, key, value) in parse_flat_config(&text).map_err(|(line, message)| {
            PipelineError::Config {
                path: path.to_path_buf(),
                line,
                message,
            }
        })? {
            self.apply_entry(&key, &value)
                .map_err(|message| PipelineError::Config {
                    path: path.to_path_buf(),
                    line,
                    message,
                })?;
        }
        Ok(())
    }
}

/// Parses flat `key = value` text: blank lines and `#` comments ignored.
pub fn parse_flat_config(text: &str) -> Result<Vec<(u64, String, String)>, (u64, String)> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx as u64 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match trimmed.split_once('=') {
            Some((key, value)) => {
                entries.push((line, key.trim().to_string(), value.trim().to_string()))
            }
            None => return Err((line, format!("expected `key = value`, found `{trimmed}`"))),
        }
    }
    Ok(entries)
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Pipeline stages that can contribute diagnostics, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Observations,
    Cellnames,
    CellDb,
    Index,
    Clean,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Observations => "observations",
            Stage::Cellnames => "cellnames",
            Stage::CellDb => "celldb",
            Stage::Index => "index",
            Stage::Clean => "clean",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "observations" => Some(Stage::Observations),
            "cellnames" => Some(Stage::Cellnames),
            "celldb" => Some(Stage::CellDb),
            "index" => Some(Stage::Index),
            "clean" => Some(Stage::Clean),
            _ => None,
        }
    }
}

pub const DIAGNOSTICS_HEADER: &str = "stage,line,message";

fn render_diagnostics(rows: &[(Stage, Diagnostic)]) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for (stage, diag) in rows {
        let line = diag.line.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", stage.as_str(), line, diag.message));
    }
    out
}

fn parse_diagnostics(text: &str) -> Result<Vec<(Stage, Diagnostic)>, ExportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == DIAGNOSTICS_HEADER => {}
        _ => {
            return Err(ExportError::Format {
                line: 1,
                message: format!("expected header `{DIAGNOSTICS_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, row) in lines {
        let line_no = idx as u64 + 1;
        let mut parts = row.splitn(3, ',');
        let (stage, line, message) = match (parts.next(), parts.next(), parts.next()) {
            (Some(stage), Some(line), Some(message)) => (stage, line, message),
            _ => {
                return Err(ExportError::Format {
                    line: line_no,
                    message: "expected 3 fields".into(),
                })
            }
        };
        let stage = Stage::parse(stage).ok_or_else(|| ExportError::Format {
            line: line_no,
            message: format!("unknown stage `{stage}`"),
        })?;
        let line = if line.is_empty() {
            None
        } else {
            Some(line.parse().map_err(|_| ExportError::Format {
                line: line_no,
                message: format!("invalid line number `{line}`"),
            })?)
        };
        rows.push((
            stage,
            Diagnostic {
                line,
                message: message.to_string(),
            },
        ));
    }
    Ok(rows)
}

/// Rewrites `diagnostics.csv`, replacing the rows of the stages being
/// written and keeping every other stage's rows, sorted canonically.
/// Stage commands call this so a stage-by-stage run converges to the
/// same bytes as the monolithic pipeline.
fn merge_diagnostics(
    out_dir: &Path,
    replacing: &[Stage],
    new_rows: Vec<(Stage, Diagnostic)>,
) -> Result<(), PipelineError> {
    let path = out_dir.join("diagnostics.csv");
    let mut rows: Vec<(Stage, Diagnostic)> = if path.exists() {
        let text = read_file(&path)?;
        parse_diagnostics(&text)
            .map_err(|source| PipelineError::Artifact {
                path: path.clone(),
                source,
            })?
            .into_iter()
            .filter(|(stage, _)| !replacing.contains(stage))
            .collect()
    } else {
        Vec::new()
    };
    rows.extend(new_rows);
    rows.sort_by(|a, b| {
        (a.0, a.1.line.unwrap_or(0), &a.1.message).cmp(&(b.0, b.1.line.unwrap_or(0), &b.1.message))
    });
    write_file(&path, &render_diagnostics(&rows))
}

/// Records and row diagnostics from one input file.
pub struct ParsedInputs<T> {
    pub records: Vec<T>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Reads and parses an observation log, mapping failures to errors that
/// name the file.
pub fn load_observations(path: &Path) -> Result<ParsedInputs<crate::ingest::Observation>, PipelineError> {
    let text = read_file(path)?;
    let parsed = parse_observations(Cursor::new(text)).map_err(|source| PipelineError::Format {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ParsedInputs {
        records: parsed.records,
        diagnostics: parsed.diagnostics,
    })
}

pub fn load_cellnames(path: &Path) -> Result<ParsedInputs<(CellKey, String)>, PipelineError> {
    let text = read_file(path)?;
    let parsed = parse_cellnames(Cursor::new(text)).map_err(|source| PipelineError::Format {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ParsedInputs {
        records: parsed.records,
        diagnostics: parsed.diagnostics,
    })
}

pub fn load_celldb(path: &Path) -> Result<ParsedInputs<crate::ingest::CellDbRow>, PipelineError> {
    let text = read_file(path)?;
    let parsed = parse_celldb(Cursor::new(text)).map_err(|source| PipelineError::Format {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ParsedInputs {
        records: parsed.records,
        diagnostics: parsed.diagnostics,
    })
}

/// Runs a closure inside a rayon pool of the requested size; zero means
/// the library default. Results never depend on the thread count, only
/// wall-clock does.
pub fn with_thread_pool<T: Send>(
    threads: usize,
    job: impl FnOnce() -> T + Send,
) -> T {
    if threads == 0 {
        return job();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction");
    pool.install(job)
}

/// The kept cell set: representatives of clustered LACs, plus
/// insufficient-data cells when configured to pass them through.
fn kept_cells(
    partitions: &[LacPartition],
    keep_insufficient: bool,
) -> Vec<(CellKey, GeoPoint)> {
    let mut kept = Vec::new();
    for partition in partitions {
        match partition.status {
            PartitionStatus::Clustered => kept.extend(partition.representative.iter().copied()),
            PartitionStatus::InsufficientData => {
                if keep_insufficient {
                    kept.extend(partition.outliers.iter().copied());
                }
            }
        }
    }
    kept.sort_by_key(|(cell, _)| *cell);
    kept
}

/// Everything the monolithic run computed, for callers and tests.
pub struct PipelineOutcome {
    pub resolution_report: ResolutionReport,
    pub clean_report: CleanReport,
    pub retention: Option<RetentionReport>,
    pub partitions: Vec<LacPartition>,
}

/// Runs the whole pipeline and writes `resolutions.csv`, `clusters.csv`,
/// `partitions.geojson`, `summary.txt` and `diagnostics.csv` into the
/// out dir. Identical inputs and settings produce byte-identical
/// artifacts.
pub fn run_pipeline(settings: &Settings) -> Result<PipelineOutcome, PipelineError> {
    let out_dir = settings.out_dir()?.to_path_buf();
    let observations = load_observations(settings.observations()?)?;
    let cellnames = load_cellnames(settings.cellnames()?)?;
    let celldb = load_celldb(settings.celldb()?)?;

    let mut diagnostics: Vec<(Stage, Diagnostic)> = Vec::new();
    diagnostics.extend(
        observations
            .diagnostics
            .into_iter()
            .map(|d| (Stage::Observations, d)),
    );
    diagnostics.extend(cellnames.diagnostics.into_iter().map(|d| (Stage::Cellnames, d)));
    diagnostics.extend(celldb.diagnostics.into_iter().map(|d| (Stage::CellDb, d)));

    let db = build_index(celldb.records);
    diagnostics.extend(db.diagnostics().iter().cloned().map(|d| (Stage::Index, d)));

    let unique: BTreeSet<CellKey> = observations.records.iter().map(|o| o.cell).collect();
    let (resolutions, _) = resolve_all(&db, &unique);
    let clusters = build_semantic_clusters(cellnames.records);
    let resolutions = impute(&resolutions, &clusters);
    let resolution_report = ResolutionReport::from_resolutions(&resolutions);

    let resolved: Vec<Resolution> = resolutions
        .iter()
        .filter(|r| r.is_resolved())
        .cloned()
        .collect();
    let (partitions, clean_report) = with_thread_pool(settings.threads, || {
        clean_all(
            &resolved,
            settings.metric,
            settings.prune_distance(),
            settings.min_cluster_size,
        )
    })?;
    diagnostics.extend(
        clean_report
            .diagnostics
            .iter()
            .cloned()
            .map(|d| (Stage::Clean, d)),
    );

    let before: Vec<(CellKey, GeoPoint)> = resolved
        .iter()
        .map(|r| (r.cell, r.point.expect("filtered to resolved")))
        .collect();
    let after = kept_cells(&partitions, settings.keep_insufficient_lacs);
    let retention = if before.is_empty() || after.is_empty() {
        None
    } else {
        Some(retention_report(&before, &after, settings.metric)?)
    };

    write_file(
        &out_dir.join("resolutions.csv"),
        &write_resolutions_csv(&resolutions),
    )?;
    write_file(&out_dir.join("clusters.csv"), &write_clusters_csv(&clusters))?;
    write_file(
        &out_dir.join("partitions.geojson"),
        &to_geojson(&features_from_partitions(&partitions, &resolutions)),
    )?;
    write_file(
        &out_dir.join("summary.txt"),
        &summary(&SummaryInputs {
            resolution: Some(resolution_report),
            clean: Some(&clean_report),
            retention: retention.as_ref(),
            clusters: &clusters,
        }),
    )?;
    merge_diagnostics(
        &out_dir,
        &[
            Stage::Observations,
            Stage::Cellnames,
            Stage::CellDb,
            Stage::Index,
            Stage::Clean,
        ],
        diagnostics,
    )?;

    Ok(PipelineOutcome {
        resolution_report,
        clean_report,
        retention,
        partitions,
    })
}

/// Stage command: resolve observations against the cell database and
/// write `resolutions.csv` (pre-imputation).
pub fn stage_resolve(settings: &Settings) -> Result<ResolutionReport, PipelineError> {
    let out_dir = settings.out_dir()?.to_path_buf();
    let observations = load_observations(settings.observations()?)?;
    let celldb = load_celldb(settings.celldb()?)?;

    let mut diagnostics: Vec<(Stage, Diagnostic)> = Vec::new();
    diagnostics.extend(
        observations
            .diagnostics
            .into_iter()
            .map(|d| (Stage::Observations, d)),
    );
    diagnostics.extend(celldb.diagnostics.into_iter().map(|d| (Stage::CellDb, d)));
    let db = build_index(celldb.records);
    diagnostics.extend(db.diagnostics().iter().cloned().map(|d| (Stage::Index, d)));

    let unique: BTreeSet<CellKey> = observations.records.iter().map(|o| o.cell).collect();
    let (resolutions, report) = resolve_all(&db, &unique);
    write_file(
        &out_dir.join("resolutions.csv"),
        &write_resolutions_csv(&resolutions),
    )?;
    merge_diagnostics(
        &out_dir,
        &[Stage::Observations, Stage::CellDb, Stage::Index],
        diagnostics,
    )?;
    Ok(report)
}

/// Stage command: build semantic clusters from the tag table and write
/// `clusters.csv`.
pub fn stage_semantic(settings: &Settings) -> Result<Vec<SemanticCluster>, PipelineError> {
    let out_dir = settings.out_dir()?.to_path_buf();
    let cellnames = load_cellnames(settings.cellnames()?)?;
    let diagnostics: Vec<(Stage, Diagnostic)> = cellnames
        .diagnostics
        .into_iter()
        .map(|d| (Stage::Cellnames, d))
        .collect();
    let clusters = build_semantic_clusters(cellnames.records);
    write_file(&out_dir.join("clusters.csv"), &write_clusters_csv(&clusters))?;
    merge_diagnostics(&out_dir, &[Stage::Cellnames], diagnostics)?;
    Ok(clusters)
}

fn read_artifact<T>(
    out_dir: &Path,
    name: &str,
    parse: impl Fn(&str) -> Result<T, ExportError>,
) -> Result<T, PipelineError> {
    let path = out_dir.join(name);
    let text = read_file(&path)?;
    parse(&text).map_err(|source| PipelineError::Artifact { path, source })
}

/// Stage command: impute missing resolutions from `clusters.csv` and
/// rewrite `resolutions.csv`. Idempotent.
pub fn stage_impute(settings: &Settings) -> Result<ResolutionReport, PipelineError> {
    let out_dir = settings.out_dir()?.to_path_buf();
    let resolutions = read_artifact(&out_dir, "resolutions.csv", read_resolutions_csv)?;
    let clusters = read_artifact(&out_dir, "clusters.csv", read_clusters_csv)?;
    let resolutions = impute(&resolutions, &clusters);
    let report = ResolutionReport::from_resolutions(&resolutions);
    write_file(
        &out_dir.join("resolutions.csv"),
        &write_resolutions_csv(&resolutions),
    )?;
    Ok(report)
}

/// Stage command: clean resolved cells per LAC and write
/// `partitions.geojson`.
pub fn stage_clean(settings: &Settings) -> Result<CleanReport, PipelineError> {
    let out_dir = settings.out_dir()?.to_path_buf();
    let resolutions = read_artifact(&out_dir, "resolutions.csv", read_resolutions_csv)?;
    let resolved: Vec<Resolution> = resolutions
        .iter()
        .filter(|r| r.is_resolved())
        .cloned()
        .collect();
    let (partitions, report) = with_thread_pool(settings.threads, || {
        clean_all(
            &resolved,
            settings.metric,
            settings.prune_distance(),
            settings.min_cluster_size,
        )
    })?;
    write_file(
        &out_dir.join("partitions.geojson"),
        &to_geojson(&features_from_partitions(&partitions, &resolutions)),
    )?;
    let diagnostics: Vec<(Stage, Diagnostic)> = report
        .diagnostics
        .iter()
        .cloned()
        .map(|d| (Stage::Clean, d))
        .collect();
    merge_diagnostics(&out_dir, &[Stage::Clean], diagnostics)?;
    Ok(report)
}

/// Stage command: recompute the summary from the artifacts on disk and
/// write `summary.txt`. Reproduces the monolithic pipeline's bytes.
pub fn stage_report(settings: &Settings) -> Result<String, PipelineError> {
    let out_dir = settings.out_dir()?.to_path_buf();
    let resolutions = read_artifact(&out_dir, "resolutions.csv", read_resolutions_csv)?;
    let resolution_report = ResolutionReport::from_resolutions(&resolutions);

    let clusters_path = out_dir.join("clusters.csv");
    let clusters = if clusters_path.exists() {
        read_artifact(&out_dir, "clusters.csv", read_clusters_csv)?
    } else {
        Vec::new()
    };

    let partitions_path = out_dir.join("partitions.geojson");
    let (clean_report, retention) = if partitions_path.exists() {
        let features = read_artifact(&out_dir, "partitions.geojson", parse_geojson)?;
        let mut clean = CleanReport {
            input_cells: 0,
            kept_cells: 0,
            outliers_removed: 0,
            insufficient_cells: 0,
            diagnostics: Vec::new(),
        };
        let mut after_keys: Vec<CellKey> = Vec::new();
        for feature in &features {
            match feature.cluster {
                Some(ClusterRole::Representative) => {
                    clean.kept_cells += 1;
                    after_keys.push(feature.cell);
                }
                Some(ClusterRole::Outlier) => clean.outliers_removed += 1,
                Some(ClusterRole::InsufficientData) => {
                    clean.insufficient_cells += 1;
                    if settings.keep_insufficient_lacs {
                        after_keys.push(feature.cell);
                    }
                }
                None => {}
            }
        }
        // Coordinates come from resolutions.csv (full precision), with
        // the geojson supplying only the kept/removed roles.
        let before: Vec<(CellKey, GeoPoint)> = resolutions
            .iter()
            .filter_map(|r| r.point.map(|p| (r.cell, p)))
            .collect();
        clean.input_cells = before.len() as u64;
        after_keys.sort();
        let coords: std::collections::HashMap<CellKey, GeoPoint> =
            before.iter().copied().collect();
        let after: Vec<(CellKey, GeoPoint)> = after_keys
            .iter()
            .filter_map(|cell| coords.get(cell).map(|&p| (*cell, p)))
            .collect();
        let retention = if before.is_empty() || after.is_empty() {
            None
        } else {
            Some(retention_report(&before, &after, settings.metric)?)
        };
        (Some(clean), retention)
    } else {
        (None, None)
    };

    let text = summary(&SummaryInputs {
        resolution: Some(resolution_report),
        clean: clean_report.as_ref(),
        retention: retention.as_ref(),
        clusters: &clusters,
    });
    write_file(&out_dir.join("summary.txt"), &text)?;
    Ok(text)
}
