//! Deterministic synthetic GSM networks and traces: desk-scale ground
//! truth for end-to-end tests, with planted outliers, missing cells and
//! cell oscillation recorded in a manifest.
//!
//! All randomness comes from [`SplitMix64`] so that every artifact is
//! reproducible from the seed across platforms and implementations.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use thiserror::Error;

use crate::geo::{geo_distance, CellKey, GeoPoint, MetricMode, METERS_PER_DEGREE};
use crate::ingest::{
    write_cellnames_csv, write_observations_csv, CellDbRow, Observation,
};

/// SplitMix64 (Steele, Lea & Flood; the generator behind Java's
/// `SplittableRandom`). State advances by the golden-gamma constant
/// 0x9E3779B97F4A7C15 and the output mix uses the standard
/// 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB multipliers. Seeding is the
/// raw 64-bit seed; floats take the top 53 bits.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in [0, n) via the multiply-shift reduction.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Fisher-Yates shuffle driven by `below`.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            slice.swap(i, j);
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("not enough cells per LAC for {places} places of {cells_each} cells")]
    NotEnoughCells { places: usize, cells_each: usize },
}

/// Generator parameters. `lac_radius_m` respects the 35 km cap on what a
/// GSM cell may span.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_lacs: usize,
    pub cells_per_lac: usize,
    pub lac_radius_m: f64,
    pub n_semantic_places: usize,
    pub outlier_rate: f64,
    pub outlier_min_km: f64,
    pub missing_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_lacs: 8,
            cells_per_lac: 40,
            lac_radius_m: 2_000.0,
            n_semantic_places: 8,
            outlier_rate: 0.05,
            outlier_min_km: 50.0,
            missing_rate: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: &str| Err(SynthError::InvalidConfig(msg.to_string()));
        if self.n_lacs == 0 || self.cells_per_lac == 0 {
            return fail("n_lacs and cells_per_lac must be at least 1");
        }
        if !(self.lac_radius_m > 0.0 && self.lac_radius_m <= 35_000.0) {
            return fail("lac_radius_m must be in (0, 35000]");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) || !(0.0..=1.0).contains(&self.missing_rate) {
            return fail("rates must be in [0, 1]");
        }
        if !(self.outlier_min_km > 0.0 && self.outlier_min_km <= 2_000.0) {
            return fail("outlier_min_km must be in (0, 2000]");
        }
        let total = self.n_lacs * self.cells_per_lac;
        if round_count(self.missing_rate, total) + round_count(self.outlier_rate, total) > total {
            return fail("missing_rate + outlier_rate select more cells than exist");
        }
        Ok(())
    }

    /// Builds a config from flat `key = value` entries, starting from
    /// defaults. Unknown keys are rejected.
    pub fn from_entries<'a, I>(entries: I) -> Result<Self, SynthError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut cfg = Self::default();
        for (key, value) in entries {
            let bad =
                |k: &str, v: &str| SynthError::InvalidConfig(format!("bad value `{v}` for {k}"));
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key, value))?,
                "n_lacs" => cfg.n_lacs = value.parse().map_err(|_| bad(key, value))?,
                "cells_per_lac" => cfg.cells_per_lac = value.parse().map_err(|_| bad(key, value))?,
                "lac_radius_m" => cfg.lac_radius_m = value.parse().map_err(|_| bad(key, value))?,
                "n_semantic_places" => {
                    cfg.n_semantic_places = value.parse().map_err(|_| bad(key, value))?
                }
                "outlier_rate" => cfg.outlier_rate = value.parse().map_err(|_| bad(key, value))?,
                "outlier_min_km" => {
                    cfg.outlier_min_km = value.parse().map_err(|_| bad(key, value))?
                }
                "missing_rate" => cfg.missing_rate = value.parse().map_err(|_| bad(key, value))?,
                other => {
                    return Err(SynthError::InvalidConfig(format!(
                        "unknown config key `{other}`"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Nearest integer with halves rounding up; used for planting counts.
pub fn round_count(rate: f64, total: usize) -> usize {
    (rate * total as f64 + 0.5).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantKind {
    Clean,
    Outlier,
    Missing,
}

impl PlantKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlantKind::Clean => "clean",
            PlantKind::Outlier => "outlier",
            PlantKind::Missing => "missing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clean" => Some(PlantKind::Clean),
            "outlier" => Some(PlantKind::Outlier),
            "missing" => Some(PlantKind::Missing),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub cell: CellKey,
    pub kind: PlantKind,
}

/// A generated network: true cell positions, the (corrupted) database
/// rows derived from them, and the manifest of planted corruption.
#[derive(Debug, Clone)]
pub struct Network {
    pub truth: BTreeMap<CellKey, GeoPoint>,
    pub db_rows: Vec<CellDbRow>,
    pub manifest: Vec<ManifestEntry>,
}

impl Network {
    pub fn manifest_csv(&self) -> String {
        write_manifest_csv(&self.manifest)
    }

    /// Cells grouped per LAC, key-ascending.
    pub fn cells_by_lac(&self) -> BTreeMap<u32, Vec<CellKey>> {
        let mut by_lac: BTreeMap<u32, Vec<CellKey>> = BTreeMap::new();
        for &cell in self.truth.keys() {
            by_lac.entry(cell.lac).or_default().push(cell);
        }
        by_lac
    }
}

pub const MANIFEST_HEADER: &str = "cell_lac,cell_id,kind";

pub fn write_manifest_csv(manifest: &[ManifestEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for entry in manifest {
        out.push_str(&format!(
            "{},{},{}\n",
            entry.cell.lac,
            entry.cell.cell_id,
            entry.kind.as_str()
        ));
    }
    out
}

/// Scatters a point uniformly within `radius_m` of a center.
fn scatter(rng: &mut SplitMix64, center: GeoPoint, radius_m: f64) -> GeoPoint {
    let r = radius_m * rng.next_f64().sqrt();
    let theta = rng.range_f64(0.0, std::f64::consts::TAU);
    offset(center, r * theta.cos(), r * theta.sin())
}

/// Offsets a point north/east by meters, in the local tangent frame.
fn offset(origin: GeoPoint, north_m: f64, east_m: f64) -> GeoPoint {
    let lat = origin.lat() + north_m / METERS_PER_DEGREE;
    let lon = origin.lon() + east_m / (METERS_PER_DEGREE * origin.lat().to_radians().cos());
    GeoPoint::new(lat, lon).expect("offset stayed in range by construction")
}

/// Generates a network: LAC centers scattered globally, cells uniform
/// within each LAC's radius, then the configured fractions of database
/// rows displaced (outliers) or replaced by the (0,0) sentinel / omitted
/// (missing).
pub fn gen_network(cfg: &SynthConfig) -> Result<Network, SynthError> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);

    // Center bounds keep every cell and displaced outlier in coordinate
    // range, and keep intra-LAC distances within the 35 km cap even with
    // the equirectangular east-west distortion at higher latitudes.
    let mut truth: BTreeMap<CellKey, GeoPoint> = BTreeMap::new();
    for lac_idx in 0..cfg.n_lacs {
        let lac = 1001 + lac_idx as u32;
        let center = GeoPoint::new(rng.range_f64(-50.0, 50.0), rng.range_f64(-150.0, 150.0))
            .expect("center bounds are valid");
        for cell_id in 1..=cfg.cells_per_lac as u32 {
            let cell = CellKey::lac_cell(lac, cell_id).expect("ids start at 1");
            truth.insert(cell, scatter(&mut rng, center, cfg.lac_radius_m * 0.98));
        }
    }

    let total = cfg.n_lacs * cfg.cells_per_lac;
    let n_missing = round_count(cfg.missing_rate, total);
    let n_outlier = round_count(cfg.outlier_rate, total);
    let mut order: Vec<CellKey> = truth.keys().copied().collect();
    rng.shuffle(&mut order);
    let mut kinds: BTreeMap<CellKey, PlantKind> =
        order.iter().map(|&c| (c, PlantKind::Clean)).collect();
    for &cell in &order[..n_missing] {
        kinds.insert(cell, PlantKind::Missing);
    }
    for &cell in &order[n_missing..n_missing + n_outlier] {
        kinds.insert(cell, PlantKind::Outlier);
    }

    let mut db_rows = Vec::new();
    let mut manifest = Vec::new();
    for (&cell, &point) in &truth {
        let kind = kinds[&cell];
        manifest.push(ManifestEntry { cell, kind });
        match kind {
            PlantKind::Clean => db_rows.push(CellDbRow {
                cell,
                lon: point.lon(),
                lat: point.lat(),
                range_m: Some(500 + rng.below(2_000) as u32),
                samples: Some(1 + rng.below(50) as u32),
            }),
            PlantKind::Outlier => {
                let displaced = displace(&mut rng, point, cfg.outlier_min_km);
                db_rows.push(CellDbRow {
                    cell,
                    lon: displaced.lon(),
                    lat: displaced.lat(),
                    range_m: Some(500 + rng.below(2_000) as u32),
                    samples: Some(1 + rng.below(50) as u32),
                });
            }
            PlantKind::Missing => {
                // Half sentinel rows, half rows absent from the database.
                if rng.below(2) == 0 {
                    db_rows.push(CellDbRow {
                        cell,
                        lon: 0.0,
                        lat: 0.0,
                        range_m: None,
                        samples: None,
                    });
                }
            }
        }
    }

    Ok(Network {
        truth,
        db_rows,
        manifest,
    })
}

/// Displaces a point by at least `min_km` (targeting at most twice
/// that), retrying until the candidate stays in coordinate range and its
/// measured distance honors the minimum.
fn displace(rng: &mut SplitMix64, origin: GeoPoint, min_km: f64) -> GeoPoint {
    loop {
        let d = rng.range_f64(1.2 * min_km, 2.0 * min_km) * 1_000.0;
        let theta = rng.range_f64(0.0, std::f64::consts::TAU);
        let north = d * theta.cos();
        let east = d * theta.sin();
        let lat = origin.lat() + north / METERS_PER_DEGREE;
        let lon =
            origin.lon() + east / (METERS_PER_DEGREE * origin.lat().to_radians().cos());
        if let Ok(p) = GeoPoint::new(lat, lon) {
            if geo_distance(origin, p, MetricMode::GeodesicMeters) >= min_km * 1_000.0 {
                return p;
            }
        }
    }
}

/// One planted stretch of a generated trace.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantedSegment {
    /// Back-and-forth between two co-tagged cells of one place; a
    /// stationary handset under cell oscillation.
    Oscillation {
        pair: (CellKey, CellKey),
        label: String,
        /// Observation index range, inclusive start, exclusive end.
        range: (usize, usize),
    },
    /// Genuine movement across distinct cells.
    Movement { range: (usize, usize) },
}

/// A generated trace with its tag table and planted-segment manifest.
#[derive(Debug, Clone)]
pub struct TraceBundle {
    pub observations: Vec<Observation>,
    pub cellnames: Vec<(CellKey, String)>,
    pub segments: Vec<PlantedSegment>,
}

impl TraceBundle {
    pub fn observations_csv(&self) -> String {
        write_observations_csv(&self.observations)
    }

    pub fn cellnames_csv(&self) -> String {
        write_cellnames_csv(&self.cellnames)
    }

    /// Planted segments as CSV: movement rows leave the pair and label
    /// columns empty.
    pub fn segments_csv(&self) -> String {
        let mut out = String::from("kind,start,end,lac_a,cell_a,lac_b,cell_b,label\n");
        for segment in &self.segments {
            match segment {
                PlantedSegment::Oscillation { pair, label, range } => {
                    out.push_str(&format!(
                        "oscillation,{},{},{},{},{},{},{}\n",
                        range.0, range.1, pair.0.lac, pair.0.cell_id, pair.1.lac,
                        pair.1.cell_id, label
                    ));
                }
                PlantedSegment::Movement { range } => {
                    out.push_str(&format!("movement,{},{},,,,,\n", range.0, range.1));
                }
            }
        }
        out
    }
}

const PLACE_CELLS: usize = 4;
const TRACE_EPOCH_S: i64 = 1_094_025_600; // 2004-09-01T08:00:00Z

/// Generates a user trace over the network: the user dwells at each
/// semantic place (oscillating among its co-located cells) and moves
/// across other cells in between. Tags attach to a subset of the dwell
/// observations; the tag table maps every place cell to its label.
pub fn gen_trace(network: &Network, cfg: &SynthConfig, seed: u64) -> Result<TraceBundle, SynthError> {
    let mut rng = SplitMix64::new(seed);
    let by_lac = network.cells_by_lac();
    let lacs: Vec<u32> = by_lac.keys().copied().collect();
    if cfg.n_semantic_places > 0 {
        let places_per_lac = cfg.n_semantic_places.div_ceil(lacs.len());
        if places_per_lac * PLACE_CELLS > cfg.cells_per_lac {
            return Err(SynthError::NotEnoughCells {
                places: cfg.n_semantic_places,
                cells_each: PLACE_CELLS,
            });
        }
    }

    // Assign place cells round-robin over LACs, consuming each LAC's
    // cells from the front.
    let mut cursor: BTreeMap<u32, usize> = lacs.iter().map(|&l| (l, 0)).collect();
    let mut places: Vec<(String, Vec<CellKey>)> = Vec::new();
    let mut cellnames = Vec::new();
    for place_idx in 0..cfg.n_semantic_places {
        let lac = lacs[place_idx % lacs.len()];
        let start = cursor[&lac];
        let cells = by_lac[&lac][start..start + PLACE_CELLS].to_vec();
        cursor.insert(lac, start + PLACE_CELLS);
        let label = format!("place-{:02}", place_idx + 1);
        for &cell in &cells {
            cellnames.push((cell, label.clone()));
        }
        places.push((label, cells));
    }

    // Movement pool: cells not claimed by any place.
    let mut pool: Vec<CellKey> = Vec::new();
    for (&lac, cells) in &by_lac {
        pool.extend_from_slice(&cells[cursor[&lac]..]);
    }
    let mut pool_at = 0usize;

    let mut observations: Vec<Observation> = Vec::new();
    let mut segments = Vec::new();
    let mut now = DateTime::<Utc>::from_timestamp(TRACE_EPOCH_S, 0).expect("fixed epoch");
    let mut push = |observations: &mut Vec<Observation>, now: &mut DateTime<Utc>,
                    cell: CellKey, tag: Option<String>, dt_s: u64| {
        observations.push(Observation {
            timestamp: *now,
            cell,
            tag,
        });
        *now += Duration::seconds(dt_s as i64);
    };

    for (label, cells) in &places {
        // Dwell: oscillate between two of the place's cells, fast enough
        // that every return falls inside a 300 s window.
        let a = cells[rng.below(cells.len() as u64) as usize];
        let b = loop {
            let candidate = cells[rng.below(cells.len() as u64) as usize];
            if candidate != a {
                break candidate;
            }
        };
        let start = observations.len();
        let hops = 5 + 2 * rng.below(4) as usize;
        for i in 0..hops {
            let cell = if i % 2 == 0 { a } else { b };
            let tag = (rng.below(2) == 0).then(|| label.clone());
            push(&mut observations, &mut now, cell, tag, 20 + rng.below(20));
        }
        segments.push(PlantedSegment::Oscillation {
            pair: (a.min(b), a.max(b)),
            label: label.clone(),
            range: (start, observations.len()),
        });

        // Movement: a run of distinct cells, no immediate returns.
        if pool.len() >= 3 {
            let start = observations.len();
            let hops = 3 + rng.below(4) as usize;
            for _ in 0..hops {
                let cell = pool[pool_at % pool.len()];
                pool_at += 1;
                push(&mut observations, &mut now, cell, None, 45 + rng.below(60));
            }
            segments.push(PlantedSegment::Movement {
                range: (start, observations.len()),
            });
        }
    }

    Ok(TraceBundle {
        observations,
        cellnames,
        segments,
    })
}

/// Expected pipeline counts for the reality-mining-shaped fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureExpectation {
    pub total_unique_cells: u64,
    pub resolved_db: u64,
    pub resolved_semantic: u64,
    pub total_resolved: u64,
    pub planted_outliers: u64,
    pub kept_after_cleaning: u64,
}

/// A complete checked-in test scenario: network, trace and expectations.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub truth: BTreeMap<CellKey, GeoPoint>,
    pub db_rows: Vec<CellDbRow>,
    pub manifest: Vec<ManifestEntry>,
    pub trace: TraceBundle,
    pub expectation: FixtureExpectation,
}

/// Cleaning parameters the fixture is constructed for.
pub const FIXTURE_PRUNE_KM: f64 = 5.0;
pub const FIXTURE_MIN_CLUSTER_SIZE: usize = 10;

const FIXTURE_LACS: usize = 16;
const FIXTURE_RESOLVED_PER_LAC: usize = 48;
const FIXTURE_UNRESOLVED_PER_LAC: usize = 61;
const FIXTURE_LAC_RADIUS_M: f64 = 2_000.0;
const FIXTURE_OUTLIER_MIN_KM: f64 = 50.0;

/// Builds the reality-mining-shaped fixture: 1744 unique observed cells
/// of which 680 resolve from the database, 88 impute from semantic tags
/// (768 resolved in total), with 70 planted spatial outliers so that
/// cleaning at the fixture's prune distance keeps exactly 698 cells.
///
/// Counts are fixed by construction; the seed only varies the geometry
/// and orderings.
pub fn reality_mining_fixture(seed: u64) -> Fixture {
    let mut rng = SplitMix64::new(seed);

    // Per-LAC corruption quotas: 70 outliers and 88 imputable cells
    // spread over 16 LACs of 48 resolved cells each.
    let outliers_in = |lac_idx: usize| if lac_idx < 6 { 5 } else { 4 };
    let imputed_in = |lac_idx: usize| if lac_idx < 8 { 6 } else { 5 };

    #[derive(Clone, Copy, PartialEq)]
    enum Role {
        CleanDb,
        Outlier,
        Imputable,
        Unresolved,
    }

    let mut truth = BTreeMap::new();
    let mut db_rows = Vec::new();
    let mut manifest = Vec::new();
    let mut cellnames = Vec::new();
    let mut observations = Vec::new();
    let mut segments = Vec::new();
    let mut now = DateTime::<Utc>::from_timestamp(TRACE_EPOCH_S, 0).expect("fixed epoch");

    for lac_idx in 0..FIXTURE_LACS {
        let lac = 2001 + lac_idx as u32;
        let center = GeoPoint::new(
            rng.range_f64(-50.0, 50.0),
            rng.range_f64(-150.0, 150.0),
        )
        .expect("center bounds are valid");

        let n_outlier = outliers_in(lac_idx);
        let n_imputed = imputed_in(lac_idx);
        let n_clean = FIXTURE_RESOLVED_PER_LAC - n_outlier - n_imputed;
        let mut roles = Vec::new();
        roles.extend(std::iter::repeat_n(Role::CleanDb, n_clean));
        roles.extend(std::iter::repeat_n(Role::Outlier, n_outlier));
        roles.extend(std::iter::repeat_n(Role::Imputable, n_imputed));
        roles.extend(std::iter::repeat_n(Role::Unresolved, FIXTURE_UNRESOLVED_PER_LAC));
        rng.shuffle(&mut roles);

        let mut clean_cells = Vec::new();
        let mut imputable_cells = Vec::new();
        for (offset_id, &role) in roles.iter().enumerate() {
            let cell = CellKey::lac_cell(lac, offset_id as u32 + 1).expect("ids start at 1");
            let point = scatter(&mut rng, center, FIXTURE_LAC_RADIUS_M);
            truth.insert(cell, point);
            match role {
                Role::CleanDb => {
                    clean_cells.push(cell);
                    manifest.push(ManifestEntry { cell, kind: PlantKind::Clean });
                    db_rows.push(CellDbRow {
                        cell,
                        lon: point.lon(),
                        lat: point.lat(),
                        range_m: Some(500 + rng.below(2_000) as u32),
                        samples: Some(1 + rng.below(50) as u32),
                    });
                }
                Role::Outlier => {
                    manifest.push(ManifestEntry { cell, kind: PlantKind::Outlier });
                    let displaced = displace(&mut rng, point, FIXTURE_OUTLIER_MIN_KM);
                    db_rows.push(CellDbRow {
                        cell,
                        lon: displaced.lon(),
                        lat: displaced.lat(),
                        range_m: Some(500 + rng.below(2_000) as u32),
                        samples: Some(1 + rng.below(50) as u32),
                    });
                }
                Role::Imputable => {
                    imputable_cells.push(cell);
                    manifest.push(ManifestEntry { cell, kind: PlantKind::Missing });
                    // The database knows these keys but returned the
                    // missing sentinel for them.
                    db_rows.push(CellDbRow {
                        cell,
                        lon: 0.0,
                        lat: 0.0,
                        range_m: None,
                        samples: None,
                    });
                }
                Role::Unresolved => {
                    manifest.push(ManifestEntry { cell, kind: PlantKind::Missing });
                    if offset_id % 2 == 0 {
                        db_rows.push(CellDbRow {
                            cell,
                            lon: 0.0,
                            lat: 0.0,
                            range_m: None,
                            samples: None,
                        });
                    }
                }
            }
        }

        // Two tagged places per LAC: one holding the imputable cells plus
        // clean donors, one purely clean (varied incidence for reports).
        let label_a = format!("place-{:02}", 2 * lac_idx + 1);
        let label_b = format!("place-{:02}", 2 * lac_idx + 2);
        let donors = &clean_cells[..3];
        let place_a: Vec<CellKey> = imputable_cells
            .iter()
            .chain(donors.iter())
            .copied()
            .collect();
        let place_b: Vec<CellKey> = clean_cells[3..7].to_vec();
        for &cell in &place_a {
            cellnames.push((cell, label_a.clone()));
        }
        for &cell in &place_b {
            cellnames.push((cell, label_b.clone()));
        }

        // Trace through this LAC: dwell at place A with oscillation, then
        // sweep every remaining cell so all 109 appear in the log.
        let pair = (place_a[0].min(donors[0]), place_a[0].max(donors[0]));
        let start = observations.len();
        for i in 0..7 {
            let cell = if i % 2 == 0 { pair.0 } else { pair.1 };
            let tag = (i % 2 == 0).then(|| label_a.clone());
            observations.push(Observation {
                timestamp: now,
                cell,
                tag,
            });
            now += Duration::seconds(30);
        }
        segments.push(PlantedSegment::Oscillation {
            pair,
            label: label_a.clone(),
            range: (start, observations.len()),
        });
        let start = observations.len();
        for offset_id in 0..roles.len() {
            let cell = CellKey::lac_cell(lac, offset_id as u32 + 1).expect("ids start at 1");
            if cell == pair.0 || cell == pair.1 {
                continue;
            }
            observations.push(Observation {
                timestamp: now,
                cell,
                tag: None,
            });
            now += Duration::seconds(60);
        }
        segments.push(PlantedSegment::Movement {
            range: (start, observations.len()),
        });
    }

    let total = (FIXTURE_LACS * (FIXTURE_RESOLVED_PER_LAC + FIXTURE_UNRESOLVED_PER_LAC)) as u64;
    let planted_outliers: u64 = (0..FIXTURE_LACS).map(|i| outliers_in(i) as u64).sum();
    let resolved_semantic: u64 = (0..FIXTURE_LACS).map(|i| imputed_in(i) as u64).sum();
    let resolved_db = FIXTURE_LACS as u64 * FIXTURE_RESOLVED_PER_LAC as u64 - resolved_semantic;
    Fixture {
        truth,
        db_rows,
        manifest,
        trace: TraceBundle {
            observations,
            cellnames,
            segments,
        },
        expectation: FixtureExpectation {
            total_unique_cells: total,
            resolved_db,
            resolved_semantic,
            total_resolved: resolved_db + resolved_semantic,
            planted_outliers,
            kept_after_cleaning: resolved_db + resolved_semantic - planted_outliers,
        },
    }
}
