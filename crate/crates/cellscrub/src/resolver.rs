//! Resolves cell keys to coordinates from an indexed cell database and
//! produces retrieval accounting.
//!
//! The (0,0) missing-location sentinel is handled entirely here: ingest
//! preserves it, the index stores it as "known missing", and nothing
//! downstream ever sees it as a coordinate.

use std::collections::{BTreeSet, HashMap};

use crate::geo::{CellKey, GeoPoint};
use crate::ingest::CellDbRow;
use crate::report::{percentage, Diagnostic};

/// Where a resolution's coordinates came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Db,
    SemanticImputed,
    Missing,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Db => "db",
            Source::SemanticImputed => "semantic-imputed",
            Source::Missing => "missing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "db" => Some(Source::Db),
            "semantic-imputed" => Some(Source::SemanticImputed),
            "missing" => Some(Source::Missing),
            _ => None,
        }
    }
}

/// The located (or not-located) outcome for one cell key.
///
/// `point` is present exactly when `source` is `Db` or `SemanticImputed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub cell: CellKey,
    pub point: Option<GeoPoint>,
    pub source: Source,
}

impl Resolution {
    pub fn is_resolved(&self) -> bool {
        self.point.is_some()
    }
}

/// Retrieval accounting in the style of a resolved/imputed/missing table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolutionReport {
    pub total_unique_cells: u64,
    pub resolved_db: u64,
    pub resolved_semantic: u64,
    pub missing: u64,
}

impl ResolutionReport {
    pub fn from_resolutions(resolutions: &[Resolution]) -> Self {
        let mut report = Self {
            total_unique_cells: resolutions.len() as u64,
            resolved_db: 0,
            resolved_semantic: 0,
            missing: 0,
        };
        for r in resolutions {
            match r.source {
                Source::Db => report.resolved_db += 1,
                Source::SemanticImputed => report.resolved_semantic += 1,
                Source::Missing => report.missing += 1,
            }
        }
        report
    }

    pub fn total_resolved(&self) -> u64 {
        self.resolved_db + self.resolved_semantic
    }

    pub fn pct_db(&self) -> f64 {
        percentage(self.resolved_db, self.total_unique_cells)
    }

    pub fn pct_semantic(&self) -> f64 {
        percentage(self.resolved_semantic, self.total_unique_cells)
    }

    pub fn pct_resolved(&self) -> f64 {
        percentage(self.total_resolved(), self.total_unique_cells)
    }

    pub fn pct_missing(&self) -> f64 {
        percentage(self.missing, self.total_unique_cells)
    }
}

/// An indexed record: coordinates, or known-missing via the sentinel.
#[derive(Clone, Copy)]
struct Entry {
    point: Option<GeoPoint>,
    samples: u32,
}

/// Immutable queryable cell-location index.
///
/// Lookups key on (lac, cell_id) for keys without operator information
/// and on the full CGI otherwise. Duplicate keys are resolved by highest
/// samples count, then last row wins.
pub struct CellDatabase {
    by_full: HashMap<CellKey, Entry>,
    by_lac_cell: HashMap<(u32, u32), Entry>,
    diagnostics: Vec<Diagnostic>,
}

impl CellDatabase {
    pub fn len(&self) -> usize {
        self.by_lac_cell.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_lac_cell.is_empty()
    }

    /// Diagnostics recorded while indexing (duplicate-key conflicts).
    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }
}

fn insert_preferring_samples<K: std::hash::Hash + Eq>(
    map: &mut HashMap<K, Entry>,
    key: K,
    entry: Entry,
) -> bool {
    match map.entry(key) {
        std::collections::hash_map::Entry::Vacant(v) => {
            v.insert(entry);
            false
        }
        std::collections::hash_map::Entry::Occupied(mut o) => {
            // Highest samples count wins; ties go to the later row.
            if entry.samples >= o.get().samples {
                o.insert(entry);
            }
            true
        }
    }
}

/// Builds the queryable index from parsed database rows.
pub fn build_index<I: IntoIterator<Item = CellDbRow>>(rows: I) -> CellDatabase {
    let mut db = CellDatabase {
        by_full: HashMap::new(),
        by_lac_cell: HashMap::new(),
        diagnostics: Vec::new(),
    };
    for row in rows {
        let entry = Entry {
            point: row.point(),
            samples: row.samples.unwrap_or(0),
        };
        let duplicate =
            insert_preferring_samples(&mut db.by_lac_cell, (row.cell.lac, row.cell.cell_id), entry);
        if duplicate {
            db.diagnostics.push(Diagnostic::general(format!(
                "duplicate database key for lac {} cell {}; kept highest-samples row",
                row.cell.lac, row.cell.cell_id
            )));
        }
        insert_preferring_samples(&mut db.by_full, row.cell, entry);
    }
    db
}

/// Looks one key up in the index. Pure: repeated calls return identical
/// results.
pub fn resolve(db: &CellDatabase, cell: CellKey) -> Resolution {
    let entry = if cell.has_operator() {
        db.by_full.get(&cell)
    } else {
        db.by_lac_cell.get(&(cell.lac, cell.cell_id))
    };
    match entry.and_then(|e| e.point) {
        Some(point) => Resolution {
            cell,
            point: Some(point),
            source: Source::Db,
        },
        None => Resolution {
            cell,
            point: None,
            source: Source::Missing,
        },
    }
}

/// Resolves a deduplicated set of observed keys, in key order, with
/// retrieval accounting. `resolved_semantic` is zero at this stage; the
/// report is recomputed after imputation.
pub fn resolve_all(db: &CellDatabase, cells: &BTreeSet<CellKey>) -> (Vec<Resolution>, ResolutionReport) {
    let resolutions: Vec<Resolution> = cells.iter().map(|&cell| resolve(db, cell)).collect();
    let report = ResolutionReport::from_resolutions(&resolutions);
    (resolutions, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(lac: u32, cell_id: u32, lat: f64, lon: f64, samples: Option<u32>) -> CellDbRow {
        CellDbRow {
            cell: CellKey::lac_cell(lac, cell_id).unwrap(),
            lon,
            lat,
            range_m: None,
            samples,
        }
    }

    #[test]
    fn single_row_resolves() {
        let db = build_index(vec![row(4120, 110, 42.3601, -71.0921, None)]);
        assert_eq!(db.len(), 1);
        let r = resolve(&db, CellKey::lac_cell(4120, 110).unwrap());
        assert_eq!(r.source, Source::Db);
        assert_eq!(r.point, Some(GeoPoint::new(42.3601, -71.0921).unwrap()));
    }

    #[test]
    fn sentinel_row_is_known_missing() {
        let db = build_index(vec![row(4120, 110, 0.0, 0.0, None)]);
        let r = resolve(&db, CellKey::lac_cell(4120, 110).unwrap());
        assert_eq!(r.source, Source::Missing);
        assert_eq!(r.point, None);
    }

    #[test]
    fn absent_key_is_missing() {
        let db = build_index(vec![]);
        let r = resolve(&db, CellKey::lac_cell(1, 1).unwrap());
        assert_eq!(r.source, Source::Missing);
    }

    #[test]
    fn duplicate_keys_prefer_highest_samples() {
        let db = build_index(vec![
            row(4120, 110, 1.0, 1.0, Some(3)),
            row(4120, 110, 2.0, 2.0, Some(9)),
        ]);
        let r = resolve(&db, CellKey::lac_cell(4120, 110).unwrap());
        assert_eq!(r.point, Some(GeoPoint::new(2.0, 2.0).unwrap()));
        assert_eq!(db.diagnostics().len(), 1);

        // Order independent: higher samples first still wins.
        let db = build_index(vec![
            row(4120, 110, 2.0, 2.0, Some(9)),
            row(4120, 110, 1.0, 1.0, Some(3)),
        ]);
        let r = resolve(&db, CellKey::lac_cell(4120, 110).unwrap());
        assert_eq!(r.point, Some(GeoPoint::new(2.0, 2.0).unwrap()));
    }

    #[test]
    fn duplicate_key_ties_go_to_last_row() {
        let db = build_index(vec![
            row(4120, 110, 1.0, 1.0, Some(3)),
            row(4120, 110, 2.0, 2.0, Some(3)),
        ]);
        let r = resolve(&db, CellKey::lac_cell(4120, 110).unwrap());
        assert_eq!(r.point, Some(GeoPoint::new(2.0, 2.0).unwrap()));
    }

    #[test]
    fn operator_keys_use_the_full_index() {
        let full = CellKey::new(Some(310), Some(26), 4120, 110).unwrap();
        let db = build_index(vec![CellDbRow {
            cell: full,
            lon: -71.0921,
            lat: 42.3601,
            range_m: None,
            samples: None,
        }]);
        assert_eq!(resolve(&db, full).source, Source::Db);
        // Same lac/cell with a different operator does not match.
        let other = CellKey::new(Some(311), Some(26), 4120, 110).unwrap();
        assert_eq!(resolve(&db, other).source, Source::Missing);
        // A bare key falls back to the (lac, cell) index, which has the row.
        let bare = CellKey::lac_cell(4120, 110).unwrap();
        assert_eq!(resolve(&db, bare).source, Source::Db);
    }

    #[test]
    fn resolve_all_counts_and_percentages() {
        let rows: Vec<CellDbRow> = (1..=7)
            .map(|i| row(100, i, 10.0 + i as f64, 20.0, None))
            .collect();
        let db = build_index(rows);
        let cells: BTreeSet<CellKey> =
            (1..=10).map(|i| CellKey::lac_cell(100, i).unwrap()).collect();
        let (resolutions, report) = resolve_all(&db, &cells);
        assert_eq!(resolutions.len(), 10);
        assert_eq!(report.resolved_db, 7);
        assert_eq!(report.resolved_semantic, 0);
        assert_eq!(report.missing, 3);
        assert_eq!(report.pct_db(), 70.0);
        assert_eq!(report.pct_semantic(), 0.0);
        assert_eq!(report.pct_missing(), 30.0);
    }

    #[test]
    fn empty_input_reports_zeros() {
        let db = build_index(vec![]);
        let (resolutions, report) = resolve_all(&db, &BTreeSet::new());
        assert!(resolutions.is_empty());
        assert_eq!(report.total_unique_cells, 0);
        assert_eq!(report.pct_db(), 0.0);
        assert_eq!(report.pct_missing(), 0.0);
    }

    proptest! {
        #[test]
        fn every_key_appears_exactly_once_in_order(
            keys in proptest::collection::btree_set((1u32..50, 1u32..50), 0..40),
            db_keys in proptest::collection::vec((1u32..50, 1u32..50), 0..40),
        ) {
            let rows: Vec<CellDbRow> = db_keys
                .iter()
                .map(|&(lac, cell)| row(lac, cell, 5.0, 5.0, None))
                .collect();
            let db = build_index(rows);
            let cells: BTreeSet<CellKey> = keys
                .iter()
                .map(|&(lac, cell)| CellKey::lac_cell(lac, cell).unwrap())
                .collect();
            let (resolutions, report) = resolve_all(&db, &cells);
            prop_assert_eq!(resolutions.len(), cells.len());
            let mut seen: Vec<CellKey> = resolutions.iter().map(|r| r.cell).collect();
            let ordered = seen.clone();
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), cells.len());
            prop_assert_eq!(ordered, cells.iter().copied().collect::<Vec<_>>());
            prop_assert_eq!(
                report.resolved_db + report.resolved_semantic + report.missing,
                report.total_unique_cells
            );
        }
    }
}
