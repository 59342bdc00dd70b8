//! Semantic-tag clustering: groups cells by user place label, counts
//! per-cell frequencies and incidence, imputes missing coordinates from
//! co-tagged neighbors, and checks oscillation pairs for stationarity.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::geo::{CellKey, GeoPoint};
use crate::ingest::Observation;
use crate::resolver::{Resolution, Source};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("trace is not sorted by timestamp (violation at index {index})")]
    UnsortedTrace { index: usize },
    #[error("oscillation window must be positive")]
    InvalidWindow,
}

/// A cell's weight inside one semantic cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterMember {
    pub cell: CellKey,
    /// Appearances of this cell in the tagged data for the label.
    pub frequency: u64,
}

/// One tagged location: its cells sorted by frequency descending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticCluster {
    pub label: String,
    /// Sorted by (frequency descending, cell ascending); no duplicates.
    pub members: Vec<ClusterMember>,
}

impl SemanticCluster {
    /// Number of distinct cells associated with the location.
    pub fn incidence(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, cell: CellKey) -> bool {
        self.members.iter().any(|m| m.cell == cell)
    }
}

/// Extracts (cell, label) pairs from the tagged subset of a trace, for
/// pipelines that count frequency over observations rather than the tag
/// table.
pub fn tag_pairs(observations: &[Observation]) -> Vec<(CellKey, String)> {
    observations
        .iter()
        .filter_map(|obs| obs.tag.as_ref().map(|tag| (obs.cell, tag.clone())))
        .collect()
}

/// Groups tagged cells into one cluster per distinct label.
///
/// Each appearance of a (cell, label) pair counts toward the cell's
/// frequency. Clusters come out ordered by label ascending; a cell may
/// appear in any number of clusters.
pub fn build_semantic_clusters<I>(tags: I) -> Vec<SemanticCluster>
where
    I: IntoIterator<Item = (CellKey, String)>,
{
    let mut counts: BTreeMap<String, BTreeMap<CellKey, u64>> = BTreeMap::new();
    for (cell, label) in tags {
        *counts.entry(label).or_default().entry(cell).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(label, cells)| {
            let mut members: Vec<ClusterMember> = cells
                .into_iter()
                .map(|(cell, frequency)| ClusterMember { cell, frequency })
                .collect();
            members.sort_by(|a, b| b.frequency.cmp(&a.frequency).then(a.cell.cmp(&b.cell)));
            SemanticCluster { label, members }
        })
        .collect()
}

/// For every cell, the number of distinct labels whose cluster contains it.
pub fn cell_incidence(clusters: &[SemanticCluster]) -> BTreeMap<CellKey, u64> {
    let mut counts: BTreeMap<CellKey, u64> = BTreeMap::new();
    for cluster in clusters {
        for member in &cluster.members {
            *counts.entry(member.cell).or_insert(0) += 1;
        }
    }
    counts
}

/// Significance order: highest incidence first, ties by label ascending.
fn significance(a: &SemanticCluster, b: &SemanticCluster) -> std::cmp::Ordering {
    b.incidence()
        .cmp(&a.incidence())
        .then_with(|| a.label.cmp(&b.label))
}

/// Picks the most significant cluster from candidates.
fn most_significant<'a, I>(candidates: I) -> Option<&'a SemanticCluster>
where
    I: IntoIterator<Item = &'a SemanticCluster>,
{
    candidates.into_iter().min_by(|a, b| significance(a, b))
}

/// Fills missing resolutions from co-tagged database-resolved neighbors.
///
/// For a missing cell that shares at least one cluster with at least one
/// db-resolved cell, the donor cluster is the one with highest incidence
/// (ties: label ascending) and the donor cell is that cluster's
/// db-resolved member with highest frequency (ties: cell ascending). The
/// missing resolution takes the donor's coordinates with source
/// `semantic-imputed`. Db-resolved resolutions are never modified and
/// output order equals input order.
pub fn impute(resolutions: &[Resolution], clusters: &[SemanticCluster]) -> Vec<Resolution> {
    let db_points: HashMap<CellKey, GeoPoint> = resolutions
        .iter()
        .filter(|r| r.source == Source::Db)
        .filter_map(|r| r.point.map(|p| (r.cell, p)))
        .collect();

    // Donor per cluster: members are already in donor-preference order.
    let donors: Vec<Option<GeoPoint>> = clusters
        .iter()
        .map(|cluster| {
            cluster
                .members
                .iter()
                .find_map(|m| db_points.get(&m.cell).copied())
        })
        .collect();

    resolutions
        .iter()
        .map(|resolution| {
            if resolution.source != Source::Missing {
                return resolution.clone();
            }
            let best = clusters
                .iter()
                .zip(&donors)
                .filter(|(cluster, donor)| donor.is_some() && cluster.contains(resolution.cell))
                .min_by(|(a, _), (b, _)| significance(a, b));
            match best {
                Some((_, donor)) => Resolution {
                    cell: resolution.cell,
                    point: *donor,
                    source: Source::SemanticImputed,
                },
                None => resolution.clone(),
            }
        })
        .collect()
}

/// A detected back-and-forth pair and its stationarity check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OscillationVerdict {
    /// The two cells, ordered ascending.
    pub pair: (CellKey, CellKey),
    /// Number of A→B→A returns observed within the window, accumulated
    /// over the whole trace.
    pub switch_count: u64,
    /// A cluster containing both cells, when one exists (the most
    /// significant such cluster).
    pub co_cluster: Option<String>,
}

impl OscillationVerdict {
    /// The handset is judged stationary when some single cluster contains
    /// both cells of the pair.
    pub fn stationary(&self) -> bool {
        self.co_cluster.is_some()
    }
}

/// Scans a time-ordered trace for oscillation pairs.
///
/// A pattern A→B→A whose three observations span at most `window_s`
/// seconds counts as one back-and-forth switch for the pair (A,B).
/// Verdicts come out ordered by pair.
pub fn detect_oscillation(
    trace: &[Observation],
    clusters: &[SemanticCluster],
    window_s: u64,
) -> Result<Vec<OscillationVerdict>, SemanticError> {
    if window_s == 0 {
        return Err(SemanticError::InvalidWindow);
    }
    for (index, pair) in trace.windows(2).enumerate() {
        if pair[1].timestamp < pair[0].timestamp {
            return Err(SemanticError::UnsortedTrace { index: index + 1 });
        }
    }
    let window = chrono::Duration::seconds(window_s as i64);
    let mut switches: BTreeMap<(CellKey, CellKey), u64> = BTreeMap::new();
    for triple in trace.windows(3) {
        let (a, b, c) = (triple[0].cell, triple[1].cell, triple[2].cell);
        if a == c && a != b && triple[2].timestamp - triple[0].timestamp <= window {
            let pair = (a.min(b), a.max(b));
            *switches.entry(pair).or_insert(0) += 1;
        }
    }
    Ok(switches
        .into_iter()
        .map(|(pair, switch_count)| {
            let co_cluster = most_significant(
                clusters
                    .iter()
                    .filter(|c| c.contains(pair.0) && c.contains(pair.1)),
            )
            .map(|c| c.label.clone());
            OscillationVerdict {
                pair,
                switch_count,
                co_cluster,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Utc};
    use proptest::prelude::*;

    fn key(lac: u32, cell: u32) -> CellKey {
        CellKey::lac_cell(lac, cell).unwrap()
    }

    fn point(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn obs(secs: i64, cell: CellKey) -> Observation {
        Observation {
            timestamp: DateTime::<Utc>::from_timestamp(secs, 0).unwrap(),
            cell,
            tag: None,
        }
    }

    #[test]
    fn clusters_count_incidence_per_label() {
        let tags: Vec<(CellKey, String)> = (1..=4)
            .map(|i| (key(10, i), "Home".to_string()))
            .chain((1..=5).map(|i| (key(20, i), "Mgh".to_string())))
            .collect();
        let clusters = build_semantic_clusters(tags);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].label, "Home");
        assert_eq!(clusters[0].incidence(), 4);
        assert_eq!(clusters[1].label, "Mgh");
        assert_eq!(clusters[1].incidence(), 5);
    }

    #[test]
    fn members_sort_by_frequency_then_key() {
        let c = key(10, 1);
        let d = key(10, 2);
        let tags = vec![
            (c, "Home".to_string()),
            (c, "Home".to_string()),
            (d, "Home".to_string()),
            (c, "Home".to_string()),
        ];
        let clusters = build_semantic_clusters(tags);
        assert_eq!(
            clusters[0].members,
            vec![
                ClusterMember { cell: c, frequency: 3 },
                ClusterMember { cell: d, frequency: 1 },
            ]
        );
    }

    #[test]
    fn incidence_counts_distinct_labels() {
        let shared = key(10, 1);
        let mut tags: Vec<(CellKey, String)> = (0..7)
            .map(|i| (shared, format!("loc-{i}")))
            .collect();
        tags.push((key(10, 2), "loc-0".to_string()));
        let clusters = build_semantic_clusters(tags);
        let incidence = cell_incidence(&clusters);
        assert_eq!(incidence[&shared], 7);
        assert_eq!(incidence[&key(10, 2)], 1);
    }

    #[test]
    fn incidence_on_hand_built_three_cluster_fixture() {
        // One cell shared by all three clusters, every other cell unique.
        let shared = key(10, 1);
        let tags = vec![
            (shared, "a".to_string()),
            (key(10, 2), "a".to_string()),
            (shared, "b".to_string()),
            (key(10, 3), "b".to_string()),
            (shared, "c".to_string()),
            (key(10, 4), "c".to_string()),
        ];
        let incidence = cell_incidence(&build_semantic_clusters(tags));
        assert_eq!(incidence[&shared], 3);
        for cell in [key(10, 2), key(10, 3), key(10, 4)] {
            assert_eq!(incidence[&cell], 1);
        }
    }

    fn resolution(cell: CellKey, point_opt: Option<GeoPoint>, source: Source) -> Resolution {
        Resolution {
            cell,
            point: point_opt,
            source,
        }
    }

    #[test]
    fn imputes_from_co_clustered_neighbor() {
        let missing = key(10, 1);
        let donor = key(10, 2);
        let donor_point = point(42.36, -71.09);
        let clusters = build_semantic_clusters(vec![
            (missing, "Home".to_string()),
            (donor, "Home".to_string()),
        ]);
        let resolutions = vec![
            resolution(missing, None, Source::Missing),
            resolution(donor, Some(donor_point), Source::Db),
        ];
        let imputed = impute(&resolutions, &clusters);
        assert_eq!(imputed[0].source, Source::SemanticImputed);
        assert_eq!(imputed[0].point, Some(donor_point));
        assert_eq!(imputed[1], resolutions[1]);
    }

    #[test]
    fn unclustered_missing_cell_stays_missing() {
        let clusters = build_semantic_clusters(vec![(key(10, 2), "Home".to_string())]);
        let resolutions = vec![resolution(key(10, 1), None, Source::Missing)];
        let imputed = impute(&resolutions, &clusters);
        assert_eq!(imputed, resolutions);
    }

    #[test]
    fn donor_cluster_is_highest_incidence_then_label() {
        let missing = key(10, 1);
        let sparse_donor = key(10, 2);
        let dense_donor = key(10, 3);
        let mut tags = vec![
            (missing, "sparse".to_string()),
            (sparse_donor, "sparse".to_string()),
            (missing, "dense".to_string()),
            (dense_donor, "dense".to_string()),
        ];
        // Pad the dense cluster to incidence 4.
        for i in 10..12 {
            tags.push((key(10, i), "dense".to_string()));
        }
        let clusters = build_semantic_clusters(tags);
        let resolutions = vec![
            resolution(missing, None, Source::Missing),
            resolution(sparse_donor, Some(point(1.0, 1.0)), Source::Db),
            resolution(dense_donor, Some(point(2.0, 2.0)), Source::Db),
        ];
        let imputed = impute(&resolutions, &clusters);
        assert_eq!(imputed[0].point, Some(point(2.0, 2.0)));
    }

    #[test]
    fn donor_member_is_highest_frequency_db_cell() {
        let missing = key(10, 1);
        let low = key(10, 2);
        let high = key(10, 3);
        let unresolved = key(10, 4);
        let tags = vec![
            (missing, "Home".to_string()),
            (low, "Home".to_string()),
            // `unresolved` has the top frequency but no db coordinates,
            // so the donor search skips it.
            (unresolved, "Home".to_string()),
            (unresolved, "Home".to_string()),
            (unresolved, "Home".to_string()),
            (high, "Home".to_string()),
            (high, "Home".to_string()),
        ];
        let clusters = build_semantic_clusters(tags);
        let resolutions = vec![
            resolution(missing, None, Source::Missing),
            resolution(low, Some(point(1.0, 1.0)), Source::Db),
            resolution(high, Some(point(2.0, 2.0)), Source::Db),
            resolution(unresolved, None, Source::Missing),
        ];
        let imputed = impute(&resolutions, &clusters);
        assert_eq!(imputed[0].point, Some(point(2.0, 2.0)));
        // The unresolved top-frequency cell itself gets imputed from `high`.
        assert_eq!(imputed[3].source, Source::SemanticImputed);
        assert_eq!(imputed[3].point, Some(point(2.0, 2.0)));
    }

    #[test]
    fn oscillating_trace_accumulates_switches() {
        let a = key(10, 1);
        let b = key(10, 2);
        let clusters = build_semantic_clusters(vec![
            (a, "Office".to_string()),
            (b, "Office".to_string()),
        ]);
        let trace = vec![obs(0, a), obs(10, b), obs(20, a), obs(30, b), obs(40, a)];
        let verdicts = detect_oscillation(&trace, &clusters, 300).unwrap();
        assert_eq!(verdicts.len(), 1);
        assert_eq!(verdicts[0].pair, (a, b));
        assert_eq!(verdicts[0].switch_count, 3);
        assert!(verdicts[0].stationary());
        assert_eq!(verdicts[0].co_cluster.as_deref(), Some("Office"));
    }

    #[test]
    fn window_excludes_slow_returns() {
        let a = key(10, 1);
        let b = key(10, 2);
        let trace = vec![obs(0, a), obs(600, b), obs(610, a)];
        let verdicts = detect_oscillation(&trace, &[], 300).unwrap();
        assert!(verdicts.is_empty());
    }

    #[test]
    fn disjoint_clusters_mean_not_stationary() {
        let a = key(10, 1);
        let b = key(10, 2);
        let clusters = build_semantic_clusters(vec![
            (a, "Home".to_string()),
            (b, "Office".to_string()),
        ]);
        let trace = vec![obs(0, a), obs(10, b), obs(20, a)];
        let verdicts = detect_oscillation(&trace, &clusters, 300).unwrap();
        assert_eq!(verdicts.len(), 1);
        assert!(!verdicts[0].stationary());
        assert_eq!(verdicts[0].switch_count, 1);
    }

    #[test]
    fn unsorted_trace_is_rejected() {
        let a = key(10, 1);
        let trace = vec![obs(10, a), obs(0, a)];
        assert_eq!(
            detect_oscillation(&trace, &[], 300),
            Err(SemanticError::UnsortedTrace { index: 1 })
        );
    }

    fn arb_world() -> impl Strategy<Value = (Vec<Resolution>, Vec<SemanticCluster>)> {
        let cells = 1u32..30;
        let tags = proptest::collection::vec((cells.clone(), 0usize..5), 0..60);
        let sources = proptest::collection::vec((cells, proptest::bool::ANY), 1..30);
        (tags, sources).prop_map(|(tags, sources)| {
            let clusters = build_semantic_clusters(
                tags.into_iter()
                    .map(|(cell, label)| (key(1, cell), format!("label-{label}"))),
            );
            let mut seen = std::collections::BTreeSet::new();
            let resolutions: Vec<Resolution> = sources
                .into_iter()
                .filter(|(cell, _)| seen.insert(*cell))
                .map(|(cell, resolved)| {
                    if resolved {
                        resolution(
                            key(1, cell),
                            Some(point(cell as f64 / 10.0, 0.0)),
                            Source::Db,
                        )
                    } else {
                        resolution(key(1, cell), None, Source::Missing)
                    }
                })
                .collect();
            (resolutions, clusters)
        })
    }

    proptest! {
        #[test]
        fn impute_is_idempotent_and_monotone((resolutions, clusters) in arb_world()) {
            let once = impute(&resolutions, &clusters);
            let twice = impute(&once, &clusters);
            prop_assert_eq!(&once, &twice);

            let resolved_before = resolutions.iter().filter(|r| r.is_resolved()).count();
            let resolved_after = once.iter().filter(|r| r.is_resolved()).count();
            prop_assert!(resolved_after >= resolved_before);

            for (before, after) in resolutions.iter().zip(&once) {
                prop_assert_eq!(before.cell, after.cell);
                if before.source == Source::Db {
                    prop_assert_eq!(before, after);
                }
            }
        }

        #[test]
        fn imputed_points_come_from_db_co_cluster_members((resolutions, clusters) in arb_world()) {
            let db: HashMap<CellKey, GeoPoint> = resolutions
                .iter()
                .filter(|r| r.source == Source::Db)
                .map(|r| (r.cell, r.point.unwrap()))
                .collect();
            for after in impute(&resolutions, &clusters) {
                if after.source != Source::SemanticImputed {
                    continue;
                }
                let p = after.point.unwrap();
                let provenance = clusters.iter().any(|cluster| {
                    cluster.contains(after.cell)
                        && cluster
                            .members
                            .iter()
                            .any(|m| db.get(&m.cell) == Some(&p))
                });
                prop_assert!(provenance, "imputed point lacks a co-cluster db donor");
            }
        }

        #[test]
        fn impute_ignores_input_order((resolutions, clusters) in arb_world(), seed in 0u64..1000) {
            let mut shuffled = resolutions.clone();
            // Poor man's shuffle, deterministic per seed.
            let n = shuffled.len();
            let mut state = seed.wrapping_add(1);
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let mut a = impute(&resolutions, &clusters);
            let mut b = impute(&shuffled, &clusters);
            a.sort_by_key(|r| r.cell);
            b.sort_by_key(|r| r.cell);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn cluster_frequencies_sum_to_tag_records(
            tags in proptest::collection::vec((1u32..20, 0usize..4), 0..50)
        ) {
            let pairs: Vec<(CellKey, String)> = tags
                .into_iter()
                .map(|(cell, label)| (key(1, cell), format!("l{label}")))
                .collect();
            let clusters = build_semantic_clusters(pairs.clone());
            for cluster in &clusters {
                let expected = pairs.iter().filter(|(_, l)| *l == cluster.label).count() as u64;
                let total: u64 = cluster.members.iter().map(|m| m.frequency).sum();
                prop_assert_eq!(total, expected);
            }
        }
    }
}
