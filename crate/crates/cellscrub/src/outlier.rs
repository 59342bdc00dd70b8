//! Locality-based spatial outlier removal: per-LAC proximity matrices,
//! single-linkage agglomeration, distance pruning and representative
//! selection.
//!
//! The merge loop repeatedly joins the pair of sub-clusters at minimum
//! inter-cluster distance, where inter-cluster distance is the minimum
//! pairwise point distance — i.e. single linkage. Agglomeration runs to a
//! single cluster; pruning then cuts the dendrogram at the distance
//! parameter, and the largest flat cluster becomes the location area's
//! representative. Everything else is a spatial outlier.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::geo::{geo_distance, CellKey, GeoPoint, MetricMode};
use crate::report::{percentage, Diagnostic};
use crate::resolver::Resolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OutlierError {
    #[error("clustering requires at least one point")]
    EmptyInput,
    #[error("cell {0} has no coordinates; clean_all accepts resolved cells only")]
    UnresolvedInput(CellKey),
}

/// Symmetric pairwise distance matrix with a zero diagonal.
#[derive(Debug, Clone)]
pub struct ProximityMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl ProximityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }
}

/// Pairwise distances of all points under the chosen metric.
pub fn proximity_matrix(
    points: &[(CellKey, GeoPoint)],
    mode: MetricMode,
) -> Result<ProximityMatrix, OutlierError> {
    if points.is_empty() {
        return Err(OutlierError::EmptyInput);
    }
    let n = points.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = geo_distance(points[i].1, points[j].1, mode);
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    Ok(ProximityMatrix { n, entries })
}

/// One agglomeration step. `left` and `right` are node ids: leaves are
/// `0..n`, the cluster created by merge `k` is node `n + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
}

/// Stepwise dendrogram from single-linkage agglomeration; exactly
/// `n - 1` merges with non-decreasing heights.
#[derive(Debug, Clone)]
pub struct Dendrogram {
    leaves: Vec<(CellKey, GeoPoint)>,
    merges: Vec<Merge>,
    mode: MetricMode,
}

impl Dendrogram {
    pub fn leaves(&self) -> &[(CellKey, GeoPoint)] {
        &self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn mode(&self) -> MetricMode {
        self.mode
    }

    pub fn merge_heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Flat clusters after removing every merge above the cut: each
    /// cluster is the sorted list of leaf indices of one remaining tree.
    pub fn cut(&self, max_height: f64) -> Vec<Vec<usize>> {
        let n = self.leaves.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        // Node id -> representative leaf of that subtree.
        let mut node_leaf: Vec<usize> = (0..n).collect();
        for merge in &self.merges {
            if merge.height > max_height {
                break;
            }
            let a = find(&mut parent, node_leaf[merge.left]);
            let b = find(&mut parent, node_leaf[merge.right]);
            parent[a] = b;
            node_leaf.push(b);
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for leaf in 0..n {
            let root = find(&mut parent, leaf);
            groups.entry(root).or_default().push(leaf);
        }
        let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.sort_by(|a, b| self.leaves[a[0]].0.cmp(&self.leaves[b[0]].0));
        clusters
    }
}

struct ActiveCluster {
    node: usize,
    min_key: CellKey,
    members: Vec<usize>,
}

/// Single-linkage agglomerative clustering, run until one cluster remains.
///
/// Distance ties between candidate pairs are broken by the pair of
/// smallest-member cell keys, so the result is independent of input
/// order.
pub fn agglomerate(
    points: &[(CellKey, GeoPoint)],
    mode: MetricMode,
) -> Result<Dendrogram, OutlierError> {
    let proximity = proximity_matrix(points, mode)?;
    let n = points.len();
    let mut clusters: Vec<ActiveCluster> = (0..n)
        .map(|i| ActiveCluster {
            node: i,
            min_key: points[i].0,
            members: vec![i],
        })
        .collect();
    // Inter-cluster single-linkage distances, indexed like `clusters`.
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| proximity.d(i, j)).collect())
        .collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    while clusters.len() > 1 {
        let mut best: Option<(usize, usize, f64, (CellKey, CellKey))> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let d = dist[i][j];
                let ka = clusters[i].min_key.min(clusters[j].min_key);
                let kb = clusters[i].min_key.max(clusters[j].min_key);
                let candidate = (i, j, d, (ka, kb));
                best = match best {
                    None => Some(candidate),
                    Some(current) => {
                        if d < current.2 || (d == current.2 && candidate.3 < current.3) {
                            Some(candidate)
                        } else {
                            Some(current)
                        }
                    }
                };
            }
        }
        let (i, j, height, _) = best.expect("at least two clusters");
        let node = n + merges.len();
        let (left, right) = if clusters[i].min_key <= clusters[j].min_key {
            (clusters[i].node, clusters[j].node)
        } else {
            (clusters[j].node, clusters[i].node)
        };
        merges.push(Merge {
            left,
            right,
            height,
        });

        // Merge j into i, then drop j (swap_remove keeps indices dense).
        let absorbed = clusters[j].members.clone();
        clusters[i].members.extend(absorbed);
        clusters[i].min_key = clusters[i].min_key.min(clusters[j].min_key);
        clusters[i].node = node;
        for k in 0..clusters.len() {
            if k != i && k != j {
                let merged = dist[i][k].min(dist[j][k]);
                dist[i][k] = merged;
                dist[k][i] = merged;
            }
        }
        let last = clusters.len() - 1;
        clusters.swap_remove(j);
        if j != last {
            for k in 0..=last {
                dist[k][j] = dist[k][last];
            }
            dist.swap(j, last);
            // Self-distance slot is never read but keep it sane.
            dist[j][j] = 0.0;
        }
        for row in &mut dist {
            row.truncate(last);
        }
        dist.truncate(last);
    }

    Ok(Dendrogram {
        leaves: points.to_vec(),
        merges,
        mode,
    })
}

/// Cuts the dendrogram at the pruning distance and selects the
/// representative flat cluster.
///
/// The representative is the largest flat cluster; ties go to the
/// cluster with smallest total intra-cluster pairwise distance, then to
/// the one containing the smallest cell key. Inputs smaller than
/// `min_cluster_size` yield an empty representative with every point an
/// outlier, mirroring the insufficient-data rule applied by [`clean_all`].
pub fn cut_and_select(
    dendrogram: &Dendrogram,
    prune_dist: f64,
    min_cluster_size: usize,
) -> (Vec<(CellKey, GeoPoint)>, Vec<(CellKey, GeoPoint)>) {
    let leaves = dendrogram.leaves();
    if leaves.len() < min_cluster_size {
        let mut outliers = leaves.to_vec();
        outliers.sort_by_key(|(cell, _)| *cell);
        return (Vec::new(), outliers);
    }
    let clusters = dendrogram.cut(prune_dist);
    // Summed in cell-key order so the tie-break cannot drift with input
    // permutation.
    let total_intra = |cluster: &[usize]| -> f64 {
        let mut members: Vec<(CellKey, GeoPoint)> =
            cluster.iter().map(|&i| leaves[i]).collect();
        members.sort_by_key(|(cell, _)| *cell);
        let mut sum = 0.0;
        for (a, &(_, pa)) in members.iter().enumerate() {
            for &(_, pb) in &members[a + 1..] {
                sum += geo_distance(pa, pb, dendrogram.mode());
            }
        }
        sum
    };
    let best = clusters
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            b.len()
                .cmp(&a.len())
                .then_with(|| {
                    total_intra(a)
                        .partial_cmp(&total_intra(b))
                        .expect("finite distances")
                })
                .then_with(|| leaves[a[0]].0.cmp(&leaves[b[0]].0))
        })
        .map(|(idx, _)| idx)
        .expect("at least one cluster");

    let mut representative = Vec::new();
    let mut outliers = Vec::new();
    for (idx, cluster) in clusters.iter().enumerate() {
        let target = if idx == best {
            &mut representative
        } else {
            &mut outliers
        };
        target.extend(cluster.iter().map(|&i| leaves[i]));
    }
    representative.sort_by_key(|(cell, _)| *cell);
    outliers.sort_by_key(|(cell, _)| *cell);
    (representative, outliers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionStatus {
    Clustered,
    InsufficientData,
}

impl PartitionStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PartitionStatus::Clustered => "clustered",
            PartitionStatus::InsufficientData => "insufficient-data",
        }
    }
}

/// Per-LAC cleaning result. Representative and outliers partition the
/// LAC's input cells; insufficient-data LACs have an empty
/// representative and every input cell listed under `outliers`.
#[derive(Debug, Clone, PartialEq)]
pub struct LacPartition {
    pub lac: u32,
    pub representative: Vec<(CellKey, GeoPoint)>,
    pub outliers: Vec<(CellKey, GeoPoint)>,
    pub status: PartitionStatus,
}

/// Whole-run cleaning accounting. Insufficient-data cells are tracked as
/// their own category, separate from removed outliers.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanReport {
    pub input_cells: u64,
    pub kept_cells: u64,
    pub outliers_removed: u64,
    pub insufficient_cells: u64,
    pub diagnostics: Vec<Diagnostic>,
}

impl CleanReport {
    pub fn retention_pct(&self) -> f64 {
        percentage(self.kept_cells, self.input_cells)
    }
}

/// Groups resolved cells by LAC and cleans each location area.
///
/// LACs with fewer than `min_cluster_size` cells are marked
/// insufficient-data and excluded from the kept set; the rest run
/// agglomeration and pruning. Per-LAC work is independent and runs in
/// parallel; output is assembled in LAC-ascending order regardless of
/// scheduling.
pub fn clean_all(
    resolutions: &[Resolution],
    mode: MetricMode,
    prune_dist: f64,
    min_cluster_size: usize,
) -> Result<(Vec<LacPartition>, CleanReport), OutlierError> {
    let mut by_lac: BTreeMap<u32, Vec<(CellKey, GeoPoint)>> = BTreeMap::new();
    for resolution in resolutions {
        let point = resolution
            .point
            .ok_or(OutlierError::UnresolvedInput(resolution.cell))?;
        by_lac
            .entry(resolution.cell.lac)
            .or_default()
            .push((resolution.cell, point));
    }

    let mut diagnostics = Vec::new();
    for (lac, cells) in &by_lac {
        let mut by_pair: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for (cell, _) in cells {
            *by_pair.entry((cell.lac, cell.cell_id)).or_insert(0) += 1;
        }
        for ((_, cell_id), count) in by_pair {
            if count > 1 {
                diagnostics.push(Diagnostic::general(format!(
                    "lac {lac} cell {cell_id} appears under {count} distinct operator keys; \
                     possible cross-operator collision"
                )));
            }
        }
    }

    let groups: Vec<(u32, Vec<(CellKey, GeoPoint)>)> = by_lac.into_iter().collect();
    let partitions: Vec<Result<LacPartition, OutlierError>> = groups
        .into_par_iter()
        .map(|(lac, mut cells)| {
            cells.sort_by_key(|(cell, _)| *cell);
            if cells.len() < min_cluster_size {
                return Ok(LacPartition {
                    lac,
                    representative: Vec::new(),
                    outliers: cells,
                    status: PartitionStatus::InsufficientData,
                });
            }
            let dendrogram = agglomerate(&cells, mode)?;
            let (representative, outliers) =
                cut_and_select(&dendrogram, prune_dist, min_cluster_size);
            Ok(LacPartition {
                lac,
                representative,
                outliers,
                status: PartitionStatus::Clustered,
            })
        })
        .collect();
    let partitions: Vec<LacPartition> = partitions.into_iter().collect::<Result<_, _>>()?;

    let mut report = CleanReport {
        input_cells: resolutions.len() as u64,
        kept_cells: 0,
        outliers_removed: 0,
        insufficient_cells: 0,
        diagnostics,
    };
    for partition in &partitions {
        match partition.status {
            PartitionStatus::Clustered => {
                report.kept_cells += partition.representative.len() as u64;
                report.outliers_removed += partition.outliers.len() as u64;
            }
            PartitionStatus::InsufficientData => {
                report.insufficient_cells += partition.outliers.len() as u64;
            }
        }
    }
    Ok((partitions, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resolver::Source;
    use proptest::prelude::*;

    fn key(lac: u32, cell: u32) -> CellKey {
        CellKey::lac_cell(lac, cell).unwrap()
    }

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn line_points(xs: &[f64]) -> Vec<(CellKey, GeoPoint)> {
        xs.iter()
            .enumerate()
            .map(|(i, &x)| (key(1, i as u32 + 1), pt(0.0, x)))
            .collect()
    }

    #[test]
    fn single_point_matrix_is_zero() {
        let m = proximity_matrix(&line_points(&[0.0]), MetricMode::Degrees).unwrap();
        assert_eq!(m.n(), 1);
        assert_eq!(m.d(0, 0), 0.0);
    }

    #[test]
    fn matrix_of_right_triangle() {
        let points = vec![
            (key(1, 1), pt(0.0, 0.0)),
            (key(1, 2), pt(0.0, 3.0)),
            (key(1, 3), pt(4.0, 0.0)),
        ];
        let m = proximity_matrix(&points, MetricMode::Degrees).unwrap();
        assert_eq!(m.d(0, 1), 3.0);
        assert_eq!(m.d(0, 2), 4.0);
        assert_eq!(m.d(1, 2), 5.0);
        for i in 0..3 {
            assert_eq!(m.d(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(m.d(i, j), m.d(j, i));
            }
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(
            proximity_matrix(&[], MetricMode::Degrees).unwrap_err(),
            OutlierError::EmptyInput
        );
        assert_eq!(
            agglomerate(&[], MetricMode::Degrees).unwrap_err(),
            OutlierError::EmptyInput
        );
    }

    #[test]
    fn collinear_points_merge_bottom_up() {
        let dendro = agglomerate(&line_points(&[0.0, 1.0, 10.0]), MetricMode::Degrees).unwrap();
        assert_eq!(dendro.merge_heights(), vec![1.0, 9.0]);
    }

    #[test]
    fn two_points_merge_at_their_distance() {
        let dendro = agglomerate(&line_points(&[2.0, 9.0]), MetricMode::Degrees).unwrap();
        assert_eq!(dendro.merge_heights(), vec![7.0]);
        assert_eq!(dendro.merges()[0], Merge { left: 0, right: 1, height: 7.0 });
    }

    #[test]
    fn cut_keeps_the_near_pair() {
        let points = line_points(&[0.0, 1.0, 10.0]);
        let dendro = agglomerate(&points, MetricMode::Degrees).unwrap();
        let (rep, outliers) = cut_and_select(&dendro, 5.0, 1);
        assert_eq!(rep, vec![points[0], points[1]]);
        assert_eq!(outliers, vec![points[2]]);
    }

    #[test]
    fn coincident_points_all_kept() {
        let points: Vec<_> = (1..=12).map(|i| (key(7, i), pt(45.0, 45.0))).collect();
        let dendro = agglomerate(&points, MetricMode::GeodesicMeters).unwrap();
        let (rep, outliers) = cut_and_select(&dendro, 5_000.0, 1);
        assert_eq!(rep.len(), 12);
        assert!(outliers.is_empty());
    }

    #[test]
    fn degenerate_cut_keeps_smallest_key_singleton() {
        let points = line_points(&[0.0, 20.0, 40.0]);
        let dendro = agglomerate(&points, MetricMode::Degrees).unwrap();
        let (rep, outliers) = cut_and_select(&dendro, 5.0, 1);
        assert_eq!(rep, vec![points[0]]);
        assert_eq!(outliers.len(), 2);
    }

    fn resolved(cell: CellKey, p: GeoPoint) -> Resolution {
        Resolution {
            cell,
            point: Some(p),
            source: Source::Db,
        }
    }

    #[test]
    fn small_lac_is_insufficient_data() {
        let resolutions: Vec<Resolution> = (1..=9)
            .map(|i| resolved(key(5, i), pt(10.0, 10.0)))
            .collect();
        let (partitions, report) =
            clean_all(&resolutions, MetricMode::GeodesicMeters, 5_000.0, 10).unwrap();
        assert_eq!(partitions.len(), 1);
        assert_eq!(partitions[0].status, PartitionStatus::InsufficientData);
        assert!(partitions[0].representative.is_empty());
        assert_eq!(partitions[0].outliers.len(), 9);
        assert_eq!(report.kept_cells, 0);
        assert_eq!(report.insufficient_cells, 9);
        assert_eq!(report.outliers_removed, 0);
    }

    #[test]
    fn coincident_lac_keeps_everything() {
        let resolutions: Vec<Resolution> = (1..=12)
            .map(|i| resolved(key(5, i), pt(10.0, 10.0)))
            .collect();
        let (partitions, report) =
            clean_all(&resolutions, MetricMode::GeodesicMeters, 5_000.0, 10).unwrap();
        assert_eq!(partitions[0].status, PartitionStatus::Clustered);
        assert_eq!(report.kept_cells, 12);
        assert_eq!(report.outliers_removed, 0);
        assert_eq!(report.retention_pct(), 100.0);
    }

    #[test]
    fn unresolved_input_is_a_domain_error() {
        let bad = Resolution {
            cell: key(5, 1),
            point: None,
            source: Source::Missing,
        };
        assert!(matches!(
            clean_all(&[bad], MetricMode::Degrees, 5.0, 10),
            Err(OutlierError::UnresolvedInput(_))
        ));
    }

    #[test]
    fn operator_collisions_are_surfaced() {
        let a = CellKey::new(Some(310), Some(26), 5, 1).unwrap();
        let b = CellKey::new(Some(310), Some(99), 5, 1).unwrap();
        let resolutions = vec![resolved(a, pt(0.0, 0.0)), resolved(b, pt(50.0, 50.0))];
        let (_, report) = clean_all(&resolutions, MetricMode::Degrees, 5.0, 10).unwrap();
        assert_eq!(report.diagnostics.len(), 1);
        assert!(report.diagnostics[0].message.contains("collision"));
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<(CellKey, GeoPoint)>> {
        proptest::collection::btree_map(
            (1u32..1000, 1u32..1000),
            (-60.0..60.0f64, -160.0..160.0f64),
            1..max,
        )
        .prop_map(|m| {
            m.into_iter()
                .map(|((lac, cell), (lat, lon))| (key(lac, cell), pt(lat, lon)))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matrix_matches_pairwise_distances(points in arb_points(12)) {
            let m = proximity_matrix(&points, MetricMode::GeodesicMeters).unwrap();
            for i in 0..points.len() {
                for j in 0..points.len() {
                    let expected =
                        geo_distance(points[i].1, points[j].1, MetricMode::GeodesicMeters);
                    prop_assert_eq!(m.d(i, j), expected);
                }
            }
        }

        #[test]
        fn merge_heights_never_decrease(points in arb_points(16)) {
            let dendro = agglomerate(&points, MetricMode::Degrees).unwrap();
            prop_assert_eq!(dendro.merges().len(), points.len() - 1);
            let heights = dendro.merge_heights();
            for pair in heights.windows(2) {
                prop_assert!(pair[0] <= pair[1]);
            }
        }

        #[test]
        fn partition_ignores_input_order(points in arb_points(14), seed in 0u64..100, cut in 0.1..50.0f64) {
            let mut shuffled = points.clone();
            let mut state = seed.wrapping_add(7);
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let a = agglomerate(&points, MetricMode::Degrees).unwrap();
            let b = agglomerate(&shuffled, MetricMode::Degrees).unwrap();
            let (rep_a, out_a) = cut_and_select(&a, cut, 1);
            let (rep_b, out_b) = cut_and_select(&b, cut, 1);
            prop_assert_eq!(rep_a, rep_b);
            prop_assert_eq!(out_a, out_b);
        }

        #[test]
        fn raising_the_cut_never_shrinks_the_representative(
            points in arb_points(14),
            cut in 0.1..20.0f64,
        ) {
            let dendro = agglomerate(&points, MetricMode::Degrees).unwrap();
            let (small, _) = cut_and_select(&dendro, cut, 1);
            let (large, _) = cut_and_select(&dendro, cut * 2.0, 1);
            prop_assert!(large.len() >= small.len());
        }

        #[test]
        fn partition_is_exact(points in arb_points(20), cut in 0.1..50.0f64) {
            let resolutions: Vec<Resolution> = points
                .iter()
                .map(|&(cell, p)| resolved(cell, p))
                .collect();
            let (partitions, report) =
                clean_all(&resolutions, MetricMode::Degrees, cut, 3).unwrap();
            let mut recovered: Vec<CellKey> = Vec::new();
            for partition in &partitions {
                let rep: Vec<CellKey> =
                    partition.representative.iter().map(|(c, _)| *c).collect();
                let out: Vec<CellKey> = partition.outliers.iter().map(|(c, _)| *c).collect();
                for c in &rep {
                    prop_assert!(!out.contains(c));
                }
                recovered.extend(rep);
                recovered.extend(out);
            }
            recovered.sort();
            let mut expected: Vec<CellKey> = points.iter().map(|(c, _)| *c).collect();
            expected.sort();
            prop_assert_eq!(recovered, expected);
            prop_assert_eq!(
                report.kept_cells + report.outliers_removed + report.insufficient_cells,
                report.input_cells
            );
        }
    }
}
