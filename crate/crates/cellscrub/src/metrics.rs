//! Hausdorff-distance validation of cleaning quality and before/after
//! retention accounting.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::geo::{geo_distance, CellKey, GeoPoint, MetricMode};
use crate::report::percentage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("Hausdorff distance requires non-empty point sets")]
    EmptySet,
    #[error("kept set is not a subset of the input set (cell {0} is new)")]
    NotSubset(CellKey),
}

/// Dense rectangular matrix of pairwise distances between two point sets.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    /// Row-major CSV export with one `i,j,d` row per entry (0-based indices).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,d\n");
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push_str(&format!("{},{},{}\n", i, j, self.d(i, j)));
            }
        }
        out
    }
}

/// D(i,j) = distance from the i-th point of X to the j-th point of Y.
pub fn distance_matrix(
    xs: &[GeoPoint],
    ys: &[GeoPoint],
    mode: MetricMode,
) -> Result<DistanceMatrix, MetricsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut entries = Vec::with_capacity(xs.len() * ys.len());
    for &x in xs {
        for &y in ys {
            entries.push(geo_distance(x, y, mode));
        }
    }
    Ok(DistanceMatrix {
        rows: xs.len(),
        cols: ys.len(),
        entries,
    })
}

/// Directional Hausdorff distance: the distance from the point of X
/// farthest from Y to its nearest neighbor in Y.
pub fn directional_hausdorff(
    xs: &[GeoPoint],
    ys: &[GeoPoint],
    mode: MetricMode,
) -> Result<f64, MetricsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut worst = 0.0f64;
    for &x in xs {
        let mut nearest = f64::INFINITY;
        for &y in ys {
            let d = geo_distance(x, y, mode);
            if d < nearest {
                nearest = d;
            }
        }
        if nearest > worst {
            worst = nearest;
        }
    }
    Ok(worst)
}

/// Symmetric Hausdorff distance: the larger directional distance.
pub fn hausdorff(xs: &[GeoPoint], ys: &[GeoPoint], mode: MetricMode) -> Result<f64, MetricsError> {
    let forward = directional_hausdorff(xs, ys, mode)?;
    let backward = directional_hausdorff(ys, xs, mode)?;
    Ok(forward.max(backward))
}

/// Before/after comparison of a cleaning run.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionReport {
    pub before_count: u64,
    pub after_count: u64,
    pub mode: MetricMode,
    pub hausdorff: f64,
    /// dhd(before, after): how far removed cells sit from the kept set.
    pub dhd_before_after: f64,
    /// dhd(after, before): always 0 because the kept set is a subset.
    pub dhd_after_before: f64,
}

impl RetentionReport {
    pub fn pct_kept(&self) -> f64 {
        percentage(self.after_count, self.before_count)
    }
}

/// Compares the kept cell set against the pre-cleaning resolved set.
/// The kept set must be a subset of the input set by cell key.
pub fn retention_report(
    before: &[(CellKey, GeoPoint)],
    after: &[(CellKey, GeoPoint)],
    mode: MetricMode,
) -> Result<RetentionReport, MetricsError> {
    let before_keys: BTreeSet<CellKey> = before.iter().map(|(c, _)| *c).collect();
    if let Some(&(extra, _)) = after.iter().find(|(c, _)| !before_keys.contains(c)) {
        return Err(MetricsError::NotSubset(extra));
    }
    let before_points: Vec<GeoPoint> = before.iter().map(|(_, p)| *p).collect();
    let after_points: Vec<GeoPoint> = after.iter().map(|(_, p)| *p).collect();
    let dhd_before_after = directional_hausdorff(&before_points, &after_points, mode)?;
    let dhd_after_before = directional_hausdorff(&after_points, &before_points, mode)?;
    Ok(RetentionReport {
        before_count: before.len() as u64,
        after_count: after.len() as u64,
        mode,
        hausdorff: dhd_before_after.max(dhd_after_before),
        dhd_before_after,
        dhd_after_before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn key(cell: u32) -> CellKey {
        CellKey::lac_cell(1, cell).unwrap()
    }

    #[test]
    fn one_by_one_matrix() {
        let m = distance_matrix(&[pt(0.0, 0.0)], &[pt(3.0, 4.0)], MetricMode::Degrees).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 1));
        assert_eq!(m.d(0, 0), 5.0);
        assert_eq!(m.to_csv(), "i,j,d\n0,0,5\n");
    }

    #[test]
    fn identical_sets_have_zero_diagonal() {
        let points = vec![pt(1.0, 2.0), pt(3.0, 4.0)];
        let m = distance_matrix(&points, &points, MetricMode::Degrees).unwrap();
        for i in 0..2 {
            assert_eq!(m.d(i, i), 0.0);
        }
    }

    #[test]
    fn subset_has_zero_directional_distance() {
        let xs = vec![pt(0.0, 0.0), pt(1.0, 1.0)];
        let ys = vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(5.0, 5.0)];
        assert_eq!(directional_hausdorff(&xs, &ys, MetricMode::Degrees).unwrap(), 0.0);
    }

    #[test]
    fn farthest_point_drives_the_distance() {
        let xs = vec![pt(0.0, 0.0), pt(10.0, 0.0)];
        let ys = vec![pt(0.0, 0.0)];
        assert_eq!(directional_hausdorff(&xs, &ys, MetricMode::Degrees).unwrap(), 10.0);
        assert_eq!(directional_hausdorff(&ys, &xs, MetricMode::Degrees).unwrap(), 0.0);
        assert_eq!(hausdorff(&xs, &ys, MetricMode::Degrees).unwrap(), 10.0);
        assert_eq!(hausdorff(&ys, &xs, MetricMode::Degrees).unwrap(), 10.0);
    }

    #[test]
    fn empty_sets_are_rejected() {
        assert_eq!(
            hausdorff(&[], &[pt(0.0, 0.0)], MetricMode::Degrees).unwrap_err(),
            MetricsError::EmptySet
        );
    }

    #[test]
    fn unchanged_set_retains_everything() {
        let cells = vec![(key(1), pt(0.0, 0.0)), (key(2), pt(1.0, 1.0))];
        let report = retention_report(&cells, &cells, MetricMode::Degrees).unwrap();
        assert_eq!(report.pct_kept(), 100.0);
        assert_eq!(report.hausdorff, 0.0);
    }

    #[test]
    fn removed_outlier_sets_the_distance() {
        // Three near points plus one far outlier; removing the outlier
        // leaves hausdorff = its distance to the nearest kept point.
        let before = vec![
            (key(1), pt(0.0, 0.0)),
            (key(2), pt(0.0, 1.0)),
            (key(3), pt(1.0, 0.0)),
            (key(4), pt(0.0, 21.0)),
        ];
        let after = &before[..3];
        let report = retention_report(&before, after, MetricMode::Degrees).unwrap();
        assert_eq!(report.dhd_after_before, 0.0);
        assert_eq!(report.dhd_before_after, 20.0);
        assert_eq!(report.hausdorff, 20.0);
        assert_eq!(report.pct_kept(), 75.0);
    }

    #[test]
    fn new_cells_in_after_are_rejected() {
        let before = vec![(key(1), pt(0.0, 0.0))];
        let after = vec![(key(2), pt(0.0, 0.0))];
        assert_eq!(
            retention_report(&before, &after, MetricMode::Degrees).unwrap_err(),
            MetricsError::NotSubset(key(2))
        );
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<GeoPoint>> {
        proptest::collection::vec((-60.0..60.0f64, -160.0..160.0f64), 1..max)
            .prop_map(|v| v.into_iter().map(|(lat, lon)| pt(lat, lon)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hausdorff_is_symmetric(xs in arb_points(20), ys in arb_points(20)) {
            for mode in [MetricMode::Degrees, MetricMode::GeodesicMeters] {
                prop_assert_eq!(
                    hausdorff(&xs, &ys, mode).unwrap(),
                    hausdorff(&ys, &xs, mode).unwrap()
                );
                prop_assert_eq!(hausdorff(&xs, &xs, mode).unwrap(), 0.0);
            }
        }

        #[test]
        fn enlarging_the_target_never_increases_dhd(
            xs in arb_points(15),
            ys in arb_points(15),
            extra in arb_points(5),
        ) {
            let mut bigger = ys.clone();
            bigger.extend(extra);
            let before = directional_hausdorff(&xs, &ys, MetricMode::Degrees).unwrap();
            let after = directional_hausdorff(&xs, &bigger, MetricMode::Degrees).unwrap();
            prop_assert!(after <= before);
        }

        #[test]
        fn matrix_matches_direct_recomputation(xs in arb_points(8), ys in arb_points(8)) {
            let m = distance_matrix(&xs, &ys, MetricMode::GeodesicMeters).unwrap();
            for (i, &x) in xs.iter().enumerate() {
                for (j, &y) in ys.iter().enumerate() {
                    prop_assert_eq!(m.d(i, j), geo_distance(x, y, MetricMode::GeodesicMeters));
                }
            }
        }
    }
}
