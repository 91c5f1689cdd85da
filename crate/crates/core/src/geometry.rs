//! Observation locations and pairwise distances.
//!
//! Observations live on a Cartesian plane: coordinates are treated as
//! already-projected planar values, so no geodesic arithmetic appears here.
//! Two metrics are supported — straight-line (Euclidean) distance and the
//! lattice-path (Manhattan) distance — and a [`DistanceMatrix`] records
//! which one produced it.

use std::collections::HashSet;

use ndarray::{Array1, Array2};

use crate::error::{Result, SpatialError};

/// A point on the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Distance metric on the plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// √((xᵢ−xⱼ)² + (yᵢ−yⱼ)²) — straight-line distance.
    Euclidean,
    /// |xᵢ−xⱼ| + |yᵢ−yⱼ| — length of a lattice path.
    Manhattan,
}

impl Metric {
    /// Stable lowercase name used in file headers and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
        }
    }

    /// Parse the name written by [`Metric::name`].
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euclidean" => Some(Metric::Euclidean),
            "manhattan" => Some(Metric::Manhattan),
            _ => None,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Distance between two points under the chosen metric.
///
/// Errors when either point has a NaN or infinite coordinate.
pub fn distance(p: Point, q: Point, metric: Metric) -> Result<f64> {
    for (label, v) in [("p.x", p.x), ("p.y", p.y), ("q.x", q.x), ("q.y", q.y)] {
        if !v.is_finite() {
            return Err(SpatialError::NonFinite {
                context: format!("coordinate {label}"),
            });
        }
    }
    let (dx, dy) = (p.x - q.x, p.y - q.y);
    Ok(match metric {
        Metric::Euclidean => (dy * dy + dx * dx).sqrt(),
        Metric::Manhattan => dy.abs() + dx.abs(),
    })
}

/// A set of observations: unique labels, planar coordinates, and named
/// numeric variables with one value per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    ids: Vec<String>,
    coords: Vec<Point>,
    variables: Vec<(String, Array1<f64>)>,
}

impl PointSet {
    /// Build a point set, checking the structural invariants: at least two
    /// observations, unique ids, finite coordinates.
    pub fn new(ids: Vec<String>, coords: Vec<Point>) -> Result<Self> {
        if ids.len() != coords.len() {
            return Err(SpatialError::DimensionMismatch {
                context: "point set (ids vs coordinates)".into(),
                expected: ids.len(),
                actual: coords.len(),
            });
        }
        if ids.len() < 2 {
            return Err(SpatialError::TooFewObservations {
                n: ids.len(),
                min: 2,
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(SpatialError::DuplicateId { id: id.clone() });
            }
        }
        for (k, p) in coords.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(SpatialError::NonFinite {
                    context: format!("coordinates of observation {:?}", ids[k]),
                });
            }
        }
        Ok(PointSet {
            ids,
            coords,
            variables: Vec::new(),
        })
    }

    /// Attach a named variable column; must match N and be finite throughout.
    pub fn add_variable(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n() {
            return Err(SpatialError::DimensionMismatch {
                context: format!("variable {name:?}"),
                expected: self.n(),
                actual: values.len(),
            });
        }
        if name == "id" || name == "x" || name == "y" {
            return Err(SpatialError::InvalidModelSpec(format!(
                "variable name {name:?} collides with a reserved dataset column"
            )));
        }
        if self.variables.iter().any(|(n, _)| n == name) {
            return Err(SpatialError::InvalidModelSpec(format!(
                "variable {name:?} already exists"
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpatialError::NonFinite {
                context: format!("variable {name:?}, observation {:?}", self.ids[k]),
            });
        }
        self.variables.push((name.to_string(), Array1::from_vec(values)));
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    /// Variable columns in insertion order.
    pub fn variables(&self) -> impl Iterator<Item = (&str, &Array1<f64>)> {
        self.variables.iter().map(|(n, v)| (n.as_str(), v))
    }

    /// Look up a variable column by name.
    pub fn variable(&self, name: &str) -> Result<&Array1<f64>> {
        self.variables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| SpatialError::UnknownVariable {
                name: name.to_string(),
            })
    }
}

/// Symmetric pairwise-distance matrix with zero diagonal, tagged with the
/// metric that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    metric: Metric,
    values: Array2<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Compute all pairwise distances for a point set.
///
/// The N ≥ 2 precondition is enforced by [`PointSet::new`], so this cannot
/// fail: coordinates are already known to be finite. Only the upper triangle
/// is computed; symmetry and the zero diagonal hold by construction.
pub fn build_distance_matrix(points: &PointSet, metric: Metric) -> DistanceMatrix {
    let n = points.n();
    let coords = points.coords();
    let mut values = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            // Finiteness was validated at construction; unwrap is safe.
            let d = distance(coords[i], coords[j], metric).expect("coordinates validated finite");
            values[[i, j]] = d;
            values[[j, i]] = d;
        }
    }
    DistanceMatrix { metric, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pset(coords: &[(f64, f64)]) -> PointSet {
        let ids = (0..coords.len()).map(|i| format!("p{i}")).collect();
        let pts = coords.iter().map(|&(x, y)| Point::new(x, y)).collect();
        PointSet::new(ids, pts).unwrap()
    }

    #[test]
    fn pythagorean_triple() {
        let d = distance(Point::new(0.0, 0.0), Point::new(3.0, 4.0), Metric::Euclidean).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn manhattan_sums_axis_steps() {
        let d = distance(Point::new(0.0, 0.0), Point::new(3.0, 4.0), Metric::Manhattan).unwrap();
        assert_eq!(d, 7.0);
    }

    #[test]
    fn identical_points_are_at_zero_distance() {
        let p = Point::new(1.0, 2.0);
        assert_eq!(distance(p, p, Metric::Euclidean).unwrap(), 0.0);
        assert_eq!(distance(p, p, Metric::Manhattan).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_coordinate_is_rejected() {
        let p = Point::new(f64::NAN, 0.0);
        let q = Point::new(0.0, 0.0);
        assert!(matches!(
            distance(p, q, Metric::Euclidean),
            Err(SpatialError::NonFinite { .. })
        ));
        assert!(distance(q, Point::new(0.0, f64::INFINITY), Metric::Manhattan).is_err());
    }

    #[test]
    fn two_point_euclidean_matrix() {
        let d = build_distance_matrix(&pset(&[(0.0, 0.0), (3.0, 4.0)]), Metric::Euclidean);
        assert_eq!(d.values()[[0, 1]], 5.0);
        assert_eq!(d.values()[[1, 0]], 5.0);
        assert_eq!(d.values()[[0, 0]], 0.0);
    }

    #[test]
    fn three_point_manhattan_matrix() {
        let d = build_distance_matrix(
            &pset(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]),
            Metric::Manhattan,
        );
        let expect = [[0.0, 1.0, 1.0], [1.0, 0.0, 2.0], [1.0, 2.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d.values()[[i, j]], expect[i][j]);
            }
        }
    }

    #[test]
    fn matrix_equals_brute_force_double_loop() {
        // Deterministic scatter of awkward coordinates.
        let coords: Vec<(f64, f64)> = (0..23)
            .map(|k| {
                let k = k as f64;
                ((k * 0.37).sin() * 11.0, (k * 1.13).cos() * 7.0 + k * 0.01)
            })
            .collect();
        let points = pset(&coords);
        for metric in [Metric::Euclidean, Metric::Manhattan] {
            let m = build_distance_matrix(&points, metric);
            for i in 0..points.n() {
                for j in 0..points.n() {
                    let d = distance(points.coords()[i], points.coords()[j], metric).unwrap();
                    assert_eq!(m.values()[[i, j]], d, "mismatch at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn point_set_rejects_duplicates_and_short_inputs() {
        let err = PointSet::new(
            vec!["a".into(), "a".into()],
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)],
        );
        assert!(matches!(err, Err(SpatialError::DuplicateId { .. })));

        let err = PointSet::new(vec!["a".into()], vec![Point::new(0.0, 0.0)]);
        assert!(matches!(err, Err(SpatialError::TooFewObservations { .. })));
    }

    #[test]
    fn variables_are_validated_and_retrievable() {
        let mut points = pset(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        points.add_variable("income", vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(points.variable("income").unwrap()[1], 2.0);
        assert!(points.variable("px").is_err());
        assert!(points.add_variable("income", vec![0.0; 3]).is_err());
        assert!(points.add_variable("short", vec![0.0; 2]).is_err());
        assert!(points
            .add_variable("bad", vec![1.0, f64::NAN, 0.0])
            .is_err());
        assert!(points.add_variable("x", vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn symmetry_and_zero_diagonal(
            xs in proptest::collection::vec(-100.0f64..100.0, 2..12),
            ys in proptest::collection::vec(-100.0f64..100.0, 2..12),
        ) {
            let n = xs.len().min(ys.len());
            prop_assume!(n >= 2);
            let coords: Vec<(f64, f64)> = (0..n).map(|i| (xs[i], ys[i])).collect();
            let points = pset(&coords);
            for metric in [Metric::Euclidean, Metric::Manhattan] {
                let d = build_distance_matrix(&points, metric);
                for i in 0..n {
                    prop_assert_eq!(d.values()[[i, i]], 0.0);
                    for j in 0..n {
                        prop_assert_eq!(d.values()[[i, j]], d.values()[[j, i]]);
                        prop_assert!(d.values()[[i, j]] >= 0.0);
                    }
                }
            }
        }

        #[test]
        fn euclidean_never_exceeds_manhattan(
            ax in -50.0f64..50.0, ay in -50.0f64..50.0,
            bx in -50.0f64..50.0, by in -50.0f64..50.0,
        ) {
            let (a, b) = (Point::new(ax, ay), Point::new(bx, by));
            let de = distance(a, b, Metric::Euclidean).unwrap();
            let dm = distance(a, b, Metric::Manhattan).unwrap();
            // Allow for rounding at the boundary case (points sharing an axis).
            prop_assert!(de <= dm * (1.0 + 1e-15) + 1e-300);
        }

        #[test]
        fn triangle_inequality_holds(
            ax in -50.0f64..50.0, ay in -50.0f64..50.0,
            bx in -50.0f64..50.0, by in -50.0f64..50.0,
            cx in -50.0f64..50.0, cy in -50.0f64..50.0,
        ) {
            let (a, b, c) = (Point::new(ax, ay), Point::new(bx, by), Point::new(cx, cy));
            for metric in [Metric::Euclidean, Metric::Manhattan] {
                let ab = distance(a, b, metric).unwrap();
                let bc = distance(b, c, metric).unwrap();
                let ac = distance(a, c, metric).unwrap();
                prop_assert!(ac <= ab + bc + 1e-9);
            }
        }
    }
}
