//! Point-cloud container, paired-observation bookkeeping, and the supporting
//! machinery (exact nearest-neighbour index, normal estimation, ASCII I/O).

mod index;
mod io;
mod normals;

pub use index::SpatialIndex;
pub use io::{read_cloud, write_cloud, CloudFormat};

use crate::se3::{RigidTransform, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("cloud is empty")]
    EmptyCloud,
    #[error("cloud has {got} points, operation needs at least {need}")]
    TooFewPoints { need: usize, got: usize },
    #[error("point {index} is not finite")]
    NonFinitePoint { index: usize },
    #[error("normal {index} is not finite or not unit length")]
    InvalidNormal { index: usize },
    #[error("normals length {normals} does not match point count {points}")]
    NormalCountMismatch { points: usize, normals: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("observation sets need exactly two distinct sensor ids, found {0}")]
    SensorCountMismatch(usize),
    #[error("sensors contribute unequal observation counts ({first} vs {second})")]
    UnbalancedSensors { first: usize, second: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// std::io::Error is not PartialEq; compare by kind for test ergonomics.
impl PartialEq for CloudError {
    fn eq(&self, other: &Self) -> bool {
        use CloudError::*;
        match (self, other) {
            (EmptyCloud, EmptyCloud) => true,
            (TooFewPoints { need: a, got: b }, TooFewPoints { need: c, got: d }) => {
                a == c && b == d
            }
            (NonFinitePoint { index: a }, NonFinitePoint { index: b }) => a == b,
            (InvalidNormal { index: a }, InvalidNormal { index: b }) => a == b,
            (
                NormalCountMismatch { points: a, normals: b },
                NormalCountMismatch { points: c, normals: d },
            ) => a == c && b == d,
            (Parse { line: a, message: m }, Parse { line: b, message: n }) => a == b && m == n,
            (UnsupportedFormat(a), UnsupportedFormat(b)) => a == b,
            (SensorCountMismatch(a), SensorCountMismatch(b)) => a == b,
            (UnbalancedSensors { first: a, second: b }, UnbalancedSensors { first: c, second: d }) => {
                a == c && b == d
            }
            (Io(a), Io(b)) => a.kind() == b.kind(),
            _ => false,
        }
    }
}

const UNIT_NORMAL_TOL: f64 = 1e-6;

/// A set of 3D points in a single frame, optionally with per-point unit
/// normals, tagged with the sensor that produced it and a frame label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    pub sensor_id: String,
    pub frame_label: String,
}

impl PointCloud {
    /// Construct a cloud, rejecting non-finite coordinates.
    pub fn new(
        points: Vec<Vec3>,
        sensor_id: impl Into<String>,
        frame_label: impl Into<String>,
    ) -> Result<Self, CloudError> {
        if let Some(index) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(CloudError::NonFinitePoint { index });
        }
        Ok(Self {
            points,
            normals: None,
            sensor_id: sensor_id.into(),
            frame_label: frame_label.into(),
        })
    }

    /// Attach normals; must be one unit vector (within 1e-6) per point.
    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self, CloudError> {
        if normals.len() != self.points.len() {
            return Err(CloudError::NormalCountMismatch {
                points: self.points.len(),
                normals: normals.len(),
            });
        }
        if let Some(index) = normals
            .iter()
            .position(|n| !n.iter().all(|v| v.is_finite()) || (n.norm() - 1.0).abs() > UNIT_NORMAL_TOL)
        {
            return Err(CloudError::InvalidNormal { index });
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cloud with every point (and normal direction) mapped through `t`.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.rotation * n).collect()),
            sensor_id: self.sensor_id.clone(),
            frame_label: self.frame_label.clone(),
        }
    }

    /// Points inside the closed axis-aligned box `[min, max]`, preserving
    /// normals and labels. Boundary points are retained.
    pub fn crop_box(&self, min: &Vec3, max: &Vec3) -> Self {
        let inside = |p: &Vec3| (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i]);
        let mut points = Vec::new();
        let mut normals = self.normals.as_ref().map(|_| Vec::new());
        for (i, p) in self.points.iter().enumerate() {
            if inside(p) {
                points.push(*p);
                if let (Some(out), Some(all)) = (normals.as_mut(), self.normals.as_ref()) {
                    out.push(all[i]);
                }
            }
        }
        Self {
            points,
            normals,
            sensor_id: self.sensor_id.clone(),
            frame_label: self.frame_label.clone(),
        }
    }

    /// Axis-aligned bounding box; `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        bounding_box(self.points.iter())
    }

    /// Per-point normals from the `k` nearest neighbours (the point itself
    /// included): smallest-eigenvalue direction of the local covariance, unit
    /// length, oriented so each normal points toward the frame origin.
    pub fn estimate_normals(&self, k: usize) -> Result<Self, CloudError> {
        normals::estimate_normals(self, k)
    }
}

pub(crate) fn bounding_box<'a>(points: impl Iterator<Item = &'a Vec3>) -> Option<(Vec3, Vec3)> {
    let mut min = Vec3::repeat(f64::INFINITY);
    let mut max = Vec3::repeat(f64::NEG_INFINITY);
    let mut any = false;
    for p in points {
        any = true;
        for i in 0..3 {
            min[i] = min[i].min(p[i]);
            max[i] = max[i].max(p[i]);
        }
    }
    any.then_some((min, max))
}

/// One calibration pair: indices into the observation list for the reference
/// sensor's observation and the second sensor's observation of the same frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationPair {
    pub reference: usize,
    pub source: usize,
}

/// Observations from exactly two sensors, paired frame-by-frame.
///
/// The sensor that appears first in the input order becomes the reference
/// sensor; pairing is by per-sensor observation order (the j-th observation of
/// each sensor forms pair j). Pairing relies purely on this bookkeeping, never
/// on point positions.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    observations: Vec<PointCloud>,
    pairs: Vec<ObservationPair>,
    sensor_ids: [String; 2],
}

impl ObservationSet {
    pub fn new(observations: Vec<PointCloud>) -> Result<Self, CloudError> {
        let mut sensor_ids: Vec<String> = Vec::new();
        for obs in &observations {
            if !sensor_ids.contains(&obs.sensor_id) {
                sensor_ids.push(obs.sensor_id.clone());
            }
        }
        if sensor_ids.len() != 2 {
            return Err(CloudError::SensorCountMismatch(sensor_ids.len()));
        }
        let by_sensor: Vec<Vec<usize>> = sensor_ids
            .iter()
            .map(|id| {
                observations
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| &o.sensor_id == id)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        if by_sensor[0].len() != by_sensor[1].len() {
            return Err(CloudError::UnbalancedSensors {
                first: by_sensor[0].len(),
                second: by_sensor[1].len(),
            });
        }
        let pairs = by_sensor[0]
            .iter()
            .zip(&by_sensor[1])
            .map(|(&reference, &source)| ObservationPair { reference, source })
            .collect();
        Ok(Self {
            observations,
            pairs,
            sensor_ids: [sensor_ids[0].clone(), sensor_ids[1].clone()],
        })
    }

    pub fn observations(&self) -> &[PointCloud] {
        &self.observations
    }

    pub fn pairs(&self) -> &[ObservationPair] {
        &self.pairs
    }

    /// `[reference sensor id, second sensor id]`, in input order.
    pub fn sensor_ids(&self) -> &[String; 2] {
        &self.sensor_ids
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn total_points(&self) -> usize {
        self.observations.iter().map(|o| o.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(sensor: &str, frame: &str, n: usize, offset: f64) -> PointCloud {
        let points = (0..n)
            .map(|i| Vec3::new(i as f64 + offset, offset, 0.0))
            .collect();
        PointCloud::new(points, sensor, frame).unwrap()
    }

    #[test]
    fn rejects_non_finite_points() {
        let err = PointCloud::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(f64::NAN, 0.0, 0.0)],
            "a",
            "L1",
        )
        .unwrap_err();
        assert_eq!(err, CloudError::NonFinitePoint { index: 1 });
    }

    #[test]
    fn rejects_non_unit_normals() {
        let c = cloud("a", "L1", 2, 0.0);
        let err = c
            .with_normals(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.5, 0.0, 0.0)])
            .unwrap_err();
        assert_eq!(err, CloudError::InvalidNormal { index: 1 });
    }

    #[test]
    fn crop_keeps_boundary_points_and_splits_cleanly() {
        let points = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(-0.5, 0.0, 0.0),
        ];
        let c = PointCloud::new(points, "a", "L1").unwrap();
        let min = Vec3::new(0.0, -1.0, -1.0);
        let max = Vec3::new(1.0, 1.0, 1.0);
        let inside = c.crop_box(&min, &max);
        assert_eq!(inside.len(), 2);
        // Complement property: inside count + outside count = total.
        let outside = c
            .points()
            .iter()
            .filter(|p| !(0..3).all(|i| p[i] >= min[i] && p[i] <= max[i]))
            .count();
        assert_eq!(inside.len() + outside, c.len());
    }

    #[test]
    fn pairing_follows_sensor_bookkeeping_in_input_order() {
        let observations = vec![
            cloud("left", "L1", 4, 0.0),
            cloud("right", "L2", 4, 10.0),
            cloud("left", "L1", 4, 1.0),
            cloud("right", "L2", 4, 11.0),
        ];
        let set = ObservationSet::new(observations).unwrap();
        assert_eq!(set.sensor_ids(), &["left".to_string(), "right".to_string()]);
        assert_eq!(
            set.pairs(),
            &[
                ObservationPair { reference: 0, source: 1 },
                ObservationPair { reference: 2, source: 3 },
            ]
        );
    }

    #[test]
    fn one_sensor_or_three_sensors_is_an_error() {
        let err = ObservationSet::new(vec![cloud("a", "L1", 3, 0.0)]).unwrap_err();
        assert_eq!(err, CloudError::SensorCountMismatch(1));
        let err = ObservationSet::new(vec![
            cloud("a", "L1", 3, 0.0),
            cloud("b", "L2", 3, 0.0),
            cloud("c", "L3", 3, 0.0),
        ])
        .unwrap_err();
        assert_eq!(err, CloudError::SensorCountMismatch(3));
    }

    #[test]
    fn unbalanced_sensor_counts_are_rejected() {
        let err = ObservationSet::new(vec![
            cloud("a", "L1", 3, 0.0),
            cloud("b", "L2", 3, 0.0),
            cloud("a", "L1", 3, 1.0),
        ])
        .unwrap_err();
        assert_eq!(err, CloudError::UnbalancedSensors { first: 2, second: 1 });
    }

    #[test]
    fn transformed_rotates_normals_without_translating_them() {
        let c = cloud("a", "L1", 3, 0.0)
            .with_normals(vec![Vec3::new(0.0, 0.0, 1.0); 3])
            .unwrap();
        let t = crate::se3::EulerPose::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0, 5.0, 0.0, 0.0)
            .to_transform()
            .unwrap();
        let moved = c.transformed(&t);
        let n = moved.normals().unwrap()[0];
        assert!((n - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }
}
