//! Quantitative evaluation of calibration estimates against ground truth.
//!
//! Everything here compares an estimated sensor-to-sensor transform with the
//! transform that actually generated the data: the residual transform is
//! decomposed into Euler angles and translation components, per-point
//! displacement is averaged per axis, and full-scene displacement is fitted
//! against distance so that angular errors (growing profiles) can be told
//! apart from translation errors (flat profiles). Results are collected into
//! a [`MetricsTable`] and exported as CSV or JSON.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::se3::{EulerPose, RigidTransform, Se3Error, Vec3};

/// Bin width (meters) used when fitting the distance profile.
pub const DISTANCE_BIN_WIDTH: f64 = 0.5;

/// Default per-axis mean-distance threshold (meters) above which a pair
/// counts as miscalibrated. Matches the translation bound of the sampled
/// calibration errors, so an exceedance is unambiguously a failure.
pub const MISCALIBRATION_THRESHOLD: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    /// The residual transform's pitch is too close to ±π/2 for a stable
    /// Euler decomposition.
    #[error("residual transform is too close to gimbal lock")]
    GimbalProximity(#[source] Se3Error),
    /// Per-pair lists passed to [`MetricsTable::new`] disagree in length.
    #[error("per-pair lists disagree: {deltas} transform errors vs {distances} distance errors")]
    LengthMismatch { deltas: usize, distances: usize },
    #[error("failed to write metrics file")]
    Io(#[from] std::io::Error),
    #[error("failed to encode metrics as JSON")]
    Json(#[from] serde_json::Error),
}

/// Residual transform between an estimate and the ground truth, decomposed
/// into signed Euler angles (radians) and translation components (meters).
///
/// The residual is `inverse(estimate) ∘ ground_truth`: the transform still
/// left over after the estimate has been applied. A perfect estimate gives
/// the zero pose. Summary tables report absolute values of the components;
/// this function keeps the signs so distributions remain centered.
pub fn transformation_error(
    ground_truth: &RigidTransform,
    estimate: &RigidTransform,
) -> Result<EulerPose, MetricsError> {
    estimate
        .inverse()
        .compose(ground_truth)
        .to_euler()
        .map_err(MetricsError::GimbalProximity)
}

/// Signed per-axis mean displacement (meters) between the cloud as placed by
/// the ground truth and as placed by the estimate.
///
/// Uses the known one-to-one correspondence of the points with themselves:
/// `(1/N) Σ (T_gt·x − T_est·x)`. Equal rotations make this exactly the
/// translation difference, independent of the cloud.
pub fn mean_distance_error(
    cloud: &PointCloud,
    ground_truth: &RigidTransform,
    estimate: &RigidTransform,
) -> Vec3 {
    let mut sum = Vec3::zeros();
    for p in cloud.points() {
        sum += ground_truth.apply(p) - estimate.apply(p);
    }
    sum / cloud.len() as f64
}

/// Ordinary-least-squares line through the binned distance profile, with
/// symmetric ±1-standard-deviation bounds of the bin-mean residuals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalFit {
    /// Displacement growth per meter of distance (dimensionless).
    pub slope: f64,
    /// Displacement (meters) extrapolated to zero distance.
    pub intercept: f64,
    /// Offset (meters) of the lower bound line below the fit.
    pub std_lower: f64,
    /// Offset (meters) of the upper bound line above the fit.
    pub std_upper: f64,
}

/// Full-scene displacement-versus-distance profile.
///
/// A growing profile indicates an angular error (displacement scales with
/// lever arm), a flat offset indicates a translation error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeProfile {
    /// `(distance, displacement)` per point: the point's absolute x
    /// coordinate in its own frame, against the Euclidean norm of
    /// `T_gt·x − T_est·x`.
    pub points: Vec<(f64, f64)>,
    pub fit: GlobalFit,
}

/// Compute the displacement profile of a full scene cloud and fit a line to
/// it.
///
/// Points are binned at [`DISTANCE_BIN_WIDTH`] along x and the line is
/// fitted to the bin means, which keeps dense near-field rings from
/// dominating the far field. Raw per-point samples are returned alongside
/// the fit.
pub fn global_range_profile(
    full_cloud: &PointCloud,
    ground_truth: &RigidTransform,
    estimate: &RigidTransform,
) -> RangeProfile {
    let points: Vec<(f64, f64)> = full_cloud
        .points()
        .iter()
        .map(|p| {
            let displacement = (ground_truth.apply(p) - estimate.apply(p)).norm();
            (p.x.abs(), displacement)
        })
        .collect();
    let fit = fit_distance_profile(&points);
    RangeProfile { points, fit }
}

/// Fit a line through `(distance, displacement)` samples, binned at
/// [`DISTANCE_BIN_WIDTH`]. Useful directly when profiles from several runs
/// are pooled before fitting.
pub fn fit_distance_profile(points: &[(f64, f64)]) -> GlobalFit {
    use std::collections::BTreeMap;

    let mut bins: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
    for &(x, y) in points {
        let bin = (x / DISTANCE_BIN_WIDTH).floor() as i64;
        let entry = bins.entry(bin).or_insert((0.0, 0.0, 0));
        entry.0 += x;
        entry.1 += y;
        entry.2 += 1;
    }
    let means: Vec<(f64, f64)> = bins
        .values()
        .map(|&(sx, sy, n)| (sx / n as f64, sy / n as f64))
        .collect();
    let n = means.len() as f64;
    if means.is_empty() {
        return GlobalFit::default();
    }
    let mean_x = means.iter().map(|m| m.0).sum::<f64>() / n;
    let mean_y = means.iter().map(|m| m.1).sum::<f64>() / n;
    let var_x = means.iter().map(|m| (m.0 - mean_x).powi(2)).sum::<f64>() / n;
    let (slope, intercept) = if var_x < 1e-12 {
        // Everything landed in one bin (or degenerately close): report the
        // level, not a line.
        (0.0, mean_y)
    } else {
        let cov = means
            .iter()
            .map(|m| (m.0 - mean_x) * (m.1 - mean_y))
            .sum::<f64>()
            / n;
        let slope = cov / var_x;
        (slope, mean_y - slope * mean_x)
    };
    let std = (means
        .iter()
        .map(|m| (m.1 - (intercept + slope * m.0)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    GlobalFit {
        slope,
        intercept,
        std_lower: std,
        std_upper: std,
    }
}

/// Count pairs whose largest per-axis |mean distance error| exceeds the
/// threshold (strictly). `threshold` must be positive.
pub fn count_miscalibrations(distance_errors: &[Vec3], threshold: f64) -> usize {
    distance_errors
        .iter()
        .filter(|e| e.amax() > threshold)
        .count()
}

/// Per-algorithm evaluation results over a set of calibration runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub algorithm: String,
    /// Signed residual decomposition per pair.
    pub per_pair_delta: Vec<EulerPose>,
    /// Component-wise mean of the absolute residuals: signed means would
    /// cancel and understate spread.
    pub mean_delta: EulerPose,
    /// Signed per-axis mean distance error per pair (meters).
    #[serde(with = "vec3_seq")]
    pub distance_errors: Vec<Vec3>,
    pub global_fit: GlobalFit,
    pub miscalibration_count: usize,
    pub n_pairs: usize,
}

impl MetricsTable {
    /// Assemble a table, deriving the summary fields from the per-pair
    /// lists. The lists must be index-aligned and of equal length.
    pub fn new(
        algorithm: impl Into<String>,
        per_pair_delta: Vec<EulerPose>,
        distance_errors: Vec<Vec3>,
        global_fit: GlobalFit,
        miscalibration_threshold: f64,
    ) -> Result<Self, MetricsError> {
        if per_pair_delta.len() != distance_errors.len() {
            return Err(MetricsError::LengthMismatch {
                deltas: per_pair_delta.len(),
                distances: distance_errors.len(),
            });
        }
        let n_pairs = per_pair_delta.len();
        let miscalibration_count =
            count_miscalibrations(&distance_errors, miscalibration_threshold);
        Ok(Self {
            algorithm: algorithm.into(),
            mean_delta: mean_absolute_pose(&per_pair_delta),
            per_pair_delta,
            distance_errors,
            global_fit,
            miscalibration_count,
            n_pairs,
        })
    }
}

fn mean_absolute_pose(poses: &[EulerPose]) -> EulerPose {
    if poses.is_empty() {
        return EulerPose::default();
    }
    let n = poses.len() as f64;
    let mut mean = EulerPose::default();
    for p in poses {
        mean.roll += p.roll.abs();
        mean.pitch += p.pitch.abs();
        mean.yaw += p.yaw.abs();
        mean.x += p.x.abs();
        mean.y += p.y.abs();
        mean.z += p.z.abs();
    }
    EulerPose::new(
        mean.roll / n,
        mean.pitch / n,
        mean.yaw / n,
        mean.x / n,
        mean.y / n,
        mean.z / n,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Write a table to disk.
///
/// CSV has the fixed columns `algorithm, pair_index, d_roll, d_pitch, d_yaw,
/// dx, dy, dz, dist_x, dist_y, dist_z`, one row per pair, values at nine
/// significant digits so a read-back is lossless for plotting purposes. JSON
/// mirrors the struct fields exactly.
pub fn export_metrics(
    table: &MetricsTable,
    path: &Path,
    format: ExportFormat,
) -> Result<(), MetricsError> {
    let body = match format {
        ExportFormat::Csv => render_csv(table),
        ExportFormat::Json => {
            let mut text = serde_json::to_string_pretty(table)?;
            text.push('\n');
            text
        }
    };
    let mut file = fs::File::create(path)?;
    file.write_all(body.as_bytes())?;
    Ok(())
}

pub(crate) const CSV_HEADER: &str =
    "algorithm,pair_index,d_roll,d_pitch,d_yaw,dx,dy,dz,dist_x,dist_y,dist_z";

fn render_csv(table: &MetricsTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (index, (delta, dist)) in table
        .per_pair_delta
        .iter()
        .zip(&table.distance_errors)
        .enumerate()
    {
        out.push_str(&format!(
            "{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            table.algorithm,
            index,
            delta.roll,
            delta.pitch,
            delta.yaw,
            delta.x,
            delta.y,
            delta.z,
            dist.x,
            dist.y,
            dist.z,
        ));
    }
    out
}

mod vec3_seq {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::se3::Vec3;

    pub fn serialize<S: Serializer>(values: &[Vec3], serializer: S) -> Result<S::Ok, S::Error> {
        let arrays: Vec<[f64; 3]> = values.iter().map(|v| [v.x, v.y, v.z]).collect();
        arrays.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<Vec<Vec3>, D::Error> {
        let arrays = Vec::<[f64; 3]>::deserialize(deserializer)?;
        Ok(arrays
            .into_iter()
            .map(|a| Vec3::new(a[0], a[1], a[2]))
            .collect())
    }
}
