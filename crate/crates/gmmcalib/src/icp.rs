//! Pairwise ICP baselines: point-to-point, point-to-plane, and generalized
//! (plane-to-plane) ICP.
//!
//! All three share one outer loop — gated nearest-neighbor correspondences,
//! a transform update, a convergence check on the update magnitude — and
//! differ in the inner solve:
//!
//! - **point** re-solves the full transform in closed form from the current
//!   correspondence set (weighted rigid least squares);
//! - **plane** minimizes the residual along the target normal with one
//!   linearized 6×6 solve per iteration;
//! - **gicp** minimizes a distribution-to-distribution Mahalanobis distance,
//!   with per-point covariances regularized to thin disks spanning the local
//!   surface.
//!
//! Returned transforms map the source cloud's frame onto the target cloud's
//! frame.
//!
//! The linearized variants hold directions the geometry cannot determine
//! fixed (least-norm update): a flat target neither can nor needs to fix its
//! in-plane pose, so sliding freedom is not an error. [`IcpError::IllConditioned`]
//! fires only when the residuals demand motion in such an undetermined
//! direction.

use nalgebra::{Matrix3, SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{kabsch, AlignError};
use crate::cloud::{CloudError, PointCloud, SpatialIndex};
use crate::se3::{project_to_so3, Mat3, RigidTransform, Vec3};

type Mat6 = SMatrix<f64, 6, 6>;
type Vec6 = SVector<f64, 6>;

#[derive(Debug, Error, PartialEq)]
pub enum IcpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no correspondences within the {0} m gate")]
    NoCorrespondences(f64),
    #[error("correspondence geometry does not constrain a rigid transform")]
    DegenerateGeometry,
    #[error("residuals demand motion along a direction the geometry cannot determine")]
    IllConditioned,
    #[error("cloud preparation failed: {0}")]
    Cloud(#[from] CloudError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpVariant {
    Point,
    Plane,
    Gicp,
}

/// Shared tuning for every variant; unused knobs are ignored (e.g.
/// `normal_k` by the point variant).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub variant: IcpVariant,
    /// Correspondences farther apart than this are dropped. The default
    /// comfortably covers misalignments of ±0.1 m and ±3° at 10 m range.
    pub max_correspondence_distance: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the per-iteration update, measured as the
    /// Frobenius distance of the incremental rotation from identity plus the
    /// incremental translation norm.
    pub transform_tolerance: f64,
    /// Neighborhood size for target normal estimation (plane variant).
    pub normal_k: usize,
    /// Neighborhood size for per-point covariance estimation (gicp).
    pub covariance_k: usize,
    /// Smallest regularized covariance eigenvalue (gicp). 1 makes every
    /// covariance isotropic and the variant behaves like point-to-point.
    pub gicp_epsilon: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            variant: IcpVariant::Point,
            max_correspondence_distance: 1.0,
            max_iterations: 100,
            transform_tolerance: 1e-6,
            normal_k: 15,
            covariance_k: 15,
            gicp_epsilon: 1e-3,
        }
    }
}

/// Outcome of one pairwise registration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairwiseResult {
    /// Maps source-frame coordinates onto the target frame.
    pub transform: RigidTransform,
    /// Fraction of source points with a gated correspondence at the end.
    pub fitness: f64,
    /// Root-mean-square Euclidean distance over the final correspondences.
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared gated residuals after each iteration's update; the
    /// classic ICP argument makes this non-increasing.
    pub objective_trace: Vec<f64>,
}

/// Dispatch on `config.variant`.
pub fn register_pair(
    source: &PointCloud,
    target: &PointCloud,
    config: &IcpConfig,
) -> Result<PairwiseResult, IcpError> {
    match config.variant {
        IcpVariant::Point => icp_point_to_point(source, target, config),
        IcpVariant::Plane => icp_point_to_plane(source, target, config),
        IcpVariant::Gicp => icp_generalized(source, target, config),
    }
}

fn validate(config: &IcpConfig) -> Result<(), IcpError> {
    if !(config.max_correspondence_distance > 0.0) {
        return Err(IcpError::InvalidConfig(format!(
            "max_correspondence_distance must be positive, got {}",
            config.max_correspondence_distance
        )));
    }
    if config.max_iterations == 0 {
        return Err(IcpError::InvalidConfig(
            "max_iterations must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Index pairs and distance of every gated source→target correspondence
/// under the current transform.
fn correspondences(
    source: &PointCloud,
    index: &SpatialIndex,
    transform: &RigidTransform,
    gate: f64,
) -> Vec<(usize, usize, f64)> {
    source
        .points()
        .par_iter()
        .enumerate()
        .filter_map(|(si, p)| {
            let (ti, distance) = index.nearest(&transform.apply(p));
            (distance <= gate).then_some((si, ti, distance))
        })
        .collect()
}

/// Magnitude of an incremental transform: rotation Frobenius distance from
/// identity plus translation norm.
fn update_magnitude(delta: &RigidTransform) -> f64 {
    (delta.rotation - Mat3::identity()).norm() + delta.translation.norm()
}

fn finish(
    source: &PointCloud,
    target: &PointCloud,
    transform: RigidTransform,
    pairs: &[(usize, usize, f64)],
    iterations: usize,
    converged: bool,
    objective_trace: Vec<f64>,
) -> PairwiseResult {
    let sum_sq: f64 = pairs
        .iter()
        .map(|&(si, ti, _)| {
            (transform.apply(&source.points()[si]) - target.points()[ti]).norm_squared()
        })
        .sum();
    PairwiseResult {
        transform,
        fitness: pairs.len() as f64 / source.len() as f64,
        rmse: (sum_sq / pairs.len() as f64).sqrt(),
        iterations,
        converged,
        objective_trace,
    }
}

pub fn icp_point_to_point(
    source: &PointCloud,
    target: &PointCloud,
    config: &IcpConfig,
) -> Result<PairwiseResult, IcpError> {
    validate(config)?;
    let index = SpatialIndex::build(target)?;
    let gate = config.max_correspondence_distance;
    let mut transform = RigidTransform::identity();
    let mut trace = Vec::new();

    for iteration in 1..=config.max_iterations {
        let pairs = correspondences(source, &index, &transform, gate);
        if pairs.is_empty() {
            return Err(IcpError::NoCorrespondences(gate));
        }
        let src: Vec<Vec3> = pairs.iter().map(|&(si, _, _)| source.points()[si]).collect();
        let dst: Vec<Vec3> = pairs.iter().map(|&(_, ti, _)| target.points()[ti]).collect();
        // Absolute re-solve from the original source points: no incremental
        // drift can accumulate.
        let solved = kabsch(&src, &dst).map_err(|e| match e {
            AlignError::TooFewCorrespondences(_)
            | AlignError::ZeroWeight
            | AlignError::DegenerateCovariance => IcpError::DegenerateGeometry,
        })?;
        let delta = solved.compose(&transform.inverse());
        let step = update_magnitude(&delta);
        transform = solved;
        trace.push(
            pairs
                .iter()
                .map(|&(si, ti, _)| {
                    (transform.apply(&source.points()[si]) - target.points()[ti]).norm_squared()
                })
                .sum(),
        );
        if step < config.transform_tolerance {
            return Ok(finish(source, target, transform, &pairs, iteration, true, trace));
        }
        if iteration == config.max_iterations {
            return Ok(finish(source, target, transform, &pairs, iteration, false, trace));
        }
    }
    unreachable!("loop returns on cap");
}

/// Least-norm solve of the symmetric system `A ξ = b`.
///
/// Eigendirections with eigenvalues below `1e-12 · λ_max` are undetermined
/// by the geometry and receive no update; if `b` has a significant component
/// along one of them the residuals are asking for motion the system cannot
/// decide, and the solve fails instead.
fn solve_least_norm(a: &Mat6, b: &Vec6) -> Result<Vec6, IcpError> {
    let eigen = nalgebra::SymmetricEigen::new(*a);
    let lambda_max = eigen.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    if lambda_max == 0.0 {
        return Err(IcpError::DegenerateGeometry);
    }
    let cutoff = lambda_max * 1e-12;
    let mut solution = Vec6::zeros();
    let mut dropped_demand = 0.0f64;
    for i in 0..6 {
        let lambda = eigen.eigenvalues[i];
        let direction = eigen.eigenvectors.column(i);
        let projection = direction.dot(b);
        if lambda.abs() > cutoff {
            solution += direction * (projection / lambda);
        } else {
            dropped_demand = dropped_demand.max(projection.abs());
        }
    }
    if dropped_demand > 1e-6 * b.norm().max(1e-12) {
        return Err(IcpError::IllConditioned);
    }
    Ok(solution)
}

/// Incremental transform from a 6-vector (rotation first, translation
/// second), with the rotation built exactly from the axis-angle exponential.
fn delta_from_twist(xi: &Vec6) -> RigidTransform {
    let omega = Vec3::new(xi[0], xi[1], xi[2]);
    let u = Vec3::new(xi[3], xi[4], xi[5]);
    let angle = omega.norm();
    let rotation = if angle < 1e-12 {
        Mat3::identity()
    } else {
        nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(omega),
            angle,
        )
        .into_inner()
    };
    RigidTransform {
        rotation,
        translation: u,
    }
}

pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    config: &IcpConfig,
) -> Result<PairwiseResult, IcpError> {
    validate(config)?;
    let prepared;
    let target = if target.normals().is_some() {
        target
    } else {
        prepared = target.estimate_normals(config.normal_k)?;
        &prepared
    };
    let normals = target.normals().expect("normals just ensured");
    let index = SpatialIndex::build(target)?;
    let gate = config.max_correspondence_distance;
    let mut transform = RigidTransform::identity();
    let mut trace = Vec::new();

    for iteration in 1..=config.max_iterations {
        let pairs = correspondences(source, &index, &transform, gate);
        if pairs.is_empty() {
            return Err(IcpError::NoCorrespondences(gate));
        }
        let mut a = Mat6::zeros();
        let mut b = Vec6::zeros();
        for &(si, ti, _) in &pairs {
            let p = transform.apply(&source.points()[si]);
            let n = normals[ti];
            let residual = n.dot(&(p - target.points()[ti]));
            let jr = p.cross(&n);
            let j = Vec6::new(jr.x, jr.y, jr.z, n.x, n.y, n.z);
            a += j * j.transpose();
            b -= j * residual;
        }
        let xi = solve_least_norm(&a, &b)?;
        let delta = delta_from_twist(&xi);
        let rotation = project_to_so3(&(delta.rotation * transform.rotation))
            .map_err(|_| IcpError::DegenerateGeometry)?;
        transform = RigidTransform {
            rotation,
            translation: delta.rotation * transform.translation + delta.translation,
        };
        trace.push(
            pairs
                .iter()
                .map(|&(si, ti, _)| {
                    let r = normals[ti]
                        .dot(&(transform.apply(&source.points()[si]) - target.points()[ti]));
                    r * r
                })
                .sum(),
        );
        let step = update_magnitude(&delta);
        if step < config.transform_tolerance {
            return Ok(finish(source, target, transform, &pairs, iteration, true, trace));
        }
        if iteration == config.max_iterations {
            return Ok(finish(source, target, transform, &pairs, iteration, false, trace));
        }
    }
    unreachable!("loop returns on cap");
}

/// Per-point covariances regularized onto the local surface: the smallest
/// eigenvalue (surface-normal direction) becomes `epsilon`, the others 1.
fn surface_covariances(
    cloud: &PointCloud,
    k: usize,
    epsilon: f64,
) -> Result<Vec<Mat3>, IcpError> {
    if cloud.len() < k {
        return Err(IcpError::Cloud(CloudError::TooFewPoints {
            need: k,
            got: cloud.len(),
        }));
    }
    let index = SpatialIndex::build(cloud)?;
    let covariances = cloud
        .points()
        .par_iter()
        .map(|p| {
            let neighbors = index.k_nearest(p, k);
            let mut centroid = Vec3::zeros();
            for &(i, _) in &neighbors {
                centroid += cloud.points()[i];
            }
            centroid /= neighbors.len() as f64;
            let mut cov = Matrix3::zeros();
            for &(i, _) in &neighbors {
                let d = cloud.points()[i] - centroid;
                cov += d * d.transpose();
            }
            cov /= neighbors.len() as f64;
            let eigen = nalgebra::SymmetricEigen::new(cov);
            let smallest = eigen
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            let mut regularized = Matrix3::zeros();
            for i in 0..3 {
                let v = eigen.eigenvectors.column(i);
                let scale = if i == smallest { epsilon } else { 1.0 };
                regularized += scale * v * v.transpose();
            }
            regularized
        })
        .collect();
    Ok(covariances)
}

pub fn icp_generalized(
    source: &PointCloud,
    target: &PointCloud,
    config: &IcpConfig,
) -> Result<PairwiseResult, IcpError> {
    validate(config)?;
    let source_cov = surface_covariances(source, config.covariance_k, config.gicp_epsilon)?;
    let target_cov = surface_covariances(target, config.covariance_k, config.gicp_epsilon)?;
    let index = SpatialIndex::build(target)?;
    let gate = config.max_correspondence_distance;
    let mut transform = RigidTransform::identity();
    let mut trace = Vec::new();

    for iteration in 1..=config.max_iterations {
        let pairs = correspondences(source, &index, &transform, gate);
        if pairs.is_empty() {
            return Err(IcpError::NoCorrespondences(gate));
        }
        // Combined covariance of each pair under the current rotation, and
        // one Gauss-Newton step on the Mahalanobis objective.
        let mut a = Mat6::zeros();
        let mut b = Vec6::zeros();
        for &(si, ti, _) in &pairs {
            let p = transform.apply(&source.points()[si]);
            let d = p - target.points()[ti];
            let combined =
                target_cov[ti] + transform.rotation * source_cov[si] * transform.rotation.transpose();
            let weight = combined.try_inverse().ok_or(IcpError::DegenerateGeometry)?;
            // d(ξ) ≈ d + ω×p + u ⇒ J = [-[p]× | I].
            let mut j = SMatrix::<f64, 3, 6>::zeros();
            let skew = Matrix3::new(0.0, p.z, -p.y, -p.z, 0.0, p.x, p.y, -p.x, 0.0);
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew);
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            a += j.transpose() * weight * j;
            b -= j.transpose() * weight * d;
        }
        let xi = solve_least_norm(&a, &b)?;
        let delta = delta_from_twist(&xi);
        let rotation = project_to_so3(&(delta.rotation * transform.rotation))
            .map_err(|_| IcpError::DegenerateGeometry)?;
        transform = RigidTransform {
            rotation,
            translation: delta.rotation * transform.translation + delta.translation,
        };
        trace.push({
            // Post-update objective under the covariances used for the step.
            let mut value = 0.0;
            for &(si, ti, _) in &pairs {
                let p = transform.apply(&source.points()[si]);
                let d = p - target.points()[ti];
                let combined = target_cov[ti]
                    + transform.rotation * source_cov[si] * transform.rotation.transpose();
                if let Some(weight) = combined.try_inverse() {
                    value += (weight * d).dot(&d);
                }
            }
            value
        });
        let step = update_magnitude(&delta);
        if step < config.transform_tolerance {
            return Ok(finish(source, target, transform, &pairs, iteration, true, trace));
        }
        if iteration == config.max_iterations {
            return Ok(finish(source, target, transform, &pairs, iteration, false, trace));
        }
    }
    unreachable!("loop returns on cap");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::EulerPose;
    use approx::assert_abs_diff_eq;

    /// Deterministic grid over all six faces of an axis-aligned cube,
    /// `per_edge²` points per face.
    fn grid_cube(center: Vec3, edge: f64, per_edge: usize) -> Vec<Vec3> {
        let mut points = Vec::new();
        let h = edge / 2.0;
        for i in 0..per_edge {
            for j in 0..per_edge {
                let u = (i as f64 / (per_edge - 1) as f64 - 0.5) * edge;
                let v = (j as f64 / (per_edge - 1) as f64 - 0.5) * edge;
                points.push(center + Vec3::new(h, u, v));
                points.push(center + Vec3::new(-h, u, v));
                points.push(center + Vec3::new(u, h, v));
                points.push(center + Vec3::new(u, -h, v));
                points.push(center + Vec3::new(u, v, h));
                points.push(center + Vec3::new(u, v, -h));
            }
        }
        points
    }

    fn cube_scene() -> PointCloud {
        let mut points = grid_cube(Vec3::new(0.0, 0.0, 0.0), 0.5, 9);
        points.extend(grid_cube(Vec3::new(1.4, 0.6, 0.1), 0.5, 9));
        points.extend(grid_cube(Vec3::new(0.3, 1.5, -0.2), 0.5, 9));
        PointCloud::new(points, "t", "0").unwrap()
    }

    fn transformed_copy(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
        cloud.transformed(t)
    }

    fn rotation_angle(t: &RigidTransform) -> f64 {
        ((t.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    fn assert_recovers(result: &PairwiseResult, truth: &RigidTransform, rot_tol: f64, trans_tol: f64) {
        let residual = result.transform.inverse().compose(truth);
        let angle = rotation_angle(&residual);
        assert!(angle < rot_tol, "rotation error {angle} rad");
        assert!(
            residual.translation.norm() < trans_tol,
            "translation error {} m",
            residual.translation.norm()
        );
    }

    fn assert_objective_monotone(trace: &[f64]) {
        for pair in trace.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "objective increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn point_variant_is_exact_on_identical_clouds() {
        let target = cube_scene();
        let result = icp_point_to_point(&target, &target, &IcpConfig::default()).unwrap();
        assert!(result.converged);
        assert_abs_diff_eq!(rotation_angle(&result.transform), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(result.transform.translation.norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(result.rmse, 0.0, epsilon = 1e-9);
        assert_eq!(result.fitness, 1.0);
    }

    #[test]
    fn point_variant_recovers_a_small_offset() {
        let source = cube_scene();
        let truth = RigidTransform::from_euler(&EulerPose::new(
            0.0,
            0.0,
            1.0f64.to_radians(),
            0.02,
            0.0,
            0.0,
        ))
        .unwrap();
        // truth maps source onto target by construction.
        let target = transformed_copy(&source, &truth);
        let result = icp_point_to_point(&source, &target, &IcpConfig::default()).unwrap();
        assert!(result.converged);
        assert_recovers(&result, &truth, 1e-3, 1e-3);
        assert_objective_monotone(&result.objective_trace);
    }

    #[test]
    fn single_point_step_equals_the_closed_form_alignment() {
        // One iteration with correspondences known to match index-for-index
        // must equal the direct closed-form solve on those pairs.
        let source = cube_scene();
        let truth = RigidTransform::from_euler(&EulerPose::new(0.0, 0.0, 0.005, 0.003, 0.0, 0.0))
            .unwrap();
        let target = transformed_copy(&source, &truth);
        let config = IcpConfig {
            max_iterations: 1,
            ..IcpConfig::default()
        };
        let result = icp_point_to_point(&source, &target, &config).unwrap();
        let oracle = kabsch(source.points(), target.points()).unwrap();
        assert_abs_diff_eq!((result.transform.rotation - oracle.rotation).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(
            (result.transform.translation - oracle.translation).norm(),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn point_variant_reports_gate_starvation() {
        let source = PointCloud::new(
            vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0)],
            "s",
            "0",
        )
        .unwrap();
        let target = PointCloud::new(
            vec![
                Vec3::new(50.0, 0.0, 0.0),
                Vec3::new(50.1, 0.0, 0.0),
                Vec3::new(50.0, 0.1, 0.0),
            ],
            "t",
            "0",
        )
        .unwrap();
        assert_eq!(
            icp_point_to_point(&source, &target, &IcpConfig::default()).unwrap_err(),
            IcpError::NoCorrespondences(1.0)
        );
    }

    #[test]
    fn point_variant_rejects_collinear_geometry() {
        let line: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64 * 0.05, 0.0, 0.0)).collect();
        let source = PointCloud::new(line.clone(), "s", "0").unwrap();
        let target = PointCloud::new(line, "t", "0").unwrap();
        assert_eq!(
            icp_point_to_point(&source, &target, &IcpConfig::default()).unwrap_err(),
            IcpError::DegenerateGeometry
        );
    }

    #[test]
    fn plane_variant_is_exact_on_identical_clouds() {
        let target = cube_scene();
        let result = icp_point_to_plane(&target, &target, &IcpConfig::default()).unwrap();
        assert!(result.converged);
        assert!(rotation_angle(&result.transform) < 1e-6);
        assert!(result.transform.translation.norm() < 1e-6);
    }

    #[test]
    fn plane_variant_recovers_height_over_a_flat_target() {
        // A plane constrains only height, roll, and pitch. The least-norm
        // update leaves the sliding directions alone and must still recover
        // a pure height offset exactly.
        let mut points = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                points.push(Vec3::new(i as f64 * 0.1 - 2.0, j as f64 * 0.1 - 2.0, 0.0));
            }
        }
        let target = PointCloud::new(points.clone(), "t", "0").unwrap();
        let shifted: Vec<Vec3> = points.iter().map(|p| p + Vec3::new(0.0, 0.0, -0.04)).collect();
        let source = PointCloud::new(shifted, "s", "0").unwrap();
        let result = icp_point_to_plane(&source, &target, &IcpConfig::default()).unwrap();
        assert!(result.converged);
        assert_abs_diff_eq!(result.transform.translation.z, 0.04, epsilon = 1e-3);
        assert!(result.transform.translation.xy().norm() < 1e-6);
        assert!(rotation_angle(&result.transform) < 1e-6);
    }

    #[test]
    fn plane_variant_recovers_a_cube_scene_offset() {
        let source = cube_scene();
        let truth = RigidTransform::from_euler(&EulerPose::new(
            0.0,
            2.0f64.to_radians(),
            0.0,
            0.05,
            0.0,
            0.0,
        ))
        .unwrap();
        let target = transformed_copy(&source, &truth);
        let result = icp_point_to_plane(&source, &target, &IcpConfig::default()).unwrap();
        assert!(result.converged);
        assert_recovers(&result, &truth, 2e-3, 5e-3);
        assert_objective_monotone(&result.objective_trace);
    }

    #[test]
    fn least_norm_solve_flags_demand_in_an_undetermined_direction() {
        // Rank-1 system: demand along the constrained axis solves, demand
        // along an undetermined axis is an error.
        let mut a = Mat6::zeros();
        a[(2, 2)] = 4.0;
        let mut b = Vec6::zeros();
        b[2] = 2.0;
        let xi = solve_least_norm(&a, &b).unwrap();
        assert_abs_diff_eq!(xi[2], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(xi.norm(), 0.5, epsilon = 1e-12);

        b[0] = 1.0;
        assert_eq!(solve_least_norm(&a, &b).unwrap_err(), IcpError::IllConditioned);
    }

    #[test]
    fn gicp_is_exact_on_identical_clouds() {
        let target = cube_scene();
        let config = IcpConfig {
            variant: IcpVariant::Gicp,
            ..IcpConfig::default()
        };
        let result = icp_generalized(&target, &target, &config).unwrap();
        assert!(result.converged);
        assert!(rotation_angle(&result.transform) < 1e-6);
        assert!(result.transform.translation.norm() < 1e-6);
    }

    #[test]
    fn gicp_recovers_a_cube_scene_offset() {
        let source = cube_scene();
        let truth = RigidTransform::from_euler(&EulerPose::new(
            0.0,
            0.0,
            3.0f64.to_radians(),
            0.1,
            0.0,
            0.0,
        ))
        .unwrap();
        let target = transformed_copy(&source, &truth);
        let config = IcpConfig {
            variant: IcpVariant::Gicp,
            ..IcpConfig::default()
        };
        let result = icp_generalized(&source, &target, &config).unwrap();
        assert!(result.converged);
        assert_recovers(&result, &truth, 5e-3, 1e-2);
        assert_objective_monotone(&result.objective_trace);
    }

    #[test]
    fn nonpositive_gate_and_zero_iterations_are_rejected() {
        let cloud = cube_scene();
        let no_gate = IcpConfig {
            max_correspondence_distance: 0.0,
            ..IcpConfig::default()
        };
        assert!(matches!(
            register_pair(&cloud, &cloud, &no_gate).unwrap_err(),
            IcpError::InvalidConfig(_)
        ));
        let no_iterations = IcpConfig {
            max_iterations: 0,
            ..IcpConfig::default()
        };
        assert!(matches!(
            register_pair(&cloud, &cloud, &no_iterations).unwrap_err(),
            IcpError::InvalidConfig(_)
        ));
    }

    #[test]
    fn isotropic_gicp_matches_point_to_point() {
        let source = cube_scene();
        let truth = RigidTransform::from_euler(&EulerPose::new(
            0.0,
            0.0,
            1.5f64.to_radians(),
            0.03,
            -0.02,
            0.0,
        ))
        .unwrap();
        let target = transformed_copy(&source, &truth);
        let gicp_config = IcpConfig {
            variant: IcpVariant::Gicp,
            gicp_epsilon: 1.0,
            ..IcpConfig::default()
        };
        let point = icp_point_to_point(&source, &target, &IcpConfig::default()).unwrap();
        let gicp = icp_generalized(&source, &target, &gicp_config).unwrap();
        let difference = point.transform.inverse().compose(&gicp.transform);
        assert!(rotation_angle(&difference) < 1e-3);
        assert!(difference.translation.norm() < 1e-3);
    }

    #[test]
    fn swapped_inputs_give_the_inverse_transform() {
        let a = cube_scene();
        let truth = RigidTransform::from_euler(&EulerPose::new(
            0.01,
            0.0,
            2.0f64.to_radians(),
            0.04,
            0.02,
            0.0,
        ))
        .unwrap();
        let b = transformed_copy(&a, &truth);
        let cases = [
            (IcpVariant::Point, 1e-3, 1e-3),
            (IcpVariant::Plane, 2e-3, 5e-3),
            (IcpVariant::Gicp, 5e-3, 1e-2),
        ];
        for (variant, rot_tol, trans_tol) in cases {
            let config = IcpConfig {
                variant,
                ..IcpConfig::default()
            };
            let forward = register_pair(&a, &b, &config).unwrap();
            let backward = register_pair(&b, &a, &config).unwrap();
            let residual = forward.transform.compose(&backward.transform);
            assert!(
                rotation_angle(&residual) < rot_tol,
                "{variant:?}: {} rad",
                rotation_angle(&residual)
            );
            assert!(
                residual.translation.norm() < trans_tol,
                "{variant:?}: {} m",
                residual.translation.norm()
            );
        }
    }

    #[test]
    fn variant_names_serialize_snake_case() {
        let config = IcpConfig {
            variant: IcpVariant::Gicp,
            ..IcpConfig::default()
        };
        let json = serde_json::to_string(&config).unwrap();
        assert!(json.contains("\"gicp\""));
        let back: IcpConfig = serde_json::from_str(r#"{"variant": "plane"}"#).unwrap();
        assert_eq!(back.variant, IcpVariant::Plane);
        assert_eq!(back.max_iterations, 100);
    }
}
