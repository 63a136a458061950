//! Covariance-based surface normal estimation.

use super::{CloudError, PointCloud, SpatialIndex};
use crate::se3::{Mat3, Vec3};

/// Normals from the k-nearest-neighbour covariance (query point included):
/// the eigenvector of the smallest eigenvalue, normalised, and oriented so the
/// normal points from the surface toward the frame origin — for spinning
/// sensors that is the side the surface was seen from.
pub(super) fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud, CloudError> {
    if k < 3 {
        return Err(CloudError::TooFewPoints { need: 3, got: k });
    }
    if cloud.len() < k {
        return Err(CloudError::TooFewPoints { need: k, got: cloud.len() });
    }
    let index = SpatialIndex::build(cloud)?;
    let points = cloud.points();
    let normals: Vec<Vec3> = points
        .iter()
        .map(|p| {
            let neighbours = index.k_nearest(p, k);
            let mut mean = Vec3::zeros();
            for &(i, _) in &neighbours {
                mean += points[i];
            }
            mean /= neighbours.len() as f64;
            let mut cov = Mat3::zeros();
            for &(i, _) in &neighbours {
                let d = points[i] - mean;
                cov += d * d.transpose();
            }
            cov /= neighbours.len() as f64;
            let eig = cov.symmetric_eigen();
            let smallest = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("3 eigenvalues");
            let mut n: Vec3 = eig.eigenvectors.column(smallest).into();
            let norm = n.norm();
            if norm > 0.0 {
                n /= norm;
            } else {
                // Fully degenerate neighbourhood (all points coincide).
                n = Vec3::new(0.0, 0.0, 1.0);
            }
            // Orient toward the origin: n . (0 - p) >= 0.
            if n.dot(p) > 0.0 {
                n = -n;
            }
            n
        })
        .collect();
    cloud.clone().with_normals(normals)
}
