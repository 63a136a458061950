//! Weighted closed-form rigid alignment (Kabsch).
//!
//! Solves `argmin_{R,t} sum_k w_k * ||R * src_k + t - dst_k||^2` through the
//! SVD of the weighted cross-covariance, with the usual determinant correction
//! so the result is a proper rotation rather than a reflection.

use crate::se3::{Mat3, RigidTransform, Vec3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("alignment needs at least 3 weighted correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("total correspondence weight is not positive")]
    ZeroWeight,
    #[error("weighted correspondence covariance has rank < 2; rotation is unconstrained")]
    DegenerateCovariance,
}

/// Least-squares rigid transform mapping `src` onto `dst` under per-pair
/// weights. Weights must be non-negative; pairs with zero weight are inert.
pub fn weighted_kabsch(
    src: &[Vec3],
    dst: &[Vec3],
    weights: &[f64],
) -> Result<RigidTransform, AlignError> {
    assert_eq!(src.len(), dst.len(), "correspondence slices must pair up");
    assert_eq!(src.len(), weights.len(), "one weight per correspondence");
    if src.len() < 3 {
        return Err(AlignError::TooFewCorrespondences(src.len()));
    }

    let w_sum: f64 = weights.iter().sum();
    if !(w_sum > 0.0) {
        return Err(AlignError::ZeroWeight);
    }
    let mut src_c = Vec3::zeros();
    let mut dst_c = Vec3::zeros();
    for ((s, d), &w) in src.iter().zip(dst).zip(weights) {
        src_c += w * s;
        dst_c += w * d;
    }
    src_c /= w_sum;
    dst_c /= w_sum;

    // h = sum_k w_k (src_k - src_c)(dst_k - dst_c)^T; R maximizes tr(R h).
    let mut h = Mat3::zeros();
    for ((s, d), &w) in src.iter().zip(dst).zip(weights) {
        h += w * (s - src_c) * (d - dst_c).transpose();
    }

    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd requested u"), svd.v_t.expect("svd requested v_t"));
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[1] <= sv[0] * 1e-9 {
        // At most one independent direction in the weighted clouds: any
        // rotation about it fits equally well.
        return Err(AlignError::DegenerateCovariance);
    }

    let v = v_t.transpose();
    let mut correction = v * u.transpose();
    if correction.determinant() < 0.0 {
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("3 singular values");
        let mut v = v;
        for r in 0..3 {
            v[(r, smallest)] = -v[(r, smallest)];
        }
        correction = v * u.transpose();
    }
    let rotation = correction;
    let translation = dst_c - rotation * src_c;
    Ok(RigidTransform::from_parts(rotation, translation))
}

/// Unweighted convenience wrapper.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform, AlignError> {
    let weights = vec![1.0; src.len()];
    weighted_kabsch(src, dst, &weights)
}
