//! Rigid-body transforms on SE(3) and the Euler-angle convention used across
//! the crate.
//!
//! Conventions, fixed once here so every consumer agrees:
//!
//! * A [`RigidTransform`] maps a point `p` to `R * p + t`.
//! * [`RigidTransform::compose`] follows homogeneous-matrix order:
//!   `a.compose(&b)` applies `b` first, then `a` (i.e. the 4x4 product `A * B`).
//! * Euler angles are extrinsic x-y-z: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//!   Pitch is restricted to the open interval (-pi/2, pi/2); conversions near
//!   the gimbal singularity are rejected rather than silently folded.
//! * Rotation averaging is the chordal L2 mean: entrywise average projected
//!   back onto SO(3) through an SVD with determinant correction.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Margin below |sin(pitch)| = 1 at which Euler extraction is refused.
const GIMBAL_MARGIN: f64 = 1e-9;
/// Max-abs deviation of `R^T R` from the identity tolerated by [`RigidTransform::new`].
const ORTHONORMALITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum Se3Error {
    #[error("pitch {pitch} rad is within the gimbal-lock margin of ±pi/2")]
    GimbalProximity { pitch: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("averaged rotation matrix is rank-deficient; mean is not unique")]
    DegenerateMean,
    #[error("matrix is not a rotation (orthonormality or determinant check failed)")]
    NotARotation,
}

/// Roll/pitch/yaw angles (radians) plus a translation (meters).
///
/// `roll` rotates about x, `pitch` about y, `yaw` about z, applied in that
/// extrinsic order: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerPose {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EulerPose {
    pub fn new(roll: f64, pitch: f64, yaw: f64, x: f64, y: f64, z: f64) -> Self {
        Self { roll, pitch, yaw, x, y, z }
    }

    /// Build the rigid transform `Rz(yaw) * Ry(pitch) * Rx(roll)` + translation.
    pub fn to_transform(&self) -> Result<RigidTransform, Se3Error> {
        RigidTransform::from_euler(self)
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

/// A proper rigid transform: rotation matrix plus translation vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Serde representation (nested arrays) with validation on the way in.
#[derive(Serialize, Deserialize)]
struct RigidTransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut rotation = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r][c] = self.rotation[(r, c)];
            }
        }
        RigidTransformRepr { rotation, translation: self.translation.into() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = RigidTransformRepr::deserialize(d)?;
        let rotation = Mat3::from_fn(|r, c| repr.rotation[r][c]);
        RigidTransform::new(rotation, Vec3::from(repr.translation))
            .map_err(serde::de::Error::custom)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Validating constructor: `rotation` must be orthonormal with determinant
    /// +1 (within 1e-9) and `translation` finite.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, Se3Error> {
        let t = Self { rotation, translation };
        if t.is_valid() {
            Ok(t)
        } else {
            Err(Se3Error::NotARotation)
        }
    }

    /// Internal constructor for matrices that are orthonormal by construction
    /// (products of rotations, SVD projections).
    pub(crate) fn from_parts(rotation: Mat3, translation: Vec3) -> Self {
        debug_assert!(
            Self { rotation, translation }.is_valid_with_tol(1e-7),
            "constructed transform drifted off SO(3)"
        );
        Self { rotation, translation }
    }

    pub fn is_valid(&self) -> bool {
        self.is_valid_with_tol(ORTHONORMALITY_TOL)
    }

    fn is_valid_with_tol(&self, tol: f64) -> bool {
        if !self.translation.iter().all(|v| v.is_finite()) {
            return false;
        }
        if !self.rotation.iter().all(|v| v.is_finite()) {
            return false;
        }
        let gram = self.rotation.transpose() * self.rotation;
        let orthonormal = (gram - Mat3::identity()).abs().max() <= tol;
        orthonormal && (self.rotation.determinant() - 1.0).abs() <= tol.max(1e-6)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self.compose(&other)` is the homogeneous product `self * other`:
    /// `other` is applied to a point first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::from_parts(rt, -(rt * self.translation))
    }

    pub fn from_euler(pose: &EulerPose) -> Result<Self, Se3Error> {
        if !pose.pitch.is_finite() || pose.pitch.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Se3Error::GimbalProximity { pitch: pose.pitch });
        }
        let (sr, cr) = pose.roll.sin_cos();
        let (sp, cp) = pose.pitch.sin_cos();
        let (sy, cy) = pose.yaw.sin_cos();
        let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        let ry = Mat3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
        let rz = Mat3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
        Ok(Self::from_parts(rz * ry * rx, pose.translation()))
    }

    /// Decompose back into roll/pitch/yaw. Errors with
    /// [`Se3Error::GimbalProximity`] when |R31| is within 1e-9 of 1, where the
    /// roll/yaw split becomes numerically meaningless.
    pub fn to_euler(&self) -> Result<EulerPose, Se3Error> {
        let r = &self.rotation;
        let r31 = r[(2, 0)];
        if r31.abs() >= 1.0 - GIMBAL_MARGIN {
            return Err(Se3Error::GimbalProximity { pitch: -r31.clamp(-1.0, 1.0).asin() });
        }
        Ok(EulerPose {
            roll: r[(2, 1)].atan2(r[(2, 2)]),
            pitch: (-r31).asin(),
            yaw: r[(1, 0)].atan2(r[(0, 0)]),
            x: self.translation.x,
            y: self.translation.y,
            z: self.translation.z,
        })
    }
}

/// Project an arbitrary 3x3 matrix onto SO(3): SVD, then `U * V^T` with the
/// column of `U` belonging to the smallest singular value flipped if the
/// determinant would come out negative.
///
/// Errors with [`Se3Error::DegenerateMean`] when the smallest singular value
/// is (numerically) zero, in which case the nearest rotation is not unique.
pub(crate) fn project_to_so3(m: &Mat3) -> Result<Mat3, Se3Error> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd requested u"), svd.v_t.expect("svd requested v_t"));
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("3 singular values");
    if svd.singular_values[smallest] < 1e-9 {
        return Err(Se3Error::DegenerateMean);
    }
    let mut u = u;
    if (u * v_t).determinant() < 0.0 {
        for r in 0..3 {
            u[(r, smallest)] = -u[(r, smallest)];
        }
    }
    Ok(u * v_t)
}

/// Mean of a set of rigid transforms: arithmetic mean of translations, chordal
/// L2 mean of rotations (entrywise average projected onto SO(3)).
///
/// The inputs are pre-sorted into a canonical order before summation, so the
/// result is bit-identical under any permutation of the input slice.
pub fn mean_transform(transforms: &[RigidTransform]) -> Result<RigidTransform, Se3Error> {
    if transforms.is_empty() {
        return Err(Se3Error::EmptyInput);
    }
    let mut ordered: Vec<&RigidTransform> = transforms.iter().collect();
    ordered.sort_by(|a, b| {
        let ka = a.translation.iter().chain(a.rotation.iter());
        let kb = b.translation.iter().chain(b.rotation.iter());
        ka.zip(kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| !o.is_eq())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let n = transforms.len() as f64;
    let mut rot_sum = Mat3::zeros();
    let mut t_sum = Vec3::zeros();
    for t in ordered {
        rot_sum += t.rotation;
        t_sum += t.translation;
    }
    let rotation = project_to_so3(&(rot_sum / n))?;
    Ok(RigidTransform::from_parts(rotation, t_sum / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_mat_eq(a: &Mat3, b: &Mat3, tol: f64) {
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(a[(r, c)], b[(r, c)], epsilon = tol);
            }
        }
    }

    fn assert_vec_eq(a: &Vec3, b: &Vec3, tol: f64) {
        for i in 0..3 {
            assert_abs_diff_eq!(a[i], b[i], epsilon = tol);
        }
    }

    fn homogeneous(t: &RigidTransform) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&t.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t.translation);
        m
    }

    fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    fn random_pose(rng: &mut impl Rng) -> EulerPose {
        EulerPose {
            roll: rng.gen_range(-PI..PI),
            pitch: rng.gen_range(-1.4..1.4),
            yaw: rng.gen_range(-PI..PI),
            x: rng.gen_range(-10.0..10.0),
            y: rng.gen_range(-10.0..10.0),
            z: rng.gen_range(-10.0..10.0),
        }
    }

    // ----- axis-angle helpers used only as the independent geodesic-mean oracle

    fn so3_exp(w: &Vec3) -> Mat3 {
        let theta = w.norm();
        if theta < 1e-12 {
            return Mat3::identity();
        }
        let k = w / theta;
        let hat = Mat3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        Mat3::identity() + theta.sin() * hat + (1.0 - theta.cos()) * hat * hat
    }

    fn so3_log(r: &Mat3) -> Vec3 {
        let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let theta = cos_theta.acos();
        if theta < 1e-12 {
            return Vec3::zeros();
        }
        let axis = Vec3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        ) / (2.0 * theta.sin());
        axis * theta
    }

    /// Iterative geodesic (Karcher) mean of rotations -- independent oracle.
    fn geodesic_mean(rotations: &[Mat3]) -> Mat3 {
        let mut q = rotations[0];
        for _ in 0..200 {
            let mut w = Vec3::zeros();
            for r in rotations {
                w += so3_log(&(q.transpose() * r));
            }
            w /= rotations.len() as f64;
            if w.norm() < 1e-15 {
                break;
            }
            q *= so3_exp(&w);
        }
        q
    }

    #[test]
    fn compose_matches_homogeneous_matrix_product() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = random_pose(&mut rng).to_transform().unwrap();
            let b = random_pose(&mut rng).to_transform().unwrap();
            let composed = homogeneous(&a.compose(&b));
            let oracle = homogeneous(&a) * homogeneous(&b);
            for r in 0..4 {
                for c in 0..4 {
                    assert_abs_diff_eq!(composed[(r, c)], oracle[(r, c)], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn compose_quarter_turns_gives_half_turn() {
        let a = RigidTransform::from_parts(rot_z(FRAC_PI_2), Vec3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_parts(rot_z(FRAC_PI_2), Vec3::zeros());
        let c = a.compose(&b);
        assert_mat_eq(&c.rotation, &rot_z(PI), 1e-15);
        assert_vec_eq(&c.translation, &Vec3::new(1.0, 0.0, 0.0), 1e-15);
    }

    #[test]
    fn inverse_round_trips_to_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let t = random_pose(&mut rng).to_transform().unwrap();
            let id = t.compose(&t.inverse());
            assert_mat_eq(&id.rotation, &Mat3::identity(), 1e-12);
            assert_vec_eq(&id.translation, &Vec3::zeros(), 1e-10);
        }
    }

    #[test]
    fn inverse_of_pure_translation_negates_it() {
        let t = EulerPose::new(0.0, 0.0, 0.0, 1.0, 2.0, 3.0).to_transform().unwrap();
        let inv = t.inverse();
        assert_mat_eq(&inv.rotation, &Mat3::identity(), 0.0);
        assert_vec_eq(&inv.translation, &Vec3::new(-1.0, -2.0, -3.0), 0.0);
    }

    #[test]
    fn euler_matrix_matches_explicit_rotation_product() {
        // Independent evaluation: build Rz, Ry, Rx separately and multiply.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            let t = p.to_transform().unwrap();
            let rx = so3_exp(&Vec3::new(p.roll, 0.0, 0.0));
            let ry = so3_exp(&Vec3::new(0.0, p.pitch, 0.0));
            let rz = so3_exp(&Vec3::new(0.0, 0.0, p.yaw));
            assert_mat_eq(&t.rotation, &(rz * ry * rx), 1e-12);
        }
    }

    #[test]
    fn pure_yaw_quarter_turn_moves_x_to_y() {
        let t = EulerPose::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0).to_transform().unwrap();
        let p = t.apply(&Vec3::new(1.0, 0.0, 0.0));
        assert_vec_eq(&p, &Vec3::new(0.0, 1.0, 0.0), 1e-15);
    }

    #[test]
    fn euler_round_trip_is_exact_to_1e12() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let back = pose.to_transform().unwrap().to_euler().unwrap();
            assert_abs_diff_eq!(back.roll, pose.roll, epsilon = 1e-12);
            assert_abs_diff_eq!(back.pitch, pose.pitch, epsilon = 1e-12);
            assert_abs_diff_eq!(back.yaw, pose.yaw, epsilon = 1e-12);
            assert_abs_diff_eq!(back.x, pose.x, epsilon = 1e-12);
            assert_abs_diff_eq!(back.y, pose.y, epsilon = 1e-12);
            assert_abs_diff_eq!(back.z, pose.z, epsilon = 1e-12);
        }
    }

    #[test]
    fn yaw_of_small_z_rotation_reads_back_exactly() {
        let t = RigidTransform::from_parts(rot_z(0.0269), Vec3::zeros());
        let e = t.to_euler().unwrap();
        assert_abs_diff_eq!(e.yaw, 0.0269, epsilon = 1e-15);
        assert_abs_diff_eq!(e.roll, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.pitch, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gimbal_proximity_is_rejected_both_ways() {
        let near = EulerPose::new(0.3, FRAC_PI_2, -0.2, 0.0, 0.0, 0.0);
        assert!(matches!(near.to_transform(), Err(Se3Error::GimbalProximity { .. })));

        // A rotation with |R31| = 1 built directly (pitch = -pi/2 structure).
        let r = Mat3::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        let t = RigidTransform::new(r, Vec3::zeros()).unwrap();
        assert!(matches!(t.to_euler(), Err(Se3Error::GimbalProximity { .. })));
    }

    #[test]
    fn mean_of_identity_and_z_rotation_is_half_angle() {
        let a = RigidTransform::identity();
        let b = RigidTransform::from_parts(rot_z(0.2), Vec3::zeros());
        let mean = mean_transform(&[a, b]).unwrap();
        assert_mat_eq(&mean.rotation, &rot_z(0.1), 1e-12);
    }

    #[test]
    fn mean_translation_is_arithmetic_mean() {
        let a = EulerPose::new(0.0, 0.0, 0.0, 1.0, 0.0, 2.0).to_transform().unwrap();
        let b = EulerPose::new(0.0, 0.0, 0.0, 3.0, 4.0, -2.0).to_transform().unwrap();
        let mean = mean_transform(&[a, b]).unwrap();
        assert_vec_eq(&mean.translation, &Vec3::new(2.0, 2.0, 0.0), 0.0);
    }

    #[test]
    fn mean_agrees_with_geodesic_oracle_for_common_axis_spreads() {
        // About a shared axis the chordal mean is the circular mean of the
        // angles, which matches the geodesic (arithmetic) mean exactly when
        // the angle set is symmetric about its center and to cubic order in
        // the spread otherwise. Check the symmetric case at full 30-degree
        // spread and asymmetric draws at a spread small enough that the cubic
        // term stays below the tolerance.
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        for _ in 0..100 {
            let axis = {
                let v = Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                v / v.norm()
            };
            let base: f64 = rng.gen_range(-1.0..1.0);

            let mut symmetric_angles = vec![base];
            for _ in 0..2 {
                let delta = rng.gen_range(0.0..0.26);
                symmetric_angles.push(base + delta);
                symmetric_angles.push(base - delta);
            }
            let asymmetric_angles: Vec<f64> = (0..5)
                .map(|_| base + rng.gen_range(-0.015..0.015))
                .collect();

            for angles in [symmetric_angles, asymmetric_angles] {
                let rotations: Vec<Mat3> =
                    angles.iter().map(|a| so3_exp(&(axis * *a))).collect();
                let transforms: Vec<RigidTransform> = rotations
                    .iter()
                    .map(|r| RigidTransform::from_parts(*r, Vec3::zeros()))
                    .collect();
                let mean = mean_transform(&transforms).unwrap();
                let oracle = geodesic_mean(&rotations);
                assert_mat_eq(&mean.rotation, &oracle, 1e-6);
            }
        }
    }

    #[test]
    fn mean_agrees_with_geodesic_oracle_for_small_generic_spreads() {
        // Generic axes: the two means differ at cubic order in the spread, so
        // keep the spread small enough for 1e-6 agreement.
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        for _ in 0..200 {
            let base = random_pose(&mut rng).to_transform().unwrap().rotation;
            let rotations: Vec<Mat3> = (0..6)
                .map(|_| {
                    let w = Vec3::new(
                        rng.gen_range(-0.01..0.01),
                        rng.gen_range(-0.01..0.01),
                        rng.gen_range(-0.01..0.01),
                    );
                    base * so3_exp(&w)
                })
                .collect();
            let transforms: Vec<RigidTransform> = rotations
                .iter()
                .map(|r| RigidTransform::from_parts(*r, Vec3::zeros()))
                .collect();
            let mean = mean_transform(&transforms).unwrap();
            let oracle = geodesic_mean(&rotations);
            assert_mat_eq(&mean.rotation, &oracle, 1e-6);
        }
    }

    #[test]
    fn mean_is_bitwise_invariant_to_input_order() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let transforms: Vec<RigidTransform> = (0..9)
            .map(|_| random_pose(&mut rng).to_transform().unwrap())
            .collect();
        let forward = mean_transform(&transforms).unwrap();
        let mut shuffled = transforms.clone();
        shuffled.reverse();
        shuffled.swap(0, 4);
        shuffled.swap(2, 7);
        let permuted = mean_transform(&shuffled).unwrap();
        assert_eq!(forward.rotation, permuted.rotation);
        assert_eq!(forward.translation, permuted.translation);
    }

    #[test]
    fn mean_of_empty_slice_is_an_error() {
        assert_eq!(mean_transform(&[]).unwrap_err(), Se3Error::EmptyInput);
    }

    #[test]
    fn mean_of_opposing_half_turns_is_degenerate() {
        // Rz(pi) and Rz(-pi) average to diag(-1, -1, 1)... which is full rank;
        // use a genuinely rank-deficient average: Rz(pi/2) and Rz(-pi/2)
        // average to a matrix with a zero singular value.
        let a = RigidTransform::from_parts(rot_z(FRAC_PI_2), Vec3::zeros());
        let b = RigidTransform::from_parts(rot_z(-FRAC_PI_2), Vec3::zeros());
        assert_eq!(mean_transform(&[a, b]).unwrap_err(), Se3Error::DegenerateMean);
    }

    #[test]
    fn validating_constructor_rejects_scaled_matrix() {
        let err = RigidTransform::new(Mat3::identity() * 2.0, Vec3::zeros());
        assert_eq!(err.unwrap_err(), Se3Error::NotARotation);
    }

    #[test]
    fn serde_round_trip_is_lossless() {
        let t = EulerPose::new(0.1, -0.4, 2.0, 1.5, -2.5, 0.25).to_transform().unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(t.rotation, back.rotation);
        assert_eq!(t.translation, back.translation);
    }
}
