//! From registration outputs to calibration verdicts.
//!
//! Whatever algorithm produced them, per-pair results are reduced to one
//! transform convention — the map carrying first-sensor observation
//! coordinates onto second-sensor observation coordinates — then aggregated
//! into a mean calibration. The joint-registration path also carries the
//! reconstructed mixture along, which [`plausibility_check`] can hold against
//! a reference sampling of the real target shape: a calibration whose
//! reconstruction does not look like the target is suspect no matter how
//! confidently the numbers converged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, ObservationSet, PointCloud, SpatialIndex};
use crate::gmm::{GmmModel, JointRegistrationResult};
use crate::icp::{icp_point_to_point, register_pair, IcpConfig, IcpVariant};
use crate::se3::{mean_transform, EulerPose, RigidTransform, Se3Error, Vec3};

/// Default pass/fail gate for [`plausibility_check`] scores, in meters.
pub const PLAUSIBILITY_THRESHOLD: f64 = 0.05;

/// Mixture components with weight below this fraction of the uniform weight
/// (1/M) are treated as empty and pruned before reconstruction scoring.
pub const COMPONENT_PRUNE_FRACTION: f64 = 0.25;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("registration produced {transforms} transforms for {observations} observations")]
    MisalignedBookkeeping {
        transforms: usize,
        observations: usize,
    },
    #[error("no mixture component survives pruning")]
    EmptyModel,
    #[error("every pair failed registration; nothing to aggregate")]
    AllPairsFailed,
    #[error(transparent)]
    Mean(#[from] Se3Error),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// The calibration algorithms the toolkit can run and compare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gmm,
    PointIcp,
    PlaneIcp,
    Gicp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Gmm,
        Algorithm::PointIcp,
        Algorithm::PlaneIcp,
        Algorithm::Gicp,
    ];

    /// Stable lowercase name, matching the serialized form.
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gmm => "gmm",
            Algorithm::PointIcp => "point_icp",
            Algorithm::PlaneIcp => "plane_icp",
            Algorithm::Gicp => "gicp",
        }
    }

    /// The pairwise ICP variant backing this algorithm, if it is one.
    pub fn icp_variant(self) -> Option<IcpVariant> {
        match self {
            Algorithm::Gmm => None,
            Algorithm::PointIcp => Some(IcpVariant::Point),
            Algorithm::PlaneIcp => Some(IcpVariant::Plane),
            Algorithm::Gicp => Some(IcpVariant::Gicp),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A pair that produced no usable transform, with the reason.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair_index: usize,
    pub message: String,
}

/// Aggregated calibration estimate for one algorithm over one observation
/// set.
///
/// `per_pair_transforms[k]` maps first-sensor observation coordinates onto
/// second-sensor observation coordinates for the k-th *successful* pair;
/// `per_pair_euler` is its angle/translation decomposition. With no failures
/// the lists cover every pair in order. `mean_transform` is always exactly
/// the rotation-averaged mean of `per_pair_transforms`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub algorithm: Algorithm,
    pub per_pair_transforms: Vec<RigidTransform>,
    pub per_pair_euler: Vec<EulerPose>,
    pub mean_transform: RigidTransform,
    /// Converged mixture from the joint registration; absent for ICP runs.
    pub reconstruction: Option<GmmModel>,
    /// Reconstruction-vs-prior score, when a check was run.
    pub plausibility: Option<f64>,
    pub failures: Vec<PairFailure>,
}

fn aggregate(
    algorithm: Algorithm,
    outcomes: Vec<Result<RigidTransform, String>>,
    reconstruction: Option<GmmModel>,
) -> Result<CalibrationReport, PipelineError> {
    let mut per_pair_transforms = Vec::new();
    let mut per_pair_euler = Vec::new();
    let mut failures = Vec::new();
    for (pair_index, outcome) in outcomes.into_iter().enumerate() {
        // A transform so twisted its angles cannot be read off is as useless
        // to the operator as a failed solve; file it with the failures.
        match outcome.and_then(|t| {
            t.to_euler()
                .map(|e| (t, e))
                .map_err(|e| e.to_string())
        }) {
            Ok((transform, euler)) => {
                per_pair_transforms.push(transform);
                per_pair_euler.push(euler);
            }
            Err(message) => failures.push(PairFailure {
                pair_index,
                message,
            }),
        }
    }
    if per_pair_transforms.is_empty() {
        return Err(PipelineError::AllPairsFailed);
    }
    let mean = mean_transform(&per_pair_transforms)?;
    Ok(CalibrationReport {
        algorithm,
        per_pair_transforms,
        per_pair_euler,
        mean_transform: mean,
        reconstruction,
        plausibility: None,
        failures,
    })
}

/// Turn a joint registration over `pairs` into per-pair calibrations.
///
/// The joint result assigns each observation a transform into the shared
/// latent frame; for a pair (first-sensor observation `a`, second-sensor
/// observation `b`) the calibration is `T_b⁻¹ ∘ T_a`, which cancels the
/// arbitrary latent frame. Sensor membership comes from the observation
/// set's bookkeeping, never from point positions.
pub fn recover_calibration_gmm(
    result: &JointRegistrationResult,
    pairs: &ObservationSet,
) -> Result<CalibrationReport, PipelineError> {
    if result.transforms.len() != pairs.len() {
        return Err(PipelineError::MisalignedBookkeeping {
            transforms: result.transforms.len(),
            observations: pairs.len(),
        });
    }
    let outcomes = pairs
        .pairs()
        .iter()
        .map(|pair| {
            let to_latent_first = &result.transforms[pair.reference];
            let to_latent_second = &result.transforms[pair.source];
            Ok(to_latent_second.inverse().compose(to_latent_first))
        })
        .collect();
    aggregate(Algorithm::Gmm, outcomes, Some(result.model.clone()))
}

/// Register every pair independently with the given ICP variant.
///
/// Each run takes the second sensor's observation as the ICP source and the
/// first sensor's as the target; the result is inverted so the stored
/// transform follows the same first-onto-second convention as the joint
/// path. Pairs whose solve fails are recorded and left out of the mean —
/// bad-but-finite solutions stay in.
pub fn recover_calibration_icp(
    variant: IcpVariant,
    pairs: &ObservationSet,
    config: &IcpConfig,
) -> Result<CalibrationReport, PipelineError> {
    let algorithm = match variant {
        IcpVariant::Point => Algorithm::PointIcp,
        IcpVariant::Plane => Algorithm::PlaneIcp,
        IcpVariant::Gicp => Algorithm::Gicp,
    };
    let config = IcpConfig {
        variant,
        ..config.clone()
    };
    let observations = pairs.observations();
    let outcomes = pairs
        .pairs()
        .par_iter()
        .map(|pair| {
            register_pair(
                &observations[pair.source],
                &observations[pair.reference],
                &config,
            )
            .map(|r| r.transform.inverse())
            .map_err(|e| e.to_string())
        })
        .collect();
    aggregate(algorithm, outcomes, None)
}

/// Nearest-rank 95th percentile.
fn percentile_95(mut distances: Vec<f64>) -> f64 {
    distances.sort_by(f64::total_cmp);
    let rank = ((distances.len() as f64) * 0.95).ceil() as usize;
    distances[rank.saturating_sub(1).min(distances.len() - 1)]
}

/// How closely the reconstructed mixture resembles a reference sampling of
/// the real target shape, in meters (lower is better).
///
/// Components below the pruning weight are dropped; the surviving means are
/// rigidly aligned onto the prior (centroid shift, then point-to-point ICP —
/// the reconstruction lives in an arbitrary frame, so only shape may count),
/// and the score is the larger of the two directions' 95th-percentile
/// nearest-neighbor distances. If the fine alignment cannot lock on at all,
/// the centroid alignment alone is scored — a shape that ICP cannot match to
/// the prior earns its large score.
pub fn plausibility_check(model: &GmmModel, prior: &PointCloud) -> Result<f64, PipelineError> {
    let prune_below = COMPONENT_PRUNE_FRACTION / model.len() as f64;
    let kept: Vec<Vec3> = model
        .means()
        .iter()
        .zip(model.weights())
        .filter(|(_, &w)| w >= prune_below)
        .map(|(&m, _)| m)
        .collect();
    if kept.is_empty() {
        return Err(PipelineError::EmptyModel);
    }
    if prior.is_empty() {
        return Err(PipelineError::Cloud(CloudError::EmptyCloud));
    }

    let mean = |points: &[Vec3]| points.iter().sum::<Vec3>() / points.len() as f64;
    let shift = mean(prior.points()) - mean(&kept);
    let shifted: Vec<Vec3> = kept.iter().map(|p| p + shift).collect();
    let means_cloud = PointCloud::new(shifted, "reconstruction", "0")?;

    let aligned = match icp_point_to_point(&means_cloud, prior, &IcpConfig::default()) {
        Ok(result) => means_cloud.transformed(&result.transform),
        Err(_) => means_cloud,
    };

    let prior_index = SpatialIndex::build(prior)?;
    let aligned_index = SpatialIndex::build(&aligned)?;
    let forward: Vec<f64> = aligned
        .points()
        .iter()
        .map(|p| prior_index.nearest(p).1)
        .collect();
    let backward: Vec<f64> = prior
        .points()
        .iter()
        .map(|p| aligned_index.nearest(p).1)
        .collect();
    Ok(percentile_95(forward).max(percentile_95(backward)))
}
