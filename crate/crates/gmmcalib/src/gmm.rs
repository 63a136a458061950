//! Joint registration of several point clouds against one shared Gaussian
//! mixture.
//!
//! Instead of aligning clouds pairwise, every observation is treated as a
//! noisy draw from a single latent mixture model. Expectation-maximization
//! alternates between two views of the same objective:
//!
//! - **E-step** — given the current transforms and mixture, compute for every
//!   point the posterior probability that each component (or a uniform
//!   outlier term) generated it.
//! - **M-step** — re-solve every observation's rigid transform in closed form
//!   against responsibility-weighted virtual targets, then re-estimate the
//!   mixture from the freshly transformed points.
//!
//! Transforms map each observation's own frame into the latent model frame.
//! That latent frame is arbitrary: applying a common rigid motion to the
//! model and all transforms leaves the likelihood unchanged, so only
//! *relative* transforms between observations carry physical meaning.
//!
//! Components are isotropic (`σ²·I`). This is what makes the M-step's
//! transform update a closed-form weighted Procrustes problem; full
//! covariances would need an iterative inner solver. A uniform outlier
//! component over the data's bounding box absorbs clutter (ground returns,
//! stray reflections) that no Gaussian should have to explain.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{weighted_kabsch, AlignError};
use crate::cloud::{bounding_box, PointCloud};
use crate::se3::{RigidTransform, Vec3};
use crate::ObservationSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Smallest admissible component variance (m²). Keeps components from
/// collapsing onto single points; well below typical sensor noise
/// (±0.01 m precision ⇒ 1e-4 m² variance).
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Log-domain truncation in nats. Mixture terms falling this far below a
/// point's best term are dropped: each carries relative mass below
/// exp(-40) ≈ 4e-18, so even hundreds of them stay under the 1e-12
/// normalization tolerance.
const LOG_TRUNCATION: f64 = 40.0;

/// Rows per parallel reduction block in the M-step. Blocks are fixed by row
/// index and combined in block order, so results do not depend on how many
/// threads processed them.
const REDUCTION_BLOCK: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("mixture needs at least 8 components, got {0}")]
    InvalidComponentCount(usize),
    #[error("invalid mixture model: {0}")]
    InvalidModel(String),
    #[error(
        "point {point} of observation {observation} is unrepresentable under every \
         mixture term; its density underflows to zero"
    )]
    NumericUnderflow { observation: usize, point: usize },
    #[error(
        "observation {0} does not constrain a rigid transform; its weighted \
         correspondences are rank-deficient or carry no mass"
    )]
    DegenerateAlignment(usize),
    #[error("joint registration needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("observation {index} has {got} points; joint registration needs at least 10")]
    TooFewPoints { index: usize, got: usize },
}

/// Tuning knobs for [`joint_register`]. The `Default` values suit
/// room-scale scenes; serde field names match the on-disk config schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    /// Component count. `None` picks one point-density-proportional value:
    /// one component per 50 points, clamped to [8, 400].
    pub components: Option<usize>,
    /// Mass of the uniform outlier term, in [0, 1).
    pub outlier_weight: f64,
    /// Convergence threshold on the relative log-likelihood change.
    #[serde(rename = "tol")]
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Edge length (m) of the cubes that initial component means are
    /// scattered on.
    #[serde(rename = "cube_edge_init")]
    pub init_cube_edge: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            components: None,
            outlier_weight: 0.05,
            tolerance: 1e-6,
            max_iterations: 200,
            seed: 0,
            init_cube_edge: 0.5,
        }
    }
}

/// Isotropic Gaussian mixture plus one uniform outlier term.
///
/// Invariants, enforced at construction and deserialization: all parameter
/// vectors share one length, variances sit on or above [`VARIANCE_FLOOR`],
/// component weights and the outlier weight are non-negative and sum to 1
/// within 1e-9, and the outlier density is positive.
#[derive(Clone, Debug)]
pub struct GmmModel {
    means: Vec<Vec3>,
    variances: Vec<f64>,
    weights: Vec<f64>,
    outlier_weight: f64,
    outlier_density: f64,
}

impl GmmModel {
    pub fn new(
        means: Vec<Vec3>,
        variances: Vec<f64>,
        weights: Vec<f64>,
        outlier_weight: f64,
        outlier_density: f64,
    ) -> Result<Self, GmmError> {
        let m = means.len();
        if m == 0 {
            return Err(GmmError::InvalidModel("no components".into()));
        }
        if variances.len() != m || weights.len() != m {
            return Err(GmmError::InvalidModel(format!(
                "parameter lengths disagree: {} means, {} variances, {} weights",
                m,
                variances.len(),
                weights.len()
            )));
        }
        if means.iter().any(|mu| !mu.iter().all(|v| v.is_finite())) {
            return Err(GmmError::InvalidModel("non-finite mean".into()));
        }
        if variances.iter().any(|v| !v.is_finite() || *v < VARIANCE_FLOOR) {
            return Err(GmmError::InvalidModel(format!(
                "variances must be finite and at least {VARIANCE_FLOOR}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GmmError::InvalidModel("negative component weight".into()));
        }
        if !(0.0..1.0).contains(&outlier_weight) {
            return Err(GmmError::InvalidModel(
                "outlier weight must lie in [0, 1)".into(),
            ));
        }
        let total: f64 = weights.iter().sum::<f64>() + outlier_weight;
        if (total - 1.0).abs() > 1e-9 {
            return Err(GmmError::InvalidModel(format!(
                "weights and outlier weight sum to {total}, expected 1"
            )));
        }
        if !outlier_density.is_finite() || outlier_density <= 0.0 {
            return Err(GmmError::InvalidModel(
                "outlier density must be positive and finite".into(),
            ));
        }
        Ok(GmmModel {
            means,
            variances,
            weights,
            outlier_weight,
            outlier_density,
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &[Vec3] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn outlier_weight(&self) -> f64 {
        self.outlier_weight
    }

    pub fn outlier_density(&self) -> f64 {
        self.outlier_density
    }

    /// The model with every mean moved by `transform`; variances and weights
    /// are isotropic and mass-like, so they ride along unchanged.
    pub fn transformed(&self, transform: &RigidTransform) -> Self {
        GmmModel {
            means: self.means.iter().map(|mu| transform.apply(mu)).collect(),
            ..self.clone()
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GmmModelRepr {
    means: Vec<[f64; 3]>,
    variances: Vec<f64>,
    weights: Vec<f64>,
    outlier_weight: f64,
    outlier_density: f64,
}

impl Serialize for GmmModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GmmModelRepr {
            means: self.means.iter().map(|m| [m.x, m.y, m.z]).collect(),
            variances: self.variances.clone(),
            weights: self.weights.clone(),
            outlier_weight: self.outlier_weight,
            outlier_density: self.outlier_density,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GmmModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = GmmModelRepr::deserialize(deserializer)?;
        GmmModel::new(
            repr.means.iter().map(|m| Vec3::new(m[0], m[1], m[2])).collect(),
            repr.variances,
            repr.weights,
            repr.outlier_weight,
            repr.outlier_density,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Per-point posterior assignment probabilities from one E-step.
///
/// Stored row-major: one row per point (observations concatenated in order),
/// `n_components() + 1` columns per row, the last column being the uniform
/// outlier term. Every row sums to 1 within 1e-12.
pub struct Responsibilities {
    data: Vec<f64>,
    n_components: usize,
    /// Cumulative row offsets, one entry per observation plus a final total.
    offsets: Vec<usize>,
    log_likelihood: f64,
}

impl Responsibilities {
    /// Posterior row for one point: component columns first, outlier last.
    pub fn row(&self, observation: usize, point: usize) -> &[f64] {
        let row = self.offsets[observation] + point;
        assert!(
            row < self.offsets[observation + 1],
            "point index {point} out of range for observation {observation}"
        );
        let width = self.n_components + 1;
        &self.data[row * width..(row + 1) * width]
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn n_rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Observed-data log-likelihood of the parameters this E-step was run
    /// with, accumulated with compensated summation.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    #[cfg(test)]
    fn from_rows(rows_per_observation: &[usize], n_components: usize, data: Vec<f64>) -> Self {
        let mut offsets = vec![0];
        for count in rows_per_observation {
            offsets.push(offsets.last().unwrap() + count);
        }
        assert_eq!(data.len(), offsets.last().unwrap() * (n_components + 1));
        Responsibilities {
            data,
            n_components,
            offsets,
            log_likelihood: f64::NAN,
        }
    }
}

impl fmt::Debug for Responsibilities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Responsibilities")
            .field("rows", &self.n_rows())
            .field("n_components", &self.n_components)
            .field("log_likelihood", &self.log_likelihood)
            .finish()
    }
}

/// Outcome of [`joint_register`]: per-observation transforms into the latent
/// frame (order-aligned with the input), the converged mixture, and the
/// log-likelihood after the initial E-step and after each iteration.
#[derive(Clone, Debug)]
pub struct JointRegistrationResult {
    pub transforms: Vec<RigidTransform>,
    pub model: GmmModel,
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Compensated (Neumaier) summation: the error of every add is carried in a
/// side term, keeping long likelihood sums accurate to the last few ulps.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut compensation = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}

/// Axis-aligned box around every point of every observation, inflated by 10%
/// about its center. Extents are clamped to 1 cm so flat or single-point
/// data still spans a usable volume.
fn inflated_bounds(observations: &[PointCloud]) -> (Vec3, Vec3) {
    let (min, max) = bounding_box(observations.iter().flat_map(|o| o.points().iter()))
        .expect("observations are non-empty");
    let center = (min + max) / 2.0;
    let mut half = (max - min) * 0.55; // 10% inflation of the full extent
    for h in half.iter_mut() {
        *h = h.max(0.005);
    }
    (center - half, center + half)
}

/// Scatter `components` means over the surfaces of small axis-aligned cubes
/// dropped uniformly inside the inflated bounding box of the data.
///
/// One cube is used per 50 components (at least one); every cube center is
/// kept far enough from the box faces that the whole cube stays inside.
/// Variances start at (box diagonal / 10)², weights uniform at
/// `(1 - outlier_weight) / components`, and the outlier term is uniform over
/// the box volume.
pub fn initialize_model(
    observations: &[PointCloud],
    components: usize,
    seed: u64,
    outlier_weight: f64,
    cube_edge: f64,
) -> Result<GmmModel, GmmError> {
    if components < 8 {
        return Err(GmmError::InvalidComponentCount(components));
    }
    assert!(
        !observations.is_empty() && observations.iter().all(|o| o.len() > 0),
        "initialize_model needs non-empty observations"
    );
    let (lo, hi) = inflated_bounds(observations);
    let diagonal = (hi - lo).norm();
    let variance = (diagonal / 10.0).powi(2).max(VARIANCE_FLOOR);
    let volume = (hi - lo).iter().product::<f64>();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n_cubes = (components / 50).max(1);
    let centers: Vec<Vec3> = (0..n_cubes)
        .map(|_| {
            Vec3::from_fn(|a, _| {
                // Shrink the sampling range so the cube itself stays inside
                // the box; if the box is thinner than the cube, centre it.
                let (mut l, mut h) = (lo[a] + cube_edge / 2.0, hi[a] - cube_edge / 2.0);
                if l >= h {
                    l = (lo[a] + hi[a]) / 2.0;
                    h = l;
                }
                if l == h {
                    l
                } else {
                    rng.gen_range(l..h)
                }
            })
        })
        .collect();

    let means = (0..components)
        .map(|i| {
            let center = centers[i % n_cubes];
            let face = rng.gen_range(0..6usize);
            let u = rng.gen_range(-0.5..0.5) * cube_edge;
            let v = rng.gen_range(-0.5..0.5) * cube_edge;
            let half = cube_edge / 2.0;
            let offset = match face {
                0 => Vec3::new(half, u, v),
                1 => Vec3::new(-half, u, v),
                2 => Vec3::new(u, half, v),
                3 => Vec3::new(u, -half, v),
                4 => Vec3::new(u, v, half),
                _ => Vec3::new(u, v, -half),
            };
            center + offset
        })
        .collect();

    GmmModel::new(
        means,
        vec![variance; components],
        vec![(1.0 - outlier_weight) / components as f64; components],
        outlier_weight,
        1.0 / volume,
    )
}

/// Posterior responsibilities of every mixture term for every point, with
/// the transforms applied to the observations first.
///
/// Densities are evaluated in the log domain and normalized per point with
/// log-sum-exp, so posteriors are finite wherever at least one term is
/// representable. Terms more than 40 nats below a point's best term are
/// truncated to exactly zero.
pub fn e_step(
    observations: &[PointCloud],
    transforms: &[RigidTransform],
    model: &GmmModel,
) -> Result<Responsibilities, GmmError> {
    assert_eq!(
        observations.len(),
        transforms.len(),
        "one transform per observation"
    );
    let m = model.len();
    let width = m + 1;
    let mut offsets = vec![0usize];
    for obs in observations {
        offsets.push(offsets.last().unwrap() + obs.len());
    }
    let rows = *offsets.last().unwrap();

    // ln of each component's weighted normal coefficient, and the outlier
    // term's ln mass; both are row-independent.
    let log_coeff: Vec<f64> = model
        .weights
        .iter()
        .zip(&model.variances)
        .map(|(p, var)| p.ln() - 1.5 * (2.0 * std::f64::consts::PI * var).ln())
        .collect();
    let inv_two_var: Vec<f64> = model.variances.iter().map(|v| 1.0 / (2.0 * v)).collect();
    let log_outlier = if model.outlier_weight > 0.0 {
        (model.outlier_weight * model.outlier_density).ln()
    } else {
        f64::NEG_INFINITY
    };

    let mut data = vec![0.0f64; rows * width];
    let mut row_log_norm = vec![0.0f64; rows];
    let mut first_failure: Option<(usize, usize)> = None;

    for (i, obs) in observations.iter().enumerate() {
        let transform = &transforms[i];
        let slice_start = offsets[i] * width;
        let slice_end = offsets[i + 1] * width;
        let rows_i = &mut data[slice_start..slice_end];
        let norms_i = &mut row_log_norm[offsets[i]..offsets[i + 1]];

        // Each point owns one exclusive row, so the parallel split cannot
        // change any result.
        let failure = rows_i
            .par_chunks_mut(width)
            .zip(norms_i.par_iter_mut())
            .zip(obs.points().par_iter())
            .enumerate()
            .map(|(k, ((row, log_norm), point))| {
                let y = transform.apply(point);
                let mut best = log_outlier;
                for (j, mu) in model.means.iter().enumerate() {
                    let d2 = (y - mu).norm_squared();
                    let term = log_coeff[j] - d2 * inv_two_var[j];
                    row[j] = term;
                    if term > best {
                        best = term;
                    }
                }
                row[m] = log_outlier;
                if best == f64::NEG_INFINITY {
                    return Some(k);
                }
                // Log-sum-exp against the row maximum, truncating terms too
                // small to matter.
                let mut sum = 0.0;
                for value in row.iter_mut() {
                    if *value >= best - LOG_TRUNCATION {
                        let e = (*value - best).exp();
                        sum += e;
                        *value = e;
                    } else {
                        *value = 0.0;
                    }
                }
                let inv = 1.0 / sum;
                for value in row.iter_mut() {
                    *value *= inv;
                }
                *log_norm = best + sum.ln();
                None
            })
            .reduce(
                || None,
                |a: Option<usize>, b| match (a, b) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                },
            );
        if let Some(k) = failure {
            first_failure = Some((i, k));
            break;
        }
    }
    if let Some((observation, point)) = first_failure {
        return Err(GmmError::NumericUnderflow { observation, point });
    }

    let log_likelihood = compensated_sum(row_log_norm.iter().copied());
    Ok(Responsibilities {
        data,
        n_components: m,
        offsets,
        log_likelihood,
    })
}

/// One coordinate-ascent pass over the complete-data objective: first each
/// observation's transform, then the mixture itself.
///
/// Every point is condensed into a single virtual target — the
/// precision-weighted blend of the component means, weighted by that point's
/// responsibilities — and the transform solving the weighted rigid
/// least-squares fit onto those targets is computed in closed form. The
/// mixture is then re-estimated from the points under their *new* transforms:
/// responsibility-weighted means, isotropic variances (floored), and masses
/// rescaled to leave the outlier weight untouched. Both orderings of this
/// pass keep the observed-data likelihood non-decreasing.
pub fn m_step(
    observations: &[PointCloud],
    responsibilities: &Responsibilities,
    model: &GmmModel,
) -> Result<(Vec<RigidTransform>, GmmModel), GmmError> {
    let m = model.len();
    assert_eq!(responsibilities.n_components(), m, "model/responsibility size mismatch");
    assert_eq!(
        responsibilities.n_rows(),
        observations.iter().map(|o| o.len()).sum::<usize>(),
        "responsibilities describe a different point set"
    );
    let width = m + 1;
    let inv_var: Vec<f64> = model.variances.iter().map(|v| 1.0 / v).collect();

    // -- Transform update ---------------------------------------------------
    let transforms = observations
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let base = responsibilities.offsets[i];
            let n = obs.len();
            let mut targets = vec![Vec3::zeros(); n];
            let mut lambdas = vec![0.0f64; n];
            targets
                .par_iter_mut()
                .zip(lambdas.par_iter_mut())
                .enumerate()
                .for_each(|(k, (target, lambda))| {
                    let row = &responsibilities.data[(base + k) * width..(base + k + 1) * width];
                    let mut weighted = Vec3::zeros();
                    let mut total = 0.0;
                    for (j, alpha) in row[..m].iter().enumerate() {
                        if *alpha > 0.0 {
                            let w = alpha * inv_var[j];
                            weighted += model.means[j] * w;
                            total += w;
                        }
                    }
                    if total > 0.0 {
                        *target = weighted / total;
                    }
                    *lambda = total;
                });
            weighted_kabsch(obs.points(), &targets, &lambdas).map_err(|e| match e {
                AlignError::TooFewCorrespondences(_)
                | AlignError::ZeroWeight
                | AlignError::DegenerateCovariance => GmmError::DegenerateAlignment(i),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    // -- Mixture update, from the re-transformed points ----------------------
    let transformed: Vec<Vec3> = observations
        .iter()
        .zip(&transforms)
        .flat_map(|(obs, t)| obs.points().iter().map(move |p| t.apply(p)))
        .collect();

    // Blocked parallel reductions: fixed row blocks, partial sums combined in
    // block order, so totals are independent of the thread count.
    let blocks: Vec<(usize, usize)> = (0..transformed.len())
        .step_by(REDUCTION_BLOCK)
        .map(|start| (start, (start + REDUCTION_BLOCK).min(transformed.len())))
        .collect();

    let partials: Vec<(Vec<f64>, Vec<Vec3>)> = blocks
        .par_iter()
        .map(|&(start, end)| {
            let mut mass = vec![0.0f64; m];
            let mut first_moment = vec![Vec3::zeros(); m];
            for row in start..end {
                let alphas = &responsibilities.data[row * width..row * width + m];
                let y = transformed[row];
                for (j, alpha) in alphas.iter().enumerate() {
                    if *alpha > 0.0 {
                        mass[j] += alpha;
                        first_moment[j] += y * *alpha;
                    }
                }
            }
            (mass, first_moment)
        })
        .collect();
    let mut mass = vec![0.0f64; m];
    let mut first_moment = vec![Vec3::zeros(); m];
    for (block_mass, block_moment) in &partials {
        for j in 0..m {
            mass[j] += block_mass[j];
            first_moment[j] += block_moment[j];
        }
    }

    let means: Vec<Vec3> = (0..m)
        .map(|j| {
            if mass[j] > 0.0 {
                first_moment[j] / mass[j]
            } else {
                // A component that captured no mass keeps its old mean and
                // will carry zero weight below.
                model.means[j]
            }
        })
        .collect();

    let spread_partials: Vec<Vec<f64>> = blocks
        .par_iter()
        .map(|&(start, end)| {
            let mut spread = vec![0.0f64; m];
            for row in start..end {
                let alphas = &responsibilities.data[row * width..row * width + m];
                let y = transformed[row];
                for (j, alpha) in alphas.iter().enumerate() {
                    if *alpha > 0.0 {
                        spread[j] += alpha * (y - means[j]).norm_squared();
                    }
                }
            }
            spread
        })
        .collect();
    let mut spread = vec![0.0f64; m];
    for block in &spread_partials {
        for j in 0..m {
            spread[j] += block[j];
        }
    }

    let variances: Vec<f64> = (0..m)
        .map(|j| {
            if mass[j] > 0.0 {
                (spread[j] / (3.0 * mass[j])).max(VARIANCE_FLOOR)
            } else {
                model.variances[j]
            }
        })
        .collect();

    let total_mass: f64 = mass.iter().sum();
    let weights: Vec<f64> = if total_mass > 0.0 {
        mass.iter()
            .map(|a| (1.0 - model.outlier_weight) * a / total_mass)
            .collect()
    } else {
        model.weights.clone()
    };

    let new_model = GmmModel::new(
        means,
        variances,
        weights,
        model.outlier_weight,
        model.outlier_density,
    )?;
    Ok((transforms, new_model))
}

/// Jointly register every observation in `set` against a latent mixture
/// initialized from the data's bounding box.
pub fn joint_register(
    set: &ObservationSet,
    config: &GmmConfig,
) -> Result<JointRegistrationResult, GmmError> {
    let observations = set.observations();
    check_registration_inputs(observations)?;
    let total: usize = observations.iter().map(|o| o.len()).sum();
    let components = config
        .components
        .unwrap_or_else(|| (total / 50).min(400).max(8));
    let model = initialize_model(
        observations,
        components,
        config.seed,
        config.outlier_weight,
        config.init_cube_edge,
    )?;
    let identities = vec![RigidTransform::identity(); observations.len()];
    joint_register_with_initial(observations, model, &identities, config)
}

/// [`joint_register`] with a caller-supplied starting point. The latent
/// frame of the result inherits whatever frame the initial means live in:
/// moving the initial model *and* the initial transforms by one common rigid
/// transform reruns the identical optimization in a shifted frame, leaving
/// all relative transforms unchanged.
pub fn joint_register_with_initial(
    observations: &[PointCloud],
    initial_model: GmmModel,
    initial_transforms: &[RigidTransform],
    config: &GmmConfig,
) -> Result<JointRegistrationResult, GmmError> {
    check_registration_inputs(observations)?;
    assert_eq!(
        initial_transforms.len(),
        observations.len(),
        "one initial transform per observation"
    );
    let mut model = initial_model;
    let mut transforms = initial_transforms.to_vec();
    let mut responsibilities = e_step(observations, &transforms, &model)?;
    let mut trace = vec![responsibilities.log_likelihood()];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        let (new_transforms, new_model) = m_step(observations, &responsibilities, &model)?;
        transforms = new_transforms;
        model = new_model;
        responsibilities = e_step(observations, &transforms, &model)?;
        iterations += 1;

        let previous = *trace.last().unwrap();
        let current = responsibilities.log_likelihood();
        trace.push(current);
        // Relative change, guarded against likelihoods near zero.
        if (current - previous).abs() <= config.tolerance * previous.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    Ok(JointRegistrationResult {
        transforms,
        model,
        log_likelihood_trace: trace,
        iterations,
        converged,
    })
}

fn check_registration_inputs(observations: &[PointCloud]) -> Result<(), GmmError> {
    if observations.len() < 2 {
        return Err(GmmError::TooFewObservations(observations.len()));
    }
    for (index, obs) in observations.iter().enumerate() {
        if obs.len() < 10 {
            return Err(GmmError::TooFewPoints {
                index,
                got: obs.len(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        PointCloud::new(points, "s", "f").unwrap()
    }

    fn model(
        means: Vec<Vec3>,
        variance: f64,
        outlier_weight: f64,
        outlier_density: f64,
    ) -> GmmModel {
        let m = means.len();
        GmmModel::new(
            means,
            vec![variance; m],
            vec![(1.0 - outlier_weight) / m as f64; m],
            outlier_weight,
            outlier_density,
        )
        .unwrap()
    }

    /// Plain-arithmetic mixture posterior for one point: weighted normal
    /// densities plus the uniform outlier mass, normalized directly.
    fn direct_posterior(y: &Vec3, model: &GmmModel) -> (Vec<f64>, f64) {
        let mut terms: Vec<f64> = model
            .means()
            .iter()
            .zip(model.variances())
            .zip(model.weights())
            .map(|((mu, var), p)| {
                let coeff = (2.0 * PI * var).powf(-1.5);
                p * coeff * (-(y - mu).norm_squared() / (2.0 * var)).exp()
            })
            .collect();
        terms.push(model.outlier_weight() * model.outlier_density());
        let total: f64 = terms.iter().sum();
        for t in terms.iter_mut() {
            *t /= total;
        }
        (terms, total.ln())
    }

    #[test]
    fn e_step_matches_direct_density_evaluation() {
        // Deliberately non-uniform parameters so no symmetry can hide a bug.
        let m = GmmModel::new(
            vec![
                Vec3::new(0.3, -0.2, 1.1),
                Vec3::new(-0.8, 0.5, 0.2),
                Vec3::new(0.1, 0.9, -0.4),
            ],
            vec![0.09, 0.16, 0.04],
            vec![0.5, 0.25, 0.2],
            0.05,
            0.02,
        )
        .unwrap();

        let points = vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(-0.5, 0.4, 0.3),
            Vec3::new(0.2, 0.7, -0.2),
            Vec3::new(1.0, -1.0, 0.5),
            Vec3::new(-0.1, 0.1, 0.0),
        ];
        let transform = RigidTransform::from_euler(
            &crate::se3::EulerPose::new(0.1, -0.2, 0.3, 0.4, -0.5, 0.6),
        )
        .unwrap();
        let obs = cloud(points.clone());

        let resp = e_step(std::slice::from_ref(&obs), &[transform], &m).unwrap();

        let mut expected_ll = 0.0;
        for (k, p) in points.iter().enumerate() {
            let y = transform.apply(p);
            let (expected, point_ll) = direct_posterior(&y, &m);
            expected_ll += point_ll;
            let row = resp.row(0, k);
            for (a, b) in row.iter().zip(&expected) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(resp.log_likelihood(), expected_ll, epsilon = 1e-12);
    }

    #[test]
    fn e_step_single_component_without_outlier_gives_unit_responsibility() {
        let m = GmmModel::new(
            vec![Vec3::new(1.0, 2.0, 3.0)],
            vec![0.25],
            vec![1.0],
            0.0,
            1.0,
        )
        .unwrap();
        let obs = cloud(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(5.0, 5.0, 5.0)]);
        let resp = e_step(std::slice::from_ref(&obs), &[RigidTransform::identity()], &m).unwrap();
        for k in 0..2 {
            assert_eq!(resp.row(0, k), &[1.0, 0.0]);
        }
    }

    #[test]
    fn e_step_splits_equidistant_point_evenly() {
        let m = model(
            vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)],
            0.16,
            0.05,
            0.01,
        );
        let obs = cloud(vec![Vec3::new(0.0, 0.7, -0.3)]);
        let resp = e_step(std::slice::from_ref(&obs), &[RigidTransform::identity()], &m).unwrap();
        let row = resp.row(0, 0);
        assert_eq!(row[0], row[1]);
        assert_abs_diff_eq!(row[0] + row[1] + row[2], 1.0, epsilon = 1e-12);
        assert!(row[2] > 0.0);
    }

    #[test]
    fn e_step_rows_always_sum_to_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let means: Vec<Vec3> = (0..64)
            .map(|_| Vec3::from_fn(|_, _| rng.gen_range(-5.0..5.0)))
            .collect();
        let m = model(means, 0.01, 0.05, 1e-4);
        let points: Vec<Vec3> = (0..500)
            .map(|_| Vec3::from_fn(|_, _| rng.gen_range(-6.0..6.0)))
            .collect();
        let obs = cloud(points);
        let resp = e_step(std::slice::from_ref(&obs), &[RigidTransform::identity()], &m).unwrap();
        for k in 0..obs.len() {
            let total: f64 = resp.row(0, k).iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn e_step_flags_points_no_term_can_represent() {
        // Without an outlier term, a point this far away underflows every
        // Gaussian exponent to -inf.
        let m = GmmModel::new(vec![Vec3::zeros()], vec![1e-6], vec![1.0], 0.0, 1.0).unwrap();
        let obs = cloud(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1e160, 0.0, 0.0)]);
        let err = e_step(std::slice::from_ref(&obs), &[RigidTransform::identity()], &m).unwrap_err();
        assert_eq!(
            err,
            GmmError::NumericUnderflow {
                observation: 0,
                point: 1
            }
        );
    }

    #[test]
    fn m_step_model_update_matches_hand_computation() {
        // Points sit exactly on their virtual targets (the fourth is the
        // midpoint of the two components sharing it), so the transform solve
        // returns the identity and the mixture update can be checked against
        // hand arithmetic.
        let mu1 = Vec3::new(0.0, 0.0, 0.0);
        let mu2 = Vec3::new(1.0, 0.0, 0.0);
        let mu3 = Vec3::new(0.0, 1.0, 0.0);
        let m = model(vec![mu1, mu2, mu3], 0.04, 0.05, 0.01);
        let obs = cloud(vec![mu1, mu2, mu3, Vec3::new(0.5, 0.0, 0.0)]);
        #[rustfmt::skip]
        let rows = vec![
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.5, 0.5, 0.0, 0.0,
        ];
        let resp = Responsibilities::from_rows(&[4], 3, rows);

        let (transforms, updated) = m_step(std::slice::from_ref(&obs), &resp, &m).unwrap();
        let t = &transforms[0];
        assert_abs_diff_eq!(t.translation.norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!((t.rotation - crate::se3::Mat3::identity()).norm(), 0.0, epsilon = 1e-9);

        // Component 1: mass 1.5, mean (1*mu1 + 0.5*p4)/1.5 = (1/6, 0, 0),
        // spread 1*(1/6)² + 0.5*(1/3)² = 1/12, variance (1/12)/4.5 = 1/54.
        assert_abs_diff_eq!(updated.means()[0].x, 1.0 / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(updated.variances()[0], 1.0 / 54.0, epsilon = 1e-12);
        // Component 2 mirrors it around p4.
        assert_abs_diff_eq!(updated.means()[1].x, 5.0 / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(updated.variances()[1], 1.0 / 54.0, epsilon = 1e-12);
        // Component 3 keeps its point exactly: zero spread hits the floor.
        assert_abs_diff_eq!((updated.means()[2] - mu3).norm(), 0.0, epsilon = 1e-9);
        assert_eq!(updated.variances()[2], VARIANCE_FLOOR);
        // Masses 1.5 : 1.5 : 1 rescaled to leave the outlier mass alone.
        assert_abs_diff_eq!(updated.weights()[0], 0.95 * 1.5 / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(updated.weights()[2], 0.95 * 1.0 / 4.0, epsilon = 1e-12);
        let total: f64 = updated.weights().iter().sum::<f64>() + updated.outlier_weight();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn m_step_recovers_relative_transform_of_rigid_copies() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let latent: Vec<Vec3> = (0..20)
            .map(|_| Vec3::from_fn(|_, _| rng.gen_range(-2.0..2.0)))
            .collect();
        let t_a = RigidTransform::from_euler(&crate::se3::EulerPose::new(
            0.3, -0.4, 0.9, 1.0, -2.0, 0.5,
        ))
        .unwrap();
        let t_b = RigidTransform::from_euler(&crate::se3::EulerPose::new(
            -0.2, 0.1, -0.7, 0.3, 0.8, -1.1,
        ))
        .unwrap();
        let obs_a = cloud(latent.iter().map(|p| t_a.inverse().apply(p)).collect());
        let obs_b = cloud(latent.iter().map(|p| t_b.inverse().apply(p)).collect());

        let m = model(latent.clone(), 0.01, 0.05, 0.001);
        let width = 21;
        let mut rows = vec![0.0; 2 * 20 * width];
        for k in 0..20 {
            rows[k * width + k] = 1.0; // observation A, point k → component k
            rows[(20 + k) * width + k] = 1.0; // observation B likewise
        }
        let resp = Responsibilities::from_rows(&[20, 20], 20, rows);

        let (transforms, _) = m_step(&[obs_a.clone(), obs_b.clone()], &resp, &m).unwrap();
        // b_k = E(a_k) with E = T_b⁻¹ ∘ T_a; the solved transforms must agree.
        let expected = t_b.inverse().compose(&t_a);
        let recovered = transforms[1].inverse().compose(&transforms[0]);
        assert_abs_diff_eq!((recovered.rotation - expected.rotation).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!((recovered.translation - expected.translation).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn m_step_is_a_fixed_point_for_aligned_one_hot_clouds() {
        let means = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let m = model(means.clone(), 0.01, 0.05, 0.01);
        let obs_a = cloud(means.clone());
        let obs_b = cloud(means.clone());
        let width = 5;
        let mut rows = vec![0.0; 8 * width];
        for k in 0..4 {
            rows[k * width + k] = 1.0;
            rows[(4 + k) * width + k] = 1.0;
        }
        let resp = Responsibilities::from_rows(&[4, 4], 4, rows);
        let (transforms, updated) = m_step(&[obs_a, obs_b], &resp, &m).unwrap();
        for t in &transforms {
            assert_abs_diff_eq!(t.translation.norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(
                (t.rotation - crate::se3::Mat3::identity()).norm(),
                0.0,
                epsilon = 1e-12
            );
        }
        for (updated_mean, original) in updated.means().iter().zip(&means) {
            assert_abs_diff_eq!((updated_mean - original).norm(), 0.0, epsilon = 1e-12);
        }
        for w in updated.weights() {
            assert_abs_diff_eq!(*w, 0.95 / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn m_step_rejects_collinear_virtual_targets() {
        let m = model(
            vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)],
            0.04,
            0.05,
            0.01,
        );
        let obs = cloud(vec![
            Vec3::new(-1.1, 0.0, 0.0),
            Vec3::new(-0.9, 0.0, 0.0),
            Vec3::new(0.9, 0.0, 0.0),
            Vec3::new(1.1, 0.0, 0.0),
        ]);
        #[rustfmt::skip]
        let rows = vec![
            1.0, 0.0, 0.0,
            1.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 1.0, 0.0,
        ];
        let resp = Responsibilities::from_rows(&[4], 2, rows);
        let err = m_step(std::slice::from_ref(&obs), &resp, &m).unwrap_err();
        assert_eq!(err, GmmError::DegenerateAlignment(0));
    }

    #[test]
    fn m_step_rejects_observations_made_entirely_of_outliers() {
        let m = model(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            0.04,
            0.05,
            0.01,
        );
        let obs = cloud(vec![
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(0.0, 10.0, 0.0),
            Vec3::new(0.0, 0.0, 10.0),
        ]);
        #[rustfmt::skip]
        let rows = vec![
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 0.0, 1.0,
        ];
        let resp = Responsibilities::from_rows(&[3], 3, rows);
        let err = m_step(std::slice::from_ref(&obs), &resp, &m).unwrap_err();
        assert_eq!(err, GmmError::DegenerateAlignment(0));
    }

    #[test]
    fn initialization_scatters_means_inside_the_inflated_bounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let points: Vec<Vec3> = (0..200)
            .map(|_| Vec3::from_fn(|_, _| rng.gen_range(0.0..1.0)))
            .collect();
        let obs = [cloud(points)];
        let m = initialize_model(&obs, 8, 11, 0.05, 0.5).unwrap();

        assert_eq!(m.len(), 8);
        let (lo, hi) = inflated_bounds(&obs);
        for mu in m.means() {
            for a in 0..3 {
                assert!(mu[a] >= lo[a] - 1e-12 && mu[a] <= hi[a] + 1e-12);
            }
        }
        let diag = (hi - lo).norm();
        for v in m.variances() {
            assert_abs_diff_eq!(*v, (diag / 10.0).powi(2), epsilon = 1e-15);
        }
        let weight_sum: f64 = m.weights().iter().sum();
        assert_abs_diff_eq!(weight_sum + m.outlier_weight(), 1.0, epsilon = 1e-12);
        for w in m.weights() {
            assert_abs_diff_eq!(*w, 0.95 / 8.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(
            m.outlier_density(),
            1.0 / (hi - lo).iter().product::<f64>(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn initialization_is_deterministic_per_seed() {
        let points: Vec<Vec3> = (0..50)
            .map(|i| Vec3::new(i as f64 * 0.1, (i % 7) as f64, (i % 3) as f64))
            .collect();
        let obs = [cloud(points)];
        let a = initialize_model(&obs, 16, 5, 0.05, 0.5).unwrap();
        let b = initialize_model(&obs, 16, 5, 0.05, 0.5).unwrap();
        let c = initialize_model(&obs, 16, 6, 0.05, 0.5).unwrap();
        for (ma, mb) in a.means().iter().zip(b.means()) {
            assert_eq!(ma, mb);
        }
        assert!(a.means().iter().zip(c.means()).any(|(x, y)| x != y));
    }

    #[test]
    fn initialization_rejects_small_component_counts() {
        let obs = [cloud(vec![Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)])];
        assert_eq!(
            initialize_model(&obs, 7, 0, 0.05, 0.5).unwrap_err(),
            GmmError::InvalidComponentCount(7)
        );
    }

    #[test]
    fn registration_rejects_tiny_inputs() {
        let big = cloud((0..20).map(|i| Vec3::new(i as f64, 0.0, 1.0)).collect());
        let small = cloud(vec![Vec3::zeros(); 5]);
        assert_eq!(
            check_registration_inputs(std::slice::from_ref(&big)).unwrap_err(),
            GmmError::TooFewObservations(1)
        );
        assert_eq!(
            check_registration_inputs(&[big, small]).unwrap_err(),
            GmmError::TooFewPoints { index: 1, got: 5 }
        );
    }

    #[test]
    fn model_serde_round_trip_is_lossless() {
        let m = model(
            vec![Vec3::new(0.125, -0.75, 2.5), Vec3::new(1.0 / 3.0, 0.7, -0.1)],
            0.037,
            0.05,
            0.0123,
        );
        let json = serde_json::to_string(&m).unwrap();
        let back: GmmModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m.means(), back.means());
        assert_eq!(m.variances(), back.variances());
        assert_eq!(m.weights(), back.weights());
        assert_eq!(m.outlier_weight(), back.outlier_weight());
        assert_eq!(m.outlier_density(), back.outlier_density());
    }

    #[test]
    fn model_deserialization_rejects_inconsistent_payloads() {
        let json = r#"{
            "means": [[0.0, 0.0, 0.0]],
            "variances": [0.1, 0.2],
            "weights": [0.95],
            "outlier_weight": 0.05,
            "outlier_density": 0.01
        }"#;
        assert!(serde_json::from_str::<GmmModel>(json).is_err());
    }

    #[test]
    fn model_constructor_enforces_mass_and_floor() {
        let means = vec![Vec3::zeros(); 2];
        assert!(matches!(
            GmmModel::new(means.clone(), vec![0.1, 0.1], vec![0.5, 0.6], 0.05, 1.0),
            Err(GmmError::InvalidModel(_))
        ));
        assert!(matches!(
            GmmModel::new(means, vec![0.1, 1e-9], vec![0.475, 0.475], 0.05, 1.0),
            Err(GmmError::InvalidModel(_))
        ));
    }

    #[test]
    fn config_json_uses_the_documented_key_names() {
        let json = r#"{"components": 40, "tol": 1e-5, "cube_edge_init": 0.3}"#;
        let config: GmmConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.components, Some(40));
        assert_eq!(config.tolerance, 1e-5);
        assert_eq!(config.init_cube_edge, 0.3);
        assert_eq!(config.max_iterations, 200);
        let out = serde_json::to_string(&config).unwrap();
        assert!(out.contains("\"tol\""));
        assert!(out.contains("\"cube_edge_init\""));
    }

    #[test]
    fn compensated_sum_beats_naive_summation() {
        let values = vec![1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values.iter().copied()), 2.0);
    }
}
