//! Deterministic synthetic multi-LiDAR scenes: cubic targets on a ground
//! plane, scanned by a spinning-beam sensor model, with known calibration
//! errors injected into the second sensor's output.
//!
//! Everything is a pure function of `(scene, seed)`: scans are bit-identical
//! across reruns, and every random quantity (range noise, error samples)
//! comes from a counter-mode generator with per-(frame, sensor) streams.
//!
//! Successive frames shift the azimuth grid by an irrational fraction of the
//! beam spacing, the way a free-running spinning sensor never retriggers at
//! the same encoder phase twice. Without this, zero-noise frames of a static
//! scene would be identical point sets and multi-frame averaging could never
//! beat single-frame accuracy. The phase is shared by all sensors in a frame,
//! so co-located sensors still see identical grids.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, ObservationSet, PointCloud};
use crate::se3::{EulerPose, RigidTransform, Se3Error, Vec3};

/// Fractional part of the golden ratio; the lowest-discrepancy choice for an
/// irrational per-frame phase increment.
const AZIMUTH_PHASE_RATIO: f64 = 0.618_033_988_749_894_9;

/// Rays closer than this to a surface along their own length count as
/// starting on it and do not re-hit it.
const RAY_EPSILON: f64 = 1e-9;

/// Derived crop boxes keep only returns this far above a simulated ground
/// plane, comfortably past the vertical noise spread of grazing ground hits.
const GROUND_EXCLUSION_MARGIN: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("sensor index {index} out of range for {sensors} sensors")]
    SensorIndex { index: usize, sensors: usize },
    #[error("target-region crop removed every point of sensor {sensor} frame {frame}")]
    EmptyTargetRegion { sensor: String, frame: usize },
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Pose(#[from] Se3Error),
}

mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        <[f64; 3]>::from(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        <[f64; 3]>::deserialize(d).map(Vec3::from)
    }
}

/// An upright cube target: axis-aligned except for a rotation about z.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeSpec {
    #[serde(with = "vec3_array")]
    pub center: Vec3,
    pub edge: f64,
    #[serde(default)]
    pub yaw: f64,
}

/// Flat ground: a disk of radius `extent` in the z = 0 plane, centered under
/// the vehicle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundSpec {
    pub enabled: bool,
    pub extent: f64,
}

impl Default for GroundSpec {
    fn default() -> Self {
        GroundSpec {
            enabled: true,
            extent: 15.0,
        }
    }
}

/// One spinning LiDAR: mounting pose plus beam-pattern parameters.
///
/// Angles are in degrees, distances in meters. Channels are spaced uniformly
/// across the vertical field of view (centered on the sensor's horizon);
/// azimuth advances in fixed steps across the horizontal field of view.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub pose_in_vehicle: RigidTransform,
    pub h_fov: f64,
    pub v_fov: f64,
    pub channels: usize,
    pub range: f64,
    pub azimuth_step: f64,
    pub noise_sigma: f64,
}

/// Closed axis-aligned box retained by the target-region crop.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropBox {
    #[serde(with = "vec3_array")]
    pub min: Vec3,
    #[serde(with = "vec3_array")]
    pub max: Vec3,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub cubes: Vec<CubeSpec>,
    #[serde(default)]
    pub ground: GroundSpec,
    pub sensors: Vec<SensorSpec>,
    /// Extra long-range cube, scanned but outside the default target region;
    /// useful for judging a calibration away from where it was estimated.
    #[serde(default)]
    pub validation_cube: Option<CubeSpec>,
    /// Region kept by the target crop. When absent, a box enclosing the
    /// cubes with 0.5 m margin, extended down to the ground, is used.
    #[serde(default)]
    pub crop_box: Option<CropBox>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |message: String| Err(SceneError::InvalidScene(message));
        for (i, cube) in self.cubes.iter().chain(&self.validation_cube).enumerate() {
            if !(cube.edge > 0.0) || !cube.center.iter().all(|v| v.is_finite()) {
                return bad(format!("cube {i} needs a positive edge and finite center"));
            }
        }
        if self.sensors.len() < 2 {
            return bad(format!(
                "need at least one sensor pair, got {} sensor(s)",
                self.sensors.len()
            ));
        }
        for (i, s) in self.sensors.iter().enumerate() {
            if s.channels < 1 {
                return bad(format!("sensor {i} needs at least one channel"));
            }
            if !(s.range > 0.0) || !(s.h_fov > 0.0) || s.v_fov < 0.0 || !(s.azimuth_step > 0.0) {
                return bad(format!("sensor {i} has a non-positive beam parameter"));
            }
            if !(s.noise_sigma >= 0.0) {
                return bad(format!("sensor {i} noise_sigma must be non-negative"));
            }
            if !s.pose_in_vehicle.is_valid() {
                return bad(format!("sensor {i} pose is not a rigid transform"));
            }
        }
        if self.ground.enabled && !(self.ground.extent > 0.0) {
            return bad("ground extent must be positive".into());
        }
        if let Some(b) = &self.crop_box {
            if !(0..3).all(|i| b.min[i] < b.max[i]) {
                return bad("crop box min must be strictly below max".into());
            }
        }
        Ok(())
    }

    /// The crop box in effect: the explicit one, or a box enclosing the cubes
    /// with 0.5 m margin, floored just above the ground plane when ground is
    /// simulated.
    ///
    /// Ground returns are excluded on purpose. Two sensors sweep the plane
    /// from different vantage points, so their elevation rings land at
    /// different radii; at target range that ring spacing dwarfs the
    /// calibration signal and registration can lock arcs one ring apart.
    /// The targets' top faces carry the vertical constraint instead. An
    /// explicit `crop_box` overrides this and may include ground.
    pub fn target_crop_box(&self) -> CropBox {
        if let Some(explicit) = self.crop_box {
            return explicit;
        }
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for cube in &self.cubes {
            // Any yaw fits inside the sphere of radius (√3/2)·edge.
            let reach = cube.edge * 3.0f64.sqrt() / 2.0;
            for i in 0..3 {
                min[i] = min[i].min(cube.center[i] - reach);
                max[i] = max[i].max(cube.center[i] + reach);
            }
        }
        min -= Vec3::repeat(0.5);
        max += Vec3::repeat(0.5);
        if self.ground.enabled {
            min.z = min.z.max(GROUND_EXCLUSION_MARGIN);
        }
        CropBox { min, max }
    }
}

/// A ground-truth miscalibration to inject, with the noise seed of the run it
/// belongs to.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CalibrationErrorSample {
    pub error: EulerPose,
    pub seed: u64,
}

/// Symmetric per-component bounds for error sampling: every angle is uniform
/// in `[-angle, angle]` radians and every translation component uniform in
/// `[-translation, translation]` meters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorBounds {
    pub angle: f64,
    pub translation: f64,
}

impl Default for ErrorBounds {
    fn default() -> Self {
        ErrorBounds {
            angle: 3.0f64.to_radians(),
            translation: 0.1,
        }
    }
}

/// Draw `n` independent miscalibrations, each uniform per component within
/// `bounds`, each carrying its own derived noise seed. Deterministic in
/// `seed`.
pub fn sample_calibration_errors(
    n: usize,
    bounds: &ErrorBounds,
    seed: u64,
) -> Vec<CalibrationErrorSample> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha12Rng, b: f64| {
        if b == 0.0 {
            0.0
        } else {
            rng.gen_range(-b..=b)
        }
    };
    (0..n)
        .map(|_| {
            let error = EulerPose::new(
                uniform(&mut rng, bounds.angle),
                uniform(&mut rng, bounds.angle),
                uniform(&mut rng, bounds.angle),
                uniform(&mut rng, bounds.translation),
                uniform(&mut rng, bounds.translation),
                uniform(&mut rng, bounds.translation),
            );
            CalibrationErrorSample {
                error,
                seed: rng.gen(),
            }
        })
        .collect()
}

/// First intersection of the ray `origin + t·direction` with an axis-aligned
/// box of half-edge `half` centered at the origin (slab test).
fn ray_box(origin: &Vec3, direction: &Vec3, half: f64) -> Option<f64> {
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for axis in 0..3 {
        if direction[axis].abs() < 1e-15 {
            if origin[axis].abs() > half {
                return None;
            }
        } else {
            let a = (-half - origin[axis]) / direction[axis];
            let b = (half - origin[axis]) / direction[axis];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t_min = t_min.max(lo);
            t_max = t_max.min(hi);
            if t_min > t_max {
                return None;
            }
        }
    }
    (t_min > RAY_EPSILON).then_some(t_min)
}

fn ray_cube(origin: &Vec3, direction: &Vec3, cube: &CubeSpec) -> Option<f64> {
    let (sin, cos) = cube.yaw.sin_cos();
    let unrotate = |v: &Vec3| Vec3::new(cos * v.x + sin * v.y, -sin * v.x + cos * v.y, v.z);
    let local_origin = unrotate(&(origin - cube.center));
    let local_direction = unrotate(direction);
    ray_box(&local_origin, &local_direction, cube.edge / 2.0)
}

fn ray_ground(origin: &Vec3, direction: &Vec3, extent: f64) -> Option<f64> {
    if direction.z.abs() < 1e-15 {
        return None;
    }
    let t = -origin.z / direction.z;
    if t <= RAY_EPSILON {
        return None;
    }
    let hit = origin + direction * t;
    (Vector2::new(hit.x, hit.y).norm() <= extent).then_some(t)
}

/// Azimuth-grid phase of a frame, as a fraction of one azimuth step.
fn frame_phase(frame: usize) -> f64 {
    (frame as f64 * AZIMUTH_PHASE_RATIO).fract()
}

fn sensor_rng(seed: u64, frame: usize, sensor_index: usize, sensor_count: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 * sensor_count as u64 + sensor_index as u64);
    rng
}

/// One full sweep of sensor `sensor_index` over the scene, in the sensor's
/// own frame.
///
/// One ray is cast per (channel, azimuth column); the nearest cube, ground,
/// or validation-target hit within range becomes a point at the measured
/// distance plus Gaussian range noise. An empty cloud (nothing in view) is
/// not an error.
pub fn raycast_scan(
    scene: &SceneSpec,
    sensor_index: usize,
    frame: usize,
    seed: u64,
) -> Result<PointCloud, SceneError> {
    scene.validate()?;
    let sensor = scene
        .sensors
        .get(sensor_index)
        .ok_or(SceneError::SensorIndex {
            index: sensor_index,
            sensors: scene.sensors.len(),
        })?;
    let mut rng = sensor_rng(seed, frame, sensor_index, scene.sensors.len());
    let noise = Normal::new(0.0, sensor.noise_sigma)
        .map_err(|e| SceneError::InvalidScene(format!("noise model: {e}")))?;

    let v_fov = sensor.v_fov.to_radians();
    let h_fov = sensor.h_fov.to_radians();
    let step = sensor.azimuth_step.to_radians();
    let elevations: Vec<f64> = if sensor.channels == 1 {
        vec![0.0]
    } else {
        (0..sensor.channels)
            .map(|c| -v_fov / 2.0 + c as f64 * v_fov / (sensor.channels - 1) as f64)
            .collect()
    };
    let full_circle = (sensor.h_fov - 360.0).abs() < 1e-9;
    let columns = if full_circle {
        (sensor.h_fov / sensor.azimuth_step).floor() as usize
    } else {
        (sensor.h_fov / sensor.azimuth_step).floor() as usize + 1
    };
    let phase = frame_phase(frame) * step;

    let origin = sensor.pose_in_vehicle.translation;
    let mut points = Vec::new();
    for &elevation in &elevations {
        let (sin_e, cos_e) = elevation.sin_cos();
        for column in 0..columns {
            let azimuth = -h_fov / 2.0 + column as f64 * step + phase;
            let (sin_a, cos_a) = azimuth.sin_cos();
            let d_sensor = Vec3::new(cos_e * cos_a, cos_e * sin_a, sin_e);
            let d_vehicle = sensor.pose_in_vehicle.rotation * d_sensor;

            let mut nearest = f64::INFINITY;
            for cube in scene.cubes.iter().chain(&scene.validation_cube) {
                if let Some(t) = ray_cube(&origin, &d_vehicle, cube) {
                    nearest = nearest.min(t);
                }
            }
            if scene.ground.enabled {
                if let Some(t) = ray_ground(&origin, &d_vehicle, scene.ground.extent) {
                    nearest = nearest.min(t);
                }
            }
            if nearest <= sensor.range {
                let measured = if sensor.noise_sigma > 0.0 {
                    nearest + noise.sample(&mut rng)
                } else {
                    nearest
                };
                points.push(d_sensor * measured);
            }
        }
    }
    Ok(PointCloud::new(
        points,
        format!("L{}", sensor_index + 1),
        frame.to_string(),
    )?)
}

/// Scan `frames` sweeps per sensor, place everything in the vehicle frame via
/// the nominal mounting poses, crop each scan to the target region, and
/// corrupt the second sensor's cropped output with `error`.
///
/// Cropping happens in the nominal frame — selecting the target region is
/// something an operator does per sensor under the coarse factory
/// calibration — so the injected error displaces the selected points but
/// never changes which points are selected.
///
/// Returns the paired observations together with the exact transform the
/// injected error induces between the two sensors' observation frames: a
/// point appearing at `x` in a first-sensor observation appears at
/// `ground_truth · x` in the paired second-sensor observation.
pub fn make_observation_set(
    scene: &SceneSpec,
    error: &CalibrationErrorSample,
    frames: usize,
    seed: u64,
) -> Result<(ObservationSet, RigidTransform), SceneError> {
    scene.validate()?;
    if scene.sensors.len() != 2 {
        return Err(SceneError::InvalidScene(format!(
            "observation sets pair exactly two sensors, scene has {}",
            scene.sensors.len()
        )));
    }
    if frames == 0 {
        return Err(SceneError::InvalidScene("need at least one frame".into()));
    }
    let ground_truth = error.error.to_transform()?;
    let crop = scene.target_crop_box();

    let per_frame: Vec<(PointCloud, PointCloud)> = (0..frames)
        .into_par_iter()
        .map(|frame| -> Result<(PointCloud, PointCloud), SceneError> {
            let mut cropped = Vec::with_capacity(2);
            for sensor_index in 0..2 {
                let scan = raycast_scan(scene, sensor_index, frame, seed)?;
                let vehicle = scan.transformed(&scene.sensors[sensor_index].pose_in_vehicle);
                // Crop in the nominal vehicle frame — the target region is
                // picked per sensor under the coarse factory calibration —
                // and only then displace the second sensor's points by the
                // injected miscalibration.
                let mut kept = vehicle.crop_box(&crop.min, &crop.max);
                if kept.is_empty() {
                    return Err(SceneError::EmptyTargetRegion {
                        sensor: kept.sensor_id.clone(),
                        frame,
                    });
                }
                if sensor_index == 1 {
                    kept = kept.transformed(&ground_truth);
                }
                cropped.push(kept);
            }
            let second = cropped.pop().expect("two clouds pushed");
            let first = cropped.pop().expect("two clouds pushed");
            Ok((first, second))
        })
        .collect::<Result<_, _>>()?;

    let mut observations = Vec::with_capacity(frames * 2);
    for (first, second) in per_frame {
        observations.push(first);
        observations.push(second);
    }
    Ok((ObservationSet::new(observations)?, ground_truth))
}

/// Deterministic grid sampling of a cube's surface, `per_edge²` points per
/// face, honoring the cube's yaw — a stand-in for a CAD-derived reference
/// shape of the calibration target.
pub fn sample_cube_surfaces(cube: &CubeSpec, per_edge: usize) -> Vec<Vec3> {
    let h = cube.edge / 2.0;
    let (sin, cos) = cube.yaw.sin_cos();
    let rotate = |v: Vec3| Vec3::new(cos * v.x - sin * v.y, sin * v.x + cos * v.y, v.z);
    let steps: Vec<f64> = if per_edge == 1 {
        vec![0.0]
    } else {
        (0..per_edge)
            .map(|i| (i as f64 / (per_edge - 1) as f64 - 0.5) * cube.edge)
            .collect()
    };
    let mut points = Vec::with_capacity(per_edge * per_edge * 6);
    for &u in &steps {
        for &v in &steps {
            for local in [
                Vec3::new(h, u, v),
                Vec3::new(-h, u, v),
                Vec3::new(u, h, v),
                Vec3::new(u, -h, v),
                Vec3::new(u, v, h),
                Vec3::new(u, v, -h),
            ] {
                points.push(cube.center + rotate(local));
            }
        }
    }
    points
}

fn spinning_sensor(pose: RigidTransform, channels: usize, azimuth_step: f64) -> SensorSpec {
    SensorSpec {
        pose_in_vehicle: pose,
        h_fov: 360.0,
        v_fov: 25.0,
        channels,
        range: 50.0,
        azimuth_step,
        noise_sigma: 0.01,
    }
}

fn roof_pair(channels: usize, azimuth_step: f64) -> Vec<SensorSpec> {
    let left = RigidTransform::new(crate::se3::Mat3::identity(), Vec3::new(0.2, 0.6, 1.8))
        .expect("identity rotation");
    let right = RigidTransform::new(crate::se3::Mat3::identity(), Vec3::new(0.2, -0.6, 1.8))
        .expect("identity rotation");
    vec![
        spinning_sensor(left, channels, azimuth_step),
        spinning_sensor(right, channels, azimuth_step),
    ]
}

/// Small default scene: three 0.5 m cubes ~10 m ahead plus local ground,
/// yielding roughly 400 target points per cropped observation. Fast enough
/// for interactive runs while keeping the geometry of the full-scale setup.
///
/// The cubes stand on rigs at sensor height. Near-horizontal surfaces are
/// poison for spinning-scan registration: a face seen at grazing incidence
/// carries elevation rings many times sparser than the face itself, and the
/// ring arcs land at visibly different spots for two sensors mounted apart,
/// so every method gets dragged toward aligning mismatched arcs. At sensor
/// height only the near-vertical faces return, at near-normal incidence,
/// where the two sensors' sampling grids interleave within millimetres.
///
/// The 32-channel sweep leaves three to four elevation rings on each face.
/// That is deliberately sparse: vertical registration must come from ring
/// positions alone, which separates methods that average over the ring
/// pattern from methods that lock onto individual ring matches.
pub fn desk_scene() -> SceneSpec {
    SceneSpec {
        cubes: vec![
            CubeSpec {
                center: Vec3::new(10.6, -1.3, 1.8),
                edge: 0.5,
                yaw: 0.35,
            },
            CubeSpec {
                center: Vec3::new(11.0, 0.3, 1.8),
                edge: 0.5,
                yaw: -0.3,
            },
            CubeSpec {
                center: Vec3::new(10.5, 1.7, 1.8),
                edge: 0.5,
                yaw: 0.1,
            },
        ],
        ground: GroundSpec {
            enabled: true,
            extent: 15.0,
        },
        sensors: roof_pair(32, 0.1),
        validation_cube: Some(CubeSpec {
            center: Vec3::new(15.0, 0.0, 1.8),
            edge: 0.5,
            yaw: 0.0,
        }),
        crop_box: None,
    }
}

/// Full-scale scene: three 1.2 m rig-mounted cubes ~10 m ahead, a 16 m
/// validation cube, and ground out to 15 m — sized so a cropped observation
/// carries on the order of 1850 points. The cubes straddle sensor height for
/// the same reason as in [`desk_scene`].
pub fn full_scale_scene() -> SceneSpec {
    SceneSpec {
        cubes: vec![
            CubeSpec {
                center: Vec3::new(10.0, -2.5, 1.8),
                edge: 1.2,
                yaw: 0.3,
            },
            CubeSpec {
                center: Vec3::new(10.5, 0.8, 1.8),
                edge: 1.2,
                yaw: -0.4,
            },
            CubeSpec {
                center: Vec3::new(9.5, 3.0, 1.8),
                edge: 1.2,
                yaw: 0.15,
            },
        ],
        ground: GroundSpec {
            enabled: true,
            extent: 15.0,
        },
        sensors: roof_pair(64, 0.25),
        validation_cube: Some(CubeSpec {
            center: Vec3::new(16.0, 0.0, 1.8),
            edge: 1.2,
            yaw: 0.0,
        }),
        crop_box: None,
    }
}
