//! Implementations of the `gmmcalib` subcommands.
//!
//! Each `run_*` function is the body of one subcommand: it does all file I/O
//! and returns either success or a [`CliError`] whose class fixes the
//! process exit code (0 success, 1 input problem, 2 registration failure,
//! 3 implausible reconstruction). The functions are plain library code so
//! they can be driven from tests without spawning a process.
//!
//! A study is three stages chained through directories:
//!
//! 1. `simulate` renders a scene into per-error observation sets plus the
//!    generating ground-truth transforms;
//! 2. `calibrate` runs the selected registration algorithms over every
//!    observation set and writes one calibration report per algorithm;
//! 3. `evaluate` compares reports against ground truth and writes per-pair
//!    metrics, distance profiles, and a cross-algorithm summary.
//!
//! `check` stands alone: it scores a reconstructed mixture against a
//! reference sampling of the target shape.
//!
//! Every output is written atomically (temp file, then rename), so an
//! interrupted run never leaves a truncated artifact, and reruns with the
//! same seeds reproduce every byte.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gmmcalib::cloud::{read_cloud, write_cloud, CloudFormat, ObservationSet, PointCloud};
use gmmcalib::gmm::{joint_register, GmmConfig};
use gmmcalib::icp::IcpConfig;
use gmmcalib::metrics::{
    export_metrics, fit_distance_profile, global_range_profile, mean_distance_error,
    transformation_error, ExportFormat, MetricsTable, MISCALIBRATION_THRESHOLD,
};
use gmmcalib::pipeline::{
    plausibility_check, recover_calibration_gmm, recover_calibration_icp, Algorithm,
    CalibrationReport, PipelineError,
};
use gmmcalib::scene::{sample_calibration_errors, sample_cube_surfaces, ErrorBounds, SceneSpec};
use gmmcalib::se3::{EulerPose, RigidTransform};

/// Version stamp embedded in every JSON artifact this tool writes or reads.
pub const SCHEMA_VERSION: u32 = 1;

/// Sampling density (points per cube edge) of the reference target sampling
/// written by `simulate` for later plausibility checks.
const PRIOR_SAMPLES_PER_EDGE: usize = 24;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable, unparsable, or mutually inconsistent inputs. Exit code 1.
    #[error("{0}")]
    Input(String),
    /// Registration produced no usable result for at least one observation
    /// set. Exit code 2.
    #[error("{0}")]
    Registration(String),
    /// The reconstruction check ran but the score exceeded the threshold.
    /// Exit code 3.
    #[error("plausibility score {score:.6} exceeds threshold {threshold:.6}")]
    Implausible { score: f64, threshold: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Registration(_) => 2,
            CliError::Implausible { .. } => 3,
        }
    }
}

fn input_err(message: impl Into<String>) -> CliError {
    CliError::Input(message.into())
}

/// `{path}: {error}` formatting for I/O and parse failures.
fn file_err(path: &Path, error: impl std::fmt::Display) -> CliError {
    input_err(format!("{}: {error}", path.display()))
}

// ---------------------------------------------------------------------------
// On-disk schemas
// ---------------------------------------------------------------------------

/// Top-level description of a simulation run, written once per output
/// directory. Downstream commands treat it as the run's table of contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub scene: SceneSpec,
    pub errors: usize,
    pub frames: usize,
    pub seed: u64,
    /// Calibration-error sampling bound on each angle, radians.
    pub angle_bound: f64,
    /// Calibration-error sampling bound on each translation axis, meters.
    pub translation_bound: f64,
    pub sensor_ids: [String; 2],
    /// Per-error subdirectories, in sample order.
    pub error_dirs: Vec<String>,
}

/// The transform that generated one observation set, with its Euler
/// decomposition and the seed that drove the scans.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub schema_version: u32,
    pub pose: EulerPose,
    pub transform: RigidTransform,
    pub scan_seed: u64,
}

/// Algorithm parameters for `calibrate`, read from `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub gmm: GmmConfig,
    #[serde(default)]
    pub icp: IcpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            gmm: GmmConfig::default(),
            icp: IcpConfig::default(),
        }
    }
}

/// Read a [`RunConfig`], rejecting unknown keys and schema mismatches.
pub fn read_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let config: RunConfig = read_json(path)?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(file_err(
            path,
            format!(
                "schema version {} not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            ),
        ));
    }
    Ok(config)
}

/// A calibration report plus an echo of the configuration that produced it,
/// so every result file is self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub config: serde_json::Value,
    #[serde(flatten)]
    pub report: CalibrationReport,
}

/// One row of the cross-algorithm summary: mean absolute residuals in the
/// Euler/translation decomposition plus the miscalibration count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub mean_delta: EulerPose,
    pub miscalibration_count: usize,
    pub n_pairs: usize,
}

// ---------------------------------------------------------------------------
// Atomic writes
// ---------------------------------------------------------------------------

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("part");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| file_err(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|e| file_err(path, e))
}

fn write_cloud_atomic(
    cloud: &PointCloud,
    path: &Path,
    format: CloudFormat,
) -> Result<(), CliError> {
    let tmp = path.with_extension("part");
    write_cloud(cloud, &tmp, format).map_err(|e| file_err(path, e))?;
    fs::rename(&tmp, path).map_err(|e| file_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_err(path, e))
}

fn error_dir_name(index: usize) -> String {
    format!("error_{index:03}")
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SimulateParams {
    pub scene_path: PathBuf,
    pub errors: usize,
    pub frames: usize,
    pub seed: u64,
    /// Bound on each sampled Euler angle, degrees.
    pub angle_bound_deg: f64,
    /// Bound on each sampled translation axis, meters.
    pub translation_bound: f64,
    pub out_dir: PathBuf,
}

/// Render a scene into `errors` observation sets with randomly sampled
/// calibration errors.
///
/// Output layout under `out_dir`:
///
/// ```text
/// manifest.json            run parameters and scene echo
/// prior.ply                dense surface sampling of the scene's targets
/// error_000/
///   ground_truth.json      the transform this sample injected
///   full_cloud.ply         uncropped source-sensor scan, shared frame,
///                          before the error is applied
///   obs_000_L1.ply ...     cropped per-frame observations, set order
/// ```
pub fn run_simulate(params: &SimulateParams) -> Result<(), CliError> {
    if params.errors == 0 {
        return Err(input_err("--errors must be at least 1"));
    }
    if params.frames == 0 {
        return Err(input_err("--frames must be at least 1"));
    }
    if params.angle_bound_deg < 0.0 || params.translation_bound < 0.0 {
        return Err(input_err("error bounds must be non-negative"));
    }
    let scene: SceneSpec = read_json(&params.scene_path)?;
    scene.validate().map_err(|e| file_err(&params.scene_path, e))?;
    if scene.sensors.len() != 2 {
        return Err(file_err(
            &params.scene_path,
            format!("scene must define exactly 2 sensors, found {}", scene.sensors.len()),
        ));
    }

    fs::create_dir_all(&params.out_dir).map_err(|e| file_err(&params.out_dir, e))?;

    let bounds = ErrorBounds {
        angle: params.angle_bound_deg.to_radians(),
        translation: params.translation_bound,
    };
    let samples = sample_calibration_errors(params.errors, &bounds, params.seed);

    // Reference sampling of the target shapes, for plausibility checks.
    let mut prior_points = Vec::new();
    for cube in &scene.cubes {
        prior_points.extend(sample_cube_surfaces(cube, PRIOR_SAMPLES_PER_EDGE));
    }
    if !prior_points.is_empty() {
        let prior = PointCloud::new(prior_points, "prior", "0")
            .map_err(|e| input_err(format!("building target prior: {e}")))?;
        write_cloud_atomic(&prior, &params.out_dir.join("prior.ply"), CloudFormat::PlyAscii)?;
    }

    let mut error_dirs = Vec::with_capacity(samples.len());
    for (index, sample) in samples.iter().enumerate() {
        let dir_name = error_dir_name(index);
        let dir = params.out_dir.join(&dir_name);
        fs::create_dir_all(&dir).map_err(|e| file_err(&dir, e))?;

        let (set, ground_truth) =
            gmmcalib::scene::make_observation_set(&scene, sample, params.frames, sample.seed)
                .map_err(|e| input_err(format!("{dir_name}: {e}")))?;

        write_json_atomic(
            &dir.join("ground_truth.json"),
            &GroundTruthFile {
                schema_version: SCHEMA_VERSION,
                pose: sample.error,
                transform: ground_truth,
                scan_seed: sample.seed,
            },
        )?;

        // The full (uncropped) source-sensor view in the shared frame,
        // before the calibration error is applied: evaluate fits the
        // displacement-versus-distance profile over it.
        let source_scan = gmmcalib::scene::raycast_scan(&scene, 1, 0, sample.seed)
            .map_err(|e| input_err(format!("{dir_name}: {e}")))?;
        let full_cloud = source_scan.transformed(&scene.sensors[1].pose_in_vehicle);
        write_cloud_atomic(&full_cloud, &dir.join("full_cloud.ply"), CloudFormat::PlyAscii)?;

        for (k, obs) in set.observations().iter().enumerate() {
            let name = format!("obs_{k:03}_{}.ply", obs.sensor_id);
            write_cloud_atomic(obs, &dir.join(name), CloudFormat::PlyAscii)?;
        }
        error_dirs.push(dir_name);
    }

    let sensor_ids = {
        // Observation sets order ids by first appearance; reconstruct that
        // from a fresh set only if at least one sample exists.
        let first = params.out_dir.join(&error_dirs[0]);
        let set = load_observation_set(&first)?;
        set.sensor_ids().clone()
    };

    write_json_atomic(
        &params.out_dir.join("manifest.json"),
        &Manifest {
            schema_version: SCHEMA_VERSION,
            scene,
            errors: params.errors,
            frames: params.frames,
            seed: params.seed,
            angle_bound: bounds.angle,
            translation_bound: bounds.translation,
            sensor_ids,
            error_dirs,
        },
    )
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

/// Rebuild an observation set from the `obs_*.ply` files of one error
/// directory, in file-name order (which is set order).
pub fn load_observation_set(dir: &Path) -> Result<ObservationSet, CliError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| file_err(dir, e))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| name.starts_with("obs_") && name.ends_with(".ply"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(file_err(dir, "no obs_*.ply observation files"));
    }
    let mut observations = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join(name);
        observations.push(read_cloud(&path, CloudFormat::PlyAscii).map_err(|e| file_err(&path, e))?);
    }
    ObservationSet::new(observations).map_err(|e| file_err(dir, e))
}

fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join("manifest.json");
    let manifest: Manifest = read_json(&path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(file_err(
            &path,
            format!(
                "schema version {} not supported (expected {SCHEMA_VERSION})",
                manifest.schema_version
            ),
        ));
    }
    Ok(manifest)
}

/// Run the selected algorithms over every observation set under `input`
/// (a `simulate` output directory) and write one report per algorithm into
/// matching subdirectories of `out`.
///
/// Individual pair failures are recorded inside the report and do not fail
/// the command; an algorithm that cannot produce any calibration for an
/// observation set is a hard failure and the command exits with code 2
/// after finishing everything else it can.
pub fn run_calibrate(
    input: &Path,
    algorithms: &[Algorithm],
    config: &RunConfig,
    out: &Path,
) -> Result<(), CliError> {
    if config.schema_version != SCHEMA_VERSION {
        return Err(input_err(format!(
            "config schema version {} not supported (expected {SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    let manifest = read_manifest(input)?;
    fs::create_dir_all(out).map_err(|e| file_err(out, e))?;

    let mut hard_failures: Vec<String> = Vec::new();
    for dir_name in &manifest.error_dirs {
        let set = load_observation_set(&input.join(dir_name))?;
        let out_dir = out.join(dir_name);
        fs::create_dir_all(&out_dir).map_err(|e| file_err(&out_dir, e))?;

        for &algorithm in algorithms {
            match calibrate_one(&set, algorithm, config) {
                Ok(report) => {
                    if algorithm == Algorithm::Gmm {
                        if let Some(model) = &report.reconstruction {
                            write_json_atomic(&out_dir.join("gmm_model.json"), model)?;
                        }
                    }
                    let config_echo = match algorithm {
                        Algorithm::Gmm => serde_json::to_value(&config.gmm),
                        _ => serde_json::to_value(&config.icp),
                    }
                    .map_err(|e| input_err(e.to_string()))?;
                    write_json_atomic(
                        &out_dir.join(format!("{}_report.json", algorithm.name())),
                        &ReportFile {
                            schema_version: SCHEMA_VERSION,
                            config: config_echo,
                            report,
                        },
                    )?;
                }
                Err(message) => {
                    hard_failures.push(format!("{dir_name}/{}: {message}", algorithm.name()));
                }
            }
        }
    }

    if hard_failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Registration(format!(
            "no calibration produced for: {}",
            hard_failures.join("; ")
        )))
    }
}

fn calibrate_one(
    set: &ObservationSet,
    algorithm: Algorithm,
    config: &RunConfig,
) -> Result<CalibrationReport, String> {
    match algorithm.icp_variant() {
        None => {
            let result = joint_register(set, &config.gmm).map_err(|e| e.to_string())?;
            recover_calibration_gmm(&result, set).map_err(|e| e.to_string())
        }
        Some(variant) => {
            recover_calibration_icp(variant, set, &config.icp).map_err(|e| e.to_string())
        }
    }
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

const GLOBAL_CSV_HEADER: &str = "x_distance,l2_error";
const SUMMARY_CSV_HEADER: &str =
    "algorithm,d_roll,d_pitch,d_yaw,dx,dy,dz,miscalibrations,n_pairs";

/// Compare calibration reports against the ground truth that generated
/// their inputs; write per-algorithm metrics tables, pooled
/// displacement-versus-distance profiles, and a cross-algorithm summary.
pub fn run_evaluate(reports: &Path, ground_truth: &Path, out: &Path) -> Result<(), CliError> {
    let manifest = read_manifest(ground_truth)?;
    fs::create_dir_all(out).map_err(|e| file_err(out, e))?;

    // The algorithm set is fixed by the first error directory; every other
    // directory must carry reports for exactly the same algorithms.
    let algorithms = discover_algorithms(&reports.join(&manifest.error_dirs[0]))?;
    if algorithms.is_empty() {
        return Err(file_err(
            &reports.join(&manifest.error_dirs[0]),
            "no *_report.json files",
        ));
    }

    let mut per_algorithm: Vec<(Algorithm, Vec<EulerPose>, Vec<gmmcalib::se3::Vec3>, Vec<(f64, f64)>)> =
        algorithms.iter().map(|&a| (a, Vec::new(), Vec::new(), Vec::new())).collect();

    for dir_name in &manifest.error_dirs {
        let gt_dir = ground_truth.join(dir_name);
        let gt: GroundTruthFile = read_json(&gt_dir.join("ground_truth.json"))?;
        let set = load_observation_set(&gt_dir)?;
        let full_path = gt_dir.join("full_cloud.ply");
        let full_cloud =
            read_cloud(&full_path, CloudFormat::PlyAscii).map_err(|e| file_err(&full_path, e))?;
        let gt_inverse = gt.transform.inverse();

        for (algorithm, deltas, distances, profile_points) in per_algorithm.iter_mut() {
            let report_path = reports
                .join(dir_name)
                .join(format!("{}_report.json", algorithm.name()));
            let file: ReportFile = read_json(&report_path)?;
            let report = &file.report;

            // Pair indices that survived: all pairs minus recorded failures.
            let failed: Vec<usize> = report.failures.iter().map(|f| f.pair_index).collect();
            let survivors: Vec<usize> = (0..set.pairs().len())
                .filter(|i| !failed.contains(i))
                .collect();
            if survivors.len() != report.per_pair_transforms.len() {
                return Err(file_err(
                    &report_path,
                    format!(
                        "report has {} per-pair transforms but the observation set \
                         has {} pairs with {} recorded failures",
                        report.per_pair_transforms.len(),
                        set.pairs().len(),
                        report.failures.len()
                    ),
                ));
            }

            for (&pair_index, estimate) in survivors.iter().zip(&report.per_pair_transforms) {
                let delta = transformation_error(&gt.transform, estimate)
                    .map_err(|e| file_err(&report_path, e))?;
                deltas.push(delta);
                // The displacement weighting uses the source observation
                // taken back to the shared frame, so both transforms act on
                // the same points the generator placed.
                let pair = &set.pairs()[pair_index];
                let source = set.observations()[pair.source].transformed(&gt_inverse);
                distances.push(mean_distance_error(&source, &gt.transform, estimate));
            }

            let profile = global_range_profile(&full_cloud, &gt.transform, &report.mean_transform);
            profile_points.extend(profile.points);
        }
    }

    let mut summary_rows = Vec::new();
    for (algorithm, deltas, distances, profile_points) in per_algorithm {
        let name = algorithm.name();
        let fit = fit_distance_profile(&profile_points);
        let table = MetricsTable::new(name, deltas, distances, fit, MISCALIBRATION_THRESHOLD)
            .map_err(|e| input_err(format!("{name}: {e}")))?;

        let csv_path = out.join(format!("{name}_metrics.csv"));
        export_tmp(&table, &csv_path, ExportFormat::Csv)?;
        let json_path = out.join(format!("{name}_metrics.json"));
        export_tmp(&table, &json_path, ExportFormat::Json)?;

        let mut global_csv = String::from(GLOBAL_CSV_HEADER);
        global_csv.push('\n');
        for (x, e) in &profile_points {
            global_csv.push_str(&format!("{x:.8e},{e:.8e}\n"));
        }
        write_atomic(&out.join(format!("{name}_global.csv")), global_csv.as_bytes())
            .map_err(|e| file_err(out, e))?;

        summary_rows.push(SummaryRow {
            algorithm: name.to_string(),
            mean_delta: table.mean_delta,
            miscalibration_count: table.miscalibration_count,
            n_pairs: table.n_pairs,
        });
    }

    let mut summary_csv = String::from(SUMMARY_CSV_HEADER);
    summary_csv.push('\n');
    for row in &summary_rows {
        let d = &row.mean_delta;
        summary_csv.push_str(&format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{},{}\n",
            row.algorithm, d.roll, d.pitch, d.yaw, d.x, d.y, d.z,
            row.miscalibration_count, row.n_pairs,
        ));
    }
    write_atomic(&out.join("summary.csv"), summary_csv.as_bytes())
        .map_err(|e| file_err(out, e))?;
    write_json_atomic(&out.join("summary.json"), &summary_rows)
}

/// Write a metrics table through a temp file so the final artifact appears
/// atomically.
fn export_tmp(table: &MetricsTable, path: &Path, format: ExportFormat) -> Result<(), CliError> {
    let tmp = path.with_extension("part");
    export_metrics(table, &tmp, format).map_err(|e| file_err(path, e))?;
    fs::rename(&tmp, path).map_err(|e| file_err(path, e))
}

/// Algorithms with a report in `dir`, in the fixed algorithm order.
fn discover_algorithms(dir: &Path) -> Result<Vec<Algorithm>, CliError> {
    let mut found = Vec::new();
    for algorithm in Algorithm::ALL {
        if dir.join(format!("{}_report.json", algorithm.name())).exists() {
            found.push(algorithm);
        }
    }
    Ok(found)
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

/// Score a reconstructed mixture against a reference sampling of the target
/// shape. Prints the score; `Ok` when it is at or below the threshold.
pub fn run_check(model: &Path, prior: &Path, threshold: f64) -> Result<(), CliError> {
    if threshold < 0.0 {
        return Err(input_err("--threshold must be non-negative"));
    }
    let mixture: gmmcalib::gmm::GmmModel = read_json(model)?;
    let format = CloudFormat::from_extension(prior).map_err(|e| file_err(prior, e))?;
    let prior_cloud = read_cloud(prior, format).map_err(|e| file_err(prior, e))?;

    let score = match plausibility_check(&mixture, &prior_cloud) {
        Ok(score) => score,
        Err(PipelineError::EmptyModel) => {
            return Err(input_err(
                "model has no components above the pruning threshold; nothing to check",
            ));
        }
        Err(e) => return Err(input_err(e.to_string())),
    };
    println!("plausibility score: {score:.6} (threshold {threshold:.6})");
    if score <= threshold {
        Ok(())
    } else {
        Err(CliError::Implausible { score, threshold })
    }
}
