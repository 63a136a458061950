//! Scratch probe: measures null-calibration accuracy and desk-study timing
//! before the thresholds are locked into the acceptance suite.

use std::time::Instant;

use gmmcalib::cloud::SpatialIndex;
use gmmcalib::gmm::{joint_register, GmmConfig};
use gmmcalib::icp::{register_pair, IcpConfig, IcpVariant};
use gmmcalib::pipeline::{recover_calibration_gmm, recover_calibration_icp};
use gmmcalib::scene::{
    desk_scene, make_observation_set, sample_calibration_errors, CalibrationErrorSample,
    ErrorBounds,
};
use gmmcalib::se3::{EulerPose, RigidTransform};

fn rotation_angle(t: &RigidTransform) -> f64 {
    ((t.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

fn main() {
    // --- Criterion 3 probe: zero error, zero noise, 20 frames -------------
    let mut scene = desk_scene();
    for sensor in &mut scene.sensors {
        sensor.noise_sigma = 0.0;
    }
    let zero = CalibrationErrorSample {
        error: EulerPose::default(),
        seed: 7,
    };
    let (set, _gt) = make_observation_set(&scene, &zero, 20, zero.seed).unwrap();
    println!(
        "observations {}, pts/obs {}",
        set.observations().len(),
        set.observations()[0].len()
    );

    // Pair-0 overlap: NN-distance quartiles between the two clouds.
    let a = &set.observations()[0];
    let b = &set.observations()[1];
    let index = SpatialIndex::build(b).unwrap();
    let mut nn: Vec<f64> = a.points().iter().map(|p| index.nearest(p).1).collect();
    nn.sort_by(f64::total_cmp);
    println!(
        "pair0 NN quartiles: {:.4} {:.4} {:.4} max {:.4}",
        nn[nn.len() / 4],
        nn[nn.len() / 2],
        nn[3 * nn.len() / 4],
        nn[nn.len() - 1]
    );

    let direct = register_pair(b, a, &IcpConfig::default()).unwrap();
    println!(
        "pairwise p2p: |t| {:.2e}, angle {:.2e}, iters {}, rmse {:.4}",
        direct.transform.translation.norm(),
        rotation_angle(&direct.transform),
        direct.iterations,
        direct.rmse
    );

    let t0 = Instant::now();
    let config = GmmConfig {
        seed: 7,
        ..GmmConfig::default()
    };
    let result = joint_register(&set, &config).unwrap();
    println!(
        "gmm register: {:?}, iters {}, converged {}, M {}",
        t0.elapsed(),
        result.iterations,
        result.converged,
        result.model.len()
    );
    let report = recover_calibration_gmm(&result, &set).unwrap();
    println!(
        "gmm   null: angle {:.3e} rad, trans {:.3e} m",
        rotation_angle(&report.mean_transform),
        report.mean_transform.translation.norm()
    );

    for variant in [IcpVariant::Point, IcpVariant::Plane, IcpVariant::Gicp] {
        let t0 = Instant::now();
        let report = recover_calibration_icp(variant, &set, &IcpConfig::default()).unwrap();
        println!(
            "{:<5} null: angle {:.3e} rad, trans {:.3e} m, failures {}, {:?}",
            format!("{variant:?}"),
            rotation_angle(&report.mean_transform),
            report.mean_transform.translation.norm(),
            report.failures.len(),
            t0.elapsed()
        );
    }

    // --- Criterion 4 probe: one sampled error on the noisy desk scene -----
    let scene = desk_scene();
    let bounds = ErrorBounds {
        angle: 3.0f64.to_radians(),
        translation: 0.1,
    };
    let sample = &sample_calibration_errors(1, &bounds, 42)[0];
    let (set, gt) = make_observation_set(&scene, sample, 20, sample.seed).unwrap();
    let t0 = Instant::now();
    let config = GmmConfig {
        seed: sample.seed,
        ..GmmConfig::default()
    };
    let result = joint_register(&set, &config).unwrap();
    println!(
        "study gmm run: {:?}, iters {}, converged {}, M {}",
        t0.elapsed(),
        result.iterations,
        result.converged,
        result.model.len()
    );
    let report = recover_calibration_gmm(&result, &set).unwrap();
    let delta = gt.inverse().compose(&report.mean_transform);
    println!(
        "study gmm vs gt: angle {:.3e} rad, trans {:.3e} m",
        rotation_angle(&delta),
        delta.translation.norm()
    );

    for variant in [IcpVariant::Point, IcpVariant::Plane, IcpVariant::Gicp] {
        let t0 = Instant::now();
        let icp_report = recover_calibration_icp(variant, &set, &IcpConfig::default()).unwrap();
        let delta = gt.inverse().compose(&icp_report.mean_transform);
        println!(
            "study {:<5} vs gt: angle {:.3e} rad, trans {:.3e} m, failures {}, {:?}",
            format!("{variant:?}"),
            rotation_angle(&delta),
            delta.translation.norm(),
            icp_report.failures.len(),
            t0.elapsed()
        );
    }
}
