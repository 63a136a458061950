//! Scratch probe: candidate near-field scene for the strict null-calibration
//! check (zero error, zero noise, all four algorithms near identity).

use std::time::Instant;

use gmmcalib::gmm::{joint_register, GmmConfig};
use gmmcalib::icp::{IcpConfig, IcpVariant};
use gmmcalib::pipeline::{recover_calibration_gmm, recover_calibration_icp};
use gmmcalib::scene::{
    make_observation_set, CalibrationErrorSample, CubeSpec, GroundSpec, SceneSpec, SensorSpec,
};
use gmmcalib::se3::{EulerPose, RigidTransform, Vec3};

fn rotation_angle(t: &RigidTransform) -> f64 {
    ((t.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

fn bench_scene(channels: usize, azimuth_step: f64, baseline: f64, yawed: bool, spread: f64) -> SceneSpec {
    let sensor = |y: f64| SensorSpec {
        pose_in_vehicle: RigidTransform::new(gmmcalib::se3::Mat3::identity(), Vec3::new(0.0, y, 0.5))
            .unwrap(),
        h_fov: 70.0,
        v_fov: 24.0,
        channels,
        range: 15.0,
        azimuth_step,
        noise_sigma: 0.0,
    };
    let yaws = if yawed { [0.7, -0.75, 0.6] } else { [0.35, -0.25, 0.15] };
    SceneSpec {
        cubes: vec![
            CubeSpec { center: Vec3::new(4.0, -spread, 0.5), edge: 0.8, yaw: yaws[0] },
            CubeSpec { center: Vec3::new(4.4, 0.1, 0.5), edge: 0.8, yaw: yaws[1] },
            CubeSpec { center: Vec3::new(4.1, spread, 0.5), edge: 0.8, yaw: yaws[2] },
        ],
        ground: GroundSpec { enabled: false, extent: 15.0 },
        sensors: vec![sensor(baseline / 2.0), sensor(-baseline / 2.0)],
        validation_cube: None,
        crop_box: None,
    }
}

fn main() {
    for (label, channels, step, frames, gate, components) in [
        ("16ch gate .15", 16usize, 0.8f64, 10usize, 0.15f64, None),
        ("16ch gate .10", 16, 0.8, 10, 0.10, None),
        ("32ch gate .15", 32, 0.4, 10, 0.15, None),
        ("48ch gate .10", 48, 0.25, 6, 0.10, Some(400usize)),
    ] {
        let scene = bench_scene(channels, step, 0.1, false, 1.1);
        let zero = CalibrationErrorSample { error: EulerPose::default(), seed: 11 };
        let (set, _gt) = make_observation_set(&scene, &zero, frames, zero.seed).unwrap();
        println!(
            "--- {label}: {} obs x {} pts",
            set.observations().len(),
            set.observations()[0].len()
        );

        let t0 = Instant::now();
        let config = GmmConfig { seed: 11, components, ..GmmConfig::default() };
        let result = joint_register(&set, &config).unwrap();
        let report = recover_calibration_gmm(&result, &set).unwrap();
        println!(
            "  gmm  : angle {:.3e} rad, trans {:.3e} m   (iters {}, M {}, {:?})",
            rotation_angle(&report.mean_transform),
            report.mean_transform.translation.norm(),
            result.iterations,
            result.model.len(),
            t0.elapsed()
        );
        let icp_config = IcpConfig { max_correspondence_distance: gate, ..IcpConfig::default() };
        for variant in [IcpVariant::Point, IcpVariant::Plane, IcpVariant::Gicp] {
            let report = recover_calibration_icp(variant, &set, &icp_config).unwrap();
            println!(
                "  {:<5}: angle {:.3e} rad, trans {:.3e} m, failures {}",
                format!("{variant:?}"),
                rotation_angle(&report.mean_transform),
                report.mean_transform.translation.norm(),
                report.failures.len()
            );
        }
    }
}
