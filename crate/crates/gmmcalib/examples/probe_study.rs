//! Scratch probe: dry run of the 25-error desk-scale study used by the
//! recovery and robustness acceptance checks, with tail statistics and a
//! sensor-density sweep.

use std::time::Instant;

use gmmcalib::gmm::{joint_register, GmmConfig};
use gmmcalib::icp::IcpConfig;
use gmmcalib::metrics::{count_miscalibrations, mean_distance_error, transformation_error};
use gmmcalib::pipeline::{recover_calibration_gmm, recover_calibration_icp, Algorithm};
use gmmcalib::scene::{desk_scene, make_observation_set, sample_calibration_errors, ErrorBounds};
use gmmcalib::se3::Vec3;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn run_study(label: &str, channels: usize, azimuth_step: f64) {
    let mut scene = desk_scene();
    for sensor in &mut scene.sensors {
        sensor.channels = channels;
        sensor.azimuth_step = azimuth_step;
    }
    let bounds = ErrorBounds {
        angle: 3.0f64.to_radians(),
        translation: 0.1,
    };
    let errors = sample_calibration_errors(25, &bounds, 42);
    let start = Instant::now();

    let mut dist_sum = vec![Vec3::zeros(); 4];
    let mut abs_delta_sum = vec![Vec3::zeros(); 4];
    let mut dists: Vec<Vec<Vec3>> = vec![Vec::new(); 4];
    let mut hard_failures = vec![0usize; 4];
    let mut pair_failures = vec![0usize; 4];
    let mut points_per_obs = 0usize;

    for sample in errors.iter() {
        let (set, gt) = make_observation_set(&scene, sample, 20, sample.seed).unwrap();
        points_per_obs = set.observations()[0].len();
        let gt_inverse = gt.inverse();
        for (a_idx, algorithm) in Algorithm::ALL.into_iter().enumerate() {
            let report = match algorithm {
                Algorithm::Gmm => {
                    let config = GmmConfig {
                        seed: sample.seed,
                        ..GmmConfig::default()
                    };
                    match joint_register(&set, &config) {
                        Ok(result) => recover_calibration_gmm(&result, &set).unwrap(),
                        Err(_) => {
                            hard_failures[a_idx] += 1;
                            continue;
                        }
                    }
                }
                other => recover_calibration_icp(
                    other.icp_variant().unwrap(),
                    &set,
                    &IcpConfig::default(),
                )
                .unwrap(),
            };
            pair_failures[a_idx] += report.failures.len();
            let failed: Vec<usize> = report.failures.iter().map(|f| f.pair_index).collect();
            let survivors: Vec<usize> = (0..set.pairs().len())
                .filter(|i| !failed.contains(i))
                .collect();
            assert_eq!(survivors.len(), report.per_pair_transforms.len());
            for (est, &pair_idx) in report.per_pair_transforms.iter().zip(&survivors) {
                let pair = set.pairs()[pair_idx];
                let delta = transformation_error(&gt, est).unwrap();
                let source = set.observations()[pair.source].transformed(&gt_inverse);
                let dist = mean_distance_error(&source, &gt, est);
                dist_sum[a_idx] += dist;
                abs_delta_sum[a_idx] += Vec3::new(delta.x.abs(), delta.y.abs(), delta.z.abs());
                dists[a_idx].push(dist);
            }
        }
    }

    println!(
        "=== {label}: {channels}ch / {azimuth_step} deg, ~{points_per_obs} pts/obs, runtime {:?}",
        start.elapsed()
    );
    for (a_idx, algorithm) in Algorithm::ALL.into_iter().enumerate() {
        let n = dists[a_idx].len() as f64;
        let mean = dist_sum[a_idx] / n;
        let mean_abs_delta = abs_delta_sum[a_idx] / n;
        let miscal = count_miscalibrations(&dists[a_idx], 0.1);
        let mut amax: Vec<f64> = dists[a_idx].iter().map(|d| d.amax()).collect();
        amax.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let max_x = dists[a_idx].iter().map(|d| d.x.abs()).fold(0.0, f64::max);
        let max_y = dists[a_idx].iter().map(|d| d.y.abs()).fold(0.0, f64::max);
        let max_z = dists[a_idx].iter().map(|d| d.z.abs()).fold(0.0, f64::max);
        println!(
            "{:<9}: rows {:4}, mean dist ({:+.4} {:+.4} {:+.4}), mean |d| ({:.4} {:.4} {:.4}), miscal {:3} (hard {} pairfail {})",
            algorithm.name(),
            n,
            mean.x,
            mean.y,
            mean.z,
            mean_abs_delta.x,
            mean_abs_delta.y,
            mean_abs_delta.z,
            miscal,
            hard_failures[a_idx],
            pair_failures[a_idx]
        );
        println!(
            "           amax p50 {:.4} p90 {:.4} p99 {:.4} max {:.4} | axis max ({:.4} {:.4} {:.4})",
            quantile(&amax, 0.50),
            quantile(&amax, 0.90),
            quantile(&amax, 0.99),
            amax.last().unwrap(),
            max_x,
            max_y,
            max_z
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let channels: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(80);
    let step: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.2);
    run_study("sweep", channels, step);
}
