//! Scratch probe: per-observation point counts for preset scenes at various
//! sensor densities.

use gmmcalib::scene::{desk_scene, make_observation_set, sample_calibration_errors, ErrorBounds};

fn main() {
    let bounds = ErrorBounds {
        angle: 3.0f64.to_radians(),
        translation: 0.1,
    };
    let sample = &sample_calibration_errors(1, &bounds, 42)[0];
    for (channels, step) in [(80usize, 0.2f64), (48, 0.15), (32, 0.1)] {
        let mut scene = desk_scene();
        for sensor in &mut scene.sensors {
            sensor.channels = channels;
            sensor.azimuth_step = step;
        }
        let (set, _gt) = make_observation_set(&scene, sample, 3, 7).unwrap();
        let lens: Vec<usize> = set.observations().iter().map(|o| o.len()).collect();
        println!("{channels}ch/{step}: lens {lens:?}");
    }
}
