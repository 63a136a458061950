use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gmmcalib::pipeline::Algorithm;
use gmmcalib_cli::{
    run_calibrate, run_check, run_evaluate, run_simulate, RunConfig, SimulateParams,
};

/// Multi-sensor extrinsic calibration studies: scene simulation, joint
/// registration, and evaluation against ground truth.
#[derive(Parser)]
#[command(name = "gmmcalib", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene into observation sets with sampled calibration errors.
    Simulate {
        /// Scene description (JSON).
        scene: PathBuf,
        /// Number of calibration-error samples to draw.
        #[arg(long)]
        errors: usize,
        /// Frames captured per sensor for each sample.
        #[arg(long, default_value_t = 1)]
        frames: usize,
        /// Seed for error sampling and scan noise.
        #[arg(long)]
        seed: u64,
        /// Bound on each sampled Euler angle, degrees.
        #[arg(long, default_value_t = 3.0)]
        angle_bound: f64,
        /// Bound on each sampled translation axis, meters.
        #[arg(long, default_value_t = 0.1)]
        translation_bound: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run registration algorithms over simulated observation sets.
    Calibrate {
        /// A `simulate` output directory.
        #[arg(long)]
        input: PathBuf,
        /// Which algorithm(s) to run.
        #[arg(long, value_enum, default_value_t = AlgorithmArg::All)]
        algorithm: AlgorithmArg,
        /// Algorithm parameters (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare calibration reports against ground truth.
    Evaluate {
        /// A `calibrate` output directory.
        #[arg(long)]
        reports: PathBuf,
        /// The `simulate` output directory that produced the inputs.
        #[arg(long)]
        ground_truth: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstructed mixture against a reference target sampling.
    Check {
        /// Mixture model (JSON), e.g. `gmm_model.json` from `calibrate`.
        #[arg(long)]
        model: PathBuf,
        /// Reference sampling of the target shape (.ply/.pcd/.csv).
        #[arg(long)]
        prior: PathBuf,
        /// Largest acceptable plausibility score, meters.
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Gmm,
    Point,
    Plane,
    Gicp,
    All,
}

impl AlgorithmArg {
    fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgorithmArg::Gmm => vec![Algorithm::Gmm],
            AlgorithmArg::Point => vec![Algorithm::PointIcp],
            AlgorithmArg::Plane => vec![Algorithm::PlaneIcp],
            AlgorithmArg::Gicp => vec![Algorithm::Gicp],
            AlgorithmArg::All => Algorithm::ALL.to_vec(),
        }
    }
}

/// Cap the worker pool when GMMCALIB_THREADS is set. Results are identical
/// at any thread count; the cap only bounds CPU use.
fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("GMMCALIB_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| format!("GMMCALIB_THREADS must be a positive integer, got {raw:?}"))?;
    if threads == 0 {
        return Err("GMMCALIB_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| format!("failed to configure {threads} worker threads: {e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // an input problem (exit 1), never the registration class.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Err(message) = init_threads() {
        eprintln!("error: {message}");
        return ExitCode::from(1);
    }

    let result = match cli.command {
        Command::Simulate {
            scene,
            errors,
            frames,
            seed,
            angle_bound,
            translation_bound,
            out,
        } => run_simulate(&SimulateParams {
            scene_path: scene,
            errors,
            frames,
            seed,
            angle_bound_deg: angle_bound,
            translation_bound,
            out_dir: out,
        }),
        Command::Calibrate {
            input,
            algorithm,
            config,
            out,
        } => {
            let run_config = match config {
                Some(path) => match gmmcalib_cli::read_run_config(&path) {
                    Ok(c) => c,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(e.exit_code() as u8);
                    }
                },
                None => RunConfig::default(),
            };
            run_calibrate(&input, &algorithm.algorithms(), &run_config, &out)
        }
        Command::Evaluate {
            reports,
            ground_truth,
            out,
        } => run_evaluate(&reports, &ground_truth, &out),
        Command::Check {
            model,
            prior,
            threshold,
        } => run_check(&model, &prior, threshold),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
