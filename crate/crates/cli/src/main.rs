//! Command-line harness for the flat-metric toolkit.
//!
//! Every subcommand writes CSV (with a header row) to `--out` or stdout and
//! logs to standard error. Runs are deterministic from `--seed`: rerunning a
//! command with the same arguments reproduces the output byte for byte.

use clap::{Parser, Subcommand, ValueEnum};
use flat_metric::calibration::{CalibrationGrid, DimensionModel};
use flat_metric::experiments::{
    self, gaussian_cluster_preset, hyperparameter_sweep, image_benchmark,
    median_residual_per_class, nearest_source_assignment, pairwise_matrix, synthetic_image,
    write_image_bench_csv, write_matrix_csv, write_sweep_csv, DistanceOptions, Engine, Exp1Spec,
    Exp2Spec, Measure, SweepSpec,
};
use flat_metric::lp::DistanceMode;
use flat_metric::measures::{
    image_to_measure, read_image, read_measure_csv_path, write_measure_csv,
};
use flat_metric::training::TrainConfig;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "flat-metric",
    about = "Flat (dual bounded Lipschitz) distances between discrete measures of unequal mass",
    version
)]
struct Cli {
    /// Master seed; all per-cell seeds derive from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Training epochs (default: 2000, or 10000 with --paper-scale).
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Write the CSV output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Use the full published grids and training lengths (hours of runtime).
    #[arg(long, global = true)]
    paper_scale: bool,

    /// Load training hyperparameters from a `key = value` file
    /// (overridden by --epochs and --seed).
    #[arg(long, global = true)]
    train_config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Flat,
    Wasserstein,
}

impl From<ModeArg> for DistanceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Flat => DistanceMode::Flat,
            ModeArg::Wasserstein => DistanceMode::Wasserstein,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Neural,
    Lp,
    Analytic,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Neural => Engine::Neural,
            EngineArg::Lp => Engine::Lp,
            EngineArg::Analytic => Engine::Analytic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Distance between two point clouds (CSV files, one row per point).
    Dist {
        file_a: PathBuf,
        file_b: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Flat)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = EngineArg::Neural)]
        engine: EngineArg,
        /// Report the raw neural estimate without output correction.
        #[arg(long)]
        no_correction: bool,
        /// Treat the last CSV column as point weights even without a header.
        #[arg(long)]
        weights: bool,
        /// Load the correction model from a file instead of the built-in fit.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Write the per-epoch training log (neural engine) to this CSV.
        #[arg(long)]
        train_log: Option<PathBuf>,
    },
    /// Pairwise distance matrix over every *.csv point cloud in a directory.
    Matrix {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Flat)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = EngineArg::Neural)]
        engine: EngineArg,
        #[arg(long)]
        no_correction: bool,
        #[arg(long)]
        weights: bool,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Sphere experiment: estimates vs closed-form truth over a radius grid.
    Exp1 {
        /// Mass ratios n/m to probe.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        /// Dimensions to probe.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        /// Sphere radii.
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        /// Dirac mass (and point-count base).
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Ball experiment: supports split by transport range, corrected vs raw.
    Exp2 {
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        /// Fractions of the cloud within transport range.
        #[arg(long, value_delimiter = ',')]
        inner_fractions: Option<Vec<f64>>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Optimizer hyperparameter sweep on the balanced sphere preset.
    Sweep {},
    /// Run the calibration grid, optionally refitting the correction model.
    Calibrate {
        /// Also fit the dimension model and write it to this file.
        #[arg(long)]
        fit_model: Option<PathBuf>,
    },
    /// Neural estimates vs closed-form truth for grayscale images against a
    /// hot pixel at the origin. Without image paths, runs on built-in
    /// synthetic images (disk, ramp, noise).
    Imgbench {
        /// Image files (plain-text matrix or 8-bit PGM); class = parent dir.
        images: Vec<PathBuf>,
        /// Pixel masses for the Dirac side.
        #[arg(long, value_delimiter = ',', default_values_t = [100.0, 1000.0])]
        masses: Vec<f64>,
    },
    /// Convert a grayscale image into a weighted point cloud CSV.
    Img2measure { image: PathBuf },
    /// Pairwise flat and Wasserstein distances on the built-in Gaussian
    /// cluster preset, plus the nearest-source assignment.
    Gaussians {
        #[arg(long, value_enum, default_value_t = EngineArg::Lp)]
        engine: EngineArg,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        log::error!("{e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> flat_metric::Result<()> {
    let mut train_cfg = match &cli.train_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            TrainConfig::<f64>::from_key_value_text(&text)?
        }
        None => {
            TrainConfig::<f64>::default().with_epochs(if cli.paper_scale { 10_000 } else { 2_000 })
        }
    };
    if let Some(epochs) = cli.epochs {
        train_cfg.epochs = epochs;
    }
    let train_cfg = train_cfg;
    let mut output: Vec<u8> = Vec::new();

    match &cli.command {
        Command::Dist {
            file_a,
            file_b,
            mode,
            engine,
            no_correction,
            weights,
            model,
            train_log,
        } => {
            let mu: Measure = read_measure_csv_path(file_a, *weights)?;
            let nu: Measure = read_measure_csv_path(file_b, *weights)?;
            let opts = DistanceOptions {
                mode: (*mode).into(),
                engine: (*engine).into(),
                correction: correction_model(*no_correction, model.as_deref())?,
                train: TrainConfig {
                    seed: cli.seed,
                    ..train_cfg.clone()
                },
            };
            log::info!(
                "dist: {} ({} pts, mass {}) vs {} ({} pts, mass {})",
                file_a.display(),
                mu.len(),
                mu.total_variation(),
                file_b.display(),
                nu.len(),
                nu.total_variation()
            );
            let (d, state) = flat_metric::experiments::distance_detailed(&mu, &nu, &opts)?;
            if let Some(path) = train_log {
                match &state {
                    Some(state) => {
                        let mut log = Vec::new();
                        flat_metric::training::write_history_csv(&state.history, &mut log)?;
                        std::fs::write(path, log)?;
                        log::info!("wrote training log to {}", path.display());
                    }
                    None => log::warn!("--train-log ignored: engine did not train"),
                }
            }
            writeln!(output, "mode,engine,value,raw,sem")?;
            writeln!(
                output,
                "{},{},{},{},{}",
                mode_name(*mode),
                engine_name(*engine),
                d.value,
                d.raw.map(|v| v.to_string()).unwrap_or_default(),
                d.sem.map(|v| v.to_string()).unwrap_or_default()
            )?;
        }
        Command::Matrix {
            dir,
            mode,
            engine,
            no_correction,
            weights,
            model,
        } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            let labels: Vec<String> = files
                .iter()
                .map(|p| {
                    p.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default()
                })
                .collect();
            let measures: Vec<Measure> = files
                .iter()
                .map(|p| read_measure_csv_path(p, *weights))
                .collect::<flat_metric::Result<_>>()?;
            log::info!(
                "matrix over {} measures from {}",
                measures.len(),
                dir.display()
            );
            let opts = DistanceOptions {
                mode: (*mode).into(),
                engine: (*engine).into(),
                correction: correction_model(*no_correction, model.as_deref())?,
                train: train_cfg.clone(),
            };
            let matrix = pairwise_matrix(&measures, &opts, cli.seed)?;
            write_matrix_csv(&labels, &matrix, &mut output)?;
        }
        Command::Exp1 {
            ratios,
            dims,
            radii,
            points,
            repetitions,
        } => {
            let mut spec = if cli.paper_scale {
                Exp1Spec::paper(cli.seed)
            } else {
                Exp1Spec::desk(cli.seed)
            };
            if let Some(r) = ratios {
                spec.ratios = r.clone();
            }
            if let Some(d) = dims {
                spec.dims = d.clone();
            }
            if let Some(r) = radii {
                spec.radii = r.clone();
            }
            if let Some(p) = points {
                spec.base_points = *p;
            }
            if let Some(r) = repetitions {
                spec.repetitions = *r;
            }
            let model = DimensionModel::fitted_default()?;
            let report = experiments::run_experiment1(&spec, &train_cfg, &model)?;
            let (raw, corrected) = report.mean_abs_rel_err();
            log::info!("exp1: mean |rel err| raw {raw:.4}, corrected {corrected:.4}");
            report.write_csv(&mut output)?;
        }
        Command::Exp2 {
            ratios,
            inner_fractions,
            points,
            repetitions,
        } => {
            let mut spec = if cli.paper_scale {
                Exp2Spec::paper(cli.seed)
            } else {
                Exp2Spec::desk(cli.seed)
            };
            if let Some(r) = ratios {
                spec.ratios = r.clone();
            }
            if let Some(f) = inner_fractions {
                spec.inner_fractions = f.clone();
            }
            if let Some(p) = points {
                spec.n_points = *p;
            }
            if let Some(r) = repetitions {
                spec.repetitions = *r;
            }
            let model = DimensionModel::fitted_default()?;
            let report = experiments::run_experiment2(&spec, &train_cfg, &model)?;
            let (raw, corrected) = report.mean_abs_rel_err();
            log::info!(
                "exp2: mean |rel err| raw {raw:.4}, corrected {corrected:.4} ({:+.1}%)",
                100.0 * (corrected - raw) / raw
            );
            report.write_csv(&mut output)?;
        }
        Command::Sweep {} => {
            let spec = SweepSpec::desk(cli.seed);
            let rows = hyperparameter_sweep(&spec, &train_cfg)?;
            write_sweep_csv(&rows, &mut output)?;
        }
        Command::Calibrate { fit_model } => {
            let grid = if cli.paper_scale {
                CalibrationGrid::paper_scale()
            } else {
                CalibrationGrid::desk_scale()
            };
            let cfg = TrainConfig {
                seed: cli.seed,
                ..train_cfg.clone()
            };
            let table = flat_metric::calibration::run_calibration(&grid, &cfg)?;
            if let Some(path) = fit_model {
                let model = table.fit_model()?;
                std::fs::write(path, model.to_model_text("fit of a fresh calibration run"))?;
                log::info!("wrote refit model to {}", path.display());
            }
            table.write_csv(&mut output)?;
        }
        Command::Imgbench { images, masses } => {
            let loaded: Vec<(String, String, Measure)> = if images.is_empty() {
                log::info!("imgbench: no images given, using built-in synthetic set");
                let size = if cli.paper_scale { 32 } else { 12 };
                ["disk", "ramp", "noise"]
                    .iter()
                    .map(|kind| {
                        let grid = synthetic_image(kind, size, cli.seed)?;
                        Ok((
                            format!("{kind}_{size}"),
                            (*kind).to_string(),
                            image_to_measure(&grid, 255.0)?,
                        ))
                    })
                    .collect::<flat_metric::Result<_>>()?
            } else {
                images
                    .iter()
                    .map(|p| {
                        let (grid, max) = read_image(p)?;
                        let name = p
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default();
                        let class = p
                            .parent()
                            .and_then(Path::file_name)
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| "unknown".into());
                        Ok((name, class, image_to_measure(&grid, max)?))
                    })
                    .collect::<flat_metric::Result<_>>()?
            };
            let model = DimensionModel::fitted_default()?;
            let rows = image_benchmark(&loaded, masses, &train_cfg, &model, cli.seed)?;
            for (class, median) in median_residual_per_class(&rows) {
                log::info!("imgbench: class {class}: median residual {median:.4}");
            }
            write_image_bench_csv(&rows, &mut output)?;
        }
        Command::Img2measure { image } => {
            let (grid, max) = read_image(image)?;
            let measure: Measure = image_to_measure(&grid, max)?;
            log::info!(
                "{}: {} foreground points, total mass {}",
                image.display(),
                measure.len(),
                measure.total_variation()
            );
            write_measure_csv(&measure, &mut output)?;
        }
        Command::Gaussians { engine } => {
            let clusters = gaussian_cluster_preset(cli.seed)?;
            let labels: Vec<String> = clusters.iter().map(|(l, _)| l.clone()).collect();
            let measures: Vec<Measure> = clusters.into_iter().map(|(_, m)| m).collect();
            let flat_opts = DistanceOptions {
                mode: DistanceMode::Flat,
                engine: (*engine).into(),
                correction: correction_model(false, None)?,
                train: train_cfg.clone(),
            };
            let flat = pairwise_matrix(&measures, &flat_opts, cli.seed)?;
            // Cluster tables are read in the mass-normalized-pair convention.
            let flat_scaled = flat_metric::experiments::pair_normalized_matrix(&measures, &flat);
            let wass_opts = DistanceOptions {
                mode: DistanceMode::Wasserstein,
                ..flat_opts
            };
            let wass = pairwise_matrix(&measures, &wass_opts, cli.seed)?;
            // Targets X, Y, Z (rows 3..6) against sources A, B, C (cols 0..3).
            let target_rows = flat_scaled.slice(ndarray::s![3..6, 0..3]).to_owned();
            let assignment = nearest_source_assignment(&target_rows);
            for (t, &s) in ["X", "Y", "Z"].iter().zip(&assignment) {
                log::info!("flat nearest source of {t}: {}", ["A", "B", "C"][s]);
            }
            writeln!(output, "metric,{}", labels.join(","))?;
            let block = |name: &str, m: &ndarray::Array2<f64>, out: &mut Vec<u8>| {
                for (i, label) in labels.iter().enumerate() {
                    let row: Vec<String> = (0..labels.len())
                        .map(|j| format!("{}", m[(i, j)]))
                        .collect();
                    let _ = writeln!(out, "{name}_{label},{}", row.join(","));
                }
            };
            block("flat", &flat, &mut output);
            block("flat_scaled", &flat_scaled, &mut output);
            block("wasserstein", &wass, &mut output);
        }
    }

    match &cli.out {
        Some(path) => std::fs::write(path, &output)?,
        None => std::io::stdout().write_all(&output)?,
    }
    Ok(())
}

fn correction_model(
    no_correction: bool,
    model_path: Option<&Path>,
) -> flat_metric::Result<Option<DimensionModel<f64>>> {
    if no_correction {
        return Ok(None);
    }
    match model_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Ok(Some(DimensionModel::from_model_text(&text)?))
        }
        None => Ok(Some(DimensionModel::fitted_default()?)),
    }
}

fn mode_name(m: ModeArg) -> &'static str {
    match m {
        ModeArg::Flat => "flat",
        ModeArg::Wasserstein => "wasserstein",
    }
}

fn engine_name(e: EngineArg) -> &'static str {
    match e {
        EngineArg::Neural => "neural",
        EngineArg::Lp => "lp",
        EngineArg::Analytic => "analytic",
    }
}
