//! Command line front end. Every subcommand is a thin wrapper over the
//! library, so tool output and direct API calls cannot diverge: the
//! binary only parses arguments, loads files, calls one library entry
//! point, and writes the results.
//!
//! Exit status: 0 on success, 2 on validation failures (bad arguments,
//! unparsable or inconsistent inputs), 3 when a diagnostics check
//! breaches its tolerance.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use posealign::harness::bank::ClassBank;
use posealign::harness::config::ToolkitConfig;
use posealign::harness::dataset::{parent_dir, read_json, write_json, DatasetIndex, PredictionSet};
use posealign::harness::eval::{evaluate, records_from};
use posealign::harness::gradcheck::run_gradcheck;
use posealign::harness::io::{write_obj, write_trace_csv};
use posealign::harness::pipeline::{icp_refine_set, self_optimize_set};
use posealign::harness::scene::{generate_dataset, gt_predictions, sample_scene_specs};
use posealign::mesh::{ball_pivot_fill, laplacian_smooth, triangulate_uv_grid};
use posealign::shapespace::{mean_latent, LatentCode};
use posealign::{Error, Result};

#[derive(Parser)]
#[command(
    name = "posealign",
    about = "Synthetic-scene toolkit for class-level object pose and metric shape estimation",
    version
)]
struct Cli {
    /// TOML configuration file; omitted sections use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the subcommand being run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for frame-level parallelism (default: all cores).
    /// Results are identical for any thread count.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generates a synthetic dataset: depth frames, visibility masks,
    /// index, and the matching ground-truth prediction file.
    Gen {
        /// Dataset output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores a prediction file against a dataset and writes the report
    /// plus threshold-sweep curves.
    Eval {
        #[command(flatten)]
        inputs: DatasetInputs,
        /// Report output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Refines predicted poses against the scene depth by iterative
    /// closest-point alignment.
    Icp {
        #[command(flatten)]
        inputs: DatasetInputs,
        /// Refined prediction file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Refines predictions by rendering and comparing against the
    /// observed mask and depth, logging per-step objectives.
    Selfopt {
        #[command(flatten)]
        inputs: DatasetInputs,
        /// Output directory for refined predictions and traces.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decodes a latent code to a smoothed, hole-filled surface mesh.
    Mesh {
        /// Object class whose shape space to decode.
        #[arg(long)]
        class: String,
        /// JSON file holding the latent code as an array of numbers;
        /// defaults to the class mean shape.
        #[arg(long)]
        code: Option<PathBuf>,
        /// OBJ file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs the numeric self-checks and reports worst deviations.
    Gradcheck {
        /// Directory for the diagnostics report (printed to stdout when
        /// omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Deliberately corrupts the named routine to prove the checks
        /// catch it.
        #[arg(long)]
        corrupt: Option<String>,
    },
}

#[derive(Args)]
struct DatasetInputs {
    /// Dataset index JSON.
    #[arg(long)]
    index: PathBuf,
    /// Prediction file JSON.
    #[arg(long)]
    preds: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ToolkitConfig> {
    match &cli.config {
        Some(path) => ToolkitConfig::load(path),
        None => Ok(ToolkitConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Domain(format!("{}: {e}", dir.display())))
}

fn load_inputs(inputs: &DatasetInputs) -> Result<(PathBuf, DatasetIndex, PredictionSet)> {
    let index = DatasetIndex::load(&inputs.index)?;
    let preds = PredictionSet::load(&inputs.preds)?;
    Ok((parent_dir(&inputs.index), index, preds))
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let mut cfg = load_config(cli)?;
    let bank = ClassBank::builtin()?;
    match &cli.command {
        Command::Gen { out } => {
            if let Some(seed) = cli.seed {
                cfg.generate.seed = seed;
            }
            let specs = sample_scene_specs(&cfg.generate, &bank)?;
            let index = generate_dataset(out, &specs, &bank)?;
            gt_predictions(&index).save(&out.join("gt_predictions.json"))?;
            let objects: usize = index.frames.iter().map(|f| f.objects.len()).sum();
            println!(
                "wrote {} frames ({objects} objects) to {}",
                index.frames.len(),
                out.display()
            );
        }
        Command::Eval { inputs, out } => {
            let (_, index, preds) = load_inputs(inputs)?;
            let (dets, gts) = records_from(&index, &bank, &preds)?;
            let report = evaluate(&dets, &gts, &cfg.eval)?;
            for class in &report.iou_25.excluded {
                eprintln!(
                    "warning: class {class:?} has predictions but no ground truth; excluded from mean AP"
                );
            }
            ensure_dir(out)?;
            report.save(out)?;
            println!("iou_25 mean AP        {:.4}", report.iou_25.mean);
            println!("iou_50 mean AP        {:.4}", report.iou_50.mean);
            println!("pose_5deg_5cm mean AP  {:.4}", report.pose_5deg_5cm.mean);
            println!("pose_10deg_10cm mean AP {:.4}", report.pose_10deg_10cm.mean);
            println!("app_020 mean AP       {:.4}", report.app_020.mean);
            println!("app_050 mean AP       {:.4}", report.app_050.mean);
            println!("report written to {}", out.display());
        }
        Command::Icp { inputs, out } => {
            let (root, index, preds) = load_inputs(inputs)?;
            let refined = icp_refine_set(&root, &index, &preds, &bank, &cfg)?;
            refined.save(out)?;
            let skipped = refined
                .predictions
                .iter()
                .filter(|p| !p.filter_reasons.is_empty())
                .count();
            println!(
                "refined {} of {} detections ({} passed through) -> {}",
                refined.predictions.len() - skipped,
                refined.predictions.len(),
                skipped,
                out.display()
            );
        }
        Command::Selfopt { inputs, out } => {
            let (root, index, preds) = load_inputs(inputs)?;
            let (refined, traces) = self_optimize_set(&root, &index, &preds, &bank, &cfg)?;
            ensure_dir(out)?;
            refined.save(&out.join("refined.json"))?;
            let rows: Vec<(String, Vec<f64>)> = traces
                .iter()
                .map(|t| (t.detection.to_string(), t.objective.clone()))
                .collect();
            write_trace_csv(&out.join("traces.csv"), &rows)?;
            println!(
                "optimized {} of {} detections -> {}",
                traces.len(),
                refined.predictions.len(),
                out.display()
            );
        }
        Command::Mesh { class, code, out } => {
            let entry = bank.get(class)?;
            let latent = match code {
                Some(path) => {
                    let values: Vec<f64> = read_json(path)?;
                    LatentCode::new(values)?
                }
                None => mean_latent(entry.decoder.basis_codes())?,
            };
            let cloud = entry.decoder.decode(&latent)?;
            let grid = entry.decoder.grid();
            let mesh = triangulate_uv_grid(&cloud, &grid)?;
            let filled = ball_pivot_fill(&mesh, &cfg.mesh)?;
            let smoothed = laplacian_smooth(&filled.mesh, &cfg.mesh)?;
            write_obj(out, &smoothed)?;
            println!(
                "wrote {} ({} vertices, {} triangles)",
                out.display(),
                smoothed.vertices().len(),
                smoothed.triangles().len()
            );
        }
        Command::Gradcheck { out, corrupt } => {
            if let Some(seed) = cli.seed {
                cfg.gradcheck.seed = seed;
            }
            if corrupt.is_some() {
                cfg.gradcheck.corrupt = corrupt.clone();
            }
            let report = run_gradcheck(&cfg.gradcheck)?;
            for check in &report.checks {
                println!(
                    "{:<14} max error {:>12.3e}  tolerance {:>9.1e}  {}",
                    check.name,
                    check.max_error,
                    check.tolerance,
                    if check.passed { "ok" } else { "FAILED" }
                );
            }
            if let Some(dir) = out {
                ensure_dir(dir)?;
                write_json(&dir.join("report.json"), &report)?;
            } else {
                println!("{}", serde_json::to_string_pretty(&report).map_err(Error::Json)?);
            }
            if !report.passed {
                eprintln!("check failure: {}", report.failures().join(", "));
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
