//! Command-line surface for the region-growth segmentation pipeline:
//! scene simulation, training, learned segmentation, the classic baseline,
//! and metric evaluation. All commands share one TOML configuration file
//! and write machine-readable reports that embed the resolved config.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use regionformer::features::{compute_features, DEFAULT_K_NORMAL};
use regionformer::infer::{classic_region_grow, segment, SegmentationResult, TerminationReason};
use regionformer::metrics::{adjusted_rand_index, instance_prf_miou, mutual_info_scores};
use regionformer::ply::{load_ply, save_ply};
use regionformer::sim::{generate_scene, simulate_growth_example, TrainingExample};
use regionformer::train::{load_checkpoint, train};
use regionformer::{Error, FeatureCloud, SpatialIndex};

use config::RunConfig;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "regionformer", version, about = "Point-cloud instance segmentation by learned region growth")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for scene-parallel work.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled scenes, a growth-example dataset, and a manifest.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the region network on scenes regenerated from a manifest.
    Train {
        /// Manifest written by `simulate`; scenes come from the shared
        /// config when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Segment a PLY cloud with a trained checkpoint.
    Segment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Score against the input's `label` property and embed the metrics
        /// in the report.
        #[arg(long)]
        eval: bool,
    },
    /// Segment a PLY cloud with the classic region-growing baseline.
    Baseline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare two labeled PLY files and write a metrics CSV.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit codes: 0 ok, 2 config, 3 I/O, 4 fingerprint, 5 numeric failure.
struct CliError {
    code: u8,
    message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::Shape(_) | Error::InfeasibleScene(_) => 2,
            Error::Io { .. } | Error::PlyParse { .. } | Error::Checkpoint(_) => 3,
            Error::FingerprintMismatch { .. } => 4,
            Error::NonFiniteLoss { .. } => 5,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

fn io_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 3,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message.replace('\n', " "));
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(config_error("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| config_error(format!("thread pool: {e}")))?;
    }
    let config = RunConfig::load(cli.config.as_deref()).map_err(config_error)?;
    match cli.command {
        Command::Simulate { out } => cmd_simulate(&config, &out),
        Command::Train { manifest, out, resume } => {
            cmd_train(&config, manifest.as_deref(), &out, resume.as_deref())
        }
        Command::Segment {
            checkpoint,
            input,
            output,
            report,
            eval,
        } => cmd_segment(&config, &checkpoint, &input, &output, report.as_deref(), eval),
        Command::Baseline { input, output, report } => {
            cmd_baseline(&config, &input, &output, report.as_deref())
        }
        Command::Eval { pred, truth, out } => cmd_eval(&pred, &truth, &out),
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    config: RunConfig,
    scene_files: Vec<String>,
}

fn scene_cloud(config: &RunConfig, index: usize) -> Result<FeatureCloud, Error> {
    use rand::SeedableRng;
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(config.simulate.seed.wrapping_add(index as u64));
    let raw = generate_scene(&config.scene, &mut rng)?;
    compute_features(raw, DEFAULT_K_NORMAL, None)
}

fn simulate_examples(
    config: &RunConfig,
    cloud: &FeatureCloud,
    scene_index: usize,
) -> Vec<TrainingExample> {
    use rand::{Rng, SeedableRng};
    let sim = &config.simulate;
    let index = SpatialIndex::build(&cloud.raw.positions);
    (0..sim.examples_per_scene)
        .map(|j| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sim.seed);
            rng.set_stream(1 + (scene_index * sim.examples_per_scene + j) as u64);
            let seed_pt = rng.gen_range(0..cloud.len()) as u32;
            let step = rng.gen_range(0..=sim.max_growth_steps);
            simulate_growth_example(
                cloud,
                &index,
                seed_pt,
                step,
                sim.theta,
                config.train.r_grow,
                &mut rng,
            )
        })
        .collect()
}

fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    use rayon::prelude::*;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let scenes: Vec<(FeatureCloud, Vec<TrainingExample>)> = (0..config.simulate.scenes)
        .into_par_iter()
        .map(|i| {
            let cloud = scene_cloud(config, i)?;
            let examples = simulate_examples(config, &cloud, i);
            Ok((cloud, examples))
        })
        .collect::<Result<_, Error>>()?;

    let mut scene_files = Vec::new();
    for (i, (cloud, _)) in scenes.iter().enumerate() {
        let name = format!("scene-{i:03}.ply");
        let labels = cloud.labels().expect("generated scenes carry labels");
        save_ply(&cloud.raw, labels, out.join(&name))?;
        scene_files.push(name);
    }

    write_dataset(
        &out.join("dataset.bin"),
        scenes.iter().enumerate().flat_map(|(i, (_, exs))| {
            exs.iter().map(move |ex| (i as u32, ex))
        }),
    )?;

    let manifest = Manifest {
        version: VERSION.to_string(),
        config: config.clone(),
        scene_files,
    };
    let path = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    println!(
        "simulated {} scenes, {} examples -> {}",
        config.simulate.scenes,
        config.simulate.scenes * config.simulate.examples_per_scene,
        out.display()
    );
    Ok(())
}

const DATASET_MAGIC: &[u8; 8] = b"RGNTDATA";

fn write_dataset<'a>(
    path: &Path,
    records: impl Iterator<Item = (u32, &'a TrainingExample)>,
) -> Result<(), CliError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    let count_pos = buf.len();
    buf.extend_from_slice(&0u32.to_le_bytes());
    let mut count = 0u32;
    for (scene, ex) in records {
        count += 1;
        buf.extend_from_slice(&scene.to_le_bytes());
        buf.extend_from_slice(&ex.seed_id.to_le_bytes());
        buf.extend_from_slice(&ex.theta.to_le_bytes());
        buf.extend_from_slice(&(ex.inlier_ids.len() as u32).to_le_bytes());
        for &id in &ex.inlier_ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        buf.extend_from_slice(&ex.remove_truth);
        buf.extend_from_slice(&(ex.neighbor_ids.len() as u32).to_le_bytes());
        for &id in &ex.neighbor_ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        buf.extend_from_slice(&ex.add_truth);
    }
    buf[count_pos..count_pos + 4].copy_from_slice(&count.to_le_bytes());
    std::fs::write(path, buf).map_err(|e| CliError::from(Error::io(path, e)))
}

fn cmd_train(
    config: &RunConfig,
    manifest: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    use rayon::prelude::*;
    let config = match manifest {
        None => config.clone(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let manifest: Manifest = serde_json::from_str(&text)
                .map_err(|e| io_error(format!("bad manifest {}: {e}", path.display())))?;
            manifest.config
        }
    };
    let scenes: Vec<FeatureCloud> = (0..config.simulate.scenes)
        .into_par_iter()
        .map(|i| scene_cloud(&config, i))
        .collect::<Result<_, Error>>()?;
    let report = train(&config.train, &scenes, out, resume)?;
    println!(
        "trained {} epochs, final loss {:.6}, checkpoint {}",
        report.epochs_run,
        report.final_loss,
        report.checkpoint_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReasonHistogram {
    no_neighbors: usize,
    empty_add_set: usize,
    stalled: usize,
    max_iters: usize,
}

#[derive(Serialize)]
struct MetricsBlock {
    ari: f64,
    nmi: f64,
    ami: f64,
    precision: f64,
    recall: f64,
    miou: f64,
}

#[derive(Serialize)]
struct SegmentReport<'a> {
    version: &'a str,
    config: &'a RunConfig,
    input: String,
    points: usize,
    segments: usize,
    regions: usize,
    total_iterations: usize,
    reasons: ReasonHistogram,
    total_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsBlock>,
}

fn metrics_block(pred: &[u32], truth: &[u32]) -> MetricsBlock {
    let (nmi, ami) = mutual_info_scores(pred, truth);
    let (precision, recall, miou) = instance_prf_miou(pred, truth, 0.5);
    MetricsBlock {
        ari: adjusted_rand_index(pred, truth),
        nmi,
        ami,
        precision,
        recall,
        miou,
    }
}

fn write_report(
    config: &RunConfig,
    input: &Path,
    result: &SegmentationResult,
    metrics: Option<MetricsBlock>,
    path: &Path,
) -> Result<(), CliError> {
    let mut reasons = ReasonHistogram {
        no_neighbors: 0,
        empty_add_set: 0,
        stalled: 0,
        max_iters: 0,
    };
    for region in &result.regions {
        match region.reason {
            Some(TerminationReason::NoNeighbors) | None => reasons.no_neighbors += 1,
            Some(TerminationReason::EmptyAddSet) => reasons.empty_add_set += 1,
            Some(TerminationReason::Stalled) => reasons.stalled += 1,
            Some(TerminationReason::MaxIters) => reasons.max_iters += 1,
        }
    }
    let segments = result.labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let report = SegmentReport {
        version: VERSION,
        config,
        input: input.display().to_string(),
        points: result.labels.len(),
        segments,
        regions: result.regions.len(),
        total_iterations: result.regions.iter().map(|r| r.iterations).sum(),
        reasons,
        total_seconds: result.regions.iter().map(|r| r.seconds).sum(),
        metrics,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(path, json).map_err(|e| CliError::from(Error::io(path, e)))
}

fn load_features(path: &Path) -> Result<FeatureCloud, CliError> {
    let raw = load_ply(path)?;
    let k = DEFAULT_K_NORMAL.min(raw.len().max(3));
    if raw.len() < 3 {
        // Too small for PCA; degenerate flat features keep tiny inputs usable.
        return Ok(FeatureCloud {
            normals: vec![[0.0, 0.0, 1.0]; raw.len()],
            curvatures: vec![0.0; raw.len()],
            normalized_xyz: vec![[0.5; 3]; raw.len()],
            raw,
        });
    }
    compute_features(raw, k, None).map_err(CliError::from)
}

fn cmd_segment(
    config: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    report: Option<&Path>,
    eval: bool,
) -> Result<(), CliError> {
    let cloud = load_features(input)?;
    let (mut model, _) = load_checkpoint::<f64>(checkpoint, &config.train.network)?;
    let result = segment(&mut model, &cloud, &config.segment);
    save_ply(&cloud.raw, &result.labels, output)?;
    let metrics = if eval {
        let truth = cloud.labels().ok_or_else(|| {
            config_error(format!("--eval needs a label property in {}", input.display()))
        })?;
        Some(metrics_block(&result.labels, truth))
    } else {
        None
    };
    if let Some(path) = report {
        write_report(config, input, &result, metrics, path)?;
    }
    println!(
        "segmented {} points into {} instances -> {}",
        result.labels.len(),
        result.labels.iter().copied().max().map_or(0, |m| m + 1),
        output.display()
    );
    Ok(())
}

fn cmd_baseline(
    config: &RunConfig,
    input: &Path,
    output: &Path,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let cloud = load_features(input)?;
    let b = &config.baseline;
    let result = classic_region_grow(
        &cloud,
        b.angle_thresh_deg,
        b.curv_thresh,
        b.r_grow,
        b.min_segment,
    );
    save_ply(&cloud.raw, &result.labels, output)?;
    if let Some(path) = report {
        write_report(config, input, &result, None, path)?;
    }
    println!(
        "baseline segmented {} points into {} instances -> {}",
        result.labels.len(),
        result.labels.iter().copied().max().map_or(0, |m| m + 1),
        output.display()
    );
    Ok(())
}

fn cmd_eval(pred_path: &Path, truth_path: &Path, out: &Path) -> Result<(), CliError> {
    let pred = load_ply(pred_path)?;
    let truth = load_ply(truth_path)?;
    if pred.len() != truth.len() {
        return Err(config_error(format!(
            "point count mismatch: {} has {}, {} has {}",
            pred_path.display(),
            pred.len(),
            truth_path.display(),
            truth.len()
        )));
    }
    if pred.positions != truth.positions {
        return Err(config_error(
            "point order mismatch: xyz coordinates differ between the files",
        ));
    }
    let pred_labels = pred
        .labels
        .as_ref()
        .ok_or_else(|| config_error(format!("{} has no label property", pred_path.display())))?;
    let truth_labels = truth
        .labels
        .as_ref()
        .ok_or_else(|| config_error(format!("{} has no label property", truth_path.display())))?;
    let m = metrics_block(pred_labels, truth_labels);
    let csv = format!(
        "pred,truth,ari,nmi,ami,precision,recall,miou\n{},{},{},{},{},{},{},{}\n",
        pred_path.display(),
        truth_path.display(),
        m.ari,
        m.nmi,
        m.ami,
        m.precision,
        m.recall,
        m.miou
    );
    std::fs::write(out, csv).map_err(|e| CliError::from(Error::io(out, e)))?;
    println!("ari {:.4} nmi {:.4} ami {:.4} -> {}", m.ari, m.nmi, m.ami, out.display());
    Ok(())
}
