//! posefuse CLI: dataset generation, backbone pretraining, CHAM training,
//! evaluation, inference, mesh export, and timing.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 invariant or contract
//! violation, 3 numeric failure (non-finite loss).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use posefuse_core::backbone::{
    init_hand_backbone, load_body_backbone, pretrain_body_backbone, save_body_backbone,
};
use posefuse_core::cham::init_cham;
use posefuse_core::config::PipelineConfig;
use posefuse_core::data::{generate_dataset, protocol, Dataset};
use posefuse_core::geom::obj::export_obj;
use posefuse_core::model::{generate_toy_spec, save_model_spec, ModelKind};
use posefuse_core::pipeline::{
    evaluate, infer, report_timings, EvaluationArtifact, Strategy, METRICS_SCHEMA,
};
use posefuse_core::train::{
    load_cham_params, save_cham_params, train_cham, PipelineBundle, TrainError,
};

#[derive(Parser)]
#[command(name = "posefuse", version, about = "whole-body + hand pose fusion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Pretrain and freeze the body backbone on a dataset.
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory (from `generate`).
        #[arg(long)]
        data: PathBuf,
    },
    /// Train CHAM against frozen backbones.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained body backbone file (from `pretrain`).
        #[arg(long)]
        backbone: PathBuf,
    },
    /// Evaluate a split under a combination strategy.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        /// Trained CHAM parameters (required for the cham strategy).
        #[arg(long)]
        cham: Option<PathBuf>,
        #[arg(long, default_value = "cham")]
        strategy: String,
        #[arg(long, default_value = "heldout")]
        split: String,
    },
    /// Run inference on one sample and export the mesh.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        cham: Option<PathBuf>,
        #[arg(long, default_value = "cham")]
        strategy: String,
        /// Sample index within the dataset.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Export the toy model templates as OBJ plus their spec files.
    Export {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Per-stage timing over repeated pipeline runs.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        cham: Option<PathBuf>,
        /// Number of runs (at least 100).
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn open_bundle<'a>(
    dataset: &'a Dataset,
    backbone: &'a posefuse_core::backbone::BodyBackboneParams,
    hand_backbone: &'a posefuse_core::backbone::HandBackboneParams,
    config: &PipelineConfig,
) -> anyhow::Result<PipelineBundle<'a>> {
    Ok(PipelineBundle::new(
        &dataset.body_spec,
        &dataset.hand_spec,
        backbone,
        hand_backbone,
        config.smoothing.clone().into(),
        (config.generate.camera.image_w, config.generate.camera.image_h),
    )?)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let config = load_config(&common.config)?;
            let manifest = generate_dataset(&config, common.seed, &common.out)?;
            println!(
                "generated {} samples into {} (splits: {})",
                manifest.sample_count,
                common.out.display(),
                manifest
                    .splits
                    .iter()
                    .map(|(k, v)| format!("{k}={}", v.len()))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        Command::Pretrain { common, data } => {
            let config = load_config(&common.config)?;
            let dataset = Dataset::open(&data)?;
            let (params, report) = pretrain_body_backbone(&dataset, &config, common.seed)?;
            std::fs::create_dir_all(&common.out)?;
            save_body_backbone(&params, &common.out.join("body_backbone.json"))?;
            write_json(&report, &common.out.join("pretrain_report.json"))?;
            println!(
                "pretrained {} steps | loss {:.3} -> {:.3} | heldout body MPVPE {:.1} mm | wrist gap {:.3} rad | hash {}",
                report.steps,
                report.initial_loss,
                report.final_loss,
                report.heldout_body_mpvpe,
                report.heldout_wrist_geodesic,
                &report.content_hash[..12],
            );
        }
        Command::Train { common, data, backbone } => {
            let config = load_config(&common.config)?;
            let dataset = Dataset::open(&data)?;
            let body = load_body_backbone(&backbone)?;
            let hand = init_hand_backbone(config.hand_backbone_seed, protocol::CHANNELS);
            let bundle = open_bundle(&dataset, &body, &hand, &config)?;
            let init = init_cham(config.cham_seed, config.backbone.depth, config.backbone.channels);
            std::fs::create_dir_all(&common.out)?;
            let outcome = train_cham(
                &dataset,
                &bundle,
                init,
                &config,
                common.seed,
                Some(&common.out.join("train_log.jsonl")),
                Some(&common.out.join("checkpoints")),
            )?;
            save_cham_params(&outcome.params, &common.out.join("cham.json"))?;
            println!(
                "trained CHAM for {} steps | loss {:.3} -> {:.3} | frozen hashes verified",
                outcome.log.len(),
                outcome.log.first().map(|r| r.loss).unwrap_or(0.0),
                outcome.log.last().map(|r| r.loss).unwrap_or(0.0),
            );
        }
        Command::Eval { common, data, backbone, cham, strategy, split } => {
            let config = load_config(&common.config)?;
            let dataset = Dataset::open(&data)?;
            let body = load_body_backbone(&backbone)?;
            let hand = init_hand_backbone(config.hand_backbone_seed, protocol::CHANNELS);
            let bundle = open_bundle(&dataset, &body, &hand, &config)?;
            let strategy: Strategy = strategy.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let cham_params = match &cham {
                Some(path) => Some(load_cham_params(path)?),
                None => None,
            };
            let metrics = evaluate(&dataset, &split, &bundle, cham_params.as_ref(), strategy)?;
            let artifact = EvaluationArtifact {
                schema: METRICS_SCHEMA.to_string(),
                split: split.clone(),
                strategy,
                seeds: [("dataset".to_string(), dataset.manifest.seed), ("cli".to_string(), common.seed)]
                    .into_iter()
                    .collect(),
                backbone_hashes: [
                    ("body".to_string(), posefuse_core::backbone::content_hash(&body)),
                    ("hand".to_string(), posefuse_core::backbone::content_hash(&hand)),
                ]
                .into_iter()
                .collect(),
                config: config.clone(),
                metrics,
            };
            write_json(&artifact, &common.out.join("metrics.json"))?;
            println!(
                "{split} [{strategy:?}]: full {:.2} mm | hands {:.2} mm | MRRPE {:.2} mm | PA {:.2} mm | wrist {:.3} rad",
                artifact.metrics.mpvpe_full,
                artifact.metrics.mpvpe_hands,
                artifact.metrics.mrrpe,
                artifact.metrics.pa_mpvpe,
                artifact.metrics.wrist_geodesic,
            );
        }
        Command::Infer { common, data, backbone, cham, strategy, sample } => {
            let config = load_config(&common.config)?;
            let dataset = Dataset::open(&data)?;
            let body = load_body_backbone(&backbone)?;
            let hand = init_hand_backbone(config.hand_backbone_seed, protocol::CHANNELS);
            let bundle = open_bundle(&dataset, &body, &hand, &config)?;
            let strategy: Strategy = strategy.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let cham_params = match &cham {
                Some(path) => Some(load_cham_params(path)?),
                None => None,
            };
            let record = dataset.read_sample(sample)?;
            let output = infer(&record, &bundle, cham_params.as_ref(), strategy)?;
            std::fs::create_dir_all(&common.out)?;
            export_obj(&output.mesh, &common.out.join(format!("sample_{sample:05}.obj")))?;
            if let Some(metrics) = &output.metrics {
                write_json(metrics, &common.out.join(format!("sample_{sample:05}_metrics.json")))?;
                println!(
                    "sample {sample}: full {:.2} mm | hands {} | detected {:?}",
                    metrics.mpvpe_full,
                    metrics
                        .mpvpe_hands
                        .map(|v| format!("{v:.2} mm"))
                        .unwrap_or_else(|| "n/a".to_string()),
                    output.detected,
                );
            }
        }
        Command::Export { common } => {
            std::fs::create_dir_all(&common.out)?;
            for kind in [ModelKind::Body, ModelKind::Hand] {
                let spec = generate_toy_spec(kind, common.seed);
                let name = match kind {
                    ModelKind::Body => "body",
                    ModelKind::Hand => "hand",
                };
                save_model_spec(&spec, &common.out.join(format!("{name}_spec.json")))?;
                let shaped = posefuse_core::model::shape_mesh(&spec, &vec![0.0; spec.shape_dim()])?;
                let globals = posefuse_core::model::forward_kinematics(
                    &spec,
                    &posefuse_core::model::PoseState::rest(&spec),
                    &shaped.rest_joints,
                );
                let mesh = posefuse_core::model::skin_mesh(&spec, &shaped, &globals)?;
                export_obj(&mesh, &common.out.join(format!("{name}_template.obj")))?;
            }
            println!("exported body/hand templates and specs to {}", common.out.display());
        }
        Command::Bench { common, data, backbone, cham, runs } => {
            let config = load_config(&common.config)?;
            let dataset = Dataset::open(&data)?;
            let body = load_body_backbone(&backbone)?;
            let hand = init_hand_backbone(config.hand_backbone_seed, protocol::CHANNELS);
            let bundle = open_bundle(&dataset, &body, &hand, &config)?;
            let cham_params = match &cham {
                Some(path) => load_cham_params(path)?,
                None => init_cham(config.cham_seed, config.backbone.depth, config.backbone.channels),
            };
            let record = dataset.read_sample(0)?;
            let report = report_timings(&record, &bundle, &cham_params, runs)?;
            write_json(&report, &common.out.join("timings.json"))?;
            for (stage, t) in &report.stages {
                println!("{stage:>14}: {:.3} ms", t.mean_ms);
            }
            println!("{:>14}: {:.3} ms", "total", report.total_mean_ms);
        }
    }
    Ok(())
}

/// Maps error types onto the documented exit codes.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(train) = err.downcast_ref::<TrainError>() {
        return match train {
            TrainError::NonFiniteLoss => 3,
            _ => 2,
        };
    }
    if let Some(data) = err.downcast_ref::<posefuse_core::data::DataError>() {
        return match data {
            posefuse_core::data::DataError::ConfigError(_) => 1,
            _ => 2,
        };
    }
    if err.downcast_ref::<posefuse_core::model::ModelError>().is_some()
        || err.downcast_ref::<posefuse_core::geom::GeomError>().is_some()
        || err.downcast_ref::<posefuse_core::backbone::BackboneError>().is_some()
    {
        return 2;
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors exit 1 (help/version requests still exit 0).
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
