//! Command-line pipeline: task splits, data collection, training,
//! evaluation, and analysis, driven by JSON config files.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 refusal to overwrite,
//! 4 runtime failure.

use crate::analysis::{
    conflict_report, modality_separation, probe_batch, routing_dump, task_separation,
    write_routing_csv, DEFAULT_CONFLICT_THRESHOLD,
};
use crate::checkpoint::{load_checkpoint, model_from_checkpoint};
use crate::data::{generate_trajectories, label_queries, load_dataset, save_dataset, DatasetManifest, Tier};
use crate::envs::{EnvId, SplitManifest, SplitTag};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_ad, evaluate_dpt, EvalConfig};
use crate::model::{ModelConfig, PolicyModel, Variant};
use crate::trainer::{default_model_config, default_train_config, run_training, TrainConfig};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One experiment: everything needed to train and evaluate a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunProfile {
    pub env: EnvId,
    pub tier: Tier,
    pub split_manifest: PathBuf,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunProfile {
    pub fn defaults(env: EnvId, variant: Variant, root: &Path) -> RunProfile {
        let train = default_train_config(env, variant, crate::model::Ablation::Full);
        RunProfile {
            env,
            tier: Tier::Mixed,
            split_manifest: root.join("split.json"),
            data_dir: root.join("data"),
            out_dir: root.join("run"),
            model: default_model_config(env, variant, crate::model::Ablation::Full),
            train,
            eval: EvalConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<RunProfile> {
        let profile: RunProfile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        profile.model.validate()?;
        profile.train.validate()?;
        profile.eval.validate()?;
        Ok(profile)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Parser)]
#[command(name = "t2mir", version, about = "Mixture-of-experts in-context RL laboratory")]
pub struct Cli {
    /// Cap on worker threads for data generation and evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write a deterministic train/test task split manifest.
    Split {
        #[arg(long, value_parser = EnvId::parse)]
        env: EnvId,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generate the tiered offline dataset and its query labels.
    Collect {
        /// Task split manifest produced by `split`.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = Tier::parse)]
        tier: Tier,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes_per_task: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Train a policy as described by a run profile.
    Train {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on held-out tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        eval_config: PathBuf,
        /// Task split manifest; evaluation uses its test tasks.
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also emit a static return-curve image.
        #[arg(long)]
        plot: bool,
        #[arg(long)]
        force: bool,
    },
    /// Export gradient-conflict or routing statistics for a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["conflict", "routing"])]
        what: String,
        /// Dataset directory produced by `collect`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cosine threshold for counting conflicting pairs.
        #[arg(long, default_value_t = DEFAULT_CONFLICT_THRESHOLD, allow_hyphen_values = true)]
        threshold: f64,
        #[arg(long, default_value_t = 64)]
        probe_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Write a default run profile for an environment and variant.
    Profile {
        #[arg(long, value_parser = EnvId::parse)]
        env: EnvId,
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
        /// Root directory recorded inside the profile's paths.
        #[arg(long, default_value = "out")]
        root: PathBuf,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    match s {
        "ad" => Ok(Variant::Ad),
        "dpt" => Ok(Variant::Dpt),
        other => Err(format!("unknown variant '{other}' (expected ad or dpt)")),
    }
}

/// Default output root, overridable through T2MIR_OUT.
pub fn output_root() -> PathBuf {
    std::env::var_os("T2MIR_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() || path.components().count() > 1 || path.starts_with(".") {
        path.to_path_buf()
    } else {
        output_root().join(path)
    }
}

fn guard_clobber(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::WouldClobber(path.display().to_string()));
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().ok();
    }
    match cli.command {
        Command::Split { env, seed, out, force } => cmd_split(env, seed, &resolve_out(&out), force),
        Command::Collect { manifest, tier, out, episodes_per_task, seed, force } => {
            cmd_collect(&manifest, tier, &resolve_out(&out), episodes_per_task, seed, force)
        }
        Command::Train { profile, resume, force } => cmd_train(&profile, resume, force),
        Command::Eval { checkpoint, eval_config, split, out, plot, force } => {
            cmd_eval(&checkpoint, &eval_config, &split, &resolve_out(&out), plot, force)
        }
        Command::Analyze { checkpoint, what, data, split, out, threshold, probe_size, seed, force } => {
            cmd_analyze(&checkpoint, &what, &data, &split, &resolve_out(&out), threshold, probe_size, seed, force)
        }
        Command::Profile { env, variant, out, root } => {
            let profile = RunProfile::defaults(env, variant, &root);
            profile.save(&out)?;
            println!("wrote profile {}", out.display());
            Ok(())
        }
    }
}

pub fn cmd_split(env: EnvId, seed: u64, out: &Path, force: bool) -> Result<()> {
    guard_clobber(out, force)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let manifest = SplitManifest::generate(env, seed);
    manifest.save(out)?;
    let train = manifest.train_tasks().len();
    let test = manifest.test_tasks().len();
    println!("wrote {} ({train} train / {test} test tasks)", out.display());
    Ok(())
}

pub fn cmd_collect(
    manifest_path: &Path,
    tier: Tier,
    out: &Path,
    episodes_per_task: usize,
    seed: u64,
    force: bool,
) -> Result<()> {
    let split = SplitManifest::load(manifest_path)?;
    guard_clobber(&out.join("dataset.jsonl"), force)?;
    let manifest = DatasetManifest::new(split.env_id, tier, episodes_per_task, seed);
    let dataset = generate_trajectories(&manifest, &split)?;
    let queries = label_queries(&dataset, &split)?;
    save_dataset(out, &dataset, &queries)?;
    for task in dataset.task_indices() {
        println!("task {task}: {} episodes", dataset.of_task(task).len());
    }
    println!(
        "wrote {} ({} episodes, {} query labels)",
        out.display(),
        dataset.len(),
        queries.len()
    );
    Ok(())
}

pub fn cmd_train(profile_path: &Path, resume: bool, force: bool) -> Result<()> {
    let profile = RunProfile::load(profile_path)?;
    if !profile.split_manifest.exists() {
        return Err(Error::Config(format!("missing split manifest {}", profile.split_manifest.display())));
    }
    if !profile.data_dir.join("dataset.jsonl").exists() {
        return Err(Error::Config(format!("missing dataset under {}", profile.data_dir.display())));
    }
    if !resume {
        guard_clobber(&profile.out_dir.join("loss.csv"), force)?;
    }
    let (dataset, queries) = load_dataset(&profile.data_dir)?;
    let mut model_cfg = profile.model.with_ablation(profile.train.ablation);
    model_cfg.momentum_beta = profile.train.momentum_beta;
    let mut model: PolicyModel<f32> = PolicyModel::init(model_cfg, profile.train.seed)?;
    let mut log = |step: usize, parts: &crate::trainer::LossParts| {
        println!(
            "step {step}: imitation {:.5} balance {:.5} contrastive {:.5} total {:.5}",
            parts.imitation,
            parts.balance,
            parts.contrastive,
            parts.total()
        );
    };
    let outcome = run_training(
        &mut model,
        &dataset,
        &queries,
        &profile.train,
        &profile.out_dir,
        resume,
        Some(&mut log),
    )?;
    println!("final checkpoint {}", outcome.final_checkpoint.display());
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    eval_config: &Path,
    split: &Path,
    out: &Path,
    plot: bool,
    force: bool,
) -> Result<()> {
    let cfg: EvalConfig = serde_json::from_str(&std::fs::read_to_string(eval_config)?)?;
    cfg.validate()?;
    guard_clobber(&out.join("report.csv"), force)?;
    std::fs::create_dir_all(out)?;
    let ck = load_checkpoint(checkpoint)?;
    let model: PolicyModel<f32> = model_from_checkpoint(&ck)?;
    let manifest = SplitManifest::load(split)?;
    let tasks = manifest.test_tasks();
    let report = match model.cfg.variant {
        Variant::Ad => evaluate_ad(&model, &tasks, &cfg)?,
        Variant::Dpt => evaluate_dpt(&model, &tasks, &cfg)?,
    };
    report.write_csv(&out.join("report.csv"))?;
    report.write_summary(&out.join("summary.json"))?;
    if plot {
        report.write_curve_svg(&out.join("curve.svg"))?;
    }
    let last = report.mean_returns.last().copied().unwrap_or(0.0);
    println!(
        "evaluated {} tasks over {} episodes; final mean return {last:.3}",
        report.per_task.len(),
        cfg.n_episodes
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_analyze(
    checkpoint: &Path,
    what: &str,
    data: &Path,
    split: &Path,
    out: &Path,
    threshold: f64,
    probe_size: usize,
    seed: u64,
    force: bool,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let model: PolicyModel<f32> = model_from_checkpoint(&ck)?;
    let (dataset, queries) = load_dataset(data)?;
    let manifest = SplitManifest::load(split)?;
    std::fs::create_dir_all(out)?;
    match what {
        "conflict" => {
            guard_clobber(&out.join("conflict.csv"), force)?;
            let tasks: Vec<usize> = manifest
                .tasks
                .iter()
                .filter(|t| t.split == SplitTag::Train && !dataset.of_task(t.task_index).is_empty())
                .map(|t| t.task_index)
                .collect();
            let report = conflict_report(&model, &dataset, &queries, &tasks, probe_size, 2, seed, threshold)?;
            report.write_csv(&out.join("conflict.csv"))?;
            std::fs::write(out.join("conflict.json"), serde_json::to_string_pretty(&report)?)?;
            println!(
                "conflict over {} tasks: negative fraction {:.4} (threshold {})",
                report.task_ids.len(),
                report.negative_fraction,
                report.threshold
            );
        }
        "routing" => {
            guard_clobber(&out.join("routing.csv"), force)?;
            let mut seqs = Vec::new();
            for task in dataset.task_indices() {
                seqs.extend(probe_batch(
                    model.cfg.variant,
                    &dataset,
                    &queries,
                    task,
                    4,
                    2,
                    model.cfg.max_context_tokens,
                    seed,
                )?);
            }
            let dump = routing_dump(&model, &seqs)?;
            write_routing_csv(&out.join("routing.csv"), &dump.records)?;
            let modality = modality_separation(&dump.records, model.cfg.token_experts);
            let task_sep = task_separation(&dump.seq_z);
            let summary = serde_json::json!({
                "modality_separation": modality
                    .iter()
                    .map(|(a, b, tv)| serde_json::json!({"pair": format!("{}/{}", a.tag(), b.tag()), "tv": tv}))
                    .collect::<Vec<_>>(),
                "task_separation": task_sep,
                "records": dump.records.len(),
            });
            std::fs::write(out.join("separation.json"), serde_json::to_string_pretty(&summary)?)?;
            println!("wrote routing dump with {} records", dump.records.len());
        }
        other => return Err(Error::Config(format!("unknown analysis '{other}'"))),
    }
    Ok(())
}

/// Map an error to the documented exit code.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::WouldClobber(_) => 3,
        _ => 4,
    }
}
