//! Checkpoint round trip + evaluation artifacts: train briefly, save, load,
//! evaluate, and write the report CSV / summary JSON / curve image.
//!
//! Run with: cargo run --release --example evaluate_checkpoint [run_dir]

use t2mir::checkpoint::{load_checkpoint, model_from_checkpoint};
use t2mir::data::{generate_trajectories, label_queries, DatasetManifest, Tier};
use t2mir::envs::{EnvId, SplitManifest, TaskSpec};
use t2mir::evaluator::{evaluate_ad, EvalConfig};
use t2mir::model::{Ablation, PolicyModel, Variant};
use t2mir::trainer::{default_model_config, default_train_config, run_training};

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("t2mir_example_eval"));
    let ckpt_path = dir.join("final.t2mir");

    let split = SplitManifest::generate(EnvId::Pointrobot, 2);
    if !ckpt_path.exists() {
        println!("no checkpoint under {}; training a small one first", dir.display());
        let manifest = DatasetManifest::new(EnvId::Pointrobot, Tier::Mixed, 60, 2);
        let dataset = generate_trajectories(&manifest, &split).unwrap();
        let queries = label_queries(&dataset, &split).unwrap();
        let mc = default_model_config(EnvId::Pointrobot, Variant::Ad, Ablation::Full);
        let mut tc = default_train_config(EnvId::Pointrobot, Variant::Ad, Ablation::Full);
        tc.steps = 600;
        tc.log_interval = 300;
        let mut model: PolicyModel<f32> = PolicyModel::init(mc, tc.seed).unwrap();
        run_training(&mut model, &dataset, &queries, &tc, &dir, false, None).unwrap();
    }

    let ck = load_checkpoint(&ckpt_path).unwrap();
    println!(
        "loaded step-{} checkpoint: {} tensors, variant {:?}, ablation {:?}",
        ck.step,
        ck.tensors.len(),
        ck.config.variant,
        ck.config.ablation
    );
    let model: PolicyModel<f32> = model_from_checkpoint(&ck).unwrap();

    let tasks: Vec<&TaskSpec> = split.test_tasks();
    let cfg = EvalConfig { n_episodes: 12, history_episodes: 2, seed: 0, deterministic_actions: true };
    let report = evaluate_ad(&model, &tasks, &cfg).unwrap();
    report.write_csv(&dir.join("report.csv")).unwrap();
    report.write_summary(&dir.join("summary.json")).unwrap();
    report.write_curve_svg(&dir.join("curve.svg")).unwrap();
    println!(
        "mean return ep1 {:.3} -> ep{} {:.3}",
        report.mean_returns[0],
        cfg.n_episodes,
        report.mean_returns.last().unwrap()
    );
    println!("wrote report.csv, summary.json, curve.svg under {}", dir.display());
}
