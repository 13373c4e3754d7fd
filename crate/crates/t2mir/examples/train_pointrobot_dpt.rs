//! End-to-end mini training run: prompted variant on point navigation.
//! Trains for a few hundred steps and shows the in-context evaluation
//! protocol (episode n is prompted with episode n-1).
//!
//! Run with: cargo run --release --example train_pointrobot_dpt

use t2mir::data::{generate_trajectories, label_queries, DatasetManifest, Tier};
use t2mir::envs::{EnvId, SplitManifest, TaskSpec};
use t2mir::evaluator::{evaluate_dpt, EvalConfig};
use t2mir::model::{Ablation, PolicyModel, Variant};
use t2mir::trainer::{default_model_config, default_train_config, run_training};

fn main() {
    let split = SplitManifest::generate(EnvId::Pointrobot, 5);
    let manifest = DatasetManifest::new(EnvId::Pointrobot, Tier::Mixed, 100, 5);
    let dataset = generate_trajectories(&manifest, &split).unwrap();
    let queries = label_queries(&dataset, &split).unwrap();
    println!("dataset: {} trajectories, {} query labels", dataset.len(), queries.len());

    let mc = default_model_config(EnvId::Pointrobot, Variant::Dpt, Ablation::Full);
    let mut tc = default_train_config(EnvId::Pointrobot, Variant::Dpt, Ablation::Full);
    tc.steps = 800;
    tc.log_interval = 200;
    let mut model: PolicyModel<f32> = PolicyModel::init(mc, tc.seed).unwrap();

    let out_dir = std::env::temp_dir().join("t2mir_example_dpt");
    let mut log = |step: usize, parts: &t2mir::trainer::LossParts| {
        println!("step {step}: imitation {:.5} balance {:.5} contrastive {:.5}", parts.imitation, parts.balance, parts.contrastive);
    };
    let outcome = run_training(&mut model, &dataset, &queries, &tc, &out_dir, false, Some(&mut log)).unwrap();
    println!("checkpoint: {}", outcome.final_checkpoint.display());

    let tasks: Vec<&TaskSpec> = split.test_tasks();
    let cfg = EvalConfig { n_episodes: 10, history_episodes: 1, seed: 1, deterministic_actions: true };
    let report = evaluate_dpt(&model, &tasks, &cfg).unwrap();
    println!("\nepisode  mean return (95% CI)");
    for (i, m) in report.mean_returns.iter().enumerate() {
        println!("{:>7}  {m:>8.3}  [{:.3}, {:.3}]", i + 1, report.ci_low[i], report.ci_high[i]);
    }
    println!("\nepisode 1 runs with an empty prompt; later episodes are prompted");
    println!("with the previous episode, so returns improve without any updates.");
}
