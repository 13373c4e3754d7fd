//! Per-task gradient cosine similarity: tasks with opposing goals push the
//! shared parameters in conflicting directions; sparse task routing thins
//! that interference out.
//!
//! Run with: cargo run --release --example gradient_conflict

use t2mir::analysis::conflict_report;
use t2mir::data::{generate_trajectories, label_queries, DatasetManifest, Tier};
use t2mir::envs::{EnvId, Goal, SplitManifest, SplitTag};
use t2mir::model::{Ablation, PolicyModel, Variant};
use t2mir::trainer::{default_model_config, default_train_config, run_training};

fn main() {
    let split = SplitManifest::generate(EnvId::Pointrobot, 6);
    let manifest = DatasetManifest::new(EnvId::Pointrobot, Tier::Mixed, 60, 6);
    let dataset = generate_trajectories(&manifest, &split).unwrap();
    let queries = label_queries(&dataset, &split).unwrap();

    // a handful of tasks from each quadrant of the goal square
    let mut by_quadrant: Vec<Vec<usize>> = vec![Vec::new(); 4];
    for task in split.tasks.iter().filter(|t| t.split == SplitTag::Train) {
        let Goal::Point { x, y } = task.goal else { unreachable!() };
        let q = match (x >= 0.0, y >= 0.0) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        };
        by_quadrant[q].push(task.task_index);
    }
    let probe_tasks: Vec<usize> = by_quadrant.iter().flat_map(|q| q.iter().copied().take(3)).collect();
    println!("probing {} tasks across four quadrants", probe_tasks.len());

    for ablation in [Ablation::Full, Ablation::Mlp] {
        let mc = default_model_config(EnvId::Pointrobot, Variant::Ad, ablation);
        let mut tc = default_train_config(EnvId::Pointrobot, Variant::Ad, ablation);
        tc.steps = 1000;
        let mut model: PolicyModel<f32> = PolicyModel::init(mc, tc.seed).unwrap();
        let dir = std::env::temp_dir().join(format!("t2mir_example_conflict_{ablation:?}"));
        run_training(&mut model, &dataset, &queries, &tc, &dir, false, None).unwrap();

        let report = conflict_report(&model, &dataset, &queries, &probe_tasks, 16, 4, 3, -0.05).unwrap();
        println!(
            "{ablation:?}: negative fraction {:.4} (cosine < {})",
            report.negative_fraction, report.threshold
        );
        report.write_csv(&dir.join("conflict.csv")).unwrap();
    }
    println!("\n(after longer training the gap widens; see the acceptance suite)");
}
