//! Routing statistics: which experts see which modalities, and how task
//! representations cluster. Trains briefly so the routers have something
//! to say, then dumps records and separation statistics.
//!
//! Run with: cargo run --release --example routing_analysis

use t2mir::analysis::{modality_separation, probe_batch, routing_dump, task_separation, write_routing_csv};
use t2mir::data::{generate_trajectories, label_queries, DatasetManifest, Tier};
use t2mir::envs::{EnvId, SplitManifest};
use t2mir::model::{Ablation, PolicyModel, Variant};
use t2mir::trainer::{default_model_config, default_train_config, run_training};

fn main() {
    let split = SplitManifest::generate(EnvId::Pointrobot, 4);
    let manifest = DatasetManifest::new(EnvId::Pointrobot, Tier::Mixed, 60, 4);
    let dataset = generate_trajectories(&manifest, &split).unwrap();
    let queries = label_queries(&dataset, &split).unwrap();

    let mc = default_model_config(EnvId::Pointrobot, Variant::Ad, Ablation::Full);
    let mut tc = default_train_config(EnvId::Pointrobot, Variant::Ad, Ablation::Full);
    tc.steps = 1200;
    tc.log_interval = 400;
    let mut model: PolicyModel<f32> = PolicyModel::init(mc, tc.seed).unwrap();
    let dir = std::env::temp_dir().join("t2mir_example_routing");
    run_training(&mut model, &dataset, &queries, &tc, &dir, false, None).unwrap();

    let mut seqs = Vec::new();
    for task in dataset.task_indices().into_iter().take(20) {
        seqs.extend(probe_batch(Variant::Ad, &dataset, &queries, task, 3, 4, model.cfg.max_context_tokens, 1).unwrap());
    }
    let dump = routing_dump(&model, &seqs).unwrap();
    write_routing_csv(&dir.join("routing.csv"), &dump.records).unwrap();
    println!("dumped {} routing records to {}", dump.records.len(), dir.join("routing.csv").display());

    println!("\ntop-1 expert histogram separation by modality (total variation):");
    for (a, b, tv) in modality_separation(&dump.records, model.cfg.token_experts) {
        println!("  {} vs {}: {:.3}", a.tag(), b.tag(), tv);
    }
    let sep = task_separation(&dump.seq_z);
    println!(
        "\ntask representation within/between distance ratio: {:.3}{}",
        sep.ratio,
        if sep.degenerate { " (degenerate)" } else { "" }
    );
    println!("(below 1.0 means same-task sequences cluster in router space)");
}
