//! Dataset generation across the three quality tiers, with query labeling
//! and a round-trip through the JSONL files.
//!
//! Run with: cargo run --release --example generate_dataset

use t2mir::data::{generate_trajectories, label_queries, load_dataset, save_dataset, DatasetManifest, Tier};
use t2mir::envs::{EnvId, SplitManifest};

fn main() {
    let split = SplitManifest::generate(EnvId::Darkroom, 0);
    println!("tier           episodes  max-return(task 0 pool)");
    let mut sample_dir = None;
    for tier in [Tier::Mixed, Tier::MediumExpert, Tier::Medium] {
        let manifest = DatasetManifest::new(EnvId::Darkroom, tier, 40, 0);
        let dataset = generate_trajectories(&manifest, &split).unwrap();
        let t0 = dataset.task_indices()[0];
        let best = dataset
            .of_task(t0)
            .iter()
            .map(|&i| dataset.trajectories[i].ret)
            .fold(f64::NEG_INFINITY, f64::max);
        println!("{tier:?}: {:>8}  {best:>6.1}", dataset.len());
        if tier == Tier::Mixed {
            let queries = label_queries(&dataset, &split).unwrap();
            let dir = std::env::temp_dir().join("t2mir_example_dataset");
            save_dataset(&dir, &dataset, &queries).unwrap();
            println!("  wrote {} ({} query labels)", dir.display(), queries.len());
            sample_dir = Some(dir);
        }
    }

    let (dataset, queries) = load_dataset(sample_dir.as_ref().unwrap()).unwrap();
    println!("\nreloaded: {} trajectories, {} labels", dataset.len(), queries.len());
    let t = &dataset.trajectories[0];
    println!(
        "first trajectory: task {}, noise {:.2}, return {}, {} steps",
        t.task_index,
        t.noise,
        t.ret,
        t.len()
    );
}
