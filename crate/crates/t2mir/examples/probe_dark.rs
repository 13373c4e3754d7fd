//! Probe: does random-window training fix eval exploitation?
use t2mir::data::{build_ad_batch, generate_trajectories, DatasetManifest, Tier};
use t2mir::envs::{EnvId, SplitManifest, TaskSpec};
use t2mir::evaluator::{evaluate_ad, EvalConfig};
use t2mir::math::Rng;
use t2mir::model::{Ablation, PolicyModel, Variant};
use t2mir::trainer::{default_model_config, default_train_config, train_step, Adam};

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let env = EnvId::Darkroom;
    let split = SplitManifest::generate(env, 17);
    let manifest = DatasetManifest::new(env, Tier::Mixed, 100, 17);
    let dataset = generate_trajectories(&manifest, &split).unwrap();
    let mc = default_model_config(env, Variant::Ad, Ablation::Full);
    let tc = default_train_config(env, Variant::Ad, Ablation::Full);
    let mut model: PolicyModel<f32> = PolicyModel::init(mc, 17).unwrap();
    let mut opt = Adam::new(tc.learning_rate, model.params.trainable_len());
    let test_tasks: Vec<&TaskSpec> = split.test_tasks();

    for step in 0..steps {
        let mut rng = Rng::new(tc.seed).fork(0xba7c4).fork(step as u64);
        let batch = build_ad_batch(&dataset, tc.batch_size, 2, model.cfg.max_context_tokens, &mut rng).unwrap();
        let parts = train_step(&mut model, &mut opt, &batch, &tc, step).unwrap();
        if (step + 1) % 1500 == 0 {
            println!("step {}: imit {:.4} con {:.4}", step + 1, parts.imitation, parts.contrastive);
            let cfg = EvalConfig { n_episodes: 12, history_episodes: 2, seed: 3, deterministic_actions: false };
            let sample: Vec<&TaskSpec> = test_tasks.iter().take(8).copied().collect();
            let rep = evaluate_ad(&model, &sample, &cfg).unwrap();
            println!("  eval(8 tasks): ep1 {:.2} ep6 {:.2} ep12 {:.2}",
                rep.mean_returns[0], rep.mean_returns[5], rep.mean_returns[11]);
        }
    }
}
