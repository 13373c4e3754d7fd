//! Property tests over the routing and data invariants.

use proptest::prelude::*;
use t2mir::data::{build_ad_batch, generate_trajectories, DatasetManifest, Tier};
use t2mir::envs::{EnvId, SplitManifest};
use t2mir::math::Rng;
use t2mir::moe::{infonce_loss, top_k_gate};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Gate weights: nonnegative, sum to one over the selected experts,
    /// exactly zero elsewhere.
    #[test]
    fn gate_weight_invariants(logits in prop::collection::vec(-10.0f64..10.0, 1..9), k_raw in 1usize..9) {
        let k = 1 + (k_raw - 1) % logits.len();
        let gate = top_k_gate(&logits, k).unwrap();
        prop_assert_eq!(gate.indices.len(), k);
        let sum: f64 = gate.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        prop_assert!(gate.weights.iter().all(|&w| w >= 0.0));
        let dense = gate.dense(logits.len());
        let mut nonzero = 0;
        for (i, &w) in dense.iter().enumerate() {
            if gate.indices.contains(&i) {
                nonzero += 1;
            } else {
                prop_assert_eq!(w, 0.0);
            }
        }
        prop_assert_eq!(nonzero, k);
    }

    /// The contrastive loss only depends on the key *set* per task, not the
    /// order keys arrive in (positives are summed).
    #[test]
    fn infonce_batch_order_invariance(seed in 0u64..5000) {
        let mut rng = Rng::new(seed);
        let m = 6;
        let dim = 3;
        let queries: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
        let keys: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
        let ids = vec![0, 0, 1, 1, 2, 2];
        let w: Vec<f64> = (0..dim * dim).map(|_| rng.normal() * 0.5).collect();
        let base = infonce_loss(&queries, &keys, &ids, &w).unwrap();

        // permute keys *within* each task: same positives, same negatives
        let keys_swapped: Vec<Vec<f64>> = vec![
            keys[1].clone(), keys[0].clone(),
            keys[3].clone(), keys[2].clone(),
            keys[5].clone(), keys[4].clone(),
        ];
        let swapped = infonce_loss(&queries, &keys_swapped, &ids, &w).unwrap();
        prop_assert!((base - swapped).abs() < 1e-10);
    }
}

#[test]
fn ad_batches_always_hold_two_tasks() {
    let split = SplitManifest::generate(EnvId::Darkroom, 3);
    let manifest = DatasetManifest::new(EnvId::Darkroom, Tier::Mixed, 6, 3);
    let dataset = generate_trajectories(&manifest, &split).unwrap();
    for seed in 0..200 {
        let mut rng = Rng::new(seed);
        let b = 2 + rng.below(7);
        let batch = build_ad_batch(&dataset, b, 2, 700, &mut rng).unwrap();
        let distinct: std::collections::HashSet<usize> =
            batch.queries.iter().map(|s| s.task_index).collect();
        assert!(distinct.len() >= 2, "batch of {b} holds {} tasks", distinct.len());
        for (q, k) in batch.queries.iter().zip(batch.keys.iter()) {
            assert_eq!(q.task_index, k.task_index);
        }
    }
}
