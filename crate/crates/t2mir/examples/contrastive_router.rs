//! The task router as a contrastive encoder: bilinear InfoNCE over aligned
//! query/key batches and the momentum update that keeps keys stable.
//!
//! Run with: cargo run --release --example contrastive_router

use t2mir::math::Rng;
use t2mir::moe::{infonce_loss, momentum_update, task_router_representation, TaskRouterState};

fn main() {
    let mut rng = Rng::new(3);
    let d = 16;
    let k2 = 6;
    let mut state: TaskRouterState<f64> = TaskRouterState::init(d, k2, 0.995, 0.3, &mut rng).unwrap();

    // Two tasks, two pooled hidden states each; queries through the query
    // router, keys through the (initially identical) key router.
    let pooled: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..d).map(|j| ((i / 2) as f64 - 0.5) * 2.0 + 0.1 * ((i + j) as f64).sin()).collect())
        .collect();
    let task_ids = vec![0, 0, 1, 1];
    let queries: Vec<Vec<f64>> = pooled.iter().map(|h| task_router_representation(h, &state.query)).collect();
    let keys: Vec<Vec<f64>> = pooled.iter().map(|h| task_router_representation(h, &state.key)).collect();
    println!("query z[0] = {:?}", queries[0]);

    let loss = infonce_loss(&queries, &keys, &task_ids, &state.bilinear).unwrap();
    println!("InfoNCE over 4 sequences (2 tasks): {loss:.4} (uniform baseline ln4 = {:.4})", 4f64.ln());

    // Momentum update: with a frozen query, the key decays geometrically
    // toward it. key_t = beta^t key_0 + (1 - beta^t) query.
    for v in state.key.w1.iter_mut() {
        *v += 1.0;
    }
    let key0 = state.key.w1[0];
    let q = state.query.w1[0];
    for t in [1usize, 10, 100] {
        let mut s = state.clone();
        for _ in 0..t {
            momentum_update(&mut s).unwrap();
        }
        let expect = 0.995f64.powi(t as i32) * key0 + (1.0 - 0.995f64.powi(t as i32)) * q;
        println!("after {t:>3} updates: key[0] = {:.10} (closed form {:.10})", s.key.w1[0], expect);
    }
}
