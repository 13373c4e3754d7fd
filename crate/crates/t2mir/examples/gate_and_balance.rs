//! Sparse gating in five minutes: top-k selection, noisy logits, the smooth
//! load estimator against a Monte-Carlo oracle, and the balance loss.
//!
//! Run with: cargo run --release --example gate_and_balance

use t2mir::math::Rng;
use t2mir::moe::{
    balance_loss, coefficient_of_variation, importance_vector, load_vector, noisy_gate_logits,
    top_k_gate, RouterParams,
};

fn main() {
    // Top-k gate: softmax over the two largest logits, everything else zero.
    let gate = top_k_gate(&[2.0f64, 1.0, 0.0, -1.0], 2).unwrap();
    println!("top-2 of [2,1,0,-1]: experts {:?}, weights {:?}", gate.indices, gate.weights);

    // Noisy gating: eval mode is exactly clean, train mode perturbs with
    // softplus-scaled Gaussian noise.
    let mut rng = Rng::new(7);
    let router: RouterParams<f64> = RouterParams::init(8, 4, true, 0.3, &mut rng);
    let h: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
    let eval = noisy_gate_logits(&h, &router, false, &mut rng);
    let train = noisy_gate_logits(&h, &router, true, &mut rng);
    println!("clean logits:  {:?}", eval.clean);
    println!("noisy logits:  {:?}", train.noisy);
    println!("noise stds:    {:?}", train.noise_std);

    // The load estimator is a smooth stand-in for "how many tokens would
    // pick this expert": compare against empirical top-k frequencies.
    let k = 2;
    let n_rep = 50_000;
    let hs: Vec<f64> = std::iter::repeat(h.clone()).take(n_rep).flatten().collect();
    let load = load_vector(&hs, n_rep, &router, k, &mut rng.fork(1));
    let mut freq = vec![0.0f64; 4];
    let mut mc = rng.fork(2);
    for _ in 0..n_rep {
        let nl = noisy_gate_logits(&h, &router, true, &mut mc);
        let g = top_k_gate(&nl.noisy, k).unwrap();
        for &e in &g.indices {
            freq[e] += 1.0;
        }
    }
    println!("\nexpert  smooth-load  monte-carlo");
    for i in 0..4 {
        println!("  {i}       {:.4}      {:.4}", load[i] / n_rep as f64, freq[i] / n_rep as f64);
    }

    // Balance loss: zero for perfectly even utilization, positive when one
    // expert hogs the traffic.
    let even = balance_loss(vec![1.0f64; 4], vec![1.0; 4], 0.01, 0.01);
    let skewed = balance_loss(vec![4.0f64, 0.0, 0.0, 0.0], vec![3.0, 1.0, 0.0, 0.0], 0.01, 0.01);
    println!("\nbalance(even) = {:.6}, balance(skewed) = {:.6}", even.total, skewed.total);
    println!("cv([1,3]) = {}", coefficient_of_variation(&[1.0f64, 3.0]));

    // Importance: per-expert sum of sparse gate weights over a batch.
    let decisions: Vec<_> = (0..6)
        .map(|i| top_k_gate(&[(i % 4) as f64, 1.0, 0.5, 0.0], 2).unwrap())
        .collect();
    println!("importance over 6 tokens: {:?}", importance_vector(&decisions, 4).unwrap());
}
