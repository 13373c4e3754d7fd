//! Mixture-of-experts transformers for in-context reinforcement learning.
//!
//! A causal transformer policy whose designated block replaces its
//! feedforward with two parallel MoE layers: a token-wise layer under a
//! noisy top-k gate (balanced by importance and load losses) and a
//! task-wise layer routed per sequence from a pooled hidden state, whose
//! router is trained contrastively against a momentum key copy. The crate
//! bundles the surrounding laboratory: environments, scripted-expert
//! dataset generation, training for the autoregressive and prompted
//! variants, in-context evaluation, and routing/gradient analysis.
//!
//! Start with the runnable examples (`cargo run --release --example ...`)
//! or the `t2mir` binary for the file-driven pipeline.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod envs;
pub mod error;
pub mod evaluator;
pub mod grad_check;
pub mod math;
pub mod model;
pub mod moe;
pub mod nn;
pub mod seq;
pub mod trainer;
