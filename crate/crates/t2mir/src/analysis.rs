//! Mechanism analysis: per-task gradient cosine similarity (conflict
//! quantification), routing dumps for both MoE layers, and separation
//! statistics over expert assignments and task representations.

use crate::data::{build_context_seq, build_dpt_seq, Dataset, EpisodeView, QueryRecord, Trajectory};
use crate::error::{Error, Result};
use crate::math::{Real, Rng};
use crate::model::{imitation_count, imitation_grads, PolicyModel, Variant};
use crate::seq::{Modality, RoutingKind, RoutingRecord, TokenSeq};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const DEFAULT_CONFLICT_THRESHOLD: f64 = -0.05;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientConflictReport {
    pub task_ids: Vec<usize>,
    /// Symmetric cosine matrix with a unit diagonal.
    pub cosine: Vec<Vec<f64>>,
    /// Proportion of unordered task pairs with cosine below the threshold.
    pub negative_fraction: f64,
    pub threshold: f64,
}

/// Probe batch for one task: across-episode contexts (autoregressive
/// variant) or prompt+query sequences (prompted variant), drawn with a
/// task-specific deterministic stream.
pub fn probe_batch(
    model_variant: Variant,
    dataset: &Dataset,
    queries: &[QueryRecord],
    task: usize,
    probe_size: usize,
    trajectories_per_seq: usize,
    max_tokens: usize,
    seed: u64,
) -> Result<Vec<TokenSeq>> {
    let pool = dataset.of_task(task);
    if pool.is_empty() {
        return Err(Error::InvalidInput(format!("no trajectories for task {task}")));
    }
    let mut rng = Rng::new(seed).fork(task as u64);
    let mut out = Vec::with_capacity(probe_size);
    match model_variant {
        Variant::Ad => {
            for _ in 0..probe_size {
                let (picks, _) = rng.sample_indices(pool.len(), trajectories_per_seq);
                let mut trajs: Vec<&Trajectory> =
                    picks.iter().map(|&i| &dataset.trajectories[pool[i]]).collect();
                trajs.sort_by(|a, b| a.ret.partial_cmp(&b.ret).unwrap());
                let views: Vec<EpisodeView> = trajs.iter().map(|t| EpisodeView::from(*t)).collect();
                out.push(build_context_seq(dataset.manifest.env_id, &views, None, max_tokens, task, true));
            }
        }
        Variant::Dpt => {
            let qpool: Vec<&QueryRecord> = queries.iter().filter(|q| q.task_index == task).collect();
            if qpool.is_empty() {
                return Err(Error::InvalidInput(format!("no query records for task {task}")));
            }
            for _ in 0..probe_size {
                let traj = &dataset.trajectories[pool[rng.below(pool.len())]];
                let rec = qpool[rng.below(qpool.len())];
                out.push(build_dpt_seq(
                    dataset.manifest.env_id,
                    Some(EpisodeView::from(traj)),
                    [rec.state[0], rec.state[1]],
                    (max_tokens - 1) / 3,
                    task,
                    Some(&rec.optimal_action),
                ));
            }
        }
    }
    Ok(out)
}

/// Imitation-loss gradient over a fixed probe batch from one task,
/// flattened over all trainable parameters. The auxiliary losses are
/// excluded so the statistic isolates policy-gradient interference.
pub fn per_task_gradient<F: Real>(model: &PolicyModel<F>, batch: &[TokenSeq]) -> Result<Vec<f64>> {
    let total: usize = batch
        .iter()
        .map(|s| imitation_count(&model.cfg.action_space, &s.targets))
        .sum();
    let inv = 1.0 / total.max(1) as f64;
    let n_exp = model.cfg.token_experts;
    let zero_imp = vec![F::zero(); n_exp];
    let mut grads = model.params.zeros_like();
    for seq in batch {
        let positions: Vec<usize> = seq.targets.iter().map(|(p, _)| *p).collect();
        let fwd = model.forward(seq, &positions, false, &mut Rng::zero_noise())?;
        let (_, d_outputs) = imitation_grads(&model.cfg.action_space, &fwd.outputs, &seq.targets, inv);
        model.backward(seq, &fwd, &d_outputs, None, &zero_imp, &zero_imp, &mut grads);
    }
    Ok(grads.flatten_trainable().iter().map(|v| v.as_f64()).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Pairwise gradient cosines over a set of tasks.
#[allow(clippy::too_many_arguments)]
pub fn conflict_report<F: Real>(
    model: &PolicyModel<F>,
    dataset: &Dataset,
    queries: &[QueryRecord],
    tasks: &[usize],
    probe_size: usize,
    trajectories_per_seq: usize,
    seed: u64,
    threshold: f64,
) -> Result<GradientConflictReport> {
    let grads: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&task| {
            let batch = probe_batch(
                model.cfg.variant,
                dataset,
                queries,
                task,
                probe_size,
                trajectories_per_seq,
                model.cfg.max_context_tokens,
                seed,
            )?;
            per_task_gradient(model, &batch)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(conflict_report_from_gradients(tasks, &grads, threshold))
}

pub fn conflict_report_from_gradients(
    tasks: &[usize],
    grads: &[Vec<f64>],
    threshold: f64,
) -> GradientConflictReport {
    let n = tasks.len();
    let mut cosine_m = vec![vec![0.0; n]; n];
    let mut negatives = 0usize;
    let mut pairs = 0usize;
    for i in 0..n {
        cosine_m[i][i] = 1.0;
        for j in i + 1..n {
            let c = cosine(&grads[i], &grads[j]);
            cosine_m[i][j] = c;
            cosine_m[j][i] = c;
            pairs += 1;
            if c < threshold {
                negatives += 1;
            }
        }
    }
    GradientConflictReport {
        task_ids: tasks.to_vec(),
        cosine: cosine_m,
        negative_fraction: if pairs == 0 { 0.0 } else { negatives as f64 / pairs as f64 },
        threshold,
    }
}

impl GradientConflictReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "task_i,task_j,cosine")?;
        for i in 0..self.task_ids.len() {
            for j in i + 1..self.task_ids.len() {
                writeln!(f, "{},{},{}", self.task_ids[i], self.task_ids[j], self.cosine[i][j])?;
            }
        }
        f.flush()?;
        Ok(())
    }
}

/// Routing observations plus the per-sequence task representation.
pub struct RoutingDump {
    pub records: Vec<RoutingRecord>,
    /// (task_index, z) per forwarded sequence.
    pub seq_z: Vec<(usize, Vec<f64>)>,
}

/// Forward a sample of sequences in eval mode and collect every routing
/// decision from both MoE layers.
pub fn routing_dump<F: Real>(model: &PolicyModel<F>, seqs: &[TokenSeq]) -> Result<RoutingDump> {
    let mut records = Vec::new();
    let mut seq_z = Vec::new();
    for seq in seqs {
        let fwd = model.forward(seq, &[], false, &mut Rng::zero_noise())?;
        records.extend(model.routing_records(seq, &fwd));
        if let Some(z) = &fwd.z_query {
            seq_z.push((seq.task_index, z.iter().map(|v| v.as_f64()).collect()));
        }
    }
    Ok(RoutingDump { records, seq_z })
}

pub fn write_routing_csv(path: &Path, records: &[RoutingRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "layer,kind,index,modality,task_index,experts,weights,z")?;
    for r in records {
        let kind = match r.kind {
            RoutingKind::TokenWise => "token_wise",
            RoutingKind::TaskWise => "task_wise",
        };
        let experts = r.experts.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(";");
        let weights = r.weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";");
        let z = r
            .z
            .as_ref()
            .map(|z| z.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.layer,
            kind,
            r.index,
            r.modality.map(|m| m.tag()).unwrap_or(""),
            r.task_index,
            experts,
            weights,
            z
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Total-variation distance between top-1-expert histograms conditioned on
/// modality, for each of the three modality pairs.
pub fn modality_separation(records: &[RoutingRecord], n_experts: usize) -> Vec<(Modality, Modality, f64)> {
    let mut hist = std::collections::BTreeMap::new();
    for m in [Modality::State, Modality::Action, Modality::Reward] {
        hist.insert(m.tag(), vec![0.0f64; n_experts]);
    }
    for r in records {
        if r.kind != RoutingKind::TokenWise {
            continue;
        }
        let Some(m) = r.modality else { continue };
        let mut best = 0;
        for i in 1..r.weights.len() {
            if r.weights[i] > r.weights[best] {
                best = i;
            }
        }
        hist.get_mut(m.tag()).unwrap()[r.experts[best]] += 1.0;
    }
    for h in hist.values_mut() {
        let total: f64 = h.iter().sum();
        if total > 0.0 {
            for v in h.iter_mut() {
                *v /= total;
            }
        }
    }
    let pairs = [
        (Modality::State, Modality::Action),
        (Modality::State, Modality::Reward),
        (Modality::Action, Modality::Reward),
    ];
    pairs
        .into_iter()
        .map(|(a, b)| (a, b, tv_distance(&hist[a.tag()], &hist[b.tag()])))
        .collect()
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TaskSeparation {
    /// Mean within-task pairwise distance over mean between-task distance.
    pub ratio: f64,
    /// Set when the statistic collapsed (all representations identical).
    pub degenerate: bool,
}

/// Within/between distance ratio of the per-sequence task representations.
pub fn task_separation(seq_z: &[(usize, Vec<f64>)]) -> TaskSeparation {
    let mut within = (0.0, 0usize);
    let mut between = (0.0, 0usize);
    for i in 0..seq_z.len() {
        for j in i + 1..seq_z.len() {
            let d: f64 = seq_z[i]
                .1
                .iter()
                .zip(seq_z[j].1.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if seq_z[i].0 == seq_z[j].0 {
                within.0 += d;
                within.1 += 1;
            } else {
                between.0 += d;
                between.1 += 1;
            }
        }
    }
    if within.1 == 0 || between.1 == 0 {
        return TaskSeparation { ratio: 1.0, degenerate: true };
    }
    let wm = within.0 / within.1 as f64;
    let bm = between.0 / between.1 as f64;
    if bm == 0.0 {
        TaskSeparation { ratio: 1.0, degenerate: true }
    } else {
        TaskSeparation { ratio: wm / bm, degenerate: false }
    }
}
