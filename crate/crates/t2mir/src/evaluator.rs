//! In-context evaluation on held-out tasks. The autoregressive variant
//! conditions on a return-sorted buffer of its own past episodes; the
//! prompted variant conditions on the previous episode. No parameters are
//! updated anywhere here.

use crate::data::{build_context_seq, build_dpt_seq, ActionRecord, EpisodeView};
use crate::envs::{self, darkroom_reset, darkroom_step, pointrobot_reset, pointrobot_step, EnvId, TaskSpec};
use crate::error::{Error, Result};
use crate::math::{Real, Rng};
use crate::model::{HeadOutput, PolicyModel, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluation episodes per task.
    pub n_episodes: usize,
    /// History buffer cap (autoregressive variant).
    pub history_episodes: usize,
    pub seed: u64,
    pub deterministic_actions: bool,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 || self.history_episodes == 0 {
            return Err(Error::Config("evaluation needs n_episodes >= 1 and history_episodes >= 1".into()));
        }
        Ok(())
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_episodes: 20, history_episodes: 2, seed: 0, deterministic_actions: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskCurve {
    pub task_index: usize,
    pub returns: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub env_id: EnvId,
    pub per_task: Vec<TaskCurve>,
    /// Mean return over tasks, one entry per evaluation episode.
    pub mean_returns: Vec<f64>,
    /// 95% bootstrap confidence interval of the mean, per episode.
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

/// Greedy argmax or categorical sample for logits; the continuous head is
/// a deterministic mean.
pub fn select_action(output: &HeadOutput, deterministic: bool, rng: &mut Rng) -> ActionRecord {
    match output {
        HeadOutput::Logits(logits) => {
            if deterministic {
                let mut best = 0;
                for i in 1..logits.len() {
                    if logits[i] > logits[best] {
                        best = i;
                    }
                }
                ActionRecord::Discrete(best)
            } else {
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let probs: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                ActionRecord::Discrete(rng.categorical(&probs))
            }
        }
        HeadOutput::Mean(m) => ActionRecord::Continuous(m.clone()),
    }
}

struct Episode {
    states: Vec<Vec<f64>>,
    actions: Vec<ActionRecord>,
    rewards: Vec<f64>,
    ret: f64,
}

impl Episode {
    fn view(&self) -> EpisodeView<'_> {
        EpisodeView { states: &self.states, actions: &self.actions, rewards: &self.rewards }
    }
}

fn env_reset(env: EnvId, task: &TaskSpec, rng: &mut Rng) -> [f64; 2] {
    match env {
        EnvId::Darkroom => darkroom_reset(task),
        EnvId::Pointrobot => pointrobot_reset(rng),
    }
}

fn env_step(env: EnvId, state: [f64; 2], action: &ActionRecord, task: &TaskSpec, step: usize) -> Result<crate::envs::StepResult> {
    match (env, action) {
        (EnvId::Darkroom, ActionRecord::Discrete(a)) => darkroom_step(state, *a, task, step),
        (EnvId::Pointrobot, ActionRecord::Continuous(a)) => pointrobot_step(state, [a[0], a[1]], task, step),
        _ => Err(Error::InvalidInput("action kind does not match environment".into())),
    }
}

fn head_at_last<F: Real>(model: &PolicyModel<F>, seq: &crate::seq::TokenSeq) -> Result<HeadOutput> {
    let last = seq.len() - 1;
    let fwd = model.forward(seq, &[last], false, &mut Rng::zero_noise())?;
    let raw: Vec<f64> = fwd.outputs[0].1.iter().map(|v| v.as_f64()).collect();
    Ok(model.head_to_action(&raw))
}

/// Across-episode in-context evaluation: after each episode the buffer is
/// sorted ascending by return and, once it exceeds the cap, the worst
/// episode is dropped. The flattened buffer plus the running episode forms
/// the context for every action.
pub fn evaluate_ad<F: Real>(model: &PolicyModel<F>, tasks: &[&TaskSpec], cfg: &EvalConfig) -> Result<EvalReport> {
    debug_assert_eq!(model.cfg.variant, Variant::Ad);
    cfg.validate()?;
    let env = tasks.first().map(|t| t.env_id).ok_or_else(|| Error::InvalidInput("no tasks".into()))?;
    let horizon = envs::horizon(env);
    let max_tokens = model.cfg.max_context_tokens;

    let curves: Vec<TaskCurve> = tasks
        .par_iter()
        .map(|task| -> Result<TaskCurve> {
            let mut buffer: Vec<Episode> = Vec::new();
            let mut returns = Vec::with_capacity(cfg.n_episodes);
            for ep in 0..cfg.n_episodes {
                let mut env_rng = Rng::new(cfg.seed).fork(task.task_index as u64).fork(ep as u64);
                let mut act_rng = Rng::new(cfg.seed ^ 0xac7).fork(task.task_index as u64).fork(ep as u64);
                let mut state = env_reset(env, task, &mut env_rng);
                let mut cur = Episode { states: Vec::new(), actions: Vec::new(), rewards: Vec::new(), ret: 0.0 };
                let mut step = 0;
                loop {
                    let mut views: Vec<EpisodeView> = buffer.iter().map(|e| e.view()).collect();
                    views.push(cur.view());
                    let seq = build_context_seq(env, &views, Some(state), max_tokens, task.task_index, false);
                    let head = head_at_last(model, &seq)?;
                    let action = select_action(&head, cfg.deterministic_actions, &mut act_rng);
                    let result = env_step(env, state, &action, task, step)?;
                    cur.states.push(state.to_vec());
                    cur.actions.push(action);
                    cur.rewards.push(result.reward);
                    state = result.next_state;
                    step = result.step_index;
                    if result.done {
                        break;
                    }
                }
                debug_assert_eq!(cur.states.len(), horizon);
                cur.ret = cur.rewards.iter().sum();
                returns.push(cur.ret);
                buffer.push(cur);
                buffer.sort_by(|a, b| a.ret.partial_cmp(&b.ret).unwrap());
                if buffer.len() > cfg.history_episodes {
                    buffer.remove(0);
                }
            }
            Ok(TaskCurve { task_index: task.task_index, returns })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(assemble_report(env, cfg.clone(), curves))
}

/// Prompted in-context evaluation: episode n conditions on the full
/// trajectory of episode n-1 (episode 1 runs with an empty prompt).
pub fn evaluate_dpt<F: Real>(model: &PolicyModel<F>, tasks: &[&TaskSpec], cfg: &EvalConfig) -> Result<EvalReport> {
    debug_assert_eq!(model.cfg.variant, Variant::Dpt);
    cfg.validate()?;
    let env = tasks.first().map(|t| t.env_id).ok_or_else(|| Error::InvalidInput("no tasks".into()))?;
    let max_prompt = (model.cfg.max_context_tokens - 1) / 3;

    let curves: Vec<TaskCurve> = tasks
        .par_iter()
        .map(|task| -> Result<TaskCurve> {
            let mut prompt: Option<Episode> = None;
            let mut returns = Vec::with_capacity(cfg.n_episodes);
            for ep in 0..cfg.n_episodes {
                let mut env_rng = Rng::new(cfg.seed).fork(task.task_index as u64).fork(ep as u64);
                let mut act_rng = Rng::new(cfg.seed ^ 0xac7).fork(task.task_index as u64).fork(ep as u64);
                let mut state = env_reset(env, task, &mut env_rng);
                let mut cur = Episode { states: Vec::new(), actions: Vec::new(), rewards: Vec::new(), ret: 0.0 };
                let mut step = 0;
                loop {
                    let seq = build_dpt_seq(
                        env,
                        prompt.as_ref().map(|e| e.view()),
                        state,
                        max_prompt,
                        task.task_index,
                        None,
                    );
                    let head = head_at_last(model, &seq)?;
                    let action = select_action(&head, cfg.deterministic_actions, &mut act_rng);
                    let result = env_step(env, state, &action, task, step)?;
                    cur.states.push(state.to_vec());
                    cur.actions.push(action);
                    cur.rewards.push(result.reward);
                    state = result.next_state;
                    step = result.step_index;
                    if result.done {
                        break;
                    }
                }
                cur.ret = cur.rewards.iter().sum();
                returns.push(cur.ret);
                prompt = Some(cur);
            }
            Ok(TaskCurve { task_index: task.task_index, returns })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(assemble_report(env, cfg.clone(), curves))
}

fn assemble_report(env_id: EnvId, config: EvalConfig, per_task: Vec<TaskCurve>) -> EvalReport {
    let n_eps = config.n_episodes;
    let n_tasks = per_task.len();
    let mut mean_returns = vec![0.0; n_eps];
    for curve in &per_task {
        for (m, &r) in mean_returns.iter_mut().zip(curve.returns.iter()) {
            *m += r / n_tasks as f64;
        }
    }
    // 95% bootstrap over tasks
    let mut rng = Rng::new(config.seed ^ 0xb007);
    let n_boot = 1000;
    let mut ci_low = vec![0.0; n_eps];
    let mut ci_high = vec![0.0; n_eps];
    let mut samples = vec![0.0f64; n_boot];
    for ep in 0..n_eps {
        for s in samples.iter_mut() {
            let mut acc = 0.0;
            for _ in 0..n_tasks {
                acc += per_task[rng.below(n_tasks)].returns[ep];
            }
            *s = acc / n_tasks as f64;
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ci_low[ep] = samples[(0.025 * (n_boot - 1) as f64).round() as usize];
        ci_high[ep] = samples[(0.975 * (n_boot - 1) as f64).round() as usize];
    }
    EvalReport { config, env_id, per_task, mean_returns, ci_low, ci_high }
}

impl EvalReport {
    /// Rows of (task_index, episode, return).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "task_index,episode,return")?;
        for curve in &self.per_task {
            for (ep, r) in curve.returns.iter().enumerate() {
                writeln!(f, "{},{},{}", curve.task_index, ep + 1, r)?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Static return-curve image (mean with the CI band).
    pub fn write_curve_svg(&self, path: &Path) -> Result<()> {
        let (w, h, ml, mb) = (640.0, 400.0, 60.0, 40.0);
        let n = self.mean_returns.len().max(2);
        let lo = self.ci_low.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
        let hi = self.ci_high.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-9);
        let x = |i: usize| ml + (w - ml - 20.0) * i as f64 / (n - 1) as f64;
        let y = |v: f64| (h - mb) - (h - mb - 20.0) * (v - lo) / (hi - lo);
        let path_of = |vals: &[f64]| -> String {
            vals.iter()
                .enumerate()
                .map(|(i, &v)| format!("{},{}", x(i), y(v)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let band: String = {
            let mut pts: Vec<String> = self
                .ci_low
                .iter()
                .enumerate()
                .map(|(i, &v)| format!("{},{}", x(i), y(v)))
                .collect();
            pts.extend(
                self.ci_high
                    .iter()
                    .enumerate()
                    .rev()
                    .map(|(i, &v)| format!("{},{}", x(i), y(v))),
            );
            pts.join(" ")
        };
        let svg = format!(
            concat!(
                "<svg xmlns='http://www.w3.org/2000/svg' width='{w}' height='{h}'>",
                "<rect width='100%' height='100%' fill='white'/>",
                "<polygon points='{band}' fill='#4477aa33' stroke='none'/>",
                "<polyline points='{line}' fill='none' stroke='#4477aa' stroke-width='2'/>",
                "<line x1='{ml}' y1='{hb}' x2='{wr}' y2='{hb}' stroke='black'/>",
                "<line x1='{ml}' y1='20' x2='{ml}' y2='{hb}' stroke='black'/>",
                "<text x='{xc}' y='{hl}' text-anchor='middle' font-size='13'>evaluation episode</text>",
                "<text x='15' y='{yc}' font-size='13' transform='rotate(-90 15 {yc})' text-anchor='middle'>mean test return</text>",
                "</svg>"
            ),
            w = w,
            h = h,
            band = band,
            line = path_of(&self.mean_returns),
            ml = ml,
            hb = h - mb,
            wr = w - 20.0,
            xc = (ml + w - 20.0) / 2.0,
            hl = h - 10.0,
            yc = (h - mb) / 2.0,
        );
        std::fs::write(path, svg)?;
        Ok(())
    }
}
