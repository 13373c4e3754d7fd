//! The two desk-scale environments: a 10x10 sparse-reward gridworld and 2D
//! point navigation with hidden goals, plus deterministic task splits.

use crate::error::{Error, Result};
use crate::math::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Darkroom,
    Pointrobot,
}

impl EnvId {
    pub fn parse(s: &str) -> Result<EnvId> {
        match s {
            "darkroom" => Ok(EnvId::Darkroom),
            "pointrobot" => Ok(EnvId::Pointrobot),
            other => Err(Error::Config(format!("unknown env '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

/// Hidden goal for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Goal {
    Cell { x: i32, y: i32 },
    Point { x: f64, y: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskSpec {
    pub env_id: EnvId,
    pub task_index: usize,
    pub goal: Goal,
    pub split: SplitTag,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: [f64; 2],
    pub reward: f64,
    pub done: bool,
    pub step_index: usize,
}

pub const DARKROOM_SIZE: i32 = 10;
pub const DARKROOM_HORIZON: usize = 100;
pub const DARKROOM_ACTIONS: usize = 5;
pub const POINTROBOT_HORIZON: usize = 20;
pub const POINTROBOT_ACTION_BOUND: f64 = 0.1;

/// Action ids for the gridworld.
pub const A_LEFT: usize = 0;
pub const A_RIGHT: usize = 1;
pub const A_UP: usize = 2;
pub const A_DOWN: usize = 3;
pub const A_STAY: usize = 4;

/// The agent always starts in the corner cell.
pub fn darkroom_reset(_task: &TaskSpec) -> [f64; 2] {
    [0.0, 0.0]
}

/// Unit move clamped to the grid; reward 1 exactly when the post-move cell
/// is the goal. Episodes never end early on the goal.
pub fn darkroom_step(state: [f64; 2], action: usize, task: &TaskSpec, step_index: usize) -> Result<StepResult> {
    let (gx, gy) = match task.goal {
        Goal::Cell { x, y } => (x, y),
        _ => return Err(Error::InvalidInput("darkroom task with point goal".into())),
    };
    let (mut x, mut y) = (state[0] as i32, state[1] as i32);
    match action {
        A_LEFT => x -= 1,
        A_RIGHT => x += 1,
        A_UP => y += 1,
        A_DOWN => y -= 1,
        A_STAY => {}
        other => return Err(Error::InvalidInput(format!("invalid darkroom action id {other}"))),
    }
    x = x.clamp(0, DARKROOM_SIZE - 1);
    y = y.clamp(0, DARKROOM_SIZE - 1);
    let reward = if x == gx && y == gy { 1.0 } else { 0.0 };
    let step_index = step_index + 1;
    Ok(StepResult {
        next_state: [x as f64, y as f64],
        reward,
        done: step_index >= DARKROOM_HORIZON,
        step_index,
    })
}

/// Start position is drawn uniformly from the action-bound square.
pub fn pointrobot_reset(rng: &mut Rng) -> [f64; 2] {
    [
        rng.uniform_in(-POINTROBOT_ACTION_BOUND, POINTROBOT_ACTION_BOUND),
        rng.uniform_in(-POINTROBOT_ACTION_BOUND, POINTROBOT_ACTION_BOUND),
    ]
}

/// next = state + clip(action); reward is the negative Euclidean distance to
/// the (hidden) goal.
pub fn pointrobot_step(state: [f64; 2], action: [f64; 2], task: &TaskSpec, step_index: usize) -> Result<StepResult> {
    let (gx, gy) = match task.goal {
        Goal::Point { x, y } => (x, y),
        _ => return Err(Error::InvalidInput("pointrobot task with cell goal".into())),
    };
    let b = POINTROBOT_ACTION_BOUND;
    let ax = action[0].clamp(-b, b);
    let ay = action[1].clamp(-b, b);
    let nx = state[0] + ax;
    let ny = state[1] + ay;
    let reward = -((nx - gx).powi(2) + (ny - gy).powi(2)).sqrt();
    let step_index = step_index + 1;
    Ok(StepResult {
        next_state: [nx, ny],
        reward,
        done: step_index >= POINTROBOT_HORIZON,
        step_index,
    })
}

pub fn horizon(env: EnvId) -> usize {
    match env {
        EnvId::Darkroom => DARKROOM_HORIZON,
        EnvId::Pointrobot => POINTROBOT_HORIZON,
    }
}

pub fn state_dim(_env: EnvId) -> usize {
    2
}

/// Model-facing state features (gridworld coordinates are scaled into the
/// unit square).
pub fn state_features(env: EnvId, state: [f64; 2]) -> Vec<f64> {
    match env {
        EnvId::Darkroom => vec![state[0] / (DARKROOM_SIZE - 1) as f64, state[1] / (DARKROOM_SIZE - 1) as f64],
        EnvId::Pointrobot => vec![state[0], state[1]],
    }
}

/// Deterministic train/test split over the task distribution.
///
/// DarkRoom enumerates all 100 cells and holds out 20; Point-Robot draws 50
/// goals uniformly from the unit square centered at the origin and holds
/// out 5.
pub fn sample_task_splits(env_id: EnvId, seed: u64) -> Vec<TaskSpec> {
    let mut rng = Rng::new(seed).fork(match env_id {
        EnvId::Darkroom => 1,
        EnvId::Pointrobot => 2,
    });
    match env_id {
        EnvId::Darkroom => {
            let mut cells: Vec<(i32, i32)> = (0..DARKROOM_SIZE)
                .flat_map(|x| (0..DARKROOM_SIZE).map(move |y| (x, y)))
                .collect();
            rng.shuffle(&mut cells);
            cells
                .into_iter()
                .enumerate()
                .map(|(i, (x, y))| TaskSpec {
                    env_id,
                    task_index: i,
                    goal: Goal::Cell { x, y },
                    split: if i < 80 { SplitTag::Train } else { SplitTag::Test },
                })
                .collect()
        }
        EnvId::Pointrobot => (0..50)
            .map(|i| TaskSpec {
                env_id,
                task_index: i,
                goal: Goal::Point {
                    x: rng.uniform_in(-0.5, 0.5),
                    y: rng.uniform_in(-0.5, 0.5),
                },
                split: if i < 45 { SplitTag::Train } else { SplitTag::Test },
            })
            .collect(),
    }
}

/// On-disk task split manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    pub env_id: EnvId,
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
}

impl SplitManifest {
    pub fn generate(env_id: EnvId, seed: u64) -> SplitManifest {
        SplitManifest { env_id, seed, tasks: sample_task_splits(env_id, seed) }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SplitManifest> {
        let data = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&data)?)
    }

    pub fn train_tasks(&self) -> Vec<&TaskSpec> {
        self.tasks.iter().filter(|t| t.split == SplitTag::Train).collect()
    }

    pub fn test_tasks(&self) -> Vec<&TaskSpec> {
        self.tasks.iter().filter(|t| t.split == SplitTag::Test).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell_task(x: i32, y: i32) -> TaskSpec {
        TaskSpec { env_id: EnvId::Darkroom, task_index: 0, goal: Goal::Cell { x, y }, split: SplitTag::Train }
    }

    #[test]
    fn darkroom_reset_is_origin() {
        let t = cell_task(5, 7);
        assert_eq!(darkroom_reset(&t), [0.0, 0.0]);
        assert_eq!(darkroom_reset(&t), [0.0, 0.0]);
        assert_eq!(darkroom_reset(&t).len(), 2);
    }

    #[test]
    fn darkroom_moves_clamp_and_reward() {
        let t = cell_task(1, 0);
        // moving right onto the goal pays 1
        let r = darkroom_step([0.0, 0.0], A_RIGHT, &t, 0).unwrap();
        assert_eq!(r.reward, 1.0);
        assert_eq!(r.next_state, [1.0, 0.0]);
        // stay leaves position unchanged
        let r = darkroom_step([3.0, 4.0], A_STAY, &t, 0).unwrap();
        assert_eq!(r.next_state, [3.0, 4.0]);
        // left at x=0 clamps
        let r = darkroom_step([0.0, 5.0], A_LEFT, &t, 0).unwrap();
        assert_eq!(r.next_state, [0.0, 5.0]);
        // invalid action id
        assert!(darkroom_step([0.0, 0.0], 9, &t, 0).is_err());
    }

    #[test]
    fn darkroom_transition_table_matches_brute_force() {
        // exhaustive 10x10x5 oracle
        let t = cell_task(6, 3);
        for x in 0..10i32 {
            for y in 0..10i32 {
                for a in 0..5usize {
                    let got = darkroom_step([x as f64, y as f64], a, &t, 0).unwrap();
                    let (mut ex, mut ey) = (x, y);
                    match a {
                        A_LEFT => ex = (x - 1).max(0),
                        A_RIGHT => ex = (x + 1).min(9),
                        A_UP => ey = (y + 1).min(9),
                        A_DOWN => ey = (y - 1).max(0),
                        _ => {}
                    }
                    assert_eq!(got.next_state, [ex as f64, ey as f64]);
                    assert_eq!(got.reward, if (ex, ey) == (6, 3) { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn darkroom_runs_full_horizon() {
        let t = cell_task(0, 0);
        let mut state = darkroom_reset(&t);
        let mut step = 0;
        let mut done = false;
        let mut n = 0;
        while !done {
            let r = darkroom_step(state, A_STAY, &t, step).unwrap();
            state = r.next_state;
            step = r.step_index;
            done = r.done;
            n += 1;
            assert_eq!(r.reward, 1.0); // camped on goal, no early termination
        }
        assert_eq!(n, DARKROOM_HORIZON);
    }

    fn point_task(x: f64, y: f64) -> TaskSpec {
        TaskSpec { env_id: EnvId::Pointrobot, task_index: 0, goal: Goal::Point { x, y }, split: SplitTag::Train }
    }

    #[test]
    fn pointrobot_reward_is_negative_distance() {
        let t = point_task(1.0, 0.0);
        // zero action at the goal -> zero reward
        let at_goal = point_task(0.0, 0.0);
        let r = pointrobot_step([0.0, 0.0], [0.0, 0.0], &at_goal, 0).unwrap();
        assert_eq!(r.reward, 0.0);
        // hand distance: (0,0) + (0.1,0) vs goal (1,0) -> -0.9
        let r = pointrobot_step([0.0, 0.0], [0.1, 0.0], &t, 0).unwrap();
        assert!((r.reward + 0.9).abs() < 1e-12);
        // oversized action behaves as the clipped one
        let r2 = pointrobot_step([0.0, 0.0], [0.5, 0.0], &t, 0).unwrap();
        assert_eq!(r.next_state, r2.next_state);
        assert_eq!(r.reward, r2.reward);
    }

    #[test]
    fn pointrobot_reward_nonpositive_and_horizon() {
        let t = point_task(0.3, -0.2);
        let mut rng = Rng::new(5);
        let mut state = pointrobot_reset(&mut rng);
        let mut step = 0;
        let mut count = 0;
        loop {
            let a = [rng.uniform_in(-0.1, 0.1), rng.uniform_in(-0.1, 0.1)];
            let r = pointrobot_step(state, a, &t, step).unwrap();
            assert!(r.reward <= 0.0);
            state = r.next_state;
            step = r.step_index;
            count += 1;
            if r.done {
                break;
            }
        }
        assert_eq!(count, POINTROBOT_HORIZON);
    }

    #[test]
    fn splits_have_documented_sizes_and_are_deterministic() {
        let d = sample_task_splits(EnvId::Darkroom, 7);
        assert_eq!(d.len(), 100);
        assert_eq!(d.iter().filter(|t| t.split == SplitTag::Train).count(), 80);
        assert_eq!(d.iter().filter(|t| t.split == SplitTag::Test).count(), 20);
        // all cells distinct
        let mut cells: Vec<(i32, i32)> = d
            .iter()
            .map(|t| match t.goal {
                Goal::Cell { x, y } => (x, y),
                _ => unreachable!(),
            })
            .collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 100);

        let p = sample_task_splits(EnvId::Pointrobot, 7);
        assert_eq!(p.len(), 50);
        assert_eq!(p.iter().filter(|t| t.split == SplitTag::Train).count(), 45);
        assert_eq!(p.iter().filter(|t| t.split == SplitTag::Test).count(), 5);
        for t in &p {
            match t.goal {
                Goal::Point { x, y } => assert!((-0.5..=0.5).contains(&x) && (-0.5..=0.5).contains(&y)),
                _ => unreachable!(),
            }
        }

        let d2 = sample_task_splits(EnvId::Darkroom, 7);
        assert_eq!(serde_json::to_string(&d).unwrap(), serde_json::to_string(&d2).unwrap());
        let d3 = sample_task_splits(EnvId::Darkroom, 8);
        assert_ne!(serde_json::to_string(&d).unwrap(), serde_json::to_string(&d3).unwrap());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = std::env::temp_dir().join("t2mir_env_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("split.json");
        let m = SplitManifest::generate(EnvId::Pointrobot, 3);
        m.save(&path).unwrap();
        let m2 = SplitManifest::load(&path).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), serde_json::to_string(&m2).unwrap());
        std::fs::remove_file(&path).ok();
    }
}
