//! The two environments and their scripted experts: a greedy rollout on the
//! gridworld and an annealed-noise sweep on point navigation.
//!
//! Run with: cargo run --release --example darkroom_rollout

use t2mir::data::{expert_action, rollout_expert, ActionRecord};
use t2mir::envs::{darkroom_reset, darkroom_step, sample_task_splits, EnvId, Goal, SplitTag};
use t2mir::math::Rng;

fn main() {
    let tasks = sample_task_splits(EnvId::Darkroom, 0);
    let task = tasks.iter().find(|t| t.split == SplitTag::Train).unwrap();
    let Goal::Cell { x, y } = task.goal else { unreachable!() };
    println!("task {}: goal at ({x}, {y})", task.task_index);

    // Greedy expert rollout: walk to the goal, then camp on it.
    let mut rng = Rng::new(1);
    let mut state = darkroom_reset(task);
    let mut total = 0.0;
    let mut step = 0;
    let mut path = vec![state];
    loop {
        let ActionRecord::Discrete(a) = expert_action(EnvId::Darkroom, state, &task.goal, 0.0, &mut rng) else {
            unreachable!()
        };
        let r = darkroom_step(state, a, task, step).unwrap();
        total += r.reward;
        state = r.next_state;
        step = r.step_index;
        if path.len() < 8 {
            path.push(state);
        }
        if r.done {
            break;
        }
    }
    println!("greedy return over 100 steps: {total}");
    println!("first moves: {path:?}");

    // Noise annealing: the same expert at decreasing noise levels emulates a
    // series of improving behavior checkpoints.
    println!("\nnoise  return");
    for eps in [1.0, 0.75, 0.5, 0.25, 0.05] {
        let traj = rollout_expert(task, eps, &mut Rng::new(9)).unwrap();
        println!("{eps:>5}  {:>5}", traj.ret);
    }

    let point_tasks = sample_task_splits(EnvId::Pointrobot, 0);
    println!("\npoint-robot split: {} train / {} test, goals in the centered unit square",
        point_tasks.iter().filter(|t| t.split == SplitTag::Train).count(),
        point_tasks.iter().filter(|t| t.split == SplitTag::Test).count());
    let pt = &point_tasks[0];
    let traj = rollout_expert(pt, 0.0, &mut Rng::new(2)).unwrap();
    println!("expert return on task 0 (20 steps): {:.3}", traj.ret);
}
