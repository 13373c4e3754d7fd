//! End-to-end pipeline through the CLI surface: split -> collect -> train ->
//! eval -> analyze, plus the documented exit codes of the binary.

use std::path::Path;
use std::process::Command;
use t2mir::cli;
use t2mir::data::Tier;
use t2mir::envs::EnvId;
use t2mir::evaluator::EvalConfig;
use t2mir::model::{Ablation, Variant};
use t2mir::trainer::{default_model_config, default_train_config};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_t2mir"))
}

#[test]
fn full_pipeline_via_cli_functions() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let split_path = root.join("split.json");
    let data_dir = root.join("data");
    let run_dir = root.join("run");

    cli::cmd_split(EnvId::Pointrobot, 5, &split_path, false).unwrap();
    assert!(split_path.exists());
    // same seed reproduces the file byte for byte
    let bytes1 = std::fs::read(&split_path).unwrap();
    cli::cmd_split(EnvId::Pointrobot, 5, &split_path, true).unwrap();
    assert_eq!(bytes1, std::fs::read(&split_path).unwrap());

    cli::cmd_collect(&split_path, Tier::Mixed, &data_dir, 8, 5, false).unwrap();
    assert!(data_dir.join("dataset.jsonl").exists());
    assert!(data_dir.join("queries.jsonl").exists());
    assert!(data_dir.join("manifest.json").exists());
    // re-run without --force refuses to overwrite
    let err = cli::cmd_collect(&split_path, Tier::Mixed, &data_dir, 8, 5, false).unwrap_err();
    assert_eq!(cli::exit_code_for(&err), 3);
    // medium tier keeps strictly fewer episodes
    let med_dir = root.join("data_medium");
    cli::cmd_collect(&split_path, Tier::Medium, &med_dir, 8, 5, false).unwrap();
    let count = |p: &Path| std::fs::read_to_string(p).unwrap().lines().count();
    assert!(count(&med_dir.join("dataset.jsonl")) < count(&data_dir.join("dataset.jsonl")));

    // small training profile
    let mut profile = cli::RunProfile::defaults(EnvId::Pointrobot, Variant::Ad, root);
    profile.split_manifest = split_path.clone();
    profile.data_dir = data_dir.clone();
    profile.out_dir = run_dir.clone();
    profile.model = default_model_config(EnvId::Pointrobot, Variant::Ad, Ablation::Full);
    profile.train = default_train_config(EnvId::Pointrobot, Variant::Ad, Ablation::Full);
    profile.train.steps = 12;
    profile.train.batch_size = 3;
    profile.train.log_interval = 4;
    profile.train.checkpoint_interval = 6;
    profile.eval = EvalConfig { n_episodes: 2, history_episodes: 1, seed: 0, deterministic_actions: true };
    let profile_path = root.join("profile.json");
    profile.save(&profile_path).unwrap();

    cli::cmd_train(&profile_path, false, false).unwrap();
    let ckpt = run_dir.join("final.t2mir");
    assert!(ckpt.exists());
    let csv = std::fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert!(csv.starts_with("step,imitation,balance,contrastive,total"));
    // 12 steps at log interval 4 -> 3 rows
    assert_eq!(csv.lines().count(), 4);

    // eval
    let eval_cfg_path = root.join("eval.json");
    std::fs::write(&eval_cfg_path, serde_json::to_string(&profile.eval).unwrap()).unwrap();
    let eval_dir = root.join("eval");
    cli::cmd_eval(&ckpt, &eval_cfg_path, &split_path, &eval_dir, true, false).unwrap();
    assert!(eval_dir.join("report.csv").exists());
    assert!(eval_dir.join("summary.json").exists());
    assert!(eval_dir.join("curve.svg").exists());
    // determinism under a fixed seed
    let summary1 = std::fs::read(eval_dir.join("summary.json")).unwrap();
    cli::cmd_eval(&ckpt, &eval_cfg_path, &split_path, &eval_dir, true, true).unwrap();
    assert_eq!(summary1, std::fs::read(eval_dir.join("summary.json")).unwrap());

    // analysis outputs
    let an_dir = root.join("analysis");
    cli::cmd_analyze(&ckpt, "conflict", &data_dir, &split_path, &an_dir, -0.05, 2, 0, false).unwrap();
    assert!(an_dir.join("conflict.csv").exists());
    let conflict: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(an_dir.join("conflict.json")).unwrap()).unwrap();
    assert_eq!(conflict["threshold"], -0.05);
    let frac = conflict["negative_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&frac));

    cli::cmd_analyze(&ckpt, "routing", &data_dir, &split_path, &an_dir, -0.05, 2, 0, false).unwrap();
    assert!(an_dir.join("routing.csv").exists());
    assert!(an_dir.join("separation.json").exists());
}

#[test]
fn resume_flag_continues_training() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let split_path = root.join("split.json");
    cli::cmd_split(EnvId::Pointrobot, 9, &split_path, false).unwrap();
    let data_dir = root.join("data");
    cli::cmd_collect(&split_path, Tier::Mixed, &data_dir, 6, 9, false).unwrap();

    let mut profile = cli::RunProfile::defaults(EnvId::Pointrobot, Variant::Ad, root);
    profile.split_manifest = split_path;
    profile.data_dir = data_dir;
    profile.out_dir = root.join("run");
    profile.train.steps = 6;
    profile.train.batch_size = 2;
    profile.train.log_interval = 1;
    profile.train.checkpoint_interval = 3;
    let profile_path = root.join("profile.json");
    profile.save(&profile_path).unwrap();
    cli::cmd_train(&profile_path, false, false).unwrap();

    // extend the budget and resume from the latest checkpoint
    profile.train.steps = 8;
    profile.save(&profile_path).unwrap();
    cli::cmd_train(&profile_path, true, false).unwrap();
    let csv = std::fs::read_to_string(root.join("run/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9); // header + 8 rows
}

#[test]
fn binary_exit_codes() {
    // usage error -> 2
    let out = bin().args(["split", "--env", "not-an-env", "--out", "/tmp/x.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // missing subcommand -> 2
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("s.json");
    let out = bin()
        .args(["split", "--env", "darkroom", "--seed", "1", "--out"])
        .arg(&split)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // no-clobber -> 3
    let out = bin()
        .args(["split", "--env", "darkroom", "--seed", "1", "--out"])
        .arg(&split)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // runtime failure (unreadable checkpoint) -> 4
    let bad = dir.path().join("bad.t2mir");
    std::fs::write(&bad, b"garbage").unwrap();
    let eval_cfg = dir.path().join("e.json");
    std::fs::write(&eval_cfg, r#"{"n_episodes":1,"history_episodes":1,"seed":0,"deterministic_actions":true}"#).unwrap();
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&bad)
        .args(["--eval-config"])
        .arg(&eval_cfg)
        .args(["--split"])
        .arg(&split)
        .args(["--out"])
        .arg(dir.path().join("eval_out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn t2mir_out_env_var_sets_output_root() {
    // resolved lazily by the library; keep the check process-local
    std::env::set_var("T2MIR_OUT", "/tmp/t2mir_root_test");
    assert_eq!(cli::output_root(), std::path::PathBuf::from("/tmp/t2mir_root_test"));
    std::env::remove_var("T2MIR_OUT");
    assert_eq!(cli::output_root(), std::path::PathBuf::from("out"));
}

#[test]
fn checkpoint_step_matches_loss_csv_rows() {
    use t2mir::checkpoint::load_checkpoint;
    use t2mir::data::{generate_trajectories, label_queries, DatasetManifest};
    use t2mir::envs::SplitManifest;
    use t2mir::model::PolicyModel;
    use t2mir::trainer::run_training;

    let split = SplitManifest::generate(EnvId::Pointrobot, 2);
    let manifest = DatasetManifest::new(EnvId::Pointrobot, Tier::Mixed, 6, 2);
    let dataset = generate_trajectories(&manifest, &split).unwrap();
    let queries = label_queries(&dataset, &split).unwrap();
    let mc = default_model_config(EnvId::Pointrobot, Variant::Ad, Ablation::Full);
    let mut tc = default_train_config(EnvId::Pointrobot, Variant::Ad, Ablation::Full);
    tc.steps = 12;
    tc.batch_size = 2;
    tc.log_interval = 3;
    tc.checkpoint_interval = 6;
    let dir = tempfile::tempdir().unwrap();
    let mut model: PolicyModel<f32> = PolicyModel::init(mc, 0).unwrap();
    run_training(&mut model, &dataset, &queries, &tc, dir.path(), false, None).unwrap();

    let ck = load_checkpoint(&dir.path().join("final.t2mir")).unwrap();
    let rows = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap().lines().count() - 1;
    assert_eq!(ck.step as usize, rows * tc.log_interval);
}

/// The prompted evaluation protocol: episode n's prompt is exactly episode
/// n-1's stored trajectory. Replays episode 2 by hand with episode 1's
/// trajectory as the prompt and checks the returns agree.
#[test]
fn dpt_eval_prompt_replay_equality() {
    use t2mir::data::{build_dpt_seq, ActionRecord, EpisodeView};
    use t2mir::envs::{pointrobot_reset, pointrobot_step, SplitManifest};
    use t2mir::evaluator::{evaluate_dpt, select_action};
    use t2mir::math::Rng;
    use t2mir::model::{HeadOutput, PolicyModel};

    let split = SplitManifest::generate(EnvId::Pointrobot, 3);
    let task = split.test_tasks()[0].clone();
    let mut mc = default_model_config(EnvId::Pointrobot, Variant::Dpt, Ablation::Full);
    mc.n_layers = 1;
    mc.d_model = 32;
    mc.n_heads = 2;
    mc.d_ff = 64;
    let model: PolicyModel<f32> = PolicyModel::init(mc, 5).unwrap();

    let cfg = t2mir::evaluator::EvalConfig {
        n_episodes: 2,
        history_episodes: 1,
        seed: 11,
        deterministic_actions: true,
    };
    let report = evaluate_dpt(&model, &[&task], &cfg).unwrap();

    // replay: episode 1 with an empty prompt, recording the trajectory
    let run_episode = |prompt: Option<EpisodeView>, ep: usize| -> (Vec<Vec<f64>>, Vec<ActionRecord>, Vec<f64>) {
        let mut env_rng = Rng::new(cfg.seed).fork(task.task_index as u64).fork(ep as u64);
        let mut act_rng = Rng::new(cfg.seed ^ 0xac7).fork(task.task_index as u64).fork(ep as u64);
        let mut state = pointrobot_reset(&mut env_rng);
        let (mut states, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
        let mut step = 0;
        loop {
            let seq = build_dpt_seq(
                EnvId::Pointrobot,
                prompt.as_ref().map(|e| EpisodeView { states: e.states, actions: e.actions, rewards: e.rewards }),
                state,
                (model.cfg.max_context_tokens - 1) / 3,
                task.task_index,
                None,
            );
            let out = model.dpt_forward(&seq).unwrap();
            let head = match &out.outputs[0].1 {
                HeadOutput::Mean(m) => HeadOutput::Mean(m.clone()),
                HeadOutput::Logits(l) => HeadOutput::Logits(l.clone()),
            };
            let action = select_action(&head, cfg.deterministic_actions, &mut act_rng);
            let ActionRecord::Continuous(av) = &action else { unreachable!() };
            let r = pointrobot_step(state, [av[0], av[1]], &task, step).unwrap();
            states.push(state.to_vec());
            actions.push(action.clone());
            rewards.push(r.reward);
            state = r.next_state;
            step = r.step_index;
            if r.done {
                break;
            }
        }
        (states, actions, rewards)
    };

    let (s1, a1, r1) = run_episode(None, 0);
    let ret1: f64 = r1.iter().sum();
    let (_, _, r2) = run_episode(Some(EpisodeView { states: &s1, actions: &a1, rewards: &r1 }), 1);
    let ret2: f64 = r2.iter().sum();
    assert!((report.per_task[0].returns[0] - ret1).abs() < 1e-9);
    assert!((report.per_task[0].returns[1] - ret2).abs() < 1e-9);
}
