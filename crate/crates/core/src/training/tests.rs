use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::envs::Task;
use crate::oracle::{central_difference, relative_error, FD_STEP};

fn tiny(total: usize) -> TrainerConfig {
    TrainerConfig {
        rollout_steps: 256,
        minibatch: 64,
        epochs_per_batch: 2,
        total_steps: total,
        baseline_episodes: 2,
        seed: 4,
        ..TrainerConfig::default()
    }
}

#[test]
fn surrogate_parameter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = PolicyNet::random(5, 2, -0.3, &mut rng);
    let obs: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let actions: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| {
            let d = net.distribution(o).unwrap();
            d.mean.iter().map(|m| m + rng.random_range(-0.5..0.5)).collect()
        })
        .collect();
    let old: Vec<f64> = obs
        .iter()
        .zip(&actions)
        .map(|(o, a)| net.distribution(o).unwrap().log_prob(a).unwrap() + rng.random_range(-0.1..0.1))
        .collect();
    let objective = Surrogate {
        actions: actions.iter().map(|a| a.as_slice()).collect(),
        old_log_probs: old,
        advantages: (0..6).map(|_| rng.random_range(-2.0..2.0)).collect(),
        clip: 0.2,
        entropy_coef: 0.01,
    };
    let (_, grad) = param_gradient(&net, &obs, &objective).unwrap();

    // log_std block and the output bias, checked against central differences
    let loss_with = |n: &PolicyNet<f64>| param_gradient(n, &obs, &objective).unwrap().0;
    let fd_log_std = central_difference(
        |x| {
            let mut n = net.clone();
            n.log_std = x.to_vec();
            loss_with(&n)
        },
        &net.log_std,
        FD_STEP,
    );
    assert!(relative_error(&grad.log_std, &fd_log_std) < 1e-6);
    let fd_bias = central_difference(
        |x| {
            let mut n = net.clone();
            n.body.b_out = x.to_vec();
            loss_with(&n)
        },
        &net.body.b_out,
        FD_STEP,
    );
    assert!(relative_error(&grad.body.b_out, &fd_bias) < 1e-6);
    let w1 = net.body.w1.as_slice().to_vec();
    let fd_w1 = central_difference(
        |x| {
            let mut n = net.clone();
            n.body.w1.as_mut_slice().copy_from_slice(x);
            loss_with(&n)
        },
        &w1,
        FD_STEP,
    );
    assert!(relative_error(grad.body.w1.as_slice(), &fd_w1) < 1e-6);
}

#[test]
fn seeded_training_is_reproducible() {
    let env = EnvConfig::for_task(Task::Goal);
    let a = train(&env, &tiny(512)).unwrap();
    let b = train(&env, &tiny(512)).unwrap();
    assert_eq!(a.policy, b.policy);
    assert_eq!(format!("{:?}", a.log), format!("{:?}", b.log));
    assert_eq!(a.log.len(), 2);
    assert_eq!(a.log[1].step, 512);
}

#[test]
fn log_std_stays_clamped() {
    let env = EnvConfig::for_task(Task::Circle);
    let cfg = TrainerConfig {
        learning_rate: 0.5,
        init_log_std: 1.9,
        entropy_coef: 10.0,
        ..tiny(512)
    };
    let out = train(&env, &cfg).unwrap();
    assert!(out.policy.log_std.iter().all(|v| (-10.0..=2.0).contains(v)));
}

#[test]
fn zero_budget_attack_is_plain_continued_training() {
    let env = EnvConfig::for_task(Task::Button);
    let warm = train(&env, &tiny(256)).unwrap();
    let cfg = TrainerConfig { seed: 9, ..tiny(256) };
    let attack = AttackConfig {
        epsilon: 0.0,
        iters: 3,
        ..AttackConfig::default()
    };
    let defended = adversarial_train(&env, &cfg, &attack, warm.policy.clone(), warm.value.clone()).unwrap();
    let plain = train_from(&env, &cfg, warm.policy, warm.value, None).unwrap();
    assert_eq!(defended.policy, plain.policy);
    assert_eq!(format!("{:?}", defended.log), format!("{:?}", plain.log));
}

#[test]
fn attack_changes_training() {
    let env = EnvConfig::for_task(Task::Goal);
    let warm = train(&env, &tiny(256)).unwrap();
    let attack = AttackConfig {
        iters: 3,
        ..AttackConfig::default()
    };
    let defended = adversarial_train(&env, &tiny(256), &attack, warm.policy.clone(), warm.value.clone()).unwrap();
    let plain = train_from(&env, &tiny(256), warm.policy, warm.value, None).unwrap();
    assert_ne!(defended.policy, plain.policy);
}

#[test]
fn mismatched_policy_rejected() {
    let env = EnvConfig::for_task(Task::Goal);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let policy = PolicyNet::random(34, 2, -0.5, &mut rng);
    let value = ValueNet::random(34, &mut rng);
    assert!(matches!(
        train_from(&env, &tiny(256), policy, value, None),
        Err(Error::DimMismatch { .. })
    ));
}

#[test]
fn invalid_config_rejected() {
    for cfg in [
        TrainerConfig { gamma: 0.0, ..Default::default() },
        TrainerConfig { gamma: 1.1, ..Default::default() },
        TrainerConfig { clip_ratio: 1.0, ..Default::default() },
        TrainerConfig { minibatch: 0, ..Default::default() },
    ] {
        assert!(cfg.validate().is_err());
    }
}

#[test]
fn log_csv_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let rows = vec![LogRow {
        step: 1,
        mean_episode_reward: 0.5,
        policy_loss: 0.1,
        value_loss: 0.2,
        entropy: 1.0,
    }];
    write_log(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "step,mean_episode_reward,policy_loss,value_loss,entropy"
    );
}
