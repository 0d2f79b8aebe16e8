use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::envs::go_to_target;

fn net_for(task: Task, seed: u64) -> PolicyNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PolicyNet::random(task.obs_dim(), 2, -0.5, &mut rng);
    net.body.w_out.as_mut_slice().iter_mut().for_each(|w| *w *= 50.0);
    net
}

fn quick(tasks: Vec<Task>, methods: Vec<MethodSpec>) -> ExperimentManifest {
    ExperimentManifest {
        tasks,
        methods,
        episodes_per_seed: 2,
        seeds: 2,
        env: EnvConfig {
            horizon: 15,
            ..EnvConfig::default()
        },
        attack: AttackConfig {
            iters: 3,
            ..AttackConfig::default()
        },
        ..ExperimentManifest::default()
    }
}

fn policies(tasks: &[Task]) -> BTreeMap<Task, PolicyNet<f64>> {
    tasks.iter().map(|t| (*t, net_for(*t, t.id()))).collect()
}

#[test]
fn scripted_controller_has_positive_reward() {
    let env = EnvConfig {
        hazard_count: 0,
        ..EnvConfig::for_task(Task::Goal)
    };
    let total: f64 = (0..20)
        .map(|e| run_episode(&env, e, false, |o, _| Ok(go_to_target(o))).unwrap().0)
        .sum();
    assert!(total / 20.0 > 0.0);
}

#[test]
fn identity_attack_matches_clean_run() {
    let env = EnvConfig {
        horizon: 40,
        ..EnvConfig::for_task(Task::Button)
    };
    let net = net_for(Task::Button, 1);
    let clean = evaluate(&net, &env, None, 3, 77).unwrap();
    for kind in AttackKind::ALL {
        let spec = AttackSpec {
            kind,
            cfg: AttackConfig {
                epsilon: 0.0,
                init_scale: 0.0,
                iters: 4,
                ..AttackConfig::default()
            },
            loss_override: None,
        };
        let attacked = evaluate(&net, &env, Some(&spec), 3, 77).unwrap();
        assert_eq!(attacked, clean, "{kind}");
    }
}

#[test]
fn single_episode_mean_is_its_sum() {
    let env = EnvConfig {
        horizon: 30,
        ..EnvConfig::for_task(Task::Circle)
    };
    let net = net_for(Task::Circle, 2);
    let ev = evaluate(&net, &env, None, 1, 5).unwrap();
    assert_eq!(ev.mean, ev.episode_rewards[0]);
}

#[test]
fn dimension_mismatch_is_error() {
    let env = EnvConfig::for_task(Task::Goal);
    let net = net_for(Task::Button, 2);
    assert!(matches!(evaluate(&net, &env, None, 1, 0), Err(Error::DimMismatch { .. })));
}

#[test]
fn matrix_row_count_and_determinism() {
    let m = ExperimentManifest {
        seeds: 1,
        ..quick(
            vec![Task::Goal],
            vec![MethodSpec::new(AttackKind::Pgd, 3), MethodSpec::new(AttackKind::Dapgd, 3)],
        )
    };
    let p = policies(&m.tasks);
    let a = run_matrix(&m, &p, None).unwrap();
    assert_eq!(a.table.rows.len(), 3);
    assert_eq!(a.table.rows[0].method, NO_ATTACK);
    let b = run_matrix(&m, &p, None).unwrap();
    assert_eq!(a.table.to_csv_string().unwrap(), b.table.to_csv_string().unwrap());
}

#[test]
fn no_attack_row_ignores_attack_settings() {
    let methods = vec![MethodSpec::new(AttackKind::Pgd, 3)];
    let m1 = quick(vec![Task::Circle], methods.clone());
    let mut m2 = quick(vec![Task::Circle], methods);
    m2.attack.epsilon = 0.3;
    m2.attack.alpha = 0.05;
    m2.attack.seed = 12345;
    let p = policies(&m1.tasks);
    let r1 = run_matrix(&m1, &p, None).unwrap();
    let r2 = run_matrix(&m2, &p, None).unwrap();
    assert_eq!(r1.table.rows[0], r2.table.rows[0]);
    assert_ne!(r1.table.rows[1], r2.table.rows[1]);
}

#[test]
fn table_entries_recompute_from_episode_dump() {
    let m = quick(
        vec![Task::Goal, Task::Button],
        vec![MethodSpec::new(AttackKind::Fgsm, 0), MethodSpec::new(AttackKind::MiFgsm, 3)],
    );
    let run = run_matrix(&m, &policies(&m.tasks), None).unwrap();
    assert_eq!(run.table.rows.len(), 6);
    for row in &run.table.rows {
        let mut per_seed = Vec::new();
        for s in 0..row.seeds {
            let eps: Vec<f64> = run
                .episodes
                .iter()
                .filter(|e| e.task == row.task && e.method == row.method && e.iters == row.iters && e.seed_index == s)
                .map(|e| e.reward)
                .collect();
            assert_eq!(eps.len(), row.episodes);
            per_seed.push(eps.iter().sum::<f64>() / eps.len() as f64);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let var = per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (per_seed.len() - 1) as f64;
        assert!((row.mean_reward - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        assert!((row.std - var.sqrt()).abs() <= 1e-12 * var.sqrt().max(1.0));
    }
    let fgsm = run.table.row("Goal", "FGSM", None).unwrap();
    assert!(fgsm.iters.is_none());
}

#[test]
fn ablation_grid_shape() {
    let mut m = quick(vec![Task::Button], vec![]);
    m.seeds = 1;
    m.episodes_per_seed = 1;
    m.ablation.iters = vec![1, 2, 3];
    let run = run_ablation(&m, &policies(&[Task::Button])).unwrap();
    assert_eq!(run.table.rows.len(), 12);
    for n in [1, 2, 3] {
        assert!(run
            .table
            .rows
            .iter()
            .any(|r| r.divergence.as_deref() == Some("BD") && r.iters == Some(n)));
    }
    let md = run.table.to_markdown();
    assert!(md.contains("Ranking at N=3"));
}

#[test]
fn post_defense_matrix_has_defended_row() {
    let m = quick(vec![Task::Goal], vec![MethodSpec::new(AttackKind::Pgd, 3)]);
    let run = run_matrix(&m, &policies(&m.tasks), Some(2)).unwrap();
    let labels: Vec<&str> = run.table.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(labels, vec![NO_ATTACK, DEFENDED_PGD, "PGD"]);
    assert_eq!(run.table.rows[1].iters, Some(2));
}

#[test]
fn failing_rows_are_marked_and_run_continues() {
    let m = quick(vec![Task::Goal, Task::Circle], vec![MethodSpec::new(AttackKind::Pgd, 2)]);
    let mut p = policies(&m.tasks);
    p.insert(Task::Goal, net_for(Task::Button, 9));
    let run = run_matrix(&m, &p, None).unwrap();
    for r in &run.table.rows {
        if r.task == "Goal" {
            assert!(r.error.is_some() && r.mean_reward.is_nan());
        } else {
            assert!(r.error.is_none() && r.mean_reward.is_finite());
        }
    }
    assert!(run.table.to_markdown().contains("error"));
}

#[test]
fn manifest_json_round_trip_and_validation() {
    let m = ExperimentManifest::default();
    let back: ExperimentManifest = serde_json::from_str(&m.to_json().unwrap()).unwrap();
    assert_eq!(back, m);
    let partial: ExperimentManifest = serde_json::from_str(r#"{"tasks": ["Goal"], "seeds": 2}"#).unwrap();
    assert_eq!(partial.seeds, 2);
    assert_eq!(partial.episodes_per_seed, 100);
    assert!(ExperimentManifest { seeds: 0, ..m.clone() }.validate().is_err());
    assert!(ExperimentManifest { episodes_per_seed: 0, ..m.clone() }.validate().is_err());
    let bad_override = ExperimentManifest {
        methods: vec![MethodSpec {
            attack: AttackKind::Pgd,
            iters: Some(5),
            loss_override: Some(DivergenceKind::Kl),
        }],
        ..m.clone()
    };
    assert!(bad_override.validate().is_err());
    assert!(serde_json::from_str::<ExperimentManifest>(r#"{"unknown": 1}"#).is_err());
    let dir = tempfile::tempdir().unwrap();
    let with_missing = ExperimentManifest {
        output_dir: dir.path().to_path_buf(),
        ..m
    };
    assert!(with_missing.check_weights(&[Task::Goal], false).is_err());
}
