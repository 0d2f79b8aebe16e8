//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stdout (written past the test harness capture) and then asserts.
//!
//! The heavy criteria share one set of trained policies and one benign
//! attack matrix, built lazily by whichever test needs them first. All
//! tests hold a single lock so runtimes are measured without contention.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polattack::attacks::{dapgd, run_attack, AttackConfig, AttackKind};
use polattack::harness::{self, ExperimentManifest, GradcheckOptions, MatrixRun, MethodSpec, ResultTable, NO_ATTACK};
use polattack::linalg::Matrix;
use polattack::policy::LinearGaussianPolicy;
use polattack::{EnvConfig, PolicyNet, StochasticPolicy, Task};

// Pinned tolerances and budgets.
const QUADRATURE_TOL: f64 = 1e-6;
const REFERENCE_TOL: f64 = 1e-9;
const CLOSED_FORM_REL_TOL: f64 = 1e-5;
const MONTE_CARLO_REL_TOL: f64 = 1e-3;
const BALL_SLACK: f64 = 1e-12;
const INVOCATIONS_PER_ATTACK: usize = 1000;
const C1_BUDGET: Duration = Duration::from_secs(10);
const C2_BUDGET: Duration = Duration::from_secs(30);
const C3_BUDGET: Duration = Duration::from_secs(60);
const C5_BUDGET: Duration = Duration::from_secs(45 * 60);
const C6_BUDGET: Duration = Duration::from_secs(30 * 60);
const C7_BUDGET: Duration = Duration::from_secs(15 * 60);

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u8, name: &str, passed: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let verdict = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "criterion {n}: {verdict} ({name}) {detail}");
    let _ = out.flush();
}

fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = write!(out, "{text}");
    let _ = out.flush();
}

fn out_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

// ---------------------------------------------------------------------------
// Independent references in test code

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let u = (x - mean) / std;
    (-0.5 * u * u).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Composite Simpson rule on a fine uniform grid.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for k in 1..n {
        s += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn criterion_1_divergence_correctness() {
    let _g = serial();
    let start = Instant::now();
    let summary = harness::gradcheck(&GradcheckOptions {
        pairs: 200,
        nets: 0,
        ..GradcheckOptions::default()
    });
    let closed: Vec<_> = summary
        .checks
        .iter()
        .filter(|c| c.name.starts_with("quadrature/") || c.name.starts_with("reference/"))
        .collect();
    let closed_ok = closed.len() == 6 && closed.iter().all(|c| c.passed && c.worst <= QUADRATURE_TOL);

    // Reference values recomputed here from the defining integrals.
    let (p, q) = (|x| normal_pdf(x, 0.0, 1.0), |x| normal_pdf(x, 1.0, 1.0));
    let bd_ref = -simpson(|x| (p(x) * q(x)).sqrt(), -20.0, 21.0, 40_000).ln();
    let kl_ref = simpson(|x| p(x) * (p(x) / q(x)).ln(), -20.0, 21.0, 40_000);
    let one = polattack::DiagGaussian::new(vec![0.0], vec![1.0]).unwrap();
    let shifted = polattack::DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
    let bd = polattack::divergence::bhattacharyya(&one, &shifted).unwrap().value;
    let kl = polattack::divergence::kl(&one, &shifted).unwrap().value;
    let w2 = polattack::divergence::w2(&one, &shifted).unwrap().value;
    let refs_ok = (bd_ref - 0.125).abs() <= REFERENCE_TOL
        && (kl_ref - 0.5).abs() <= REFERENCE_TOL
        && (bd - bd_ref).abs() <= REFERENCE_TOL
        && (kl - kl_ref).abs() <= REFERENCE_TOL
        && (w2 - 1.0).abs() <= REFERENCE_TOL;

    let elapsed = start.elapsed();
    let passed = closed_ok && refs_ok && elapsed < C1_BUDGET;
    let worst = closed.iter().map(|c| c.worst).fold(0.0f64, f64::max);
    report(
        1,
        "divergence correctness",
        passed,
        &format!("worst quadrature gap {worst:.2e}; BD {bd} KL {kl} W2 {w2}; {:.1}s", elapsed.as_secs_f64()),
    );
    assert!(passed, "{}", summary.render());
}

#[test]
fn criterion_2_gradient_correctness() {
    let _g = serial();
    let start = Instant::now();
    let summary = harness::gradcheck(&GradcheckOptions {
        pairs: 0,
        nets: 100,
        ..GradcheckOptions::default()
    });
    let heads: Vec<_> = summary
        .checks
        .iter()
        .filter(|c| c.name.starts_with("input-grad/"))
        .collect();
    let tol_ok = heads.iter().all(|c| {
        let pinned = if c.name.ends_with("/JS") {
            MONTE_CARLO_REL_TOL
        } else {
            CLOSED_FORM_REL_TOL
        };
        c.passed && c.worst <= pinned
    });
    let elapsed = start.elapsed();
    let passed = heads.len() == 5 && tol_ok && elapsed < C2_BUDGET;
    let detail: Vec<String> = heads.iter().map(|c| format!("{} {:.1e}", c.name, c.worst)).collect();
    report(
        2,
        "gradient correctness",
        passed,
        &format!("{}; {:.1}s", detail.join(", "), elapsed.as_secs_f64()),
    );
    assert!(passed, "{}", summary.render());
}

fn random_policy(rng: &mut ChaCha8Rng, obs: usize) -> Box<dyn StochasticPolicy<f64>> {
    let act = rng.random_range(1..=3);
    let log_std = rng.random_range(-2.0..0.5);
    if rng.random_bool(0.5) {
        let mut net = PolicyNet::random(obs, act, log_std, rng);
        let gain = rng.random_range(1.0..100.0);
        net.body.w_out.as_mut_slice().iter_mut().for_each(|w| *w *= gain);
        Box::new(net)
    } else {
        Box::new(LinearGaussianPolicy {
            weight: Matrix::from_fn(act, obs, |_, _| rng.random_range(-2.0..2.0)),
            bias: (0..act).map(|_| rng.random_range(-1.0..1.0)).collect(),
            log_std: vec![log_std; act],
        })
    }
}

#[test]
fn criterion_3_constraint_property() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for kind in AttackKind::ALL {
        for i in 0..INVOCATIONS_PER_ATTACK {
            let obs = rng.random_range(1..=12);
            let policy = random_policy(&mut rng, obs);
            let s: Vec<f64> = (0..obs).map(|_| rng.random_range(-5.0..5.0)).collect();
            let cfg = AttackConfig {
                alpha: rng.random_range(1e-3..0.5),
                iters: rng.random_range(0..=12),
                epsilon: rng.random_range(0.0..0.5),
                init_scale: rng.random_range(0.0..0.2),
                eot_samples: rng.random_range(1..=4),
                js_samples: 16,
                seed: rng.random(),
                ..AttackConfig::default()
            };
            match run_attack(kind, None, policy.as_ref(), &s, &cfg) {
                Ok(adv) => {
                    let dist = adv.linf_distance(&s);
                    worst_excess = worst_excess.max(dist - cfg.epsilon);
                    if dist > cfg.epsilon + BALL_SLACK {
                        failures.push(format!("{kind} #{i}: {dist} > {}", cfg.epsilon));
                    }
                }
                Err(e) => failures.push(format!("{kind} #{i}: {e}")),
            }
        }
    }
    // Identity: iterative attacks with N = 0 and no initial noise; FGSM,
    // which has no iteration count, with a zero budget.
    for kind in AttackKind::ALL {
        for _ in 0..50 {
            let obs = rng.random_range(1..=12);
            let policy = random_policy(&mut rng, obs);
            let s: Vec<f64> = (0..obs).map(|_| rng.random_range(-5.0..5.0)).collect();
            let cfg = AttackConfig {
                iters: 0,
                init_scale: 0.0,
                epsilon: if kind.is_iterative() { 0.1 } else { 0.0 },
                seed: rng.random(),
                ..AttackConfig::default()
            };
            match run_attack(kind, None, policy.as_ref(), &s, &cfg) {
                Ok(adv) if adv.as_slice() == &s[..] => {}
                Ok(_) => failures.push(format!("{kind}: identity configuration moved the state")),
                Err(e) => failures.push(format!("{kind}: {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    let passed = failures.is_empty() && elapsed < C3_BUDGET;
    report(
        3,
        "constraint property",
        passed,
        &format!(
            "{} invocations, max (dist - eps) {worst_excess:.2e}, {} failures; {:.1}s",
            8 * INVOCATIONS_PER_ATTACK,
            failures.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(passed, "{:?}", &failures[..failures.len().min(10)]);
}

#[test]
fn criterion_4_dapgd_linear_first_step() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for trial in 0..200u64 {
        let (obs, act) = (rng.random_range(2..=10), rng.random_range(1..=4));
        let sigma: f64 = rng.random_range(0.2..2.0);
        let w: Vec<Vec<f64>> = (0..act)
            .map(|_| (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let policy = LinearGaussianPolicy {
            weight: Matrix::from_rows(&w).unwrap(),
            bias: (0..act).map(|_| rng.random_range(-1.0..1.0)).collect(),
            log_std: vec![sigma.ln(); act],
        };
        let s: Vec<f64> = (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = AttackConfig {
            iters: 0,
            seed: trial,
            ..AttackConfig::default()
        };
        let s0 = dapgd(&policy, &s, &base).unwrap().into_inner();
        let s1 = dapgd(&policy, &s, &AttackConfig { iters: 1, ..base.clone() })
            .unwrap()
            .into_inner();
        // Hand-derived: d/ds* of (1/8)|W(s* - s)|^2 / sigma^2 is WᵀW(s* - s)/(4 sigma^2).
        let sig2 = policy.log_std[0].exp().powi(2);
        let delta: Vec<f64> = s0.iter().zip(&s).map(|(a, b)| a - b).collect();
        let wd: Vec<f64> = w.iter().map(|row| row.iter().zip(&delta).map(|(a, b)| a * b).sum()).collect();
        for j in 0..obs {
            let g: f64 = (0..act).map(|i| w[i][j] * wd[i]).sum::<f64>() / (4.0 * sig2);
            if g.abs() < 1e-12 {
                continue;
            }
            let expected = (s0[j] + base.alpha * g.signum()).clamp(s[j] - base.epsilon, s[j] + base.epsilon);
            checked += 1;
            if (s1[j] - expected).abs() > 1e-15 || (s1[j] - s0[j]).signum() != g.signum() {
                mismatches += 1;
            }
        }
    }
    let passed = checked > 0 && mismatches == 0;
    report(
        4,
        "DAPGD linear first step",
        passed,
        &format!("{checked} components checked, {mismatches} mismatches"),
    );
    assert!(passed);
}

// ---------------------------------------------------------------------------
// Trained policies and the benign attack matrix

struct Trained {
    manifest: ExperimentManifest,
    policies: BTreeMap<Task, PolicyNet<f64>>,
    seconds: f64,
}

fn manifest() -> ExperimentManifest {
    ExperimentManifest {
        output_dir: out_dir(),
        ..ExperimentManifest::default()
    }
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let m = manifest();
        for &task in &m.tasks {
            let out = harness::train_task(&m, task).expect("training");
            let b = &out.baseline;
            emit(&format!(
                "trained {task}: policy {:.3} vs random {:.3}±{:.3} (beats by 3 std: {})\n",
                b.policy_mean, b.random_mean, b.random_std, b.beats_random
            ));
        }
        let policies = harness::load_policies(&m, &m.tasks, false).expect("loading policies");
        Trained {
            manifest: m,
            policies,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn benign_matrix() -> &'static (MatrixRun, f64) {
    static CELL: OnceLock<(MatrixRun, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = trained();
        let start = Instant::now();
        let run = harness::run_matrix(&t.manifest, &t.policies, None).expect("attack matrix");
        harness::write_run(&t.manifest.output_dir, "attack_matrix", &run).expect("writing matrix");
        (run, start.elapsed().as_secs_f64())
    })
}

fn mean_of(table: &ResultTable, task: Task, method: &str, iters: Option<usize>) -> f64 {
    table
        .row(task.label(), method, iters)
        .map_or(f64::NAN, |r| r.mean_reward)
}

#[test]
fn criterion_5_attack_effectiveness() {
    let _g = serial();
    let t = trained();
    let (run, matrix_secs) = benign_matrix();
    let table = &run.table;
    emit(&format!("\nAttack matrix (benign policies)\n{}\n", table.to_markdown()));

    let mut problems = Vec::new();
    let mut dapgd_wins = 0;
    for &task in &t.manifest.tasks {
        let clean = mean_of(table, task, NO_ATTACK, None);
        for spec in &t.manifest.methods {
            let iters = spec.effective_iters(t.manifest.attack.iters);
            let m = mean_of(table, task, &spec.label(), iters);
            if !(m < clean) {
                problems.push(format!("{task} {}: {m:.3} not below clean {clean:.3}", spec.label()));
            }
        }
        let pgd_drop = clean - mean_of(table, task, "PGD", Some(50));
        let dapgd_drop = clean - mean_of(table, task, "DAPGD", Some(50));
        if dapgd_drop >= pgd_drop {
            dapgd_wins += 1;
        }
        emit(&format!(
            "{task}: reward drop DAPGD {dapgd_drop:.3} vs PGD {pgd_drop:.3}\n"
        ));
    }
    let total = t.seconds + matrix_secs;
    let passed = problems.is_empty() && dapgd_wins >= 2 && total <= C5_BUDGET.as_secs_f64();
    report(
        5,
        "attack effectiveness",
        passed,
        &format!(
            "{} rows below clean violated, DAPGD drop >= PGD drop on {dapgd_wins}/3 tasks; {:.0}s (train {:.0}s)",
            problems.len(),
            total,
            t.seconds
        ),
    );
    assert!(passed, "{problems:?}");
}

#[test]
fn criterion_6_post_defense() {
    let _g = serial();
    let t = trained();
    let (benign, _) = benign_matrix();
    let start = Instant::now();
    let m = &t.manifest;
    for &task in &m.tasks {
        let out = harness::defend_task(m, task).expect("adversarial training");
        emit(&format!("defended {task}: clean reward {:.3}\n", out.baseline.policy_mean));
    }
    let defended = harness::load_policies(m, &m.tasks, true).expect("loading defended policies");
    let run = harness::run_matrix(m, &defended, Some(m.defense.iters)).expect("post-defense matrix");
    harness::write_run(&m.output_dir, "post_defense_matrix", &run).expect("writing matrix");
    emit(&format!("\nPost-defense matrix\n{}\n", run.table.to_markdown()));

    let mut more_robust = 0;
    for &task in &m.tasks {
        let before = mean_of(&benign.table, task, "PGD", Some(50));
        let after = mean_of(&run.table, task, "PGD", Some(50));
        if after > before {
            more_robust += 1;
        }
        emit(&format!("{task}: under PGD benign {before:.3} vs defended {after:.3}\n"));
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = more_robust >= 2 && secs <= C6_BUDGET.as_secs_f64();
    report(
        6,
        "post-defense robustness",
        passed,
        &format!("defended beats benign under PGD on {more_robust}/3 tasks; {secs:.0}s"),
    );
    assert!(passed);
}

#[test]
fn criterion_7_divergence_ablation() {
    let _g = serial();
    let t = trained();
    let start = Instant::now();
    let run = harness::run_ablation(&t.manifest, &t.policies).expect("ablation");
    harness::write_run(&t.manifest.output_dir, "ablation", &run).expect("writing ablation");
    emit(&format!("\nDivergence ablation\n{}\n", run.table.to_markdown()));
    let secs = start.elapsed().as_secs_f64();
    let a = &t.manifest.ablation;
    let complete = run.table.rows.len() == a.divergences.len() * a.iters.len()
        && run.table.rows.iter().all(|r| r.error.is_none() && r.mean_reward.is_finite());
    let bd_ranks: Vec<String> = run
        .table
        .ablation_ranking()
        .iter()
        .map(|(n, ranking)| {
            let pos = ranking.iter().position(|(d, _)| d == "BD").map_or(0, |p| p + 1);
            format!("N={}: BD {pos}/{}", n.unwrap_or(0), ranking.len())
        })
        .collect();
    let passed = complete && secs <= C7_BUDGET.as_secs_f64();
    report(
        7,
        "divergence ablation",
        passed,
        &format!("grid complete: {complete}; {}; {secs:.0}s", bd_ranks.join(", ")),
    );
    assert!(passed);
}

// ---------------------------------------------------------------------------
// Determinism through the command-line tool

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_polattack"))
        .args(args)
        .output()
        .expect("running polattack");
    assert!(
        out.status.success(),
        "polattack {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn csv_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let m = ExperimentManifest {
        tasks: vec![Task::Goal, Task::Button],
        methods: vec![
            MethodSpec::new(AttackKind::Fgsm, 0),
            MethodSpec::new(AttackKind::Pgd, 5),
            MethodSpec::new(AttackKind::EotPgd, 5),
            MethodSpec::new(AttackKind::Dapgd, 5),
        ],
        episodes_per_seed: 3,
        seeds: 2,
        env: EnvConfig {
            horizon: 40,
            ..EnvConfig::default()
        },
        trainer: polattack::training::TrainerConfig {
            rollout_steps: 512,
            minibatch: 64,
            total_steps: 1024,
            baseline_episodes: 3,
            ..Default::default()
        },
        defense: harness::DefenseConfig {
            iters: 3,
            total_steps: 512,
        },
        ablation: harness::AblationConfig {
            task: Task::Button,
            iters: vec![2, 4],
            ..Default::default()
        },
        ..ExperimentManifest::default()
    };
    let manifest_path = tmp.path().join("manifest.json");
    std::fs::write(&manifest_path, m.to_json().unwrap()).unwrap();
    let manifest = manifest_path.to_str().unwrap();

    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let dir = tmp.path().join(name);
        let d = dir.to_str().unwrap();
        for cmd in ["train", "defend", "attack-eval", "ablate"] {
            cli(&[cmd, "--manifest", manifest, "--out", d]);
        }
        cli(&["attack-eval", "--defended", "--manifest", manifest, "--out", d]);
        let matrix = dir.join("attack_matrix.csv");
        let rendered = dir.join("attack_matrix_rerendered.csv");
        cli(&[
            "report",
            "--input",
            matrix.to_str().unwrap(),
            "--format",
            "csv",
            "--out",
            rendered.to_str().unwrap(),
        ]);
        outputs.push(csv_files(&dir));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    let differing: Vec<_> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let rendered_same = a.get(Path::new("attack_matrix.csv")) == a.get(Path::new("attack_matrix_rerendered.csv"));
    let passed = a.len() >= 8 && a.keys().eq(b.keys()) && differing.is_empty() && rendered_same;
    report(
        8,
        "determinism",
        passed,
        &format!("{} CSV files compared across two runs, {} differ", a.len(), differing.len()),
    );
    assert!(passed, "{differing:?}");
}
