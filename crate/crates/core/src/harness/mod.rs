//! Experiment runner: evaluation under attack, attack matrices, the
//! divergence ablation, gradient checks and table output.
//!
//! Seeds are derived, never drawn: seed index `i` of task `t` uses
//! `derive(master, t, i)`; episode `e` resets the environment from
//! `derive(seed_i, e)` and samples actions from `derive(seed_i, e, 0xAC7)`.
//! Neither depends on the attack, so every method in a matrix sees the same
//! layouts and action noise. The attack at step `k` is seeded with
//! `derive(seed_i, method, iters, divergence, e, k)`.

mod gradcheck;
mod manifest;
mod report;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub use gradcheck::{
    gradcheck, gradcheck_with, CheckResult, DivergenceFn, GradcheckOptions, GradcheckSummary, SUITE_SIZE,
};
pub use manifest::{value_path, AblationConfig, DefenseConfig, ExperimentManifest, MethodSpec, PolicyPaths};
pub use report::{ResultRow, ResultTable, CSV_COLUMNS, NO_ATTACK};

use crate::attacks::{run_attack, AttackConfig, AttackKind};
use crate::divergence::DivergenceKind;
use crate::envs::{EnvConfig, Task};
use crate::error::{Error, Result};
use crate::policy::{PolicyNet, StochasticPolicy};
use crate::rollout::{mean_std, run_episode};
use crate::seed::derive;
use crate::training::{self, TrainOutput};
use crate::weights;

const ACTION_STREAM: u64 = 0xAC7;

/// A fully specified attack for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub cfg: AttackConfig,
    pub loss_override: Option<DivergenceKind>,
}

impl AttackSpec {
    fn stream_id(&self) -> [u64; 3] {
        let div = self.loss_override.map_or(0, |d| 1 + DivergenceKind::ALL.iter().position(|k| *k == d).unwrap_or(0) as u64);
        [self.kind.id(), self.cfg.iters as u64, div]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    pub episode_rewards: Vec<f64>,
}

/// Mean undiscounted episode reward of `net` over `episodes` episodes.
/// Under attack the policy acts on the adversarial observation, freshly
/// computed at every step, while the environment advances on the true state.
pub fn evaluate(
    net: &PolicyNet<f64>,
    env: &EnvConfig,
    attack: Option<&AttackSpec>,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    if net.obs_dim() != env.obs_dim() {
        return Err(Error::DimMismatch {
            context: "policy input vs environment observation",
            expected: env.obs_dim(),
            got: net.obs_dim(),
        });
    }
    let mut rewards = Vec::with_capacity(episodes);
    for e in 0..episodes as u64 {
        let mut noise = ChaCha8Rng::seed_from_u64(derive(&[seed, e, ACTION_STREAM]));
        let (total, _) = run_episode(env, derive(&[seed, e]), false, |obs, t| {
            let acted = match attack {
                Some(spec) => {
                    let [kind, iters, div] = spec.stream_id();
                    let cfg = AttackConfig {
                        seed: derive(&[seed, kind, iters, div, e, t as u64]),
                        ..spec.cfg.clone()
                    };
                    run_attack(spec.kind, spec.loss_override, net, obs, &cfg)?
                }
                None => obs.clone(),
            };
            let dist = net.distribution(&acted)?;
            let z: Vec<f64> = (0..dist.dim()).map(|_| StandardNormal.sample(&mut noise)).collect();
            let a = dist.sample(&z)?;
            Ok([a[0], a[1]])
        })?;
        rewards.push(total);
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
    Ok(Evaluation {
        mean,
        episode_rewards: rewards,
    })
}

/// Per-episode reward record, for recomputing table entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub task: String,
    pub method: String,
    pub iters: Option<usize>,
    pub divergence: Option<String>,
    pub seed_index: usize,
    pub episode: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixRun {
    pub table: ResultTable,
    pub episodes: Vec<EpisodeRecord>,
}

impl MatrixRun {
    pub fn write_episodes(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["task", "method", "iters", "divergence", "seed_index", "episode", "reward"])?;
        for r in &self.episodes {
            w.write_record([
                r.task.clone(),
                r.method.clone(),
                r.iters.map_or_else(|| "-".into(), |n| n.to_string()),
                r.divergence.clone().unwrap_or_default(),
                r.seed_index.to_string(),
                r.episode.to_string(),
                r.reward.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One table row to compute.
#[derive(Debug, Clone)]
struct RowJob {
    task: Task,
    method: String,
    iters: Option<usize>,
    divergence: Option<String>,
    attack: Option<AttackSpec>,
    episodes: usize,
    seeds: usize,
}

struct RowOutcome {
    row: ResultRow,
    episodes: Vec<EpisodeRecord>,
}

fn run_row(job: &RowJob, net: &PolicyNet<f64>, m: &ExperimentManifest) -> RowOutcome {
    let env = m.env_for(job.task);
    let mut per_seed = Vec::with_capacity(job.seeds);
    let mut records = Vec::new();
    let mut error = None;
    for i in 0..job.seeds {
        let seed = derive(&[m.master_seed, job.task.id(), i as u64]);
        match evaluate(net, &env, job.attack.as_ref(), job.episodes, seed) {
            Ok(ev) => {
                for (e, r) in ev.episode_rewards.iter().enumerate() {
                    records.push(EpisodeRecord {
                        task: job.task.to_string(),
                        method: job.method.clone(),
                        iters: job.iters,
                        divergence: job.divergence.clone(),
                        seed_index: i,
                        episode: e,
                        reward: *r,
                    });
                }
                per_seed.push(ev.mean);
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let (mean_reward, std) = if error.is_some() {
        (f64::NAN, f64::NAN)
    } else {
        mean_std(&per_seed)
    };
    RowOutcome {
        row: ResultRow {
            task: job.task.to_string(),
            method: job.method.clone(),
            iters: job.iters,
            mean_reward,
            std,
            episodes: job.episodes,
            seeds: job.seeds,
            divergence: job.divergence.clone(),
            error,
        },
        episodes: records,
    }
}

fn run_jobs(jobs: &[RowJob], policies: &BTreeMap<Task, PolicyNet<f64>>, m: &ExperimentManifest) -> Result<MatrixRun> {
    for job in jobs {
        if !policies.contains_key(&job.task) {
            return Err(Error::InvalidConfig(format!("no policy loaded for {}", job.task)));
        }
    }
    let outcomes: Vec<RowOutcome> = jobs
        .par_iter()
        .map(|job| run_row(job, &policies[&job.task], m))
        .collect();
    let mut run = MatrixRun::default();
    for o in outcomes {
        run.table.rows.push(o.row);
        run.episodes.extend(o.episodes);
    }
    run.table.check_unique()?;
    Ok(run)
}

fn method_job(m: &ExperimentManifest, task: Task, spec: &MethodSpec, label: String) -> RowJob {
    let iters = spec.effective_iters(m.attack.iters);
    RowJob {
        task,
        method: label,
        iters,
        divergence: None,
        attack: Some(AttackSpec {
            kind: spec.attack,
            cfg: AttackConfig {
                iters: iters.unwrap_or(m.attack.iters),
                ..m.attack.clone()
            },
            loss_override: spec.loss_override,
        }),
        episodes: m.episodes_per_seed,
        seeds: m.seeds,
    }
}

/// Label of the defending attack's row in a post-defense matrix.
pub const DEFENDED_PGD: &str = "PGD (defended)";

/// Tasks × methods, each over `seeds` seeds, plus a no-attack row per task.
/// With `defended_iters` set (post-defense matrix) a PGD row at the defense
/// iteration count, labelled [`DEFENDED_PGD`], follows the no-attack row.
/// A failing row is recorded with NaN rewards and the run continues.
pub fn run_matrix(
    m: &ExperimentManifest,
    policies: &BTreeMap<Task, PolicyNet<f64>>,
    defended_iters: Option<usize>,
) -> Result<MatrixRun> {
    m.validate()?;
    let mut jobs = Vec::new();
    for &task in &m.tasks {
        jobs.push(RowJob {
            task,
            method: NO_ATTACK.to_string(),
            iters: None,
            divergence: None,
            attack: None,
            episodes: m.episodes_per_seed,
            seeds: m.seeds,
        });
        if let Some(n) = defended_iters {
            let spec = MethodSpec::new(AttackKind::Pgd, n);
            jobs.push(method_job(m, task, &spec, DEFENDED_PGD.to_string()));
        }
        for spec in &m.methods {
            jobs.push(method_job(m, task, spec, spec.label()));
        }
    }
    run_jobs(&jobs, policies, m)
}

/// DAPGD with each configured divergence and iteration count on the
/// ablation task. Rows carry the divergence label.
pub fn run_ablation(m: &ExperimentManifest, policies: &BTreeMap<Task, PolicyNet<f64>>) -> Result<MatrixRun> {
    m.validate()?;
    let a = &m.ablation;
    let mut jobs = Vec::new();
    for &div in &a.divergences {
        for &n in &a.iters {
            jobs.push(RowJob {
                task: a.task,
                method: AttackKind::Dapgd.to_string(),
                iters: Some(n),
                divergence: Some(div.to_string()),
                attack: Some(AttackSpec {
                    kind: AttackKind::Dapgd,
                    cfg: AttackConfig {
                        iters: n,
                        ..m.attack.clone()
                    },
                    loss_override: Some(div),
                }),
                episodes: a.episodes_per_seed.unwrap_or(m.episodes_per_seed),
                seeds: a.seeds.unwrap_or(m.seeds),
            });
        }
    }
    run_jobs(&jobs, policies, m)
}

/// Loads benign or defended policies for `tasks`.
pub fn load_policies(m: &ExperimentManifest, tasks: &[Task], defended: bool) -> Result<BTreeMap<Task, PolicyNet<f64>>> {
    m.check_weights(tasks, defended)?;
    tasks
        .iter()
        .map(|t| {
            let paths = m.policy_paths(*t);
            let p = if defended { paths.defended } else { paths.benign };
            Ok((*t, weights::load_weights(&p)?))
        })
        .collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Trains the benign policy for `task` and writes policy, value weights,
/// training log and baseline report next to the manifest's benign path.
pub fn train_task(m: &ExperimentManifest, task: Task) -> Result<TrainOutput> {
    let env = m.env_for(task);
    let trainer = training::TrainerConfig {
        seed: derive(&[m.master_seed, task.id(), 0x7A1]),
        ..m.trainer.clone()
    };
    let out = training::train(&env, &trainer)?;
    let path = m.policy_paths(task).benign;
    save_training_outputs(&path, &out)?;
    Ok(out)
}

/// Adversarially trains from the saved benign policy of `task` and writes
/// the defended weights.
pub fn defend_task(m: &ExperimentManifest, task: Task) -> Result<TrainOutput> {
    let env = m.env_for(task);
    let paths = m.policy_paths(task);
    if !paths.benign.is_file() {
        return Err(Error::InvalidConfig(format!(
            "benign weights for {task} not found: {}",
            paths.benign.display()
        )));
    }
    let policy = weights::load_weights(&paths.benign)?;
    let value = weights::load_value_weights(value_path(&paths.benign))?;
    let trainer = training::TrainerConfig {
        seed: derive(&[m.master_seed, task.id(), 0xDEF]),
        total_steps: m.defense.total_steps,
        ..m.trainer.clone()
    };
    let attack = AttackConfig {
        iters: m.defense.iters,
        ..m.attack.clone()
    };
    let out = training::adversarial_train(&env, &trainer, &attack, policy, value)?;
    save_training_outputs(&paths.defended, &out)?;
    Ok(out)
}

fn save_training_outputs(policy_path: &Path, out: &TrainOutput) -> Result<()> {
    ensure_parent(policy_path)?;
    weights::save_weights(&out.policy, policy_path)?;
    weights::save_value_weights(&out.value, value_path(policy_path))?;
    let stem = policy_path.with_extension("");
    training::write_log(&stem.with_extension("log.csv"), &out.log)?;
    std::fs::write(
        stem.with_extension("baseline.json"),
        serde_json::to_string_pretty(&out.baseline)?,
    )?;
    Ok(())
}

/// Writes `<dir>/<name>.csv`, `<dir>/<name>.md` and the per-episode dump.
pub fn write_run(dir: &Path, name: &str, run: &MatrixRun) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    run.table.save_csv(&dir.join(format!("{name}.csv")))?;
    std::fs::write(dir.join(format!("{name}.md")), run.table.to_markdown())?;
    run.write_episodes(&dir.join(format!("{name}_episodes.csv")))?;
    for r in run.table.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "row {} / {} failed: {}",
            r.task,
            r.method,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests;
