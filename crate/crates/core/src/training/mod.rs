//! Clipped-surrogate policy-gradient training and PGD adversarial training.
//!
//! Rollouts are collected sequentially from one environment instance; an
//! episode may span two batches. When an attack is configured, the policy
//! acts on (and is updated with) the perturbed observation, while the value
//! net and the environment see the true state.

mod adam;
mod gae;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use adam::{clip_global_norm, Adam};
pub use gae::{gae_advantages, normalize};

use crate::attacks::{pgd, AttackConfig};
use crate::envs::{self, EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::gaussian::{DiagGaussian, Observation};
use crate::policy::{param_gradient, PolicyNet, PolicyObjective, StochasticPolicy, ValueNet};
use crate::rollout::{self, mean_std};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub minibatch: usize,
    pub rollout_steps: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Global L2 gradient-norm cap applied separately to policy and value.
    pub max_grad_norm: Option<f64>,
    pub init_log_std: f64,
    /// Episodes used for the end-of-training comparison with a random policy.
    pub baseline_episodes: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            learning_rate: 3e-4,
            epochs_per_batch: 10,
            minibatch: 128,
            rollout_steps: 4096,
            total_steps: 200_000,
            seed: 0,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: Some(0.5),
            init_log_std: -0.5,
            baseline_episodes: 50,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs_per_batch == 0 || self.minibatch == 0 || self.rollout_steps == 0 {
            return bad("epochs_per_batch, minibatch and rollout_steps must be positive");
        }
        if let Some(m) = self.max_grad_norm {
            if !(m > 0.0) {
                return bad("max_grad_norm must be positive");
            }
        }
        Ok(())
    }
}

/// One batch of on-policy experience.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    /// Observations the policy acted on (perturbed under attack).
    pub policy_obs: Vec<Vec<f64>>,
    /// True observations, used by the value net.
    pub value_obs: Vec<Vec<f64>>,
    /// Unclamped sampled actions.
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub last_value: f64,
    /// Normalized GAE advantages.
    pub advantages: Vec<f64>,
    /// Value targets `A_t + V(s_t)` before normalization.
    pub returns: Vec<f64>,
    /// Rewards of episodes that finished inside this batch.
    pub episode_rewards: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Fills `returns` and normalized `advantages` from rewards and values.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let adv = gae_advantages(&self.rewards, &self.values, &self.dones, self.last_value, gamma, lambda);
        self.returns = adv.iter().zip(&self.values).map(|(a, v)| a + v).collect();
        self.advantages = adv;
        normalize(&mut self.advantages);
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub mean_episode_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Trained policy compared with the uniform random policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub policy_mean: f64,
    pub random_mean: f64,
    pub random_std: f64,
    /// `policy_mean > random_mean + 3·random_std`.
    pub beats_random: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: PolicyNet<f64>,
    pub value: ValueNet<f64>,
    pub log: Vec<LogRow>,
    pub baseline: BaselineReport,
}

/// Clipped surrogate `−min(ρA, clip(ρ)A)/n − c_H·H/n` for a minibatch.
struct Surrogate<'a> {
    actions: Vec<&'a [f64]>,
    old_log_probs: Vec<f64>,
    advantages: Vec<f64>,
    clip: f64,
    entropy_coef: f64,
}

impl PolicyObjective<f64> for Surrogate<'_> {
    fn sample_loss(&self, index: usize, dist: &DiagGaussian<f64>) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.actions.len() as f64;
        let a = self.actions[index];
        let adv = self.advantages[index];
        let logp = dist.log_prob_unchecked(a);
        let ratio = (logp - self.old_log_probs[index]).exp();
        let clipped = ratio.clamp(1.0 - self.clip, 1.0 + self.clip);
        let (surr, d_logp) = if ratio * adv <= clipped * adv {
            (ratio * adv, -adv * ratio / n)
        } else {
            (clipped * adv, 0.0)
        };
        let mut loss = -surr / n;
        let mut d_mean = Vec::with_capacity(a.len());
        let mut d_log_std = Vec::with_capacity(a.len());
        for j in 0..a.len() {
            let u = (a[j] - dist.mean[j]) / dist.std[j];
            d_mean.push(d_logp * u / dist.std[j]);
            d_log_std.push(d_logp * (u * u - 1.0) - self.entropy_coef / n);
        }
        loss -= self.entropy_coef * dist.entropy() / n;
        (loss, d_mean, d_log_std)
    }
}

/// Persistent collection state across batches.
struct Collector<'a> {
    env: &'a EnvConfig,
    seed: u64,
    state: EnvState,
    obs: Observation<f64>,
    episode: u64,
    running: f64,
    noise: ChaCha8Rng,
    steps: usize,
}

impl<'a> Collector<'a> {
    fn new(env: &'a EnvConfig, seed: u64) -> Result<Self> {
        let (state, obs) = envs::reset(env, seed::derive(&[seed, 0xE915, 0]))?;
        Ok(Self {
            env,
            seed,
            state,
            obs,
            episode: 0,
            running: 0.0,
            noise: ChaCha8Rng::seed_from_u64(seed::derive(&[seed, 0xAC7])),
            steps: 0,
        })
    }

    fn collect(
        &mut self,
        policy: &PolicyNet<f64>,
        value: &ValueNet<f64>,
        n: usize,
        attack: Option<&AttackConfig>,
    ) -> Result<RolloutBatch> {
        let mut b = RolloutBatch::default();
        for _ in 0..n {
            let true_obs = self.obs.clone().into_inner();
            let acted = match attack {
                Some(cfg) => {
                    let cfg = AttackConfig {
                        seed: seed::derive(&[self.seed, 0xADF, self.steps as u64]),
                        ..cfg.clone()
                    };
                    pgd(policy, &true_obs, &cfg)?.into_inner()
                }
                None => true_obs.clone(),
            };
            let dist = policy.distribution(&acted)?;
            let z: Vec<f64> = (0..dist.dim()).map(|_| StandardNormal.sample(&mut self.noise)).collect();
            let action = dist.sample(&z)?;
            let logp = dist.log_prob(&action)?;
            let v = value.value(&true_obs)?;
            let tr = envs::step(self.env, &mut self.state, &action)?;
            self.steps += 1;
            self.running += tr.reward;
            b.policy_obs.push(acted);
            b.value_obs.push(true_obs);
            b.actions.push(action);
            b.log_probs.push(logp);
            b.rewards.push(tr.reward);
            b.dones.push(tr.done);
            b.values.push(v);
            if tr.done {
                b.episode_rewards.push(self.running);
                self.running = 0.0;
                self.episode += 1;
                let (state, obs) = envs::reset(self.env, seed::derive(&[self.seed, 0xE915, self.episode]))?;
                self.state = state;
                self.obs = obs;
            } else {
                self.obs = tr.next_obs;
            }
        }
        b.last_value = value.value(&self.obs)?;
        Ok(b)
    }
}

fn policy_params(p: &mut PolicyNet<f64>) -> Vec<&mut [f64]> {
    let PolicyNet { body, log_std } = p;
    let mut v: Vec<&mut [f64]> = body.blocks_mut().into_iter().collect();
    v.push(log_std.as_mut_slice());
    v
}

fn policy_param_count(p: &PolicyNet<f64>) -> usize {
    p.body.blocks().iter().map(|b| b.len()).sum::<usize>() + p.log_std.len()
}

struct Learner {
    policy: PolicyNet<f64>,
    value: ValueNet<f64>,
    policy_opt: Adam,
    value_opt: Adam,
    shuffle: ChaCha8Rng,
}

impl Learner {
    fn new(policy: PolicyNet<f64>, value: ValueNet<f64>, cfg: &TrainerConfig) -> Self {
        let policy_opt = Adam::new(cfg.learning_rate, policy_param_count(&policy));
        let value_size = value.body.blocks().iter().map(|b| b.len()).sum();
        Self {
            policy,
            value,
            policy_opt,
            value_opt: Adam::new(cfg.learning_rate, value_size),
            shuffle: ChaCha8Rng::seed_from_u64(seed::derive(&[cfg.seed, 0x5F1])),
        }
    }

    /// Runs the epochs over `batch`; returns mean policy and value loss of
    /// the final epoch.
    fn update(&mut self, batch: &RolloutBatch, cfg: &TrainerConfig, step: usize) -> Result<(f64, f64)> {
        let diverged = |reason: String| Error::TrainingDiverged { step, reason };
        let mut idx: Vec<usize> = (0..batch.len()).collect();
        let (mut p_loss, mut v_loss) = (0.0, 0.0);
        for _ in 0..cfg.epochs_per_batch {
            idx.shuffle(&mut self.shuffle);
            let (mut p_acc, mut v_acc, mut count) = (0.0, 0.0, 0usize);
            for chunk in idx.chunks(cfg.minibatch) {
                let obs: Vec<&[f64]> = chunk.iter().map(|i| batch.policy_obs[*i].as_slice()).collect();
                let objective = Surrogate {
                    actions: chunk.iter().map(|i| batch.actions[*i].as_slice()).collect(),
                    old_log_probs: chunk.iter().map(|i| batch.log_probs[*i]).collect(),
                    advantages: chunk.iter().map(|i| batch.advantages[*i]).collect(),
                    clip: cfg.clip_ratio,
                    entropy_coef: cfg.entropy_coef,
                };
                let (loss, mut grad) =
                    param_gradient(&self.policy, &obs, &objective).map_err(|e| diverged(e.to_string()))?;
                let mut grad_blocks: Vec<&mut [f64]> = grad.body.blocks_mut().into_iter().collect();
                grad_blocks.push(grad.log_std.as_mut_slice());
                if let Some(m) = cfg.max_grad_norm {
                    clip_global_norm(grad_blocks, m);
                }
                let mut grad_view: Vec<&[f64]> = grad.body.blocks().into_iter().collect();
                grad_view.push(&grad.log_std);
                self.policy_opt.step(policy_params(&mut self.policy), grad_view);
                self.policy.clamp_log_std();

                let vobs: Vec<&[f64]> = chunk.iter().map(|i| batch.value_obs[*i].as_slice()).collect();
                let targets: Vec<f64> = chunk.iter().map(|i| batch.returns[*i]).collect();
                let (vloss, mut vgrad) = self
                    .value
                    .squared_error_gradient(&vobs, &targets, cfg.value_coef)
                    .map_err(|e| diverged(e.to_string()))?;
                if let Some(m) = cfg.max_grad_norm {
                    clip_global_norm(vgrad.blocks_mut().into_iter().collect(), m);
                }
                self.value_opt.step(
                    self.value.body.blocks_mut().into_iter().collect(),
                    vgrad.blocks().into_iter().collect(),
                );
                if !self.policy.is_finite() || !self.value.body.is_finite() {
                    return Err(diverged("non-finite parameters after update".into()));
                }
                p_acc += loss;
                v_acc += vloss;
                count += 1;
            }
            p_loss = p_acc / count.max(1) as f64;
            v_loss = v_acc / count.max(1) as f64;
        }
        Ok((p_loss, v_loss))
    }
}

/// Compares the policy's sampled-action reward with the uniform random
/// policy on the same fresh episode seeds.
pub fn baseline_report(policy: &PolicyNet<f64>, env: &EnvConfig, episodes: usize, seed: u64) -> Result<BaselineReport> {
    let eval_seed = seed::derive(&[seed, 0xBA5E]);
    let random = rollout::random_policy_rewards(env, episodes, eval_seed)?;
    let (random_mean, random_std) = mean_std(&random);
    let mut rewards = Vec::with_capacity(episodes);
    for e in 0..episodes as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[eval_seed, 0xAC7, e]));
        let (r, _) = rollout::run_episode(env, seed::derive(&[eval_seed, e]), false, |obs, _| {
            let dist = policy.distribution(obs)?;
            let z: Vec<f64> = (0..dist.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = dist.sample(&z)?;
            Ok([a[0], a[1]])
        })?;
        rewards.push(r);
    }
    let (policy_mean, _) = mean_std(&rewards);
    Ok(BaselineReport {
        policy_mean,
        random_mean,
        random_std,
        beats_random: policy_mean > random_mean + 3.0 * random_std,
    })
}

/// Continues training `policy`/`value` for `cfg.total_steps` environment
/// steps, optionally under a PGD attack on every policy input.
pub fn train_from(
    env: &EnvConfig,
    cfg: &TrainerConfig,
    policy: PolicyNet<f64>,
    value: ValueNet<f64>,
    attack: Option<&AttackConfig>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    env.validate()?;
    if let Some(a) = attack {
        a.validate()?;
    }
    if policy.obs_dim() != env.obs_dim() || value.obs_dim() != env.obs_dim() {
        return Err(Error::DimMismatch {
            context: "policy/value input vs environment observation",
            expected: env.obs_dim(),
            got: policy.obs_dim(),
        });
    }
    let mut learner = Learner::new(policy, value, cfg);
    let mut collector = Collector::new(env, cfg.seed)?;
    let mut log = Vec::new();
    let mut done_steps = 0;
    let mut last_mean = f64::NAN;
    while done_steps < cfg.total_steps {
        let n = cfg.rollout_steps.min(cfg.total_steps - done_steps);
        let mut batch = collector
            .collect(&learner.policy, &learner.value, n, attack)
            .map_err(|e| Error::TrainingDiverged {
                step: done_steps,
                reason: e.to_string(),
            })?;
        batch.compute_advantages(cfg.gamma, cfg.gae_lambda);
        done_steps += n;
        let (p_loss, v_loss) = learner.update(&batch, cfg, done_steps)?;
        if !batch.episode_rewards.is_empty() {
            last_mean = mean_std(&batch.episode_rewards).0;
        }
        let std = learner.policy.std();
        let entropy = DiagGaussian::new(vec![0.0; std.len()], std)?.entropy();
        log.push(LogRow {
            step: done_steps,
            mean_episode_reward: last_mean,
            policy_loss: p_loss,
            value_loss: v_loss,
            entropy,
        });
    }
    let baseline = baseline_report(&learner.policy, env, cfg.baseline_episodes.max(1), cfg.seed)?;
    Ok(TrainOutput {
        policy: learner.policy,
        value: learner.value,
        log,
        baseline,
    })
}

/// Trains a fresh policy and value net from `cfg.seed`.
pub fn train(env: &EnvConfig, cfg: &TrainerConfig) -> Result<TrainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[cfg.seed, 0x1417]));
    let policy = PolicyNet::random(env.obs_dim(), 2, cfg.init_log_std, &mut rng);
    let value = ValueNet::random(env.obs_dim(), &mut rng);
    train_from(env, cfg, policy, value, None)
}

/// Continues training a benign policy while every policy input during
/// rollouts is replaced by a PGD adversarial observation against the
/// current policy.
pub fn adversarial_train(
    env: &EnvConfig,
    cfg: &TrainerConfig,
    attack: &AttackConfig,
    policy: PolicyNet<f64>,
    value: ValueNet<f64>,
) -> Result<TrainOutput> {
    train_from(env, cfg, policy, value, Some(attack))
}

#[cfg(test)]
mod tests;
