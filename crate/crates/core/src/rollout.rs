//! Episode rollouts shared by training and evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{self, EnvConfig, Transition};
use crate::error::Result;
use crate::gaussian::Observation;
use crate::seed;

/// Runs one episode from `reset(cfg, episode_seed)`; `act` maps the current
/// observation and step index to an action. Returns the undiscounted reward
/// sum and, when `record` is set, every transition.
pub fn run_episode(
    cfg: &EnvConfig,
    episode_seed: u64,
    record: bool,
    mut act: impl FnMut(&Observation<f64>, usize) -> Result<[f64; 2]>,
) -> Result<(f64, Vec<Transition>)> {
    let (mut state, mut obs) = envs::reset(cfg, episode_seed)?;
    let mut total = 0.0;
    let mut trace = Vec::new();
    for t in 0..cfg.horizon {
        let action = act(&obs, t)?;
        let tr = envs::step(cfg, &mut state, &action)?;
        total += tr.reward;
        let done = tr.done;
        obs = tr.next_obs.clone();
        if record {
            trace.push(tr);
        }
        if done {
            break;
        }
    }
    Ok((total, trace))
}

/// Per-episode rewards of the uniform random policy on `[-1, 1]²`.
pub fn random_policy_rewards(cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    (0..episodes as u64)
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[seed, 0xA11, e]));
            run_episode(cfg, seed::derive(&[seed, e]), false, |_, _| {
                Ok([rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
            })
            .map(|(r, _)| r)
        })
        .collect()
}

/// Sample mean and standard deviation (`n − 1` denominator, 0 for `n < 2`).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{go_to_target, Task};

    #[test]
    fn episode_sum_matches_trace() {
        let cfg = EnvConfig::for_task(Task::Button);
        let (total, trace) = run_episode(&cfg, 3, true, |o, _| Ok(go_to_target(o))).unwrap();
        let sum: f64 = trace.iter().map(|t| t.reward).sum();
        assert_eq!(total, sum);
        assert!(trace.len() <= cfg.horizon);
    }

    #[test]
    fn mean_std_small_cases() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }
}
