/// Generalized advantage estimates for one rollout.
///
/// `values[t] = V(s_t)`; the value after the last step is `last_value`.
/// With `δ_t = r_t + γ·V(s_{t+1})·(1 − done_t) − V(s_t)` the result is
/// `A_t = Σ_k (γλ)^k δ_{t+k}`, truncated at the first `done`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    assert_eq!(values.len(), n, "values length");
    assert_eq!(dones.len(), n, "dones length");
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    adv
}

/// Shifts and scales `xs` to zero mean and unit population variance.
/// A constant vector is only centred.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter_mut().for_each(|x| *x -= mean);
    let var = xs.iter().map(|x| x * x).sum::<f64>() / n;
    if var > 1e-24 {
        let sd = var.sqrt();
        xs.iter_mut().for_each(|x| *x /= sd);
    }
}
