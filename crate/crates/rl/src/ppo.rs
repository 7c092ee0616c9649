//! Advantage estimation and the clipped-surrogate update.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::RlError;
use crate::net::{clip_grad_norm, Adam, Mlp};
use crate::policy::PolicyNet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Per-network gradient norm cap; `0` disables clipping.
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Control steps per episode.
    pub horizon: usize,
    pub episodes_per_iteration: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            learning_rate: 3e-4,
            epochs: 5,
            minibatch: 256,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            normalize_advantages: true,
            horizon: 500,
            episodes_per_iteration: 8,
            iterations: 200,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.minibatch == 0 || self.horizon == 0 || self.episodes_per_iteration == 0 {
            return bad("minibatch, horizon and episodes per iteration must be positive");
        }
        Ok(())
    }
}

/// Generalized advantage estimates and value targets for one trajectory.
///
/// `bootstrap` is the value of the state after the last step (zero for a
/// terminal state).
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Running mean and variance of value targets; the critic regresses
/// normalized returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnNormalizer {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for ReturnNormalizer {
    fn default() -> Self {
        Self {
            mean: 0.0,
            var: 1.0,
            count: 0.0,
        }
    }
}

impl ReturnNormalizer {
    pub fn std(&self) -> f64 {
        self.var.sqrt().max(1e-6)
    }

    /// Merges a batch into the running moments (parallel Welford update).
    pub fn update(&mut self, values: &[f64]) {
        if values.is_empty() {
            return;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if self.count == 0.0 {
            *self = Self { mean, var, count: n };
            return;
        }
        let total = self.count + n;
        let delta = mean - self.mean;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std()
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.mean + v * self.std()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: DVector<f64>,
    pub pre_tanh: DVector<f64>,
    pub log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Optimizer state for the actor and critic.
#[derive(Debug, Clone)]
pub struct PpoOptimizers {
    pub actor: Adam,
    pub critic: Adam,
}

impl PpoOptimizers {
    pub fn new(policy: &PolicyNet, critic: &Mlp, lr: f64) -> Self {
        Self {
            actor: Adam::new(policy.num_params(), lr),
            critic: Adam::new(critic.num_params(), lr),
        }
    }
}

/// Loss value and gradient of the clipped surrogate (plus entropy bonus) over `batch`.
///
/// `∂loss/∂θ` is laid out like [`PolicyNet::flatten`]. Samples whose clipped
/// branch is active contribute no gradient.
pub fn policy_loss_grad(
    policy: &PolicyNet,
    batch: &[&Transition],
    clip: f64,
    entropy_coef: f64,
) -> Result<(f64, Vec<f64>, PpoStats), RlError> {
    let n = policy.dof();
    let k = policy.actor.num_params();
    let mut grad = vec![0.0; policy.num_params()];
    let inv_b = 1.0 / batch.len() as f64;
    let inv_var: Vec<f64> = policy.log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let mut loss = 0.0;
    let mut stats = PpoStats::default();
    for tr in batch {
        let x = policy.scaled_input(&tr.obs)?;
        let trace = policy.actor.forward_trace(&x);
        let mean = trace.output();
        let log_prob = crate::policy::squashed_log_prob(&tr.pre_tanh, mean, &policy.log_std, policy.action_scale);
        let ratio = (log_prob - tr.log_prob).exp();
        let a = tr.advantage;
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
        loss -= unclipped.min(clipped) * inv_b;
        stats.approx_kl += (tr.log_prob - log_prob) * inv_b;
        if (ratio - 1.0).abs() > clip {
            stats.clip_fraction += inv_b;
        }
        if unclipped > clipped {
            continue;
        }
        // ∂loss/∂logp for this sample
        let coef = -a * ratio * inv_b;
        if coef == 0.0 {
            continue;
        }
        let mut g_mean = DVector::zeros(n);
        for j in 0..n {
            let d = tr.pre_tanh[j] - mean[j];
            g_mean[j] = coef * d * inv_var[j];
            grad[k + j] += coef * (d * d * inv_var[j] - 1.0);
        }
        policy.actor.backward(&trace, &g_mean, &mut grad[..k]);
    }
    let entropy = crate::policy::gaussian_entropy(&policy.log_std);
    loss -= entropy_coef * entropy;
    for j in 0..n {
        grad[k + j] -= entropy_coef;
    }
    stats.policy_loss = loss;
    stats.entropy = entropy;
    Ok((loss, grad, stats))
}

/// Value regression loss `value_coef · mean((V − R)²)` and its gradient.
///
/// The critic reads the observation multiplied by `obs_scale`.
pub fn value_loss_grad(critic: &Mlp, obs_scale: &DVector<f64>, batch: &[&Transition], value_coef: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; critic.num_params()];
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for tr in batch {
        let trace = critic.forward_trace(&tr.obs.component_mul(obs_scale));
        let err = trace.output()[0] - tr.ret;
        loss += value_coef * err * err * inv_b;
        let g = DVector::from_element(1, 2.0 * value_coef * err * inv_b);
        critic.backward(&trace, &g, &mut grad);
    }
    (loss, grad)
}

/// Normalizes advantages to zero mean and unit variance in place when they vary.
pub fn normalize_advantages(batch: &mut [Transition]) {
    let n = batch.len() as f64;
    let mean = batch.iter().map(|t| t.advantage).sum::<f64>() / n;
    let var = batch.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-8 {
        batch.iter_mut().for_each(|t| t.advantage = (t.advantage - mean) / std);
    }
}

/// Epochs × minibatches of clipped-surrogate and value updates. The critic
/// shares the actor's input scale.
pub fn ppo_update(
    policy: &mut PolicyNet,
    critic: &mut Mlp,
    opt: &mut PpoOptimizers,
    batch: &[Transition],
    config: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<PpoStats, RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut total = PpoStats::default();
    let mut count = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let mb: Vec<&Transition> = chunk.iter().map(|&i| &batch[i]).collect();
            let (ploss, mut pgrad, stats) = policy_loss_grad(policy, &mb, config.clip, config.entropy_coef)?;
            let (vloss, mut vgrad) = value_loss_grad(critic, &policy.obs_scale, &mb, config.value_coef);
            if !ploss.is_finite() || !vloss.is_finite() || !pgrad.iter().chain(&vgrad).all(|g| g.is_finite()) {
                return Err(RlError::NonFinite {
                    what: format!("loss (policy {ploss}, value {vloss})"),
                    iteration: epoch,
                });
            }
            clip_grad_norm(&mut pgrad, config.max_grad_norm);
            clip_grad_norm(&mut vgrad, config.max_grad_norm);
            let mut p = policy.flatten();
            opt.actor.step(&mut p, &pgrad);
            policy.set_flat(&p);
            let mut c = critic.flatten();
            opt.critic.step(&mut c, &vgrad);
            critic.set_flat(&c);

            total.policy_loss += stats.policy_loss;
            total.value_loss += vloss;
            total.entropy += stats.entropy;
            total.approx_kl += stats.approx_kl;
            total.clip_fraction += stats.clip_fraction;
            count += 1;
        }
    }
    if count > 0 {
        let s = 1.0 / count as f64;
        total.policy_loss *= s;
        total.value_loss *= s;
        total.entropy *= s;
        total.approx_kl *= s;
        total.clip_fraction *= s;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_lambda_zero_is_one_step_td() {
        let (adv, ret) = gae(&[1.0, 2.0], &[0.5, 0.25], 4.0, 0.5, 0.0);
        assert_eq!(adv, vec![1.0 + 0.5 * 0.25 - 0.5, 2.0 + 0.5 * 4.0 - 0.25]);
        assert_eq!(ret, vec![adv[0] + 0.5, adv[1] + 0.25]);
    }

    #[test]
    fn running_moments_match_batch_moments() {
        let data: Vec<f64> = (0..10).map(|k| (k * k) as f64 * 0.5 - 3.0).collect();
        let mut n = ReturnNormalizer::default();
        n.update(&data[..3]);
        n.update(&data[3..]);
        let mean = data.iter().sum::<f64>() / 10.0;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
        assert!((n.mean - mean).abs() < 1e-12 && (n.var - var).abs() < 1e-9);
        assert!((n.denormalize(n.normalize(4.2)) - 4.2).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(PpoConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(PpoConfig { clip: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn normalization_skips_constant_advantages() {
        let tr = |a: f64| Transition {
            obs: DVector::zeros(1),
            pre_tanh: DVector::zeros(1),
            log_prob: 0.0,
            advantage: a,
            ret: 0.0,
        };
        let mut b = vec![tr(0.0), tr(0.0)];
        normalize_advantages(&mut b);
        assert_eq!(b[0].advantage, 0.0);
        let mut b = vec![tr(1.0), tr(3.0)];
        normalize_advantages(&mut b);
        assert_eq!((b[0].advantage, b[1].advantage), (-1.0, 1.0));
    }
}
