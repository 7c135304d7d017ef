//! Proximal policy optimization: rollout collection, generalized advantage
//! estimation, the clipped surrogate update, and the outer training loop.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{
    adam_step, clip_grad_norm, gaussian_logprob, gaussian_sample, seeded_rng, std_schedule, AdamConfig,
    AdamState, PolicyNet, StdSchedule, ValueNet,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub total_steps: u64,
    pub rollout_len: usize,
    pub batch_size: usize,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub std: StdSchedule,
    /// Rewards are divided by this many USD before optimization.
    pub reward_scale: f64,
    /// Global L2 bound on each network's gradient; `0` disables clipping.
    pub max_grad_norm: f64,
    pub adam: AdamConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            total_steps: 3_000_000,
            rollout_len: 2048,
            batch_size: 256,
            clip_eps: 0.2,
            gamma: 0.999,
            gae_lambda: 0.95,
            epochs: 10,
            lr_actor: 5e-5,
            lr_critic: 3e-4,
            std: StdSchedule::default(),
            reward_scale: 10.0,
            max_grad_norm: 0.5,
            adam: AdamConfig::default(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(invalid(format!("clip_eps {} outside (0, 1)", self.clip_eps)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(invalid(format!("gae_lambda {} outside [0, 1]", self.gae_lambda)));
        }
        if self.rollout_len == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("rollout_len, batch_size and epochs must be positive"));
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0) {
            return Err(invalid("learning rates must be non-negative"));
        }
        if !(self.reward_scale > 0.0) || !(self.max_grad_norm >= 0.0) {
            return Err(invalid("reward_scale must be positive and max_grad_norm non-negative"));
        }
        let s = &self.std;
        if !(s.final_std > 0.0 && s.final_std <= s.initial && s.decay_per_step >= 0.0) {
            return Err(invalid("std schedule needs 0 < final <= initial and decay >= 0"));
        }
        Ok(())
    }
}

/// Outcome of one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    /// Scaled reward.
    pub reward: f64,
    /// The episode is over; the next call must be `reset`.
    pub done: bool,
    /// The episode ended in a true terminal state (no value beyond it).
    /// `done && !terminal` is a time-limit cut.
    pub terminal: bool,
}

/// An episodic environment driven by the trainer.
pub trait Env {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self) -> Result<()>;
    /// Current state; after a step this is `s_{t+1}`.
    fn observe(&self) -> &[f64];
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
    /// Resumable state for checkpoints.
    fn save_state(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
    fn load_state(&mut self, _state: &serde_json::Value) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Sampled action before any environment-side mapping.
    pub action: Vec<f64>,
    pub logp: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    /// `V(s_{t+1})` when the trajectory is cut here rather than terminated.
    pub bootstrap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub sigma: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.advantages.clear();
        self.returns.clear();
    }
}

/// Runs the behavior policy for exactly `steps` environment steps. The
/// environment must already be reset (or mid-episode from a previous call).
pub fn collect_rollout(
    env: &mut dyn Env,
    policy: &PolicyNet,
    value: &ValueNet,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBuffer> {
    let mut transitions = Vec::with_capacity(steps);
    for t in 0..steps {
        let state = env.observe().to_vec();
        let mean = policy.mean(&state)?;
        let action = gaussian_sample(&mean, policy.sigma, rng);
        let logp = gaussian_logprob(&mean, policy.sigma, &action);
        let v = value.value(&state)?;
        let out = env.step(&action)?;
        if !out.reward.is_finite() {
            return Err(Error::NonFinite(format!("reward at rollout step {t}")));
        }
        let cut = (out.done && !out.terminal) || (!out.done && t + 1 == steps);
        let bootstrap = if cut { Some(value.value(env.observe())?) } else { None };
        transitions.push(Transition {
            state,
            action,
            logp,
            reward: out.reward,
            value: v,
            done: out.done,
            bootstrap,
        });
        if out.done {
            env.reset()?;
        }
    }
    Ok(RolloutBuffer {
        transitions,
        sigma: policy.sigma,
        advantages: vec![],
        returns: vec![],
    })
}

/// Generalized advantage estimation; also fills the buffer's advantages and returns.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda_gae: f64) -> (Vec<f64>, Vec<f64>) {
    let tr = &buffer.transitions;
    let n = tr.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let x = &tr[t];
        let next_value = match x.bootstrap {
            Some(v) => v,
            None if x.done || t + 1 == n => 0.0,
            None => tr[t + 1].value,
        };
        let delta = x.reward + gamma * next_value - x.value;
        let continues = !x.done && x.bootstrap.is_none() && t + 1 < n;
        adv[t] = delta + if continues { gamma * lambda_gae * next_adv } else { 0.0 };
        next_adv = adv[t];
    }
    let ret: Vec<f64> = adv.iter().zip(tr).map(|(a, x)| a + x.value).collect();
    buffer.advantages = adv.clone();
    buffer.returns = ret.clone();
    (adv, ret)
}

/// Zero mean, unit standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { 0.0 };
    }
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)` and
/// whether the unclipped branch carries the gradient.
pub fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
}

/// Optimizer state for both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub actor: AdamState,
    pub critic: AdamState,
}

impl Optimizers {
    pub fn new(policy: &PolicyNet, value: &ValueNet) -> Self {
        Self {
            actor: AdamState::new(policy.mlp.num_params()),
            critic: AdamState::new(value.mlp.num_params()),
        }
    }
}

/// Loss and parameter gradient of one mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Samples whose probability ratio left `[1 - eps, 1 + eps]`.
    pub clipped: usize,
}

/// Negative clipped surrogate, `-mean(min(r A, clip(r) A))`, and its
/// gradient with respect to the policy parameters.
pub fn policy_loss_grad(
    policy: &PolicyNet,
    states: ArrayView2<'_, f64>,
    actions: &[Vec<f64>],
    old_logp: &[f64],
    adv: &[f64],
    clip_eps: f64,
) -> Result<LossGrad> {
    let b = states.nrows();
    if actions.len() != b || old_logp.len() != b || adv.len() != b {
        return Err(Error::Dimension {
            expected: b,
            got: actions.len().min(old_logp.len()).min(adv.len()),
        });
    }
    let sigma = policy.sigma;
    let fwd = policy.mlp.forward_batch(states)?;
    let mu = fwd.output();
    let mut upstream = Array2::<f64>::zeros((b, policy.mlp.output_dim()));
    let mut objective = 0.0;
    let mut clipped = 0;
    for k in 0..b {
        let m = mu.row(k);
        let m = m.as_slice().unwrap();
        let ratio = (gaussian_logprob(m, sigma, &actions[k]) - old_logp[k]).exp();
        let (obj, active) = clipped_objective(ratio, adv[k], clip_eps);
        objective += obj;
        if (ratio - 1.0).abs() > clip_eps {
            clipped += 1;
        }
        if active {
            let scale = -adv[k] * ratio / (sigma * sigma * b as f64);
            for (u, (a, mm)) in upstream.row_mut(k).iter_mut().zip(actions[k].iter().zip(m)) {
                *u = scale * (a - mm);
            }
        }
    }
    let loss = -objective / b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("policy loss (sigma {sigma})")));
    }
    let grad = policy.mlp.backward(&fwd, upstream.view())?;
    Ok(LossGrad { loss, grad, clipped })
}

/// Mean squared error of the critic against `returns`, and its gradient.
pub fn value_loss_grad(value: &ValueNet, states: ArrayView2<'_, f64>, returns: &[f64]) -> Result<LossGrad> {
    let b = states.nrows();
    if returns.len() != b {
        return Err(Error::Dimension {
            expected: b,
            got: returns.len(),
        });
    }
    let fwd = value.mlp.forward_batch(states)?;
    let v = fwd.output();
    let mut upstream = Array2::<f64>::zeros((b, 1));
    let mut loss = 0.0;
    for k in 0..b {
        let err = v[[k, 0]] - returns[k];
        loss += err * err;
        upstream[[k, 0]] = 2.0 * err / b as f64;
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("value loss".into()));
    }
    let grad = value.mlp.backward(&fwd, upstream.view())?;
    Ok(LossGrad { loss, grad, clipped: 0 })
}

/// Clipped-objective policy ascent and value regression over shuffled
/// mini-batches. Advantages must already be computed.
pub fn ppo_update(
    policy: &mut PolicyNet,
    value: &mut ValueNet,
    opt: &mut Optimizers,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let n = buffer.len();
    if n == 0 || buffer.advantages.len() != n || buffer.returns.len() != n {
        return Err(Error::Usage("advantages must be computed before the update".into()));
    }
    let sdim = policy.mlp.input_dim();
    policy.sigma = buffer.sigma;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    let mut clipped_total = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = Array2::<f64>::zeros((chunk.len(), sdim));
            for (mut row, &i) in x.rows_mut().into_iter().zip(chunk) {
                row.as_slice_mut().unwrap().copy_from_slice(&buffer.transitions[i].state);
            }
            let actions: Vec<Vec<f64>> = chunk.iter().map(|&i| buffer.transitions[i].action.clone()).collect();
            let old_logp: Vec<f64> = chunk.iter().map(|&i| buffer.transitions[i].logp).collect();
            let returns: Vec<f64> = chunk.iter().map(|&i| buffer.returns[i]).collect();
            let mut adv: Vec<f64> = chunk.iter().map(|&i| buffer.advantages[i]).collect();
            normalize_advantages(&mut adv);

            let mut p = policy_loss_grad(policy, x.view(), &actions, &old_logp, &adv, cfg.clip_eps)?;
            clipped_total += p.clipped;
            if cfg.max_grad_norm > 0.0 {
                clip_grad_norm(&mut p.grad, cfg.max_grad_norm);
            }
            adam_step(policy.mlp.params_mut(), &p.grad, &mut opt.actor, cfg.lr_actor, &cfg.adam)?;

            let mut v = value_loss_grad(value, x.view(), &returns)?;
            if cfg.max_grad_norm > 0.0 {
                clip_grad_norm(&mut v.grad, cfg.max_grad_norm);
            }
            adam_step(value.mlp.params_mut(), &v.grad, &mut opt.critic, cfg.lr_critic, &cfg.adam)?;

            stats.policy_loss += p.loss;
            stats.value_loss += v.loss;
            batches += 1;
        }
    }
    stats.policy_loss /= batches as f64;
    stats.value_loss /= batches as f64;
    stats.clip_frac = clipped_total as f64 / (n * cfg.epochs) as f64;
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Environment steps consumed so far.
    pub step: u64,
    /// Mean per-step reward of the rollout, in USD.
    pub rollout_reward_mean: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
    pub sigma: f64,
}

pub const LOG_HEADER: &str = "step,rollout_reward_mean,policy_loss,value_loss,clip_frac,sigma";

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.rollout_reward_mean, self.policy_loss, self.value_loss, self.clip_frac, self.sigma
        )
    }
}

pub fn write_log(rows: &[LogRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Complete resumable training state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer {
    pub cfg: PpoConfig,
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub opt: Optimizers,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub log: Vec<LogRow>,
    /// Whether the environment has been reset since construction.
    pub started: bool,
}

impl Trainer {
    pub fn new(policy: PolicyNet, value: ValueNet, cfg: PpoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if policy.mlp.input_dim() != value.mlp.input_dim() {
            return Err(Error::Dimension {
                expected: policy.mlp.input_dim(),
                got: value.mlp.input_dim(),
            });
        }
        let opt = Optimizers::new(&policy, &value);
        Ok(Self {
            cfg,
            policy,
            value,
            opt,
            step: 0,
            rng: seeded_rng(seed, 2),
            log: vec![],
            started: false,
        })
    }

    pub fn finished(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// One collect / advantage / update cycle. The last rollout is
    /// shortened so exactly `total_steps` environment steps are consumed.
    pub fn train_rollout(&mut self, env: &mut dyn Env) -> Result<LogRow> {
        if env.state_dim() != self.policy.mlp.input_dim() {
            return Err(Error::Dimension {
                expected: self.policy.mlp.input_dim(),
                got: env.state_dim(),
            });
        }
        if env.action_dim() != self.policy.mlp.output_dim() {
            return Err(Error::Dimension {
                expected: self.policy.mlp.output_dim(),
                got: env.action_dim(),
            });
        }
        if !self.started {
            env.reset()?;
            self.started = true;
        }
        let steps = (self.cfg.total_steps - self.step).min(self.cfg.rollout_len as u64) as usize;
        if steps == 0 {
            return Err(Error::Usage("training already consumed total_steps".into()));
        }
        self.policy.sigma = std_schedule(self.step, &self.cfg.std);
        let mut buffer = collect_rollout(env, &self.policy, &self.value, steps, &mut self.rng)?;
        compute_gae(&mut buffer, self.cfg.gamma, self.cfg.gae_lambda);
        let stats = ppo_update(
            &mut self.policy,
            &mut self.value,
            &mut self.opt,
            &buffer,
            &self.cfg,
            &mut self.rng,
        )?;
        let reward_mean =
            buffer.transitions.iter().map(|t| t.reward).sum::<f64>() / steps as f64 * self.cfg.reward_scale;
        buffer.clear();
        self.step += steps as u64;
        let row = LogRow {
            step: self.step,
            rollout_reward_mean: reward_mean,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            clip_frac: stats.clip_frac,
            sigma: buffer.sigma,
        };
        self.log.push(row);
        Ok(row)
    }

    /// Trains until `total_steps`; `on_rollout` runs after every cycle (for
    /// logging or checkpointing) and may abort by returning an error.
    pub fn train(
        &mut self,
        env: &mut dyn Env,
        mut on_rollout: impl FnMut(&Trainer, &LogRow) -> Result<()>,
    ) -> Result<()> {
        while !self.finished() {
            let row = self.train_rollout(env)?;
            on_rollout(self, &row)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tr(reward: f64, value: f64, done: bool, bootstrap: Option<f64>) -> Transition {
        Transition {
            state: vec![0.0],
            action: vec![0.0],
            logp: 0.0,
            reward,
            value,
            done,
            bootstrap,
        }
    }

    fn buffer(ts: Vec<Transition>) -> RolloutBuffer {
        RolloutBuffer {
            transitions: ts,
            sigma: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn gae_single_terminal_step() {
        let mut b = buffer(vec![tr(1.0, 0.0, true, None)]);
        let (a, r) = compute_gae(&mut b, 0.999, 0.95);
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn gae_zero_when_values_are_exact() {
        let gamma = 0.9;
        let rewards = [1.0, 2.0, 0.5, 3.0];
        let mut v = [0.0; 4];
        let mut acc = 0.0;
        for t in (0..4).rev() {
            acc = rewards[t] + gamma * acc;
            v[t] = acc;
        }
        let ts = (0..4).map(|t| tr(rewards[t], v[t], t == 3, None)).collect();
        let mut b = buffer(ts);
        let (a, _) = compute_gae(&mut b, gamma, 0.95);
        for x in a {
            assert_abs_diff_eq!(x, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let gamma = 0.99;
        let rewards = [0.3, -1.0, 2.0, 0.7, 1.1];
        let values = [0.5, 0.1, -0.4, 0.9, 0.2];
        let last_bootstrap = 0.6;
        let ts = (0..5)
            .map(|t| tr(rewards[t], values[t], false, (t == 4).then_some(last_bootstrap)))
            .collect();
        let mut b = buffer(ts);
        let (a, r) = compute_gae(&mut b, gamma, 0.0);
        for t in 0..5 {
            let next = if t == 4 { last_bootstrap } else { values[t + 1] };
            assert_abs_diff_eq!(a[t], rewards[t] + gamma * next - values[t], epsilon = 1e-12);
            assert_abs_diff_eq!(r[t], a[t] + values[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn gae_matches_direct_sum() {
        let (gamma, lam) = (0.97, 0.9);
        let rewards = [0.3, -1.0, 2.0, 0.7, 1.1, -0.2];
        let values = [0.5, 0.1, -0.4, 0.9, 0.2, 0.3];
        // Episode cut after step 2 with bootstrap 0.8, terminal at step 5.
        let ts = (0..6)
            .map(|t| {
                let done = t == 2 || t == 5;
                tr(rewards[t], values[t], done, (t == 2).then_some(0.8))
            })
            .collect();
        let mut b = buffer(ts);
        let (a, _) = compute_gae(&mut b, gamma, lam);
        let next_v = |t: usize| match t {
            2 => 0.8,
            5 => 0.0,
            _ => values[t + 1],
        };
        let delta = |t: usize| rewards[t] + gamma * next_v(t) - values[t];
        for (start, end) in [(0usize, 2usize), (3, 5)] {
            for t in start..=end {
                let direct: f64 = (t..=end).map(|k| (gamma * lam).powi((k - t) as i32) * delta(k)).sum();
                assert_abs_diff_eq!(a[t], direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_rewards_and_values_give_zero_advantages() {
        let ts = (0..50).map(|t| tr(0.0, 0.0, t % 7 == 6, None)).collect();
        let mut b = buffer(ts);
        let (a, r) = compute_gae(&mut b, 0.999, 0.95);
        assert!(a.iter().chain(&r).all(|&x| x == 0.0));
    }

    #[test]
    fn clip_arithmetic() {
        let (obj, active) = clipped_objective(1.5, 2.0, 0.2);
        assert_abs_diff_eq!(obj, 1.2 * 2.0, epsilon = 1e-12);
        assert!(!active);
        let (obj, active) = clipped_objective(1.0, 2.0, 0.2);
        assert_eq!(obj, 2.0);
        assert!(active);
        // Negative advantage: clipping binds below 1 - eps.
        let (obj, active) = clipped_objective(0.5, -1.0, 0.2);
        assert_abs_diff_eq!(obj, -0.8, epsilon = 1e-12);
        assert!(!active);
        let (obj, active) = clipped_objective(1.5, -1.0, 0.2);
        assert_eq!(obj, -1.5);
        assert!(active);
    }

    #[test]
    fn normalized_advantages_have_unit_moments() {
        let mut a: Vec<f64> = (0..256).map(|i| ((i * 37) % 101) as f64 * 0.3 - 7.0).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_defaults() {
        let c = PpoConfig::default();
        assert_eq!((c.gamma, c.clip_eps, c.batch_size), (0.999, 0.2, 256));
        assert_eq!((c.lr_actor, c.lr_critic), (5e-5, 3e-4));
        assert_eq!(c.total_steps, 3_000_000);
        assert!(c.validate().is_ok());
        assert!(PpoConfig { gamma: 1.5, ..c }.validate().is_err());
        assert!(PpoConfig { clip_eps: 1.0, ..c }.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clipped_never_exceeds_unclipped(ratio in 0.0f64..3.0, adv in -5.0f64..5.0, eps in 0.01f64..0.99) {
                let (obj, _) = clipped_objective(ratio, adv, eps);
                prop_assert!(obj <= ratio * adv + 1e-12);
            }

            #[test]
            fn normalization_moments(a in prop::collection::vec(-100.0f64..100.0, 2..300)) {
                let spread = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - a.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assume!(spread > 1e-3);
                let mut a = a;
                normalize_advantages(&mut a);
                let n = a.len() as f64;
                let mean = a.iter().sum::<f64>() / n;
                let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-6);
                prop_assert!((std - 1.0).abs() < 1e-6);
            }
        }
    }
}
