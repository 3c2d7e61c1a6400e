//! PPO: rollout collection, returns/advantages, the clipped-surrogate update.
//!
//! Returns follow the discounted sum of strictly future rewards,
//! `R[t] = Σ_{k=t+1..T} γ^{k-t-1} r[k]`, so a step's own reward credits only
//! the steps before it; the conventional reward-to-go variant is available
//! behind [`PpoConfig::include_immediate_reward`]. Advantages are the raw
//! `R - V` against the values recorded at collection time, with optional
//! batch-level normalization.
//!
//! The policy objective is the clipped surrogate
//! `mean(min(rθ·A, clip(rθ, 1-ε, 1+ε)·A))` with `rθ` the probability ratio
//! against the collection-time policy; the critic trains on `0.5·mean((V-R)²)`.
//! Each batch takes a fixed number of full-batch Adam updates.

use std::sync::Arc;

use crate::environment::{Env, EnvState};
use crate::error::Error;
use crate::gateway::{BackendRole, Gateway};
use crate::numerics::{
    adam_step, log_softmax, mlp_backward, mlp_forward, softmax, AdamState, MlpParams, Vector,
};
use crate::policy::{
    policy_init, select_action, value_estimate, PolicyNet, SelectionMode, ValueNet, ACTION_COUNT,
};
use crate::reward::RewardBreakdown;
use crate::rng::Rng;
use crate::Result;

// ---------------------------------------------------------------------------
// Records and configuration
// ---------------------------------------------------------------------------

/// One step of an episode as the updater sees it.
#[derive(Debug, Clone)]
pub struct TransitionRecord {
    pub state: Vector,
    pub action_id: usize,
    /// log π_old(a|s), recorded at collection time.
    pub log_prob_old: f64,
    /// V_old(s), recorded at collection time.
    pub value_old: f64,
    pub reward: f64,
    /// 1-based step index within the episode.
    pub t: usize,
}

/// A full fixed-length episode.
#[derive(Debug, Clone)]
pub struct EpisodeTrajectory {
    pub template_id: String,
    pub transitions: Vec<TransitionRecord>,
    /// Per-step reward components, kept for the training log.
    pub breakdowns: Vec<RewardBreakdown>,
}

/// Hyperparameters. Defaults reproduce the published setup: lr 0.03,
/// 8 steps per episode, batch size 16, 32 optimization updates per batch.
#[derive(Debug, Clone)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub lr: f64,
    /// Episodes collected per batch.
    pub batch_size: usize,
    /// Adam updates per collected batch.
    pub updates_per_batch: usize,
    /// Steps per episode (T).
    pub horizon: usize,
    pub value_loss_weight: f64,
    pub entropy_coef: f64,
    /// Zero-mean/unit-std advantages across the batch pool.
    pub normalize_advantages: bool,
    /// Use the conventional reward-to-go instead of the strictly-future sum.
    pub include_immediate_reward: bool,
    pub train_iterations: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            clip_epsilon: 0.2,
            lr: 0.03,
            batch_size: 16,
            updates_per_batch: 32,
            horizon: 8,
            value_loss_weight: 0.5,
            entropy_coef: 0.0,
            normalize_advantages: false,
            include_immediate_reward: false,
            train_iterations: 25,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} not in (0,1)", self.gamma)));
        }
        if self.clip_epsilon <= 0.0 {
            return Err(Error::Config("clip_epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.horizon == 0 {
            return Err(Error::Config(
                "batch_size and horizon must be positive".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Returns and advantages
// ---------------------------------------------------------------------------

/// Discounted sum of strictly future rewards:
/// `returns[t] = rewards[t+1] + gamma * returns[t+1]`, `returns[T-1] = 0`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    for t in (0..rewards.len().saturating_sub(1)).rev() {
        returns[t] = rewards[t + 1] + gamma * returns[t + 1];
    }
    returns
}

/// Conventional reward-to-go: `returns[t] = rewards[t] + gamma * returns[t+1]`.
pub fn compute_returns_inclusive(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    returns
}

/// Elementwise `A[t] = R[t] - V[t]`, no normalization.
pub fn compute_advantages(returns: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if returns.len() != values.len() {
        return Err(Error::Shape(format!(
            "returns len {} != values len {}",
            returns.len(),
            values.len()
        )));
    }
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

/// In-place zero-mean/unit-std normalization over a batch pool.
pub fn normalize_batch(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    for a in advantages.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// One pooled transition from the updater's point of view.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub state: &'a Vector,
    pub action_id: usize,
    pub log_prob_old: f64,
    pub advantage: f64,
}

/// Clipped-surrogate policy loss and its parameter gradients, plus the mean
/// entropy of the current policy over the batch. Gradients flow only through
/// the new log-probabilities; transitions clipped on the wrong side
/// contribute exactly zero gradient.
pub fn surrogate_with_entropy(
    policy: &PolicyNet,
    batch: &[BatchItem],
    clip_epsilon: f64,
    entropy_coef: f64,
) -> Result<(f64, f64, MlpParams)> {
    if batch.is_empty() {
        return Err(Error::Misuse("empty surrogate batch".into()));
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut mean_entropy = 0.0;
    let mut grads = policy.params().zeros_like();
    for item in batch {
        let (logits, cache) = mlp_forward(policy.params(), item.state)?;
        let log_probs = log_softmax(&logits)?;
        let probs = softmax(&logits)?;
        let new_log_prob = log_probs.values()[item.action_id];
        let ratio = libm::exp(new_log_prob - item.log_prob_old);
        if !ratio.is_finite() {
            return Err(Error::Numeric(format!("non-finite policy ratio {ratio}")));
        }
        let advantage = item.advantage;
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantage;
        loss -= unclipped.min(clipped) / n;

        // d(-term)/d(new_log_prob): the unclipped branch carries -A·r; a
        // selected clipped branch is constant in θ.
        let dlogp = if unclipped <= clipped {
            -advantage * ratio / n
        } else {
            0.0
        };

        let entropy: f64 = probs
            .values()
            .iter()
            .zip(log_probs.values())
            .map(|(p, lp)| -p * lp)
            .sum();
        mean_entropy += entropy / n;

        // dloss/dlogits = dlogp·(onehot - p) + coef/n · p ⊙ (logp + H).
        let mut grad_logits = vec![0.0; ACTION_COUNT];
        for (j, gl) in grad_logits.iter_mut().enumerate() {
            let p = probs.values()[j];
            let onehot = if j == item.action_id { 1.0 } else { 0.0 };
            *gl = dlogp * (onehot - p);
            if entropy_coef != 0.0 {
                *gl += entropy_coef / n * p * (log_probs.values()[j] + entropy);
            }
        }
        let g = mlp_backward(policy.params(), &cache, &Vector::new(grad_logits)?)?;
        grads.add_scaled(&g, 1.0);
    }
    Ok((loss, mean_entropy, grads))
}

/// The plain clipped surrogate: loss and gradients, no entropy bonus.
pub fn ppo_surrogate_loss(
    policy: &PolicyNet,
    batch: &[BatchItem],
    clip_epsilon: f64,
) -> Result<(f64, MlpParams)> {
    let (loss, _, grads) = surrogate_with_entropy(policy, batch, clip_epsilon, 0.0)?;
    Ok((loss, grads))
}

/// Critic loss `0.5·mean((V(s) - R)²)` and its gradients.
pub fn value_loss(
    value: &ValueNet,
    states: &[&Vector],
    returns: &[f64],
) -> Result<(f64, MlpParams)> {
    if states.len() != returns.len() || states.is_empty() {
        return Err(Error::Shape(format!(
            "value loss over {} states vs {} returns",
            states.len(),
            returns.len()
        )));
    }
    let n = states.len() as f64;
    let mut loss = 0.0;
    let mut grads = value.params().zeros_like();
    for (state, ret) in states.iter().zip(returns) {
        let (out, cache) = mlp_forward(value.params(), state)?;
        let v = out.values()[0];
        let diff = v - ret;
        loss += 0.5 * diff * diff / n;
        let g = mlp_backward(value.params(), &cache, &Vector::new(vec![diff / n])?)?;
        grads.add_scaled(&g, 1.0);
    }
    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Collects `config.batch_size` episodes, assigning environments round-robin
/// across the template set. Each episode runs on an independent rng stream,
/// so the batch is reproducible regardless of collection order.
pub fn collect_rollouts(
    envs: &[Env],
    policy: &PolicyNet,
    value: &ValueNet,
    config: &PpoConfig,
    rng: &Rng,
) -> Result<Vec<EpisodeTrajectory>> {
    if envs.is_empty() {
        return Err(Error::Config("no environments to roll out".into()));
    }
    let mut batch = Vec::with_capacity(config.batch_size);
    for episode in 0..config.batch_size {
        let env = &envs[episode % envs.len()];
        let mut ep_rng = rng.split_index("episode", episode as u64);
        let mut state = env.warm_start(&mut ep_rng)?;
        let mut transitions = Vec::with_capacity(config.horizon);
        let mut breakdowns = Vec::with_capacity(config.horizon);
        for t in 1..=config.horizon {
            let choice =
                select_action(policy, &state.embedding, &mut ep_rng, SelectionMode::Sample)?;
            let value_old = value_estimate(value, &state.embedding)?;
            let (next, breakdown): (EnvState, RewardBreakdown) =
                env.step(&state, choice.action_id, &mut ep_rng)?;
            transitions.push(TransitionRecord {
                state: state.embedding.clone(),
                action_id: choice.action_id,
                log_prob_old: choice.log_prob,
                value_old,
                reward: breakdown.total,
                t,
            });
            breakdowns.push(breakdown);
            state = next;
        }
        batch.push(EpisodeTrajectory {
            template_id: env.record().id.clone(),
            transitions,
            breakdowns,
        });
    }
    Ok(batch)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// One CSV row of the training log.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_r1: f64,
    pub mean_r2: f64,
    pub mean_r3: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Image-generation queries since the start of the run.
    pub queries_images: u64,
    /// Total metered cost since the start of the run, micro-dollars.
    pub cost_micros: u64,
}

impl IterationStats {
    pub const CSV_HEADER: &'static str = "iteration,mean_reward,mean_r1,mean_r2,mean_r3,policy_loss,value_loss,queries_images,cost_dollars";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.mean_reward,
            self.mean_r1,
            self.mean_r2,
            self.mean_r3,
            self.policy_loss,
            self.value_loss,
            self.queries_images,
            self.cost_micros as f64 / 1e6,
        )
    }
}

/// Networks, optimizer states, and the per-iteration log of one run.
pub struct TrainOutput {
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub policy_adam: AdamState,
    pub value_adam: AdamState,
    pub log: Vec<IterationStats>,
    /// Set when training aborted on a non-finite loss; the networks carry
    /// the last finite state.
    pub diverged_at: Option<usize>,
}

/// Policy/value network width.
#[derive(Debug, Clone)]
pub struct NetConfig {
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { hidden: 256 }
    }
}

/// Incremental training driver: owns the environments and networks and
/// advances one collect-and-update iteration per [`Trainer::step`] call.
/// [`train`] drives it to completion; interactive frontends step it.
pub struct Trainer {
    envs: Vec<Env>,
    gateway: Arc<Gateway>,
    config: PpoConfig,
    policy: PolicyNet,
    value: ValueNet,
    policy_adam: AdamState,
    value_adam: AdamState,
    root: Rng,
    iteration: usize,
    log: Vec<IterationStats>,
    diverged_at: Option<usize>,
}

impl Trainer {
    pub fn new(
        envs: Vec<Env>,
        gateway: Arc<Gateway>,
        config: &PpoConfig,
        net: &NetConfig,
        seed: u64,
    ) -> Result<Trainer> {
        config.validate()?;
        if envs.is_empty() {
            return Err(Error::Config(
                "training needs at least one environment".into(),
            ));
        }
        let state_dim = gateway.embed_dim(BackendRole::TextEmbedderState)?;
        let (policy, value) = policy_init(seed, state_dim, net.hidden)?;
        let policy_adam = AdamState::new(policy.params());
        let value_adam = AdamState::new(value.params());
        Ok(Trainer {
            envs,
            gateway,
            config: config.clone(),
            policy,
            value,
            policy_adam,
            value_adam,
            root: Rng::seed(seed).split("train"),
            iteration: 0,
            log: Vec::new(),
            diverged_at: None,
        })
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn value(&self) -> &ValueNet {
        &self.value
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &[IterationStats] {
        &self.log
    }

    pub fn diverged_at(&self) -> Option<usize> {
        self.diverged_at
    }

    /// One iteration: collect a batch, pool returns/advantages, run the
    /// configured number of Adam updates. On a non-finite loss the networks
    /// are rolled back to the pre-batch snapshot and `Error::Diverged` is
    /// returned; the trainer stays usable for checkpointing.
    pub fn step(&mut self) -> Result<IterationStats> {
        if let Some(iteration) = self.diverged_at {
            return Err(Error::Diverged { iteration });
        }
        let iteration = self.iteration;
        let iter_rng = self.root.split_index("iteration", iteration as u64);
        let batch = collect_rollouts(
            &self.envs,
            &self.policy,
            &self.value,
            &self.config,
            &iter_rng,
        )?;

        // Pool transitions with their per-episode returns.
        let config = &self.config;
        let mut items: Vec<(usize, usize)> = Vec::new(); // (episode, step)
        let mut returns_pool = Vec::new();
        for (e, episode) in batch.iter().enumerate() {
            let rewards: Vec<f64> = episode.transitions.iter().map(|t| t.reward).collect();
            let returns = if config.include_immediate_reward {
                compute_returns_inclusive(&rewards, config.gamma)
            } else {
                compute_returns(&rewards, config.gamma)
            };
            for (s, r) in returns.into_iter().enumerate() {
                items.push((e, s));
                returns_pool.push(r);
            }
        }
        let values_old: Vec<f64> = items
            .iter()
            .map(|&(e, s)| batch[e].transitions[s].value_old)
            .collect();
        let mut advantages = compute_advantages(&returns_pool, &values_old)?;
        if config.normalize_advantages {
            normalize_batch(&mut advantages);
        }
        let batch_items: Vec<BatchItem> = items
            .iter()
            .zip(&advantages)
            .map(|(&(e, s), &advantage)| {
                let tr = &batch[e].transitions[s];
                BatchItem {
                    state: &tr.state,
                    action_id: tr.action_id,
                    log_prob_old: tr.log_prob_old,
                    advantage,
                }
            })
            .collect();
        let states: Vec<&Vector> = items
            .iter()
            .map(|&(e, s)| &batch[e].transitions[s].state)
            .collect();

        // Snapshot for divergence recovery.
        let snapshot = (
            self.policy.clone(),
            self.value.clone(),
            self.policy_adam.clone(),
            self.value_adam.clone(),
        );
        let mut first_policy_loss = 0.0;
        let mut first_value_loss = 0.0;
        let mut diverged = false;
        for update in 0..config.updates_per_batch {
            let (p_loss, _entropy, p_grads) = surrogate_with_entropy(
                &self.policy,
                &batch_items,
                config.clip_epsilon,
                config.entropy_coef,
            )?;
            let (v_loss, mut v_grads) = value_loss(&self.value, &states, &returns_pool)?;
            if update == 0 {
                first_policy_loss = p_loss;
                first_value_loss = v_loss;
            }
            if !p_loss.is_finite() || !v_loss.is_finite() {
                diverged = true;
                break;
            }
            scale_params(&mut v_grads, config.value_loss_weight);
            adam_step(
                self.policy.params_mut(),
                &p_grads,
                &mut self.policy_adam,
                config.lr,
            )?;
            adam_step(
                self.value.params_mut(),
                &v_grads,
                &mut self.value_adam,
                config.lr,
            )?;
            if !self.policy.params().is_finite() || !self.value.params().is_finite() {
                diverged = true;
                break;
            }
        }
        if diverged {
            let (p, v, pa, va) = snapshot;
            self.policy = p;
            self.value = v;
            self.policy_adam = pa;
            self.value_adam = va;
            self.diverged_at = Some(iteration);
            return Err(Error::Diverged { iteration });
        }

        let stats = iteration_stats(
            iteration,
            &batch,
            first_policy_loss,
            first_value_loss,
            &self.gateway,
        );
        self.log.push(stats.clone());
        self.iteration += 1;
        Ok(stats)
    }

    pub fn into_output(self) -> TrainOutput {
        TrainOutput {
            policy: self.policy,
            value: self.value,
            policy_adam: self.policy_adam,
            value_adam: self.value_adam,
            log: self.log,
            diverged_at: self.diverged_at,
        }
    }
}

/// Trains policy and value networks over the given environments.
///
/// Loop: collect `batch_size` episodes round-robin, compute returns and
/// advantages, run `updates_per_batch` Adam steps on the combined objective
/// (surrogate + value_loss_weight·critic − entropy_coef·entropy), repeat.
pub fn train(
    envs: Vec<Env>,
    gateway: Arc<Gateway>,
    config: &PpoConfig,
    net: &NetConfig,
    seed: u64,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(envs, gateway, config, net, seed)?;
    for _ in 0..config.train_iterations {
        match trainer.step() {
            Ok(_) => {}
            Err(Error::Diverged { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(trainer.into_output())
}

fn scale_params(params: &mut MlpParams, scale: f64) {
    let zero = params.zeros_like();
    params.zip_apply(&zero, |a, _| a * scale);
}

fn iteration_stats(
    iteration: usize,
    batch: &[EpisodeTrajectory],
    policy_loss: f64,
    value_loss: f64,
    gateway: &Gateway,
) -> IterationStats {
    let mut n = 0usize;
    let (mut total, mut r1, mut r2, mut r3) = (0.0, 0.0, 0.0, 0.0);
    for episode in batch {
        for b in &episode.breakdowns {
            total += b.total;
            r1 += b.r1;
            r2 += b.r2.unwrap_or(0.0);
            r3 += b.r3;
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    let usage = gateway.usage();
    IterationStats {
        iteration,
        mean_reward: total / n,
        mean_r1: r1 / n,
        mean_r2: r2 / n,
        mean_r3: r3 / n,
        policy_loss,
        value_loss,
        queries_images: usage.count(BackendRole::ImageGenerator),
        cost_micros: usage.total_cost_micros,
    }
}
