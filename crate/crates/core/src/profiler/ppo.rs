//! Online adaptation policy trained with clipped-surrogate PPO.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Mlp, Sgd};
use super::supervised::{ProfilerModel, TRUNK_WIDTH};
use super::{AdaptationAction, Move, UserProfile, ACTION_DIMS};
use crate::conversation::Liked;
use crate::math::{argmax, exp, ln, softmax_in_place, sqrt};
use crate::metrics::{FeatureVector, FEATURE_LEN};
use crate::persona::Domain;
use crate::rng::{self, label};
use crate::{Error, Result};

/// One slot per level of every adaptable dimension.
pub const LEVEL_SLOTS: usize = 5 + 3 + 4 + 2;
/// Features followed by a one-hot of the current level of each adaptable
/// dimension.
pub const POLICY_STATE_LEN: usize = FEATURE_LEN + LEVEL_SLOTS;
const N_MOVES: usize = 3;

/// Policy input: the feature vector plus the profile's current levels,
/// one-hot in the order complexity, detail, knowledge, style.
pub fn policy_state(features: &FeatureVector, profile: &UserProfile, domain: Domain) -> Vec<f64> {
    let p = profile.params_for(domain);
    let mut s = Vec::with_capacity(POLICY_STATE_LEN);
    s.extend_from_slice(features.as_slice());
    let mut levels = [0.0; LEVEL_SLOTS];
    levels[(p.complexity_level - 1) as usize] = 1.0;
    levels[5 + p.detail_level.index()] = 1.0;
    levels[8 + (p.knowledge_level - 1) as usize] = 1.0;
    levels[12 + p.style.index()] = 1.0;
    s.extend_from_slice(&levels);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub length: f64,
    pub sentiment: f64,
    pub feedback: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { length: 0.3, sentiment: 0.3, feedback: 0.4 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.length, self.sentiment, self.feedback];
        if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("reward weights {w:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub reward_weights: RewardWeights,
    pub entropy_bonus: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-3,
            momentum: 0.9,
            epochs_per_update: 4,
            minibatch_size: 32,
            reward_weights: RewardWeights::default(),
            entropy_bonus: 0.01,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || self.epochs_per_update == 0 || self.minibatch_size == 0 {
            return bad("learning rate, epochs and minibatch size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.entropy_bonus >= 0.0) {
            return bad("momentum must lie in [0, 1) and entropy bonus be non-negative");
        }
        self.reward_weights.validate()
    }
}

/// Engagement reward of one turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub turn_length_chars: u32,
    pub sentiment: f64,
    pub liked: Liked,
    pub r_t: f64,
}

/// Characters at which the length term saturates.
pub const LENGTH_SATURATION_CHARS: f64 = 200.0;

/// `w_len * min(len / 200, 1) + w_sent * (sentiment + 1) / 2 + w_fb * [liked]`.
pub fn compute_reward(turn_length_chars: u32, sentiment: f64, liked: Liked, w: &RewardWeights) -> RewardSignal {
    let len_term = (turn_length_chars as f64 / LENGTH_SATURATION_CHARS).min(1.0);
    let s = sentiment.clamp(-1.0, 1.0);
    let fb = if liked == Liked::Like { 1.0 } else { 0.0 };
    let r_t = (w.length * len_term + w.sentiment * (s + 1.0) / 2.0 + w.feedback * fb).clamp(0.0, 1.0);
    RewardSignal { turn_length_chars, sentiment: s, liked, r_t }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: Vec<f64>,
    pub action: AdaptationAction,
    /// Log-probability of `action` under the policy that chose it.
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
}

/// Steps of one episode, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBuffer {
    steps: Vec<Step>,
}

impl TrajectoryBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: Step) {
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }

    /// Undiscounted episode return.
    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Factored categorical policy: three move logits per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub net: Mlp,
}

/// Scalar state-value estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueModel {
    pub net: Mlp,
}

impl PolicyModel {
    /// Random trunk, zero head: every move starts at probability 1/3.
    pub fn new(seed: u64) -> Self {
        let net = Mlp::new(
            &[POLICY_STATE_LEN, TRUNK_WIDTH, TRUNK_WIDTH, ACTION_DIMS * N_MOVES],
            true,
            &mut rng::stream(seed, &[label("policy-init")]),
        )
        .expect("static layer sizes are valid");
        PolicyModel { net }
    }

    /// Zero head whose bias gives `keep` probability `p_keep` on every
    /// dimension, the rest split between the two moves.
    pub fn with_keep_prior(seed: u64, p_keep: f64) -> Result<Self> {
        if !(p_keep > 0.0 && p_keep < 1.0) {
            return Err(Error::Config(format!("keep prior {p_keep} must lie in (0, 1)")));
        }
        let mut m = Self::new(seed);
        let lift = ln(2.0 * p_keep / (1.0 - p_keep));
        let bias: Vec<f64> = (0..ACTION_DIMS * N_MOVES)
            .map(|i| if i % N_MOVES == Move::Keep.index() { lift } else { 0.0 })
            .collect();
        m.net.set_output_bias(&bias)?;
        Ok(m)
    }

    /// Start from the supervised model's hidden layers.
    pub fn warm_start(&mut self, profiler: &ProfilerModel) -> Result<()> {
        self.net.copy_trunk_from(&profiler.net)
    }

    pub fn probs(&self, state: &[f64]) -> Result<[[f64; N_MOVES]; ACTION_DIMS]> {
        let logits = self.net.predict(state)?;
        Ok(head_probs(&logits))
    }

    pub fn log_prob(&self, state: &[f64], action: &AdaptationAction) -> Result<f64> {
        let p = self.probs(state)?;
        Ok(action_log_prob(&p, action))
    }
}

impl ValueModel {
    pub fn new(seed: u64) -> Self {
        let net = Mlp::new(&[POLICY_STATE_LEN, TRUNK_WIDTH, TRUNK_WIDTH, 1], true, &mut rng::stream(seed, &[label("value-init")]))
            .expect("static layer sizes are valid");
        ValueModel { net }
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.predict(state)?[0])
    }
}

fn head_probs(logits: &[f64]) -> [[f64; N_MOVES]; ACTION_DIMS] {
    let mut out = [[0.0; N_MOVES]; ACTION_DIMS];
    for (d, row) in out.iter_mut().enumerate() {
        row.copy_from_slice(&logits[d * N_MOVES..(d + 1) * N_MOVES]);
        softmax_in_place(row);
    }
    out
}

fn action_log_prob(p: &[[f64; N_MOVES]; ACTION_DIMS], action: &AdaptationAction) -> f64 {
    action.moves().iter().enumerate().map(|(d, m)| ln(p[d][m.index()].max(1e-300))).sum()
}

fn entropy(p: &[f64; N_MOVES]) -> f64 {
    -p.iter().map(|q| if *q > 0.0 { q * ln(*q) } else { 0.0 }).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Sample,
    /// Most probable move per dimension; ties prefer `keep`, then the
    /// lowest index.
    Greedy,
}

fn greedy_move(p: &[f64; N_MOVES]) -> Move {
    let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if p[Move::Keep.index()] == best {
        return Move::Keep;
    }
    Move::from_index(argmax(p)).unwrap_or_default()
}

/// Choose an action; returns it with its log-probability.
pub fn select_action(
    policy: &PolicyModel,
    state: &[f64],
    mode: ActionMode,
    rng: &mut impl Rng,
) -> Result<(AdaptationAction, f64)> {
    let p = policy.probs(state)?;
    let mut moves = [Move::Keep; ACTION_DIMS];
    for d in 0..ACTION_DIMS {
        moves[d] = match mode {
            ActionMode::Greedy => greedy_move(&p[d]),
            ActionMode::Sample => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = N_MOVES - 1;
                for (i, q) in p[d].iter().enumerate() {
                    acc += q;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                Move::from_index(pick).unwrap_or_default()
            }
        };
    }
    let action = AdaptationAction::from_moves(moves);
    Ok((action, action_log_prob(&p, &action)))
}

/// Generalised advantage estimates. `last_value` bootstraps the step after
/// the final one (0 at episode end).
pub fn gae_advantages(rewards: &[f64], values: &[f64], last_value: f64, gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::Shape { expected: rewards.len(), got: values.len() });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut next_value = last_value;
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
        next_value = values[t];
    }
    Ok(adv)
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// One training example for the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSample {
    pub state: Vec<f64>,
    pub action: AdaptationAction,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

struct PolicyEval {
    objective: f64,
    ratio_sum: f64,
    clipped: usize,
    entropy: f64,
}

fn policy_pass(policy: &PolicyModel, batch: &[UpdateSample], cfg: &PpoConfig, grads: Option<&mut [f64]>) -> Result<PolicyEval> {
    let n = batch.len() as f64;
    let eps = cfg.clip_epsilon;
    let mut ev = PolicyEval { objective: 0.0, ratio_sum: 0.0, clipped: 0, entropy: 0.0 };
    let mut grads = grads;
    for s in batch {
        let trace = policy.net.forward(&s.state)?;
        let p = head_probs(trace.output());
        let logp = action_log_prob(&p, &s.action);
        let ratio = exp(logp - s.old_log_prob);
        let a = s.advantage;
        let h: f64 = p.iter().map(entropy).sum();
        ev.objective += (clipped_surrogate(ratio, a, eps) + cfg.entropy_bonus * h) / n;
        ev.ratio_sum += ratio;
        ev.entropy += h / n;
        let clip_active = (a > 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps);
        if clip_active {
            ev.clipped += 1;
        }
        if let Some(g) = grads.as_deref_mut() {
            let mut g_out = [0.0; ACTION_DIMS * N_MOVES];
            let moves = s.action.moves();
            for d in 0..ACTION_DIMS {
                let hd = entropy(&p[d]);
                for j in 0..N_MOVES {
                    let onehot = if moves[d].index() == j { 1.0 } else { 0.0 };
                    let surrogate = if clip_active { 0.0 } else { ratio * a * (onehot - p[d][j]) };
                    let lp = ln(p[d][j].max(1e-300));
                    let ent = -p[d][j] * (lp + hd);
                    g_out[d * N_MOVES + j] = (surrogate + cfg.entropy_bonus * ent) / n;
                }
            }
            policy.net.backward(&trace, &g_out, g);
        }
    }
    Ok(ev)
}

/// Mean clipped surrogate plus entropy bonus over `batch`.
pub fn policy_objective(policy: &PolicyModel, batch: &[UpdateSample], cfg: &PpoConfig) -> Result<f64> {
    Ok(policy_pass(policy, batch, cfg, None)?.objective)
}

/// Gradient of [`policy_objective`] with respect to the policy parameters.
pub fn policy_objective_grad(policy: &PolicyModel, batch: &[UpdateSample], cfg: &PpoConfig) -> Result<Vec<f64>> {
    let mut g = vec![0.0; policy.net.params.len()];
    policy_pass(policy, batch, cfg, Some(&mut g))?;
    Ok(g)
}

/// Mean squared error between value estimates and returns.
pub fn value_loss(value: &ValueModel, batch: &[UpdateSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        let e = value.value(&s.state)? - s.ret;
        total += e * e;
    }
    Ok(total / batch.len() as f64)
}

pub fn value_loss_grad(value: &ValueModel, batch: &[UpdateSample]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; value.net.params.len()];
    let n = batch.len() as f64;
    for s in batch {
        let trace = value.net.forward(&s.state)?;
        let e = trace.output()[0] - s.ret;
        value.net.backward(&trace, &[2.0 * e / n], &mut g);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub steps: usize,
}

/// Policy and value networks with their optimiser state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoLearner {
    pub policy: PolicyModel,
    pub value: ValueModel,
    policy_opt: Sgd,
    value_opt: Sgd,
}

impl PpoLearner {
    pub fn new(seed: u64, cfg: &PpoConfig) -> Self {
        Self::from_models(PolicyModel::new(seed), ValueModel::new(seed), cfg)
    }

    pub fn from_models(policy: PolicyModel, value: ValueModel, cfg: &PpoConfig) -> Self {
        let policy_opt = Sgd::new(cfg.learning_rate, cfg.momentum, policy.net.params.len());
        let value_opt = Sgd::new(cfg.learning_rate, cfg.momentum, value.net.params.len());
        PpoLearner { policy, value, policy_opt, value_opt }
    }

    /// Fresh optimiser state, same networks.
    pub fn reset_optimizers(&mut self, cfg: &PpoConfig) {
        *self = Self::from_models(self.policy.clone(), self.value.clone(), cfg);
    }
}

/// Run the clipped-surrogate epochs on prepared samples.
pub fn update_policy(
    learner: &mut PpoLearner,
    samples: &[UpdateSample],
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("trajectory buffer"));
    }
    cfg.validate()?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = UpdateStats { steps: samples.len(), ..Default::default() };
    let mut evals = 0usize;
    for _ in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let batch: Vec<UpdateSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let mut g = vec![0.0; learner.policy.net.params.len()];
            let ev = policy_pass(&learner.policy, &batch, cfg, Some(&mut g))?;
            // ascend the objective
            g.iter_mut().for_each(|v| *v = -*v);
            learner.policy_opt.step(&mut learner.policy.net.params, &g);
            let vg = value_loss_grad(&learner.value, &batch)?;
            stats.value_loss += value_loss(&learner.value, &batch)?;
            learner.value_opt.step(&mut learner.value.net.params, &vg);
            stats.mean_ratio += ev.ratio_sum / batch.len() as f64;
            stats.clip_fraction += ev.clipped as f64 / batch.len() as f64;
            stats.policy_loss -= ev.objective;
            stats.entropy += ev.entropy;
            evals += 1;
        }
    }
    let k = evals as f64;
    stats.mean_ratio /= k;
    stats.clip_fraction /= k;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    Ok(stats)
}

/// Turn an episode into advantages and returns, then update both networks.
pub fn ppo_update(
    learner: &mut PpoLearner,
    buffer: &TrajectoryBuffer,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    if buffer.is_empty() {
        return Err(Error::EmptyInput("trajectory buffer"));
    }
    let rewards: Vec<f64> = buffer.steps().iter().map(|s| s.reward).collect();
    let values: Vec<f64> = buffer.steps().iter().map(|s| s.value).collect();
    let mut adv = gae_advantages(&rewards, &values, 0.0, cfg.gamma, cfg.gae_lambda)?;
    let returns: Vec<f64> = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
    if adv.len() > 1 {
        let n = adv.len() as f64;
        let m = adv.iter().sum::<f64>() / n;
        let sd = sqrt(adv.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0));
        if sd > 1e-8 {
            adv.iter_mut().for_each(|a| *a = (*a - m) / sd);
        }
    }
    let samples: Vec<UpdateSample> = buffer
        .steps()
        .iter()
        .zip(adv.iter().zip(&returns))
        .map(|(s, (a, r))| UpdateSample {
            state: s.state.clone(),
            action: s.action,
            old_log_prob: s.log_prob,
            advantage: *a,
            ret: *r,
        })
        .collect();
    update_policy(learner, &samples, cfg, rng)
}
