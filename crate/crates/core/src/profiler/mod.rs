//! User profiles and the two learners that maintain them: a supervised
//! profile classifier and an online PPO policy that nudges the profile
//! from engagement rewards.

mod agent;
pub mod nn;
mod ppo;
mod supervised;

pub use agent::{AdaptiveAgent, AgentConfig, PendingStep, SessionMemory, BLEND_FLOOR};
pub use ppo::{
    clipped_surrogate, compute_reward, gae_advantages, policy_objective, policy_objective_grad, policy_state,
    ppo_update, select_action, update_policy, value_loss, value_loss_grad, ActionMode, PolicyModel, PpoConfig,
    PpoLearner, RewardSignal, RewardWeights, Step, TrajectoryBuffer, UpdateSample, UpdateStats, ValueModel,
    LENGTH_SATURATION_CHARS, LEVEL_SLOTS, POLICY_STATE_LEN,
};
pub use supervised::{
    infer_profile, majority_baseline, split_by_group, train_supervised, Accuracy, EpochStats, LabeledExample,
    ProfileLabel, ProfilerModel, TrainConfig, TrainingLog, HEAD_SIZES, TRUNK_WIDTH,
};

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::math::argmax;
use crate::persona::{Domain, PerDomain};
use crate::prompt::{DetailLevel, PromptParameters, Style};
use crate::{Error, Result};

/// Probability distributions over every personalisation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    /// Levels 1..=5.
    pub complexity_dist: [f64; 5],
    pub detail_dist: [f64; 3],
    pub style_dist: [f64; 2],
    /// Beginner, intermediate, advanced, expert.
    pub expertise_dist: PerDomain<[f64; 4]>,
    /// Mean highest probability across the heads.
    pub confidence: f64,
}

/// Smallest probability kept when distributions are multiplied.
const COMBINE_FLOOR: f64 = 1e-9;

fn valid_dist(v: &[f64]) -> bool {
    v.iter().all(|p| *p >= 0.0 && p.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for p in v.iter_mut() {
            *p /= s;
        }
    }
}

fn max_of(v: &[f64]) -> f64 {
    v[argmax(v)]
}

impl UserProfile {
    pub fn uniform() -> Self {
        let mut p = UserProfile {
            complexity_dist: [0.2; 5],
            detail_dist: [1.0 / 3.0; 3],
            style_dist: [0.5; 2],
            expertise_dist: PerDomain::uniform([0.25; 4]),
            confidence: 0.0,
        };
        p.refresh_confidence();
        p
    }

    pub fn validate(&self) -> Result<()> {
        let ok = valid_dist(&self.complexity_dist)
            && valid_dist(&self.detail_dist)
            && valid_dist(&self.style_dist)
            && Domain::ALL.iter().all(|d| valid_dist(&self.expertise_dist.get(*d)));
        if !ok {
            return Err(Error::OutOfRange("profile distribution is not a probability vector".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::OutOfRange(alloc::format!("confidence {}", self.confidence)));
        }
        Ok(())
    }

    pub fn refresh_confidence(&mut self) {
        let exp: f64 = Domain::ALL.iter().map(|d| max_of(&self.expertise_dist.get(*d))).sum::<f64>() / 4.0;
        self.confidence =
            (max_of(&self.complexity_dist) + max_of(&self.detail_dist) + max_of(&self.style_dist) + exp) / 4.0;
    }

    /// Most probable level per dimension; ties go to the lower level.
    pub fn params_for(&self, domain: Domain) -> PromptParameters {
        PromptParameters {
            complexity_level: argmax(&self.complexity_dist) as u8 + 1,
            detail_level: DetailLevel::from_index(argmax(&self.detail_dist)).unwrap_or_default(),
            knowledge_level: argmax(&self.expertise_dist.get(domain)) as u8 + 1,
            style: Style::from_index(argmax(&self.style_dist)).unwrap_or_default(),
        }
    }

    /// How comfortable the user is in `domain`: one minus the beginner mass.
    pub fn expertise_affinity(&self, domain: Domain) -> f64 {
        1.0 - self.expertise_dist.get(domain)[0]
    }

    /// Move `weight` of the mass toward `other`. Only the expertise of
    /// `domain` is blended; other domains keep their current estimate.
    pub fn blend(&mut self, other: &UserProfile, weight: f64, domain: Domain) {
        self.blend_split(other, weight, weight, domain);
    }

    /// Treat `other` as independent evidence: multiply the distributions
    /// level by level and renormalise. Only the expertise of `domain` is
    /// combined.
    pub fn combine(&mut self, other: &UserProfile, domain: Domain) {
        let mul = |a: &mut [f64], b: &[f64]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x = (*x * y).max(COMBINE_FLOOR);
            }
            normalize(a);
        };
        mul(&mut self.complexity_dist, &other.complexity_dist);
        mul(&mut self.detail_dist, &other.detail_dist);
        mul(&mut self.style_dist, &other.style_dist);
        mul(self.expertise_dist.get_mut(domain), &other.expertise_dist.get(domain));
        self.refresh_confidence();
    }

    /// [`UserProfile::blend`] with a separate weight for the expertise of `domain`.
    pub fn blend_split(&mut self, other: &UserProfile, weight: f64, expertise_weight: f64, domain: Domain) {
        let mix = |a: &mut [f64], b: &[f64], w: f64| {
            let w = w.clamp(0.0, 1.0);
            for (x, y) in a.iter_mut().zip(b) {
                *x = (1.0 - w) * *x + w * y;
            }
            normalize(a);
        };
        mix(&mut self.complexity_dist, &other.complexity_dist, weight);
        mix(&mut self.detail_dist, &other.detail_dist, weight);
        mix(&mut self.style_dist, &other.style_dist, weight);
        mix(self.expertise_dist.get_mut(domain), &other.expertise_dist.get(domain), expertise_weight);
        self.refresh_confidence();
    }
}

impl Default for UserProfile {
    fn default() -> Self {
        Self::uniform()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Decrease,
    #[default]
    Keep,
    Increase,
}

impl Move {
    pub const ALL: [Move; 3] = [Move::Decrease, Move::Keep, Move::Increase];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Move::Decrease => "decrease",
            Move::Keep => "keep",
            Move::Increase => "increase",
        })
    }
}

/// One move per adaptable dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdaptationAction {
    pub complexity: Move,
    pub detail: Move,
    /// Applies to the expertise of the active domain.
    pub expertise: Move,
    pub style: Move,
}

/// Number of adaptable dimensions.
pub const ACTION_DIMS: usize = 4;

impl AdaptationAction {
    pub fn keep() -> Self {
        Self::default()
    }

    /// Moves in policy-head order: complexity, detail, expertise, style.
    pub fn moves(&self) -> [Move; ACTION_DIMS] {
        [self.complexity, self.detail, self.expertise, self.style]
    }

    pub fn from_moves(m: [Move; ACTION_DIMS]) -> Self {
        AdaptationAction { complexity: m[0], detail: m[1], expertise: m[2], style: m[3] }
    }
}

/// Probability mass moved by one step.
pub const ADAPTATION_STEP: f64 = 0.15;

/// Shift up to [`ADAPTATION_STEP`] of the most probable level's mass to its
/// neighbour in the move direction. Moves past either end do nothing.
fn shift(dist: &mut [f64], m: Move) {
    let i = argmax(dist);
    let j = match m {
        Move::Keep => return,
        Move::Decrease if i == 0 => return,
        Move::Decrease => i - 1,
        Move::Increase if i + 1 == dist.len() => return,
        Move::Increase => i + 1,
    };
    let t = ADAPTATION_STEP.min(dist[i]);
    dist[i] -= t;
    dist[j] += t;
    normalize(dist);
}

/// Apply an adaptation to a profile; the expertise move targets `domain`.
pub fn apply_action(profile: &UserProfile, action: &AdaptationAction, domain: Domain) -> UserProfile {
    let mut p = profile.clone();
    shift(&mut p.complexity_dist, action.complexity);
    shift(&mut p.detail_dist, action.detail);
    shift(p.expertise_dist.get_mut(domain), action.expertise);
    shift(&mut p.style_dist, action.style);
    p.refresh_confidence();
    p
}
