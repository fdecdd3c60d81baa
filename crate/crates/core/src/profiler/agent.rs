//! Per-user adaptation loop shared by the simulator and the HTTP service.

use serde::{Deserialize, Serialize};

use super::ppo::{
    policy_state, ppo_update, select_action, ActionMode, PpoConfig, PpoLearner, Step, TrajectoryBuffer, UpdateStats,
};
use super::supervised::{infer_profile, ProfilerModel};
use super::{apply_action, AdaptationAction, UserProfile};
use crate::conversation::ElicitationAnswer;
use crate::metrics::{apply_elicitation, FeatureVector};
use crate::persona::Domain;
use crate::prompt::PromptParameters;
use crate::rng::StreamRng;
use crate::Result;

/// Smallest weight a fresh inference gets when blended into the profile.
pub const BLEND_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub ppo: PpoConfig,
    pub mode: ActionMode,
    /// Update the policy at the end of each episode.
    pub learn: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { ppo: PpoConfig::default(), mode: ActionMode::Sample, learn: true }
    }
}

/// Decision awaiting the reward of the user's reaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingStep {
    pub state: alloc::vec::Vec<f64>,
    pub action: AdaptationAction,
    pub log_prob: f64,
    pub value: f64,
}

/// One user's profile plus the online learner that adapts it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveAgent {
    pub profile: UserProfile,
    pub learner: PpoLearner,
    pub config: AgentConfig,
    buffer: TrajectoryBuffer,
    pending: Option<PendingStep>,
    inferences: u32,
    /// Latest answer per elicitation question, across sessions.
    #[serde(default)]
    answers: alloc::vec::Vec<ElicitationAnswer>,
    #[serde(default)]
    memory: SessionMemory,
    #[serde(default)]
    last_inference: Option<(UserProfile, Domain)>,
}

/// Evidence from finished sessions: the product of each session's last
/// inference.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMemory {
    pub profile: UserProfile,
    pub sessions: u32,
}

impl SessionMemory {
    fn record(&mut self, inferred: &UserProfile, domain: Domain) {
        self.profile.combine(inferred, domain);
        self.sessions += 1;
    }

    fn pool(&self, inferred: &UserProfile, domain: Domain) -> UserProfile {
        let mut out = inferred.clone();
        out.combine(&self.profile, domain);
        out
    }
}

impl AdaptiveAgent {
    pub fn new(learner: PpoLearner, config: AgentConfig) -> Self {
        AdaptiveAgent {
            profile: UserProfile::uniform(),
            learner,
            config,
            buffer: TrajectoryBuffer::new(),
            pending: None,
            inferences: 0,
            answers: alloc::vec::Vec::new(),
            memory: SessionMemory::default(),
            last_inference: None,
        }
    }

    pub fn memory(&self) -> &SessionMemory {
        &self.memory
    }

    pub fn remembered_answers(&self) -> &[ElicitationAnswer] {
        &self.answers
    }

    /// Keep the newest answer to each question for later sessions.
    pub fn remember_answers(&mut self, answers: &[ElicitationAnswer]) {
        for a in answers {
            self.answers.retain(|old| old.question != a.question);
            self.answers.push(a.clone());
        }
    }

    /// Fill elicitation slots from remembered answers, then let the answers
    /// of the current session override them.
    pub fn recall(&self, features: &mut FeatureVector, current: &[ElicitationAnswer]) {
        apply_elicitation(features, &self.answers);
        apply_elicitation(features, current);
    }

    pub fn buffer(&self) -> &TrajectoryBuffer {
        &self.buffer
    }

    /// Fold a fresh inference, pooled with the memory of earlier sessions,
    /// into the profile. The first inference replaces the prior; later ones
    /// get weight `max(0.2, 1 / (k + 1))`.
    pub fn observe(&mut self, profiler: &ProfilerModel, features: &FeatureVector, domain: Domain) -> Result<()> {
        let inferred = infer_profile(profiler, features.as_slice())?;
        let pooled = self.memory.pool(&inferred, domain);
        self.last_inference = Some((inferred, domain));
        let w = BLEND_FLOOR.max(1.0 / (self.inferences as f64 + 1.0));
        self.profile.blend(&pooled, w, domain);
        self.inferences += 1;
        Ok(())
    }

    /// Pick and apply an adaptation; returns it with the parameters for the
    /// next response. The step waits for [`AdaptiveAgent::reward`].
    pub fn adapt(&mut self, features: &FeatureVector, domain: Domain, rng: &mut StreamRng) -> Result<(AdaptationAction, PromptParameters)> {
        let state = policy_state(features, &self.profile, domain);
        let (action, log_prob) = select_action(&self.learner.policy, &state, self.config.mode, rng)?;
        let value = self.learner.value.value(&state)?;
        self.profile = apply_action(&self.profile, &action, domain);
        self.pending = Some(PendingStep { state, action, log_prob, value });
        Ok((action, self.profile.params_for(domain)))
    }

    /// Attach the reward to the pending step. Without one this is a no-op.
    pub fn reward(&mut self, r: f64) {
        if let Some(p) = self.pending.take() {
            self.buffer.push(Step { state: p.state, action: p.action, log_prob: p.log_prob, reward: r, value: p.value });
        }
    }

    /// Close the episode: update the learner if enabled, then clear it.
    /// The session's last inference joins the memory.
    pub fn end_episode(&mut self, rng: &mut StreamRng) -> Result<Option<UpdateStats>> {
        self.pending = None;
        if let Some((inferred, domain)) = self.last_inference.take() {
            self.memory.record(&inferred, domain);
        }
        let stats = if self.config.learn && !self.buffer.is_empty() {
            Some(ppo_update(&mut self.learner, &self.buffer, &self.config.ppo, rng)?)
        } else {
            None
        };
        self.buffer.clear();
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::ppo::PolicyModel;

    fn agent() -> AdaptiveAgent {
        let policy = PolicyModel::with_keep_prior(1, 0.95).unwrap();
        let value = super::super::ppo::ValueModel::new(1);
        AdaptiveAgent::new(PpoLearner::from_models(policy, value, &PpoConfig::default()), AgentConfig::default())
    }

    #[test]
    fn newest_answer_per_question_is_kept() {
        let mut a = agent();
        let ans = |q: &str, v: &str| ElicitationAnswer { question: q.into(), answer: v.into() };
        a.remember_answers(&[ans("detail", "concise"), ans("style", "professional")]);
        a.remember_answers(&[ans("detail", "comprehensive")]);
        assert_eq!(a.remembered_answers().len(), 2);
        let mut f = FeatureVector::neutral();
        a.recall(&mut f, &[ans("style", "conversational")]);
        assert_eq!(f.0[crate::metrics::slot::ELICIT_DETAIL], 1.0);
        assert_eq!(f.0[crate::metrics::slot::ELICIT_STYLE], 1.0);
    }

    #[test]
    fn memory_starts_empty_and_ignores_sessions_without_inference() {
        let mut a = agent();
        a.end_episode(&mut crate::rng::stream(0, &[])).unwrap();
        assert_eq!(a.memory().sessions, 0);
        assert_eq!(a.memory().profile, UserProfile::uniform());
    }
}
