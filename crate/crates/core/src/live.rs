//! A conversation driven by a real client, one call per user action.
//!
//! [`LiveSession`] is the state behind one service session. It does no IO:
//! every call returns the events it appended so the caller can persist them,
//! and response text comes from a caller-supplied generator. A failed
//! generation leaves the session exactly as it was.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conversation::{
    Arm, ElicitationAnswer, EventKind, Liked, SessionEvent, SessionLog, SessionRecord, SurveyResponse, Timestamp,
};
use crate::gateway::{retrieve, DocumentStore};
use crate::metrics::{elicitation_slot, extract_features, sentiment_score, survey_satisfaction, MetricsConfig};
use crate::persona::Domain;
use crate::profiler::{compute_reward, AdaptiveAgent, ProfilerModel, RewardSignal, RewardWeights, UserProfile};
use crate::prompt::{elicitation_questions, render_prompt, ElicitationQuestion, PromptParameters, PromptTemplate};
use crate::rng::{self, derive_seed, label, StreamRng};
use crate::{Error, Result};

/// Retrieved documents prepended to each prompt.
pub const DEFAULT_RETRIEVE_K: usize = 2;
/// User messages quoted in the history summary.
const HISTORY_MESSAGES: usize = 3;
const HISTORY_CHARS: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveSettings {
    pub seed: u64,
    pub metrics: MetricsConfig,
    pub reward_weights: RewardWeights,
    /// Parameters of fixed-arm sessions.
    pub control_params: PromptParameters,
    pub retrieve_k: usize,
}

impl Default for LiveSettings {
    fn default() -> Self {
        LiveSettings {
            seed: 0,
            metrics: MetricsConfig::default(),
            reward_weights: RewardWeights::default(),
            control_params: PromptParameters::default(),
            retrieve_k: DEFAULT_RETRIEVE_K,
        }
    }
}

/// Read-only resources shared by every session of a service.
#[derive(Debug, Clone)]
pub struct LiveContext {
    pub settings: LiveSettings,
    pub template: PromptTemplate,
    pub documents: DocumentStore,
    /// Phase I model; without it adaptive sessions rely on the policy alone.
    pub profiler: Option<ProfilerModel>,
}

impl LiveContext {
    pub fn new(settings: LiveSettings, profiler: Option<ProfilerModel>) -> Self {
        LiveContext { settings, template: PromptTemplate::default(), documents: DocumentStore::builtin(), profiler }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Participant {
    #[default]
    Human,
    Persona,
}

/// What a client sees of the profiler after each call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSnapshot {
    pub profile: UserProfile,
    pub params: PromptParameters,
    pub confidence: f64,
    /// Index of the latest bot message.
    pub turn_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserMessage {
    pub text: String,
    pub typing_started_ms: Option<Timestamp>,
    pub sent_ms: Timestamp,
}

/// Everything a generator may use to produce the next bot message.
#[derive(Debug, Clone, Copy)]
pub struct Generation<'a> {
    pub prompt: &'a str,
    pub params: &'a PromptParameters,
    pub topic: &'a str,
    pub turn_index: u32,
    /// Per-session seed for deterministic responders.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnReply {
    /// Index of the new bot message.
    pub turn_index: u32,
    pub reply: String,
    pub prompt: String,
    pub reward: RewardSignal,
    pub snapshot: ProfileSnapshot,
    pub events: Vec<SessionEvent>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TurnError<E> {
    #[error(transparent)]
    Session(#[from] Error),
    #[error("generation failed: {0}")]
    Generator(E),
}

#[derive(Debug, Clone)]
pub struct LiveSession {
    id: String,
    topic: String,
    domain: Domain,
    arm: Arm,
    participant: Participant,
    ctx: Arc<LiveContext>,
    log: SessionLog,
    agent: Option<AdaptiveAgent>,
    params: PromptParameters,
    rng: StreamRng,
    bot_seed: u64,
    questions: Vec<ElicitationQuestion>,
    /// Latest feedback not yet folded into a reward.
    pending_feedback: Option<Liked>,
}

fn opening_message(topic: &str) -> String {
    format!("Hello! Let's talk about {topic}. What would you like to know?")
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl LiveSession {
    /// Open a session and send the opening bot message (turn 1). Adaptive
    /// sessions need `agent`; fixed ones ignore it. An agent that remembers
    /// earlier sessions gets targeted elicitation questions.
    pub fn open(
        ctx: Arc<LiveContext>,
        id: impl Into<String>,
        topic: &str,
        arm: Arm,
        participant: Participant,
        agent: Option<AdaptiveAgent>,
        at: Timestamp,
    ) -> Result<(Self, Vec<SessionEvent>)> {
        let id = id.into();
        let domain = Domain::for_topic(topic).ok_or_else(|| Error::UnknownDomain(topic.to_string()))?;
        let agent = match arm {
            Arm::Control => None,
            Arm::Experimental => Some(agent.ok_or_else(|| Error::Config("adaptive session without an agent".into()))?),
        };
        let questions = match &agent {
            Some(a) if a.memory().sessions > 0 => elicitation_questions(Some(&a.profile)),
            _ => elicitation_questions(None),
        };
        let params = match &agent {
            Some(a) => a.profile.params_for(domain),
            None => ctx.settings.control_params,
        };
        let seed = ctx.settings.seed;
        let mut s = LiveSession {
            rng: rng::stream(seed, &[label("live"), label(&id)]),
            bot_seed: derive_seed(seed, &[label("bot"), label(&id)]),
            id,
            topic: topic.to_string(),
            domain,
            arm,
            participant,
            ctx,
            log: SessionLog::new(),
            agent,
            params,
            questions,
            pending_feedback: None,
        };
        let mut events = Vec::new();
        s.push(&mut events, at, EventKind::SessionStart { topic: s.topic.clone(), arm })?;
        s.push(&mut events, at, EventKind::BotMessage { turn_index: 1, text: opening_message(topic) })?;
        Ok((s, events))
    }

    fn push(&mut self, out: &mut Vec<SessionEvent>, at: Timestamp, kind: EventKind) -> Result<()> {
        let e = SessionEvent::new(self.id.clone(), at, kind);
        self.log.append(e.clone())?;
        out.push(e);
        Ok(())
    }

    /// `at`, moved forward to the last logged event if the clock lags.
    fn not_before_last(&self, at: Timestamp) -> Timestamp {
        self.log.last_at().map_or(at, |last| at.max(last))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn participant(&self) -> Participant {
        self.participant
    }

    pub fn questions(&self) -> &[ElicitationQuestion] {
        &self.questions
    }

    pub fn events(&self) -> &[SessionEvent] {
        self.log.events()
    }

    pub fn agent(&self) -> Option<&AdaptiveAgent> {
        self.agent.as_ref()
    }

    /// Hand back the agent, e.g. to keep it for the user's next session.
    pub fn into_agent(self) -> Option<AdaptiveAgent> {
        self.agent
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.log.events().last().map(|e| &e.kind), Some(EventKind::SessionEnd))
    }

    pub fn record(&self) -> Result<SessionRecord> {
        self.log.replay()
    }

    /// Index of the latest bot message.
    pub fn turn_index(&self) -> u32 {
        self.log
            .events()
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::BotMessage { turn_index, .. } => Some(turn_index),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn has_user_messages(&self) -> bool {
        self.log.events().iter().any(|e| matches!(e.kind, EventKind::UserMessage { .. }))
    }

    pub fn snapshot(&self) -> ProfileSnapshot {
        let profile = self.agent.as_ref().map_or_else(UserProfile::uniform, |a| a.profile.clone());
        ProfileSnapshot { confidence: profile.confidence, profile, params: self.params, turn_index: self.turn_index() }
    }

    fn ensure_open(&self) -> Result<()> {
        if self.is_closed() {
            return Err(Error::Conflict(format!("session {} is closed", self.id)));
        }
        Ok(())
    }

    /// Record pre-session answers. Only allowed before the first user message.
    pub fn elicit(&mut self, answers: &[ElicitationAnswer], at: Timestamp) -> Result<Vec<SessionEvent>> {
        self.ensure_open()?;
        if self.has_user_messages() {
            return Err(Error::Conflict("elicitation is closed once the conversation started".into()));
        }
        for a in answers {
            elicitation_slot(&a.question, &a.answer)
                .ok_or_else(|| Error::OutOfRange(format!("answer `{}` to `{}`", a.answer, a.question)))?;
        }
        let at = self.not_before_last(at);
        let mut events = Vec::new();
        for a in answers {
            let kind = EventKind::Elicitation { question: a.question.clone(), answer: a.answer.clone() };
            self.push(&mut events, at, kind)?;
        }
        Ok(events)
    }

    /// Log the user's reply to the latest bot message, reward the last
    /// adaptation, adapt again and generate the next bot message.
    ///
    /// The reward uses the newest feedback received since the previous
    /// reward, whichever turn it targeted.
    pub fn user_message<E>(
        &mut self,
        msg: &UserMessage,
        generate: impl FnOnce(&Generation<'_>) -> core::result::Result<String, E>,
    ) -> core::result::Result<TurnReply, TurnError<E>> {
        self.ensure_open()?;
        let mut next = self.clone();
        let mut events = Vec::new();
        let turn = next.turn_index();
        let at = msg.sent_ms;
        next.push(
            &mut events,
            at,
            EventKind::UserMessage { turn_index: turn, text: msg.text.clone(), typing_started_ms: msg.typing_started_ms },
        )?;
        let record = next.log.replay()?;

        let cfg = &next.ctx.settings;
        let liked = next.pending_feedback.take().unwrap_or(Liked::None);
        let reward = compute_reward(
            msg.text.chars().count() as u32,
            sentiment_score(&msg.text, &cfg.metrics),
            liked,
            &cfg.reward_weights,
        );
        next.push(&mut events, at, EventKind::Reward { turn_index: turn, signal: reward })?;

        let ctx = Arc::clone(&next.ctx);
        if let Some(agent) = next.agent.as_mut() {
            agent.reward(reward.r_t);
            let mut f = extract_features(&record, &ctx.settings.metrics)?;
            agent.recall(&mut f, &record.elicitation_answers);
            if let Some(model) = &ctx.profiler {
                agent.observe(model, &f, next.domain)?;
            }
            let (action, params) = agent.adapt(&f, next.domain, &mut next.rng)?;
            let profile = agent.profile.clone();
            next.params = params;
            next.push(&mut events, at, EventKind::Adaptation { turn_index: turn + 1, action, profile, params })?;
        }

        let retrieved = match retrieve(&ctx.documents, &msg.text, ctx.settings.retrieve_k) {
            Ok(hits) => hits,
            Err(Error::EmptyInput(_)) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let bodies: Vec<&str> =
            retrieved.iter().filter_map(|r| ctx.documents.get(&r.doc_id)).map(|d| d.body.as_str()).collect();
        let history = history_summary(&record);
        let prompt = render_prompt(&ctx.template, &next.params, &next.topic, &history, &bodies, &msg.text)?;
        let text = generate(&Generation {
            prompt: &prompt,
            params: &next.params,
            topic: &next.topic,
            turn_index: turn + 1,
            seed: next.bot_seed,
        })
        .map_err(TurnError::Generator)?;
        next.push(&mut events, at, EventKind::BotMessage { turn_index: turn + 1, text: text.clone() })?;

        *self = next;
        Ok(TurnReply { turn_index: turn + 1, reply: text, prompt, reward, snapshot: self.snapshot(), events })
    }

    /// Like or dislike a bot message. A later call for the same turn wins.
    pub fn feedback(&mut self, turn_index: u32, liked: Liked, at: Timestamp) -> Result<Vec<SessionEvent>> {
        self.ensure_open()?;
        if turn_index == 0 || turn_index > self.turn_index() {
            return Err(Error::TurnNotFound(turn_index));
        }
        let at = self.not_before_last(at);
        let mut events = Vec::new();
        self.push(&mut events, at, EventKind::Feedback { turn_index, liked })?;
        self.pending_feedback = Some(liked);
        Ok(events)
    }

    /// Store the closing survey, close the session and end the episode.
    /// Returns the survey satisfaction.
    pub fn survey(&mut self, ratings: &[u8], at: Timestamp) -> Result<(f64, Vec<SessionEvent>)> {
        self.ensure_open()?;
        if ratings.is_empty() {
            return Err(Error::EmptyInput("survey ratings"));
        }
        let responses = ratings
            .iter()
            .enumerate()
            .map(|(j, r)| SurveyResponse::new(j as u32 + 1, *r))
            .collect::<Result<Vec<_>>>()?;
        let sbs = survey_satisfaction(&responses)?;
        let mut next = self.clone();
        let at = next.not_before_last(at);
        let mut events = Vec::new();
        for s in &responses {
            next.push(&mut events, at, EventKind::Survey { question_id: s.question_id, rating: s.rating })?;
        }
        next.push(&mut events, at, EventKind::SessionEnd)?;
        let answers = next.log.replay()?.elicitation_answers;
        if let Some(agent) = next.agent.as_mut() {
            agent.remember_answers(&answers);
            agent.end_episode(&mut next.rng)?;
        }
        *self = next;
        Ok((sbs, events))
    }
}

fn history_summary(record: &SessionRecord) -> String {
    let replies: Vec<&str> = record.completed_turns().filter_map(|t| t.user_reply.as_ref()).map(|u| u.text.as_str()).collect();
    let earlier = &replies[..replies.len().saturating_sub(1)];
    let recent = &earlier[earlier.len().saturating_sub(HISTORY_MESSAGES)..];
    recent.iter().map(|t| truncate(t, HISTORY_CHARS)).collect::<Vec<_>>().join(" | ")
}
