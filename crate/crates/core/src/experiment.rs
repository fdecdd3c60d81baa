//! Synthetic A/B experiment over a persona cohort.
//!
//! Every persona talks to both arms on the same topic schedule. The
//! control arm answers with fixed prompt parameters; the experimental arm
//! runs the adaptive agent, whose profiler and policy are pre-trained on a
//! separately seeded cohort and then refined online per persona.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conversation::{
    Arm, ElicitationAnswer, EventKind, Liked, SessionEvent, SessionRecord, Timestamp, TurnRecord, Utterance,
};
use crate::gateway::{measure_response, mock_complete, ObservedStyle};
use crate::metrics::{elicitation_features, extract_features, sentiment_score, FeatureVector, MetricsConfig};
use crate::persona::{
    default_topics, generate_personas, persona_answer, persona_reply, persona_satisfaction, persona_survey, Domain,
    Persona, SimConfig,
};
use crate::profiler::{
    compute_reward, majority_baseline, split_by_group, train_supervised, Accuracy, ActionMode, AdaptiveAgent,
    AgentConfig, LabeledExample, PolicyModel, PpoConfig, PpoLearner, ProfileLabel, ProfilerModel, TrainConfig,
    TrainingLog, UserProfile, ValueModel,
};
use crate::prompt::{elicitation_questions, DetailLevel, PromptParameters, Style};
use crate::rng::{self, derive_seed, label};
use crate::stats::{
    ci95, cohens_d, descriptive_stats, histogram, improvement_pct, mann_whitney_u, mean, one_way_anova,
    posthoc_power, welch_t, Anova, Descriptive, Histogram, MannWhitney, TTest, HISTOGRAM_BINS, HISTOGRAM_START,
    HISTOGRAM_WIDTH,
};
use crate::{Error, Result};

pub const EXPERIMENT_CONFIG_VERSION: u32 = 1;

/// How an arm chooses prompt parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmMode {
    /// `control_params` on every turn.
    Fixed,
    /// Profiler plus online policy.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSettings {
    pub control: ArmMode,
    pub experimental: ArmMode,
}

impl Default for ArmSettings {
    fn default() -> Self {
        ArmSettings { control: ArmMode::Fixed, experimental: ArmMode::Adaptive }
    }
}

impl ArmSettings {
    pub fn mode(&self, arm: Arm) -> ArmMode {
        match arm {
            Arm::Control => self.control,
            Arm::Experimental => self.experimental,
        }
    }

    fn any_adaptive(&self) -> bool {
        self.control == ArmMode::Adaptive || self.experimental == ArmMode::Adaptive
    }
}

/// Pre-training on a cohort drawn from a seed derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pretraining {
    pub n_personas: usize,
    pub sessions_per_persona: usize,
    /// Passes of on-policy episodes over the cohort for the policy.
    pub policy_passes: usize,
    /// Persona share held out when the profiler is evaluated.
    pub holdout: f64,
    /// Initial probability of `keep` on every policy dimension.
    pub keep_prior: f64,
    pub train: TrainConfig,
}

impl Default for Pretraining {
    fn default() -> Self {
        Pretraining { n_personas: 100, sessions_per_persona: 3, policy_passes: 1, holdout: 0.2, keep_prior: 0.95, train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub start: f64,
    pub width: f64,
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec { start: HISTOGRAM_START, width: HISTOGRAM_WIDTH, bins: HISTOGRAM_BINS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub master_seed: u64,
    pub n_personas: usize,
    /// Sessions each persona holds in each arm; a persona has twice this
    /// many sessions in total.
    pub sessions_per_persona: usize,
    /// User turns per session; a closing bot message follows the last.
    pub turns_per_session: u32,
    pub topics: Vec<String>,
    pub arms: ArmSettings,
    pub control_params: PromptParameters,
    /// Bot think time before each message.
    pub bot_latency_ms: u64,
    pub pretraining: Pretraining,
    pub ppo: PpoConfig,
    pub sim: SimConfig,
    pub histogram: HistogramSpec,
    pub alpha: f64,
    /// Source revision recorded in the provenance block.
    pub commit_tag: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: EXPERIMENT_CONFIG_VERSION,
            master_seed: 0,
            n_personas: 50,
            sessions_per_persona: 3,
            turns_per_session: 11,
            topics: default_topics(),
            arms: ArmSettings::default(),
            control_params: PromptParameters::default(),
            bot_latency_ms: 1200,
            pretraining: Pretraining::default(),
            ppo: PpoConfig::default(),
            sim: SimConfig::default(),
            histogram: HistogramSpec::default(),
            alpha: 0.05,
            commit_tag: "unversioned".to_string(),
        }
    }
}

impl ExperimentConfig {
    /// Both arms fixed: the null experiment.
    pub fn null(master_seed: u64) -> Self {
        ExperimentConfig {
            master_seed,
            arms: ArmSettings { control: ArmMode::Fixed, experimental: ArmMode::Fixed },
            ..Default::default()
        }
    }

    pub fn total_sessions(&self) -> usize {
        2 * self.n_personas * self.sessions_per_persona
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != EXPERIMENT_CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        if self.n_personas < 2 || self.sessions_per_persona == 0 || self.turns_per_session == 0 {
            return Err(Error::Config("need at least 2 personas, 1 session and 1 turn".into()));
        }
        if self.topics.is_empty() {
            return Err(Error::Config("topic catalog is empty".into()));
        }
        for t in &self.topics {
            Domain::for_topic(t).ok_or_else(|| Error::UnknownDomain(t.clone()))?;
        }
        self.control_params.validate()?;
        self.ppo.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.histogram.width > 0.0) || self.histogram.bins == 0 {
            return Err(Error::Config("histogram needs positive width and at least one bin".into()));
        }
        let pre = &self.pretraining;
        if self.arms.any_adaptive() && (pre.n_personas < 2 || pre.sessions_per_persona == 0) {
            return Err(Error::Config("pre-training needs at least 2 personas and 1 session".into()));
        }
        if !(pre.holdout > 0.0 && pre.holdout < 1.0) {
            return Err(Error::Config(format!("holdout {} must lie in (0, 1)", pre.holdout)));
        }
        Ok(())
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Hex SHA-256 of the canonical JSON encoding of the run inputs.
pub fn config_hash(cfg: &ExperimentConfig, metrics: &MetricsConfig) -> String {
    sha256_hex(&serde_json::to_vec(&(cfg, metrics)).expect("configs serialise"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub config_hash: String,
    pub commit_tag: String,
    pub generator: String,
}

impl Provenance {
    pub fn for_run(cfg: &ExperimentConfig, metrics: &MetricsConfig) -> Self {
        Provenance {
            master_seed: cfg.master_seed,
            config_hash: config_hash(cfg, metrics),
            commit_tag: cfg.commit_tag.clone(),
            generator: format!("humaine-core {}", env!("CARGO_PKG_VERSION")),
        }
    }
}

/// Scores of one simulated session. All scores lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session_id: String,
    pub persona_id: u32,
    pub arm: Arm,
    /// 0-based position in the persona's schedule.
    pub session_index: u32,
    pub topic: String,
    /// Mean per-turn satisfaction.
    pub satisfaction: f64,
    /// Share of topic words echoed by the bot.
    pub relevance: f64,
    /// Share of (turn, dimension) pairs where the response hit the persona's preference.
    pub personalization_score: f64,
    /// One minus the normalised knowledge-level gap.
    pub expertise_alignment: f64,
    pub style_match: f64,
    /// Satisfaction, zeroed for incomplete sessions.
    pub task_achievement: f64,
    /// Share of dimensions where the parameters in force at session end match the persona.
    pub dimension_match: f64,
    pub mean_reward: f64,
    pub duration_s: f64,
    pub message_count: u32,
    pub completed: bool,
}

impl SessionOutcome {
    pub fn validate(&self) -> Result<()> {
        let scores = [
            self.satisfaction,
            self.relevance,
            self.personalization_score,
            self.expertise_alignment,
            self.style_match,
            self.task_achievement,
            self.dimension_match,
        ];
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::OutOfRange(format!("session {} has a score outside [0, 1]", self.session_id)));
        }
        Ok(())
    }
}

/// Where the learner's per-turn reward comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    /// Length, sentiment and likes of the user's reply.
    Engagement,
    /// The persona's noise-free satisfaction with the bot message.
    Satisfaction,
}

/// Everything a single session needs apart from the responder.
#[derive(Debug, Clone)]
pub struct SessionSetup<'a> {
    pub persona: &'a Persona,
    pub topic: &'a str,
    pub arm: Arm,
    pub session_index: u32,
    pub master_seed: u64,
    pub turns: u32,
    pub bot_latency_ms: u64,
    pub reward: RewardSource,
    pub ppo: &'a PpoConfig,
    pub sim: &'a SimConfig,
    pub metrics: &'a MetricsConfig,
    /// Keep the profiler input seen before every turn and after the last.
    pub collect_features: bool,
}

pub enum Responder<'a> {
    Fixed(PromptParameters),
    Adaptive { agent: &'a mut AdaptiveAgent, profiler: Option<&'a ProfilerModel> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub events: Vec<SessionEvent>,
    pub record: SessionRecord,
    pub outcome: SessionOutcome,
    /// Filled when `collect_features` is set.
    pub features: Vec<FeatureVector>,
}

const ELICIT_ANSWER_MS: u64 = 4_000;
const SURVEY_ANSWER_MS: u64 = 3_000;

fn arm_label(arm: Arm) -> u64 {
    label(match arm {
        Arm::Control => "control",
        Arm::Experimental => "experimental",
    })
}

pub fn session_id(persona_id: u32, session_index: u32, arm: Arm) -> String {
    let a = match arm {
        Arm::Control => "c",
        Arm::Experimental => "e",
    };
    format!("p{persona_id:03}-s{session_index}-{a}")
}

fn closing_message(topic: &str) -> String {
    format!("Thanks for talking through {} with me. Please rate this conversation.", topic.to_lowercase())
}

fn topic_words(topic: &str) -> Vec<String> {
    crate::text::folded_tokens(topic).into_iter().filter(|w| w != "and").collect()
}

fn relevance(text: &str, words: &[String]) -> f64 {
    if words.is_empty() {
        return 1.0;
    }
    let toks = crate::text::folded_tokens(text);
    words.iter().filter(|w| toks.contains(w)).count() as f64 / words.len() as f64
}

fn params_match(params: &PromptParameters, ideal: &ObservedStyle) -> [bool; 4] {
    [
        params.complexity_level == ideal.complexity_level,
        params.detail_level == ideal.detail_level,
        params.knowledge_level == ideal.knowledge_level,
        params.style == ideal.style,
    ]
}

fn share(flags: &[bool]) -> f64 {
    flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
}

struct Log {
    session_id: String,
    events: Vec<SessionEvent>,
}

impl Log {
    fn push(&mut self, at: Timestamp, kind: EventKind) {
        self.events.push(SessionEvent::new(self.session_id.clone(), at, kind));
    }
}

/// Run one session: elicitation, `turns` bot/user exchanges, a closing bot
/// message, the survey. An adaptive responder's episode is closed (and its
/// policy updated when learning is on) before returning.
pub fn simulate_session(setup: &SessionSetup<'_>, mut responder: Responder<'_>) -> Result<SessionRun> {
    let p = setup.persona;
    let topic = setup.topic;
    let domain = Domain::for_topic(topic).ok_or_else(|| Error::UnknownDomain(topic.to_string()))?;
    let path = [p.id as u64, setup.session_index as u64, arm_label(setup.arm)];
    let mut persona_rng = rng::stream(setup.master_seed, &[label("persona"), path[0], path[1], path[2]]);
    let mut agent_rng = rng::stream(setup.master_seed, &[label("agent"), path[0], path[1], path[2]]);
    let bot_seed = derive_seed(setup.master_seed, &[label("bot"), path[0], path[1]]);
    let sid = session_id(p.id, setup.session_index, setup.arm);

    let mut t = Timestamp::from_millis(0);
    let mut log = Log { session_id: sid.clone(), events: Vec::new() };
    let mut record = SessionRecord {
        session_id: sid.clone(),
        started_at: t,
        ended_at: None,
        topic: topic.to_string(),
        arm: setup.arm,
        turns: Vec::new(),
        surveys: Vec::new(),
        elicitation_answers: Vec::new(),
    };
    log.push(t, EventKind::SessionStart { topic: topic.to_string(), arm: setup.arm });

    let questions = match &responder {
        Responder::Adaptive { agent, .. } if setup.session_index > 0 => elicitation_questions(Some(&agent.profile)),
        _ => elicitation_questions(None),
    };
    for q in questions {
        t = t.plus_millis(ELICIT_ANSWER_MS);
        if let Some(answer) = persona_answer(p, q.dimension, &mut persona_rng) {
            let question = q.dimension.key().to_string();
            log.push(t, EventKind::Elicitation { question: question.clone(), answer: answer.clone() });
            record.elicitation_answers.push(ElicitationAnswer { question, answer });
        }
    }

    let ideal = p.ideal_style(domain);
    let words = topic_words(topic);
    let mut features = Vec::new();
    let mut satisfaction = 0.0;
    let mut reward_total = 0.0;
    let mut rel = 0.0;
    let mut matches: Vec<bool> = Vec::new();
    let mut align = 0.0;
    let mut style_hits = 0usize;
    let needs_features = setup.collect_features || matches!(responder, Responder::Adaptive { .. });

    for turn in 1..=setup.turns {
        t = t.plus_millis(setup.bot_latency_ms);
        let feats = if needs_features {
            let f = if record.turns.is_empty() {
                elicitation_features(&record.elicitation_answers)
            } else {
                extract_features(&record, setup.metrics)?
            };
            if setup.collect_features {
                features.push(f);
            }
            Some(f)
        } else {
            None
        };
        let params = match &mut responder {
            Responder::Fixed(params) => *params,
            Responder::Adaptive { agent, profiler } => {
                let mut f = feats.expect("adaptive sessions compute features");
                agent.recall(&mut f, &record.elicitation_answers);
                if let Some(model) = profiler {
                    agent.observe(model, &f, domain)?;
                }
                let (action, params) = agent.adapt(&f, domain, &mut agent_rng)?;
                log.push(
                    t,
                    EventKind::Adaptation { turn_index: turn, action, profile: agent.profile.clone(), params },
                );
                params
            }
        };
        let text = mock_complete(&params, topic, turn, bot_seed)?;
        let bot = Utterance::bot(text.clone(), t);
        log.push(t, EventKind::BotMessage { turn_index: turn, text: text.clone() });

        let reply = persona_reply(p, &bot, topic, turn, &mut persona_rng, setup.sim, &setup.metrics.sentiment_lexicon);
        let liked = reply.feedback.liked;
        if liked != Liked::None {
            log.push(reply.feedback.at, EventKind::Feedback { turn_index: turn, liked });
        }
        let user = reply.utterance.clone();
        log.push(
            user.sent_at,
            EventKind::UserMessage { turn_index: turn, text: user.text.clone(), typing_started_ms: user.typing_started_at },
        );

        let observed = measure_response(&text, domain);
        let chars = user.text.chars().count() as u32;
        let signal =
            compute_reward(chars, sentiment_score(&user.text, setup.metrics), liked, &setup.ppo.reward_weights);
        let r = match setup.reward {
            RewardSource::Engagement => {
                log.push(user.sent_at, EventKind::Reward { turn_index: turn, signal });
                signal.r_t
            }
            RewardSource::Satisfaction => persona_satisfaction(p, domain, &observed, &setup.sim.weights),
        };
        if let Responder::Adaptive { agent, .. } = &mut responder {
            agent.reward(r);
        }
        reward_total += r;
        satisfaction += reply.satisfaction_contrib;
        rel += relevance(&text, &words);
        let hit = params_match(&observed.into_params(), &ideal);
        matches.extend_from_slice(&hit);
        align += 1.0 - (observed.knowledge_level as f64 - ideal.knowledge_level as f64).abs() / 3.0;
        style_hits += hit[3] as usize;

        t = user.sent_at;
        record.turns.push(TurnRecord {
            index: turn,
            bot_prompt: bot,
            user_reply: Some(user),
            feedback: (liked != Liked::None).then_some(reply.feedback),
        });
    }

    if setup.collect_features {
        features.push(extract_features(&record, setup.metrics)?);
    }
    let closing_turn = setup.turns + 1;
    t = t.plus_millis(setup.bot_latency_ms);
    let closing = closing_message(topic);
    log.push(t, EventKind::BotMessage { turn_index: closing_turn, text: closing.clone() });
    record.turns.push(TurnRecord { index: closing_turn, bot_prompt: Utterance::bot(closing, t), user_reply: None, feedback: None });

    let n = setup.turns as f64;
    let satisfaction = (satisfaction / n).clamp(0.0, 1.0);
    for s in persona_survey(satisfaction, &mut persona_rng, setup.sim) {
        t = t.plus_millis(SURVEY_ANSWER_MS);
        log.push(t, EventKind::Survey { question_id: s.question_id, rating: s.rating });
        record.surveys.push(s);
    }
    log.push(t, EventKind::SessionEnd);
    record.ended_at = Some(t);

    let end_params = match &mut responder {
        Responder::Fixed(params) => *params,
        Responder::Adaptive { agent, .. } => {
            let params = agent.profile.params_for(domain);
            agent.remember_answers(&record.elicitation_answers);
            agent.end_episode(&mut agent_rng)?;
            params
        }
    };
    let completed = record.turns.iter().filter(|t| t.user_reply.is_some()).count() == setup.turns as usize
        && !record.surveys.is_empty();
    let message_count = record.turns.len() as u32 + setup.turns;
    let outcome = SessionOutcome {
        session_id: sid,
        persona_id: p.id,
        arm: setup.arm,
        session_index: setup.session_index,
        topic: topic.to_string(),
        satisfaction,
        relevance: rel / n,
        personalization_score: share(&matches),
        expertise_alignment: align / n,
        style_match: style_hits as f64 / n,
        task_achievement: if completed { satisfaction } else { 0.0 },
        dimension_match: share(&params_match(&end_params, &ideal)),
        mean_reward: reward_total / n,
        duration_s: t.seconds_since(record.started_at),
        message_count,
        completed,
    };
    Ok(SessionRun { events: log.events, record, outcome, features })
}

impl ObservedStyle {
    fn into_params(self) -> PromptParameters {
        PromptParameters {
            complexity_level: self.complexity_level,
            detail_level: self.detail_level,
            knowledge_level: self.knowledge_level,
            style: self.style,
        }
    }
}

/// `n` topics for one persona: a shuffled pass through the catalog,
/// repeated if `n` exceeds it. Both arms use the same schedule.
pub fn topic_schedule(master_seed: u64, persona_id: u32, n: usize, topics: &[String]) -> Vec<String> {
    let mut r = rng::stream(master_seed, &[label("schedule"), persona_id as u64]);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut pass: Vec<String> = topics.to_vec();
        pass.shuffle(&mut r);
        out.extend(pass.into_iter().take(n - out.len()));
    }
    out
}

/// Prompt parameters drawn uniformly over every level.
pub fn random_params(r: &mut impl Rng) -> PromptParameters {
    PromptParameters {
        complexity_level: r.random_range(1..=5),
        detail_level: DetailLevel::ALL[r.random_range(0..3)],
        knowledge_level: r.random_range(1..=4),
        style: Style::ALL[r.random_range(0..2)],
    }
}

/// Labelled profiler inputs: each session is held with parameters drawn at
/// random and contributes one example per turn prefix, from the
/// elicitation-only state to the full session.
pub fn build_corpus(
    cohort: &[Persona],
    topics: &[String],
    sessions_per_persona: usize,
    turns: u32,
    seed: u64,
    sim: &SimConfig,
    metrics: &MetricsConfig,
) -> Result<Vec<LabeledExample>> {
    let ppo = PpoConfig::default();
    let mut corpus = Vec::new();
    for p in cohort {
        let schedule = topic_schedule(seed, p.id, sessions_per_persona, topics);
        let mut pr = rng::stream(seed, &[label("corpus-params"), p.id as u64]);
        for (s, topic) in schedule.iter().enumerate() {
            let params = random_params(&mut pr);
            let setup = SessionSetup {
                persona: p,
                topic,
                arm: Arm::Control,
                session_index: s as u32,
                master_seed: seed,
                turns,
                bot_latency_ms: 0,
                reward: RewardSource::Engagement,
                ppo: &ppo,
                sim,
                metrics,
                collect_features: true,
            };
            let run = simulate_session(&setup, Responder::Fixed(params))?;
            let domain = Domain::for_topic(topic).ok_or_else(|| Error::UnknownDomain(topic.clone()))?;
            let label = ProfileLabel::from_persona(p, domain);
            corpus.extend(run.features.into_iter().map(|features| LabeledExample { features, label, group: p.id }));
        }
    }
    Ok(corpus)
}

/// Models shared by every adaptive agent of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModels {
    pub profiler: ProfilerModel,
    pub learner: PpoLearner,
    pub profiler_log: TrainingLog,
    pub corpus_size: usize,
}

fn pretrain_seed(master: u64) -> u64 {
    derive_seed(master, &[label("pretrain")])
}

/// The pre-training cohort and its corpus.
pub fn pretraining_corpus(cfg: &ExperimentConfig, metrics: &MetricsConfig) -> Result<(Vec<Persona>, Vec<LabeledExample>)> {
    let seed = pretrain_seed(cfg.master_seed);
    let cohort = generate_personas(cfg.pretraining.n_personas, seed)?;
    let corpus = build_corpus(
        &cohort,
        &cfg.topics,
        cfg.pretraining.sessions_per_persona,
        cfg.turns_per_session,
        seed,
        &cfg.sim,
        metrics,
    )?;
    Ok((cohort, corpus))
}

/// Supervised profiler, then a policy warm-started from its trunk and
/// trained on-policy over the pre-training cohort.
pub fn pretrain(cfg: &ExperimentConfig, metrics: &MetricsConfig) -> Result<TrainedModels> {
    let seed = pretrain_seed(cfg.master_seed);
    let (cohort, corpus) = pretraining_corpus(cfg, metrics)?;
    let train_cfg = TrainConfig { seed, ..cfg.pretraining.train.clone() };
    let (profiler, profiler_log) = train_supervised(&corpus, &train_cfg)?;

    let mut policy = PolicyModel::with_keep_prior(derive_seed(seed, &[label("policy")]), cfg.pretraining.keep_prior)?;
    policy.warm_start(&profiler)?;
    let value = ValueModel::new(derive_seed(seed, &[label("value")]));
    let mut learner = PpoLearner::from_models(policy, value, &cfg.ppo);
    let agent_cfg = AgentConfig { ppo: cfg.ppo.clone(), mode: ActionMode::Sample, learn: true };
    let sessions = cfg.pretraining.sessions_per_persona;
    for pass in 0..cfg.pretraining.policy_passes {
        for p in &cohort {
            let mut agent = AdaptiveAgent::new(learner, agent_cfg.clone());
            let schedule = topic_schedule(derive_seed(seed, &[pass as u64]), p.id, sessions, &cfg.topics);
            for (s, topic) in schedule.iter().enumerate() {
                let setup = SessionSetup {
                    persona: p,
                    topic,
                    arm: Arm::Experimental,
                    session_index: (pass * sessions + s) as u32,
                    master_seed: seed,
                    turns: cfg.turns_per_session,
                    bot_latency_ms: cfg.bot_latency_ms,
                    reward: RewardSource::Engagement,
                    ppo: &cfg.ppo,
                    sim: &cfg.sim,
                    metrics,
                    collect_features: false,
                };
                simulate_session(&setup, Responder::Adaptive { agent: &mut agent, profiler: Some(&profiler) })?;
            }
            learner = agent.learner;
        }
    }
    learner.reset_optimizers(&cfg.ppo);
    Ok(TrainedModels { profiler, learner, profiler_log, corpus_size: corpus.len() })
}

/// Held-out quality of the supervised profiler on the pre-training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilerEvaluation {
    pub train_examples: usize,
    pub test_examples: usize,
    pub accuracy: Accuracy,
    pub baseline: Accuracy,
    pub log: TrainingLog,
}

impl ProfilerEvaluation {
    /// Accuracy minus baseline per head, in percentage points.
    pub fn margin_pp(&self) -> [f64; 4] {
        core::array::from_fn(|h| 100.0 * (self.accuracy.0[h] - self.baseline.0[h]))
    }
}

pub fn evaluate_profiler(cfg: &ExperimentConfig, metrics: &MetricsConfig) -> Result<ProfilerEvaluation> {
    let seed = pretrain_seed(cfg.master_seed);
    let (_, corpus) = pretraining_corpus(cfg, metrics)?;
    let (train, test) = split_by_group(&corpus, cfg.pretraining.holdout, seed);
    let train_cfg = TrainConfig { seed, ..cfg.pretraining.train.clone() };
    let (model, log) = train_supervised(&train, &train_cfg)?;
    Ok(ProfilerEvaluation {
        train_examples: train.len(),
        test_examples: test.len(),
        accuracy: model.evaluate(&test)?,
        baseline: majority_baseline(&train, &test)?,
        log,
    })
}

/// Cohort, schedules and models, ready for per-persona runs.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub config: ExperimentConfig,
    pub metrics: MetricsConfig,
    pub cohort: Vec<Persona>,
    pub schedules: Vec<Vec<String>>,
    /// Present when an arm adapts.
    pub models: Option<TrainedModels>,
}

pub fn prepare_experiment(cfg: &ExperimentConfig, metrics: &MetricsConfig) -> Result<PreparedExperiment> {
    cfg.validate()?;
    metrics.validate()?;
    let cohort = generate_personas(cfg.n_personas, derive_seed(cfg.master_seed, &[label("cohort")]))?;
    let schedules = cohort
        .iter()
        .map(|p| topic_schedule(cfg.master_seed, p.id, cfg.sessions_per_persona, &cfg.topics))
        .collect();
    let models = if cfg.arms.any_adaptive() { Some(pretrain(cfg, metrics)?) } else { None };
    Ok(PreparedExperiment { config: cfg.clone(), metrics: metrics.clone(), cohort, schedules, models })
}

/// Outcomes and event logs of one persona across both arms.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaRun {
    pub outcomes: Vec<SessionOutcome>,
    pub events: Vec<SessionEvent>,
}

/// Both arms for the persona at `index`. Independent of every other
/// persona, so personas may run in parallel.
pub fn run_persona(prep: &PreparedExperiment, index: usize) -> Result<PersonaRun> {
    let cfg = &prep.config;
    let p = prep.cohort.get(index).ok_or_else(|| Error::OutOfRange(format!("persona index {index}")))?;
    let mut run = PersonaRun { outcomes: Vec::new(), events: Vec::new() };
    for arm in [Arm::Control, Arm::Experimental] {
        let mut agent = match cfg.arms.mode(arm) {
            ArmMode::Fixed => None,
            ArmMode::Adaptive => {
                let models = prep.models.as_ref().ok_or(Error::MissingField("models"))?;
                let agent_cfg = AgentConfig { ppo: cfg.ppo.clone(), mode: ActionMode::Sample, learn: true };
                Some(AdaptiveAgent::new(models.learner.clone(), agent_cfg))
            }
        };
        for (s, topic) in prep.schedules[index].iter().enumerate() {
            let setup = SessionSetup {
                persona: p,
                topic,
                arm,
                session_index: s as u32,
                master_seed: cfg.master_seed,
                turns: cfg.turns_per_session,
                bot_latency_ms: cfg.bot_latency_ms,
                reward: RewardSource::Engagement,
                ppo: &cfg.ppo,
                sim: &cfg.sim,
                metrics: &prep.metrics,
                collect_features: false,
            };
            let responder = match agent.as_mut() {
                None => Responder::Fixed(cfg.control_params),
                Some(agent) => Responder::Adaptive { agent, profiler: prep.models.as_ref().map(|m| &m.profiler) },
            };
            let session = simulate_session(&setup, responder)?;
            run.outcomes.push(session.outcome);
            run.events.extend(session.events);
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    /// Persona order, control sessions before experimental ones.
    pub outcomes: Vec<SessionOutcome>,
    pub events: Vec<SessionEvent>,
    pub report: StatsReport,
}

/// Merge per-persona runs (in persona order) into the final run.
pub fn assemble_experiment(prep: &PreparedExperiment, runs: Vec<PersonaRun>) -> Result<ExperimentRun> {
    let mut outcomes = Vec::new();
    let mut events = Vec::new();
    for r in runs {
        outcomes.extend(r.outcomes);
        events.extend(r.events);
    }
    let settings = ReportSettings {
        alpha: prep.config.alpha,
        histogram: prep.config.histogram,
        sessions_per_persona: prep.config.sessions_per_persona,
    };
    let report = build_report(outcomes.clone(), Provenance::for_run(&prep.config, &prep.metrics), settings)?;
    Ok(ExperimentRun { outcomes, events, report })
}

/// Run the whole A/B experiment sequentially.
pub fn run_experiment(cfg: &ExperimentConfig, metrics: &MetricsConfig) -> Result<ExperimentRun> {
    let prep = prepare_experiment(cfg, metrics)?;
    let runs = (0..prep.cohort.len()).map(|i| run_persona(&prep, i)).collect::<Result<Vec<_>>>()?;
    assemble_experiment(&prep, runs)
}

/// Inputs to the report that are not outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub alpha: f64,
    pub histogram: HistogramSpec,
    pub sessions_per_persona: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondaryRow {
    pub metric: String,
    pub control: f64,
    pub experimental: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRow {
    pub topic: String,
    /// Sessions per arm.
    pub sessions: usize,
    pub control: f64,
    pub experimental: f64,
    /// `None` when the control mean is zero.
    pub improvement_pct: Option<f64>,
}

/// Statistics of a finished run together with the outcomes they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub provenance: Provenance,
    pub settings: ReportSettings,
    pub n_personas: usize,
    pub total_sessions: usize,
    /// Per-persona mean satisfaction, persona order.
    pub control_scores: Vec<f64>,
    pub experimental_scores: Vec<f64>,
    pub control: Descriptive,
    pub experimental: Descriptive,
    pub ci_control: (f64, f64),
    pub ci_experimental: (f64, f64),
    pub improvement_pct: Option<f64>,
    pub welch: TTest,
    pub mann_whitney: MannWhitney,
    /// Experimental-arm session satisfaction across expertise domains.
    pub anova: Option<Anova>,
    pub cohens_d: Option<f64>,
    pub power: Option<f64>,
    pub secondary: Vec<SecondaryRow>,
    /// Ordered by improvement, largest first.
    pub topics: Vec<TopicRow>,
    /// Experimental-arm session satisfaction.
    pub histogram: Histogram,
    pub completion_rate: f64,
    pub mean_duration_min: f64,
    pub mean_messages: f64,
    /// Experimental-arm mean end-of-session dimension match per session index.
    pub dimension_match_by_session: Vec<f64>,
    pub outcomes: Vec<SessionOutcome>,
}

fn arm_sessions(outcomes: &[SessionOutcome], arm: Arm) -> Vec<&SessionOutcome> {
    outcomes.iter().filter(|o| o.arm == arm).collect()
}

fn per_persona(sessions: &[&SessionOutcome]) -> Vec<f64> {
    let mut by: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for o in sessions {
        let e = by.entry(o.persona_id).or_insert((0.0, 0));
        e.0 += o.satisfaction;
        e.1 += 1;
    }
    by.values().map(|(s, n)| s / *n as f64).collect()
}

fn mean_of(sessions: &[&SessionOutcome], f: impl Fn(&SessionOutcome) -> f64) -> f64 {
    sessions.iter().map(|o| f(o)).sum::<f64>() / sessions.len() as f64
}

/// Compute every statistic from raw outcomes.
pub fn build_report(outcomes: Vec<SessionOutcome>, provenance: Provenance, settings: ReportSettings) -> Result<StatsReport> {
    for o in &outcomes {
        o.validate()?;
    }
    let control_sessions = arm_sessions(&outcomes, Arm::Control);
    let experimental_sessions = arm_sessions(&outcomes, Arm::Experimental);
    if control_sessions.is_empty() {
        return Err(Error::MissingField("control"));
    }
    if experimental_sessions.is_empty() {
        return Err(Error::MissingField("experimental"));
    }
    let control_scores = per_persona(&control_sessions);
    let experimental_scores = per_persona(&experimental_sessions);
    let control = descriptive_stats(&control_scores)?;
    let experimental = descriptive_stats(&experimental_scores)?;

    let secondary = [
        ("Relevance Score", (|o: &SessionOutcome| o.relevance) as fn(&SessionOutcome) -> f64),
        ("Personalization Score", |o| o.personalization_score),
        ("Expertise Alignment", |o| o.expertise_alignment),
        ("Style Match", |o| o.style_match),
        ("Task Achievement", |o| o.task_achievement),
    ]
    .into_iter()
    .map(|(metric, f)| {
        let c = mean_of(&control_sessions, f);
        let e = mean_of(&experimental_sessions, f);
        SecondaryRow { metric: metric.to_string(), control: c, experimental: e, difference: e - c }
    })
    .collect();

    let mut topic_names: Vec<&str> = outcomes.iter().map(|o| o.topic.as_str()).collect();
    topic_names.sort_unstable();
    topic_names.dedup();
    let mut topics = Vec::new();
    for name in topic_names {
        let c: Vec<&SessionOutcome> = control_sessions.iter().copied().filter(|o| o.topic == name).collect();
        let e: Vec<&SessionOutcome> = experimental_sessions.iter().copied().filter(|o| o.topic == name).collect();
        if c.is_empty() || e.is_empty() {
            continue;
        }
        let cm = mean_of(&c, |o| o.satisfaction);
        let em = mean_of(&e, |o| o.satisfaction);
        topics.push(TopicRow {
            topic: name.to_string(),
            sessions: c.len().min(e.len()),
            control: cm,
            experimental: em,
            improvement_pct: improvement_pct(cm, em).ok(),
        });
    }
    topics.sort_by(|a, b| {
        let key = |r: &TopicRow| r.improvement_pct.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then_with(|| a.topic.cmp(&b.topic))
    });

    let by_domain: Vec<Vec<f64>> = Domain::ALL
        .iter()
        .map(|d| {
            experimental_sessions
                .iter()
                .filter(|o| Domain::for_topic(&o.topic) == Some(*d))
                .map(|o| o.satisfaction)
                .collect()
        })
        .filter(|g: &Vec<f64>| !g.is_empty())
        .collect();
    let groups: Vec<&[f64]> = by_domain.iter().map(|g| g.as_slice()).collect();
    let anova = one_way_anova(&groups).ok();

    let d = cohens_d(&control_scores, &experimental_scores).ok();
    let n_min = control_scores.len().min(experimental_scores.len());
    let power = d.and_then(|d| posthoc_power(d.abs(), n_min, settings.alpha).ok());
    let exp_sat: Vec<f64> = experimental_sessions.iter().map(|o| o.satisfaction).collect();
    let h = &settings.histogram;

    let max_index = experimental_sessions.iter().map(|o| o.session_index).max().unwrap_or(0);
    let dimension_match_by_session = (0..=max_index)
        .map(|i| {
            let s: Vec<&SessionOutcome> = experimental_sessions.iter().copied().filter(|o| o.session_index == i).collect();
            if s.is_empty() { 0.0 } else { mean_of(&s, |o| o.dimension_match) }
        })
        .collect();

    let all: Vec<&SessionOutcome> = outcomes.iter().collect();
    let mut personas: Vec<u32> = outcomes.iter().map(|o| o.persona_id).collect();
    personas.sort_unstable();
    personas.dedup();
    Ok(StatsReport {
        provenance,
        settings,
        n_personas: personas.len(),
        total_sessions: outcomes.len(),
        ci_control: ci95(&control_scores)?,
        ci_experimental: ci95(&experimental_scores)?,
        improvement_pct: improvement_pct(control.mean, experimental.mean).ok(),
        welch: welch_t(&control_scores, &experimental_scores)?,
        mann_whitney: mann_whitney_u(&control_scores, &experimental_scores)?,
        anova,
        cohens_d: d,
        power,
        secondary,
        topics,
        histogram: histogram(&exp_sat, h.start, h.width, h.bins)?,
        completion_rate: mean_of(&all, |o| if o.completed { 1.0 } else { 0.0 }),
        mean_duration_min: mean_of(&all, |o| o.duration_s) / 60.0,
        mean_messages: mean_of(&all, |o| o.message_count as f64),
        dimension_match_by_session,
        control,
        experimental,
        control_scores,
        experimental_scores,
        outcomes,
    })
}

/// Recompute the report from its own outcomes and compare field by field.
pub fn audit_report(report: &StatsReport) -> Result<()> {
    let fresh = build_report(report.outcomes.clone(), report.provenance.clone(), report.settings)?;
    let checks: [(&'static str, bool); 16] = [
        ("n_personas", fresh.n_personas == report.n_personas),
        ("total_sessions", fresh.total_sessions == report.total_sessions),
        ("control_scores", fresh.control_scores == report.control_scores),
        ("experimental_scores", fresh.experimental_scores == report.experimental_scores),
        ("control", fresh.control == report.control),
        ("experimental", fresh.experimental == report.experimental),
        ("ci", fresh.ci_control == report.ci_control && fresh.ci_experimental == report.ci_experimental),
        ("improvement_pct", fresh.improvement_pct == report.improvement_pct),
        ("welch", fresh.welch == report.welch),
        ("mann_whitney", fresh.mann_whitney == report.mann_whitney),
        ("anova", fresh.anova == report.anova),
        ("effect", fresh.cohens_d == report.cohens_d && fresh.power == report.power),
        ("secondary", fresh.secondary == report.secondary),
        ("topics", fresh.topics == report.topics),
        ("histogram", fresh.histogram == report.histogram),
        (
            "session_summary",
            fresh.completion_rate == report.completion_rate
                && fresh.mean_duration_min == report.mean_duration_min
                && fresh.mean_messages == report.mean_messages
                && fresh.dimension_match_by_session == report.dimension_match_by_session,
        ),
    ];
    match checks.iter().find(|(_, ok)| !ok) {
        Some((field, _)) => Err(Error::Inconsistent(field)),
        None => Ok(()),
    }
}

/// Stationary-persona learning check for the bare policy: no profiler,
/// a uniform profile at the start of every episode and the persona's
/// noise-free satisfaction as reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub personas: usize,
    pub episodes: usize,
    pub turns: u32,
    pub ppo: PpoConfig,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            personas: 5,
            episodes: 60,
            turns: 11,
            ppo: PpoConfig { gamma: 0.3, learning_rate: 0.01, epochs_per_update: 8, entropy_bonus: 0.05, ..PpoConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    /// Per persona: complexity, detail, knowledge, style matched after a greedy episode.
    pub matched: Vec<[bool; 4]>,
}

impl ConvergenceResult {
    pub fn match_rate(&self) -> f64 {
        let flat: Vec<bool> = self.matched.iter().flatten().copied().collect();
        share(&flat)
    }
}

pub fn convergence_run(cfg: &ConvergenceConfig, seed: u64, metrics: &MetricsConfig) -> Result<ConvergenceResult> {
    cfg.ppo.validate()?;
    let cohort = generate_personas(cfg.personas, derive_seed(seed, &[label("convergence")]))?;
    let topics = default_topics();
    let sim = SimConfig::noiseless();
    let mut matched = Vec::with_capacity(cohort.len());
    for p in &cohort {
        let mut r = rng::stream(seed, &[label("convergence-topic"), p.id as u64]);
        let topic = topics[r.random_range(0..topics.len())].clone();
        let domain = Domain::for_topic(&topic).ok_or_else(|| Error::UnknownDomain(topic.clone()))?;
        let learner = PpoLearner::new(derive_seed(seed, &[label("convergence-learner"), p.id as u64]), &cfg.ppo);
        let mut agent =
            AdaptiveAgent::new(learner, AgentConfig { ppo: cfg.ppo.clone(), mode: ActionMode::Sample, learn: true });
        for ep in 0..=cfg.episodes {
            if ep == cfg.episodes {
                agent.config.mode = ActionMode::Greedy;
                agent.config.learn = false;
            }
            agent.profile = UserProfile::uniform();
            let setup = SessionSetup {
                persona: p,
                topic: &topic,
                arm: Arm::Experimental,
                session_index: ep as u32,
                master_seed: seed,
                turns: cfg.turns,
                bot_latency_ms: 0,
                reward: RewardSource::Satisfaction,
                ppo: &cfg.ppo,
                sim: &sim,
                metrics,
                collect_features: false,
            };
            simulate_session(&setup, Responder::Adaptive { agent: &mut agent, profiler: None })?;
        }
        let ideal = p.ideal_style(domain);
        matched.push(params_match(&agent.profile.params_for(domain), &ideal));
    }
    Ok(ConvergenceResult { matched })
}

/// Share of `values` strictly inside `(-band, band)`.
pub fn within_band(values: &[f64], band: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| v.abs() < band).count() as f64 / values.len() as f64
}

/// Mean of per-persona scores, for quick checks.
pub fn arm_mean(report: &StatsReport, arm: Arm) -> Result<f64> {
    mean(match arm {
        Arm::Control => &report.control_scores,
        Arm::Experimental => &report.experimental_scores,
    })
}
