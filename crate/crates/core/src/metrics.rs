//! Implicit and explicit interaction metrics and the profiler feature vector.
//!
//! Implicit: session duration, response time, sentiment, grammatical mistake
//! frequency, language complexity (`alpha * ASL + beta * TTR`) and typing
//! speed. Explicit: like-based feedback score and survey satisfaction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conversation::{ElicitationAnswer, FeedbackEvent, Liked, SessionRecord, SurveyResponse, TurnRecord, Utterance};
use crate::math::mean;
use crate::text;
use crate::{Error, Result};

/// Token → score map with scores in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon(BTreeMap<String, f64>);

/// Built-in sentiment lexicon.
pub const DEFAULT_LEXICON: &[(&str, f64)] = &[
    ("excellent", 1.0),
    ("perfect", 1.0),
    ("love", 1.0),
    ("amazing", 1.0),
    ("great", 0.75),
    ("wonderful", 0.75),
    ("fantastic", 0.75),
    ("good", 0.5),
    ("helpful", 0.5),
    ("nice", 0.5),
    ("thanks", 0.5),
    ("useful", 0.5),
    ("okay", 0.25),
    ("fine", 0.25),
    ("decent", 0.25),
    ("fair", 0.25),
    ("unclear", -0.25),
    ("meh", -0.25),
    ("slow", -0.25),
    ("vague", -0.25),
    ("bad", -0.5),
    ("confusing", -0.5),
    ("boring", -0.5),
    ("wrong", -0.5),
    ("poor", -0.75),
    ("frustrating", -0.75),
    ("annoying", -0.75),
    ("terrible", -1.0),
    ("awful", -1.0),
    ("useless", -1.0),
    ("hate", -1.0),
];

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (token, score) in entries {
            if !(-1.0..=1.0).contains(&score) || score.is_nan() {
                return Err(Error::Config(format!("lexicon score {score} for `{token}` outside [-1, 1]")));
            }
            map.insert(token.to_lowercase(), score);
        }
        Ok(Lexicon(map))
    }

    pub fn score(&self, token: &str) -> Option<f64> {
        self.0.get(token).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon(DEFAULT_LEXICON.iter().map(|&(t, s)| (t.to_string(), s)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrammarRule {
    /// The same word twice in a row.
    RepeatedWord,
    /// A sentence whose first letter is lowercase.
    SentenceCapital,
    /// Runs of two or more spaces.
    DoubleSpace,
    /// Unbalanced brackets, or an odd number of double quotes.
    UnmatchedBracket,
    /// Text not ending in `.`, `!` or `?`.
    MissingTerminal,
}

impl GrammarRule {
    pub const ALL: [GrammarRule; 5] = [
        GrammarRule::RepeatedWord,
        GrammarRule::SentenceCapital,
        GrammarRule::DoubleSpace,
        GrammarRule::UnmatchedBracket,
        GrammarRule::MissingTerminal,
    ];

    pub fn count(self, text: &str) -> usize {
        match self {
            GrammarRule::RepeatedWord => {
                let toks = text::folded_tokens(text);
                toks.windows(2).filter(|w| w[0] == w[1]).count()
            }
            GrammarRule::SentenceCapital => text::sentences(text)
                .iter()
                .filter(|s| s.chars().find(|c| c.is_alphabetic()).is_some_and(char::is_lowercase))
                .count(),
            GrammarRule::DoubleSpace => {
                let mut runs = 0;
                let mut run = 0;
                for c in text.chars() {
                    if c == ' ' {
                        run += 1;
                        if run == 2 {
                            runs += 1;
                        }
                    } else {
                        run = 0;
                    }
                }
                runs
            }
            GrammarRule::UnmatchedBracket => {
                let mut stack = Vec::new();
                let mut unmatched = 0;
                for c in text.chars() {
                    match c {
                        '(' | '[' | '{' => stack.push(c),
                        ')' | ']' | '}' => {
                            let open = match c {
                                ')' => '(',
                                ']' => '[',
                                _ => '{',
                            };
                            if stack.last() == Some(&open) {
                                stack.pop();
                            } else {
                                unmatched += 1;
                            }
                        }
                        _ => {}
                    }
                }
                let quotes = text.chars().filter(|&c| c == '"').count();
                unmatched + stack.len() + quotes % 2
            }
            GrammarRule::MissingTerminal => {
                let trimmed = text.trim_end();
                if text::word_count(trimmed) == 0 {
                    0
                } else {
                    usize::from(!trimmed.ends_with(['.', '!', '?']))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Weight of average sentence length in the complexity score.
    pub alpha: f64,
    /// Weight of type-token ratio in the complexity score.
    pub beta: f64,
    /// Reference sentence length used to normalise complexity.
    pub asl_ref: f64,
    pub sentiment_lexicon: Lexicon,
    pub grammar_rules: Vec<(GrammarRule, bool)>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            alpha: 0.04,
            beta: 1.0,
            asl_ref: 25.0,
            sentiment_lexicon: Lexicon::default(),
            grammar_rules: GrammarRule::ALL.iter().map(|&r| (r, true)).collect(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative with a positive sum".into()));
        }
        if !(self.asl_ref > 0.0) {
            return Err(Error::Config("asl_ref must be positive".into()));
        }
        Ok(())
    }

    /// Same configuration with only `rules` enabled.
    pub fn with_rules(mut self, rules: &[GrammarRule]) -> Self {
        for (rule, on) in &mut self.grammar_rules {
            *on = rules.contains(rule);
        }
        self
    }

    fn enabled_rules(&self) -> impl Iterator<Item = GrammarRule> + '_ {
        self.grammar_rules.iter().filter(|(_, on)| *on).map(|(r, _)| *r)
    }
}

/// `RT_i`: seconds between the bot prompt and the user's reply.
pub fn response_time(turn: &TurnRecord) -> Result<f64> {
    let reply = turn.user_reply.as_ref().ok_or(Error::NoReply)?;
    Ok(reply.sent_at.seconds_since(turn.bot_prompt.sent_at).max(0.0))
}

/// `SS_i`: mean lexicon score of the matched tokens, 0 when nothing matches.
pub fn sentiment_score(text: &str, cfg: &MetricsConfig) -> f64 {
    let scores: Vec<f64> = text::folded_tokens(text)
        .iter()
        .filter_map(|t| cfg.sentiment_lexicon.score(t))
        .collect();
    mean(&scores).unwrap_or(0.0)
}

/// `E_i`: violations of the enabled grammar rules.
pub fn grammar_error_count(text: &str, cfg: &MetricsConfig) -> usize {
    cfg.enabled_rules().map(|r| r.count(text)).sum()
}

/// `GMF_i = E_i / W_i`; `None` when the message has no words.
pub fn grammar_mistake_frequency(errors: usize, words: usize) -> Option<f64> {
    (words > 0).then(|| errors as f64 / words as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    /// Words per sentence.
    pub asl: f64,
    /// Unique case-folded words over total words.
    pub ttr: f64,
    pub raw: f64,
    /// `raw / (alpha * asl_ref + beta)` clamped to `[0, 1]`.
    pub normalized: f64,
}

/// `CL_i = alpha * ASL_i + beta * TTR_i`.
pub fn complexity(text: &str, cfg: &MetricsConfig) -> Result<Complexity> {
    let words = text::folded_tokens(text);
    if words.is_empty() {
        return Err(Error::EmptyInput("complexity needs at least one word"));
    }
    let sentences = text::sentence_count(text).max(1);
    let asl = words.len() as f64 / sentences as f64;
    let mut unique: Vec<&String> = words.iter().collect();
    unique.sort();
    unique.dedup();
    let ttr = unique.len() as f64 / words.len() as f64;
    Ok(complexity_from_parts(asl, ttr, cfg))
}

pub fn complexity_from_parts(asl: f64, ttr: f64, cfg: &MetricsConfig) -> Complexity {
    let raw = cfg.alpha * asl + cfg.beta * ttr;
    let scale = cfg.alpha * cfg.asl_ref + cfg.beta;
    Complexity { asl, ttr, raw, normalized: (raw / scale).clamp(0.0, 1.0) }
}

/// `TS_i`: characters per second of typing.
pub fn typing_speed(u: &Utterance) -> Result<f64> {
    let start = u.typing_started_at.ok_or(Error::DegenerateInterval)?;
    let secs = u.sent_at.seconds_since(start);
    if secs <= 0.0 {
        return Err(Error::DegenerateInterval);
    }
    Ok(u.char_count as f64 / secs)
}

/// `FS`: fraction of the `n` responses that were liked.
pub fn feedback_score(events: &[FeedbackEvent], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyInput("feedback score needs at least one response"));
    }
    // last write wins per turn
    let mut latest: BTreeMap<u32, Liked> = BTreeMap::new();
    for e in events {
        if e.turn_index == 0 || e.turn_index as usize > n {
            return Err(Error::InvalidEvent(format!("feedback for turn {} of {n}", e.turn_index)));
        }
        latest.insert(e.turn_index, e.liked);
    }
    let likes = latest.values().filter(|l| **l == Liked::Like).count();
    Ok(likes as f64 / n as f64)
}

/// `SBS`: mean survey rating.
pub fn survey_satisfaction(responses: &[SurveyResponse]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::EmptyInput("survey"));
    }
    let ratings: Vec<f64> = responses.iter().map(|r| r.rating as f64).collect();
    Ok(mean(&ratings).unwrap_or(0.0))
}

/// Per-message implicit metrics of one user reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageMetrics {
    pub response_time_s: f64,
    pub sentiment: f64,
    pub grammar_errors: usize,
    pub word_count: usize,
    pub gmf: Option<f64>,
    pub complexity: Option<Complexity>,
    pub typing_speed_cps: Option<f64>,
}

pub fn message_metrics(turn: &TurnRecord, cfg: &MetricsConfig) -> Result<MessageMetrics> {
    let reply = turn.user_reply.as_ref().ok_or(Error::NoReply)?;
    let word_count = text::word_count(&reply.text);
    let grammar_errors = grammar_error_count(&reply.text, cfg);
    Ok(MessageMetrics {
        response_time_s: response_time(turn)?,
        sentiment: sentiment_score(&reply.text, cfg),
        grammar_errors,
        word_count,
        gmf: grammar_mistake_frequency(grammar_errors, word_count),
        complexity: complexity(&reply.text, cfg).ok(),
        typing_speed_cps: typing_speed(reply).ok(),
    })
}

/// Session-level aggregates over the `N` user messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetricsSummary {
    pub mean_rt: Option<f64>,
    pub mean_ss: Option<f64>,
    pub mean_gmf: Option<f64>,
    /// Mean raw complexity.
    pub mean_cl: Option<f64>,
    pub mean_cl_norm: Option<f64>,
    pub mean_ts: Option<f64>,
    pub feedback_score: Option<f64>,
    pub survey_satisfaction: Option<f64>,
    pub n_messages: usize,
}

pub fn summarize(session: &SessionRecord, cfg: &MetricsConfig) -> Result<SessionMetricsSummary> {
    let per_msg = session
        .completed_turns()
        .map(|t| message_metrics(t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let collect = |f: &dyn Fn(&MessageMetrics) -> Option<f64>| -> Vec<f64> {
        per_msg.iter().filter_map(f).collect()
    };
    let feedback: Vec<FeedbackEvent> = session.turns.iter().filter_map(|t| t.feedback).collect();
    Ok(SessionMetricsSummary {
        mean_rt: mean(&collect(&|m| Some(m.response_time_s))),
        mean_ss: mean(&collect(&|m| Some(m.sentiment))),
        mean_gmf: mean(&collect(&|m| m.gmf)),
        mean_cl: mean(&collect(&|m| m.complexity.map(|c| c.raw))),
        mean_cl_norm: mean(&collect(&|m| m.complexity.map(|c| c.normalized))),
        mean_ts: mean(&collect(&|m| m.typing_speed_cps)),
        feedback_score: feedback_score(&feedback, session.turns.len()).ok(),
        survey_satisfaction: survey_satisfaction(&session.surveys).ok(),
        n_messages: per_msg.len(),
    })
}

/// Number of entries in a [`FeatureVector`].
pub const FEATURE_LEN: usize = 16;
/// Bumped whenever the slot layout changes.
pub const FEATURE_LAYOUT_VERSION: u32 = 1;

/// Slot positions of the feature vector.
pub mod slot {
    pub const SESSION_DURATION: usize = 0;
    pub const MEAN_RT: usize = 1;
    pub const MEAN_TS: usize = 2;
    pub const MEAN_GMF: usize = 3;
    pub const MEAN_CL: usize = 4;
    pub const MEAN_SS: usize = 5;
    pub const FEEDBACK: usize = 6;
    pub const SURVEY: usize = 7;
    pub const DELTA_RT: usize = 8;
    pub const DELTA_TS: usize = 9;
    pub const DELTA_SS: usize = 10;
    pub const ELICIT_DETAIL: usize = 11;
    pub const ELICIT_COMPLEXITY: usize = 12;
    pub const ELICIT_STYLE: usize = 13;
    pub const TURN_COUNT: usize = 14;
    pub const RESERVED: usize = 15;
}

/// Midpoint of each slot's range, used when a signal is missing.
pub const NEUTRAL_FEATURES: [f64; FEATURE_LEN] = [
    0.5, 0.5, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.0,
];

/// Normalisation references.
pub const SESSION_DURATION_REF_S: f64 = 600.0;
pub const RESPONSE_TIME_REF_S: f64 = 60.0;
pub const TYPING_SPEED_REF_CPS: f64 = 10.0;
pub const GRAMMAR_MISTAKE_REF: f64 = 0.25;
pub const TURN_COUNT_REF: f64 = 20.0;

/// Fixed-length profiler input. Slots 0-4, 6, 7 and 11-14 lie in `[0, 1]`;
/// slots 5 and 8-10 lie in `[-1, 1]`; slot 15 is reserved and always 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_LEN]);

impl FeatureVector {
    pub fn neutral() -> Self {
        FeatureVector(NEUTRAL_FEATURES)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; FEATURE_LEN] = values
            .try_into()
            .map_err(|_| Error::Shape { expected: FEATURE_LEN, got: values.len() })?;
        Ok(FeatureVector(arr))
    }
}

/// Encoded value of an elicitation answer, keyed by the question's dimension.
pub fn elicitation_slot(question: &str, answer: &str) -> Option<(usize, f64)> {
    let answer = answer.trim().to_lowercase();
    match question {
        "detail" => match answer.as_str() {
            "concise" => Some((slot::ELICIT_DETAIL, 0.0)),
            "balanced" => Some((slot::ELICIT_DETAIL, 0.5)),
            "comprehensive" => Some((slot::ELICIT_DETAIL, 1.0)),
            _ => None,
        },
        "complexity" => match answer.as_str() {
            "simple" => Some((slot::ELICIT_COMPLEXITY, 0.0)),
            "moderate" => Some((slot::ELICIT_COMPLEXITY, 0.5)),
            "advanced" => Some((slot::ELICIT_COMPLEXITY, 1.0)),
            _ => None,
        },
        "style" => match answer.as_str() {
            "professional" => Some((slot::ELICIT_STYLE, 0.0)),
            "conversational" => Some((slot::ELICIT_STYLE, 1.0)),
            _ => None,
        },
        _ => None,
    }
}

/// Profiler input before any turn is complete: neutral values, no turns,
/// and whatever the elicitation answers encode.
pub fn elicitation_features(answers: &[ElicitationAnswer]) -> FeatureVector {
    let mut v = NEUTRAL_FEATURES;
    v[slot::SESSION_DURATION] = 0.0;
    v[slot::TURN_COUNT] = 0.0;
    let mut f = FeatureVector(v);
    apply_elicitation(&mut f, answers);
    f
}

/// Write the encoded answers into their slots; later answers win.
pub fn apply_elicitation(features: &mut FeatureVector, answers: &[ElicitationAnswer]) {
    for a in answers {
        if let Some((i, value)) = elicitation_slot(&a.question, &a.answer) {
            features.0[i] = value;
        }
    }
}

/// Mean of the last three values minus the mean of the earlier ones.
fn recent_delta(series: &[f64]) -> Option<f64> {
    if series.len() <= 3 {
        return None;
    }
    let (early, late) = series.split_at(series.len() - 3);
    Some(mean(late)? - mean(early)?)
}

/// Build the profiler input from a (possibly still open) session.
pub fn extract_features(session: &SessionRecord, cfg: &MetricsConfig) -> Result<FeatureVector> {
    let completed: Vec<&TurnRecord> = session.completed_turns().collect();
    if completed.is_empty() {
        return Err(Error::InsufficientData("no completed turns".to_string()));
    }
    let summary = summarize(session, cfg)?;
    let metrics = completed
        .iter()
        .map(|t| message_metrics(t, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut v = NEUTRAL_FEATURES;
    let end = session.ended_at.unwrap_or_else(|| session.last_event_at());
    v[slot::SESSION_DURATION] = (end.seconds_since(session.started_at) / SESSION_DURATION_REF_S).clamp(0.0, 1.0);
    if let Some(rt) = summary.mean_rt {
        v[slot::MEAN_RT] = (rt / RESPONSE_TIME_REF_S).clamp(0.0, 1.0);
    }
    if let Some(ts) = summary.mean_ts {
        v[slot::MEAN_TS] = (ts / TYPING_SPEED_REF_CPS).clamp(0.0, 1.0);
    }
    if let Some(g) = summary.mean_gmf {
        v[slot::MEAN_GMF] = (g / GRAMMAR_MISTAKE_REF).clamp(0.0, 1.0);
    }
    if let Some(cl) = summary.mean_cl_norm {
        v[slot::MEAN_CL] = cl;
    }
    if let Some(ss) = summary.mean_ss {
        v[slot::MEAN_SS] = ss.clamp(-1.0, 1.0);
    }
    if let Some(fs) = summary.feedback_score {
        v[slot::FEEDBACK] = fs;
    }
    if let Some(sbs) = summary.survey_satisfaction {
        v[slot::SURVEY] = (sbs - 1.0) / 4.0;
    }
    let rts: Vec<f64> = metrics.iter().map(|m| m.response_time_s).collect();
    let tss: Vec<f64> = metrics.iter().filter_map(|m| m.typing_speed_cps).collect();
    let sss: Vec<f64> = metrics.iter().map(|m| m.sentiment).collect();
    if let Some(d) = recent_delta(&rts) {
        v[slot::DELTA_RT] = (d / RESPONSE_TIME_REF_S).clamp(-1.0, 1.0);
    }
    if let Some(d) = recent_delta(&tss) {
        v[slot::DELTA_TS] = (d / TYPING_SPEED_REF_CPS).clamp(-1.0, 1.0);
    }
    if let Some(d) = recent_delta(&sss) {
        v[slot::DELTA_SS] = (d / 2.0).clamp(-1.0, 1.0);
    }
    v[slot::TURN_COUNT] = (completed.len() as f64 / TURN_COUNT_REF).min(1.0);
    v[slot::RESERVED] = 0.0;
    let mut f = FeatureVector(v);
    apply_elicitation(&mut f, &session.elicitation_answers);
    Ok(f)
}
