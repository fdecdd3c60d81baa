//! Prompt parameters, prompt rendering, elicitation questions and topic
//! recommendation driven by dialogue diversity.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::math::{argmax, ln};
use crate::persona::Domain;
use crate::profiler::UserProfile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetailLevel {
    #[default]
    Concise,
    Balanced,
    Comprehensive,
}

impl DetailLevel {
    pub const ALL: [DetailLevel; 3] = [DetailLevel::Concise, DetailLevel::Balanced, DetailLevel::Comprehensive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetailLevel::Concise => "concise",
            DetailLevel::Balanced => "balanced",
            DetailLevel::Comprehensive => "comprehensive",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    #[default]
    Professional,
    Conversational,
}

impl Style {
    pub const ALL: [Style; 2] = [Style::Professional, Style::Conversational];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Professional => "professional",
            Style::Conversational => "conversational",
        }
    }
}

/// The four knobs injected into every generation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptParameters {
    /// 1 (plain) to 5 (dense, technical).
    pub complexity_level: u8,
    pub detail_level: DetailLevel,
    /// 1 (no jargon) to 4 (expert terminology).
    pub knowledge_level: u8,
    pub style: Style,
}

impl Default for PromptParameters {
    /// Parameters served by the non-adaptive arm.
    fn default() -> Self {
        PromptParameters {
            complexity_level: 3,
            detail_level: DetailLevel::Balanced,
            knowledge_level: 2,
            style: Style::Professional,
        }
    }
}

impl PromptParameters {
    pub fn new(complexity_level: u8, detail_level: DetailLevel, knowledge_level: u8, style: Style) -> Result<Self> {
        let p = PromptParameters { complexity_level, detail_level, knowledge_level, style };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.complexity_level) {
            return Err(Error::OutOfRange(format!("complexity_level {}", self.complexity_level)));
        }
        if !(1..=4).contains(&self.knowledge_level) {
            return Err(Error::OutOfRange(format!("knowledge_level {}", self.knowledge_level)));
        }
        Ok(())
    }
}

/// Argmax of each profile distribution (ties resolve to the lower level);
/// knowledge comes from the expertise distribution of `domain`.
pub fn profile_to_params(profile: &UserProfile, domain: &str) -> Result<PromptParameters> {
    let domain: Domain = domain.parse()?;
    Ok(profile.params_for(domain))
}

/// Named slots every template must contain exactly once.
pub const SLOTS: [&str; 9] = [
    "system_preamble",
    "complexity_directive",
    "detail_directive",
    "knowledge_directive",
    "style_directive",
    "topic",
    "history_summary",
    "retrieved_context",
    "user_message",
];

/// Rendered in the context slot when retrieval found nothing.
pub const EMPTY_CONTEXT_MARKER: &str = "(no retrieved context)";
/// Joins retrieved passages, in rank order.
pub const CONTEXT_SEPARATOR: &str = "\n---\n";

pub const DEFAULT_TEMPLATE: &str = "{system_preamble}

Language: {complexity_directive}
Detail: {detail_directive}
Terminology: {knowledge_directive}
Tone: {style_directive}

Topic: {topic}
Conversation so far: {history_summary}

Reference material:
{retrieved_context}

User: {user_message}
Assistant:";

pub const DEFAULT_PREAMBLE: &str =
    "You are a helpful assistant. Follow the personalisation directives below for every reply.";

/// Directive phrase for each parameter level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveTable {
    pub complexity: [String; 5],
    pub detail: [String; 3],
    pub knowledge: [String; 4],
    pub style: [String; 2],
}

impl Default for DirectiveTable {
    fn default() -> Self {
        let s = |x: &str| x.to_owned();
        DirectiveTable {
            complexity: [
                s("Use very short sentences and everyday words only."),
                s("Use short sentences and plain vocabulary."),
                s("Use moderately long sentences with a standard vocabulary."),
                s("Use longer sentences and a rich, precise vocabulary."),
                s("Use long, information-dense sentences with advanced vocabulary."),
            ],
            detail: [
                s("Answer in a brief summary of two sentences."),
                s("Give a balanced answer of about four sentences."),
                s("Give a comprehensive, step-by-step explanation."),
            ],
            knowledge: [
                s("Avoid domain jargon entirely and explain every concept."),
                s("Introduce a few basic domain terms with definitions."),
                s("Use standard domain terminology freely."),
                s("Use expert-level terminology without simplification."),
            ],
            style: [
                s("Keep a professional, formal tone."),
                s("Keep a friendly, conversational tone."),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(usize),
}

/// A parsed template with validated slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pieces: Vec<Piece>,
    pub preamble: String,
    pub directives: DirectiveTable,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::parse(DEFAULT_TEMPLATE, DEFAULT_PREAMBLE, DirectiveTable::default())
            .expect("built-in template is valid")
    }
}

impl PromptTemplate {
    /// Parse `{slot}` markers; every slot in [`SLOTS`] must occur exactly once
    /// and no other marker may appear.
    pub fn parse(text: &str, preamble: &str, directives: DirectiveTable) -> Result<Self> {
        let mut pieces = Vec::new();
        let mut seen = [0usize; SLOTS.len()];
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .ok_or_else(|| Error::Template("unterminated `{`".to_string()))?;
            let name = &rest[open + 1..close];
            let idx = SLOTS
                .iter()
                .position(|s| *s == name)
                .ok_or_else(|| Error::Template(format!("unknown slot `{name}`")))?;
            seen[idx] += 1;
            if open > 0 {
                pieces.push(Piece::Text(rest[..open].to_string()));
            }
            pieces.push(Piece::Slot(idx));
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        for (i, n) in seen.iter().enumerate() {
            if *n != 1 {
                return Err(Error::Template(format!("slot `{}` appears {n} times", SLOTS[i])));
            }
        }
        Ok(PromptTemplate { pieces, preamble: preamble.to_string(), directives })
    }

    fn fill(&self, values: &[&str; SLOTS.len()]) -> Result<String> {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(i) => {
                    let v = values[*i];
                    if v.is_empty() && SLOTS[*i] != "history_summary" && SLOTS[*i] != "user_message" {
                        return Err(Error::Template(format!("slot `{}` left unfilled", SLOTS[*i])));
                    }
                    out.push_str(v);
                }
            }
        }
        Ok(out)
    }
}

/// Render the enriched prompt for one turn.
pub fn render_prompt(
    template: &PromptTemplate,
    params: &PromptParameters,
    topic: &str,
    history_summary: &str,
    retrieved: &[&str],
    user_msg: &str,
) -> Result<String> {
    params.validate()?;
    let d = &template.directives;
    let context = if retrieved.is_empty() {
        EMPTY_CONTEXT_MARKER.to_string()
    } else {
        retrieved.join(CONTEXT_SEPARATOR)
    };
    let values = [
        template.preamble.as_str(),
        d.complexity[params.complexity_level as usize - 1].as_str(),
        d.detail[params.detail_level.index()].as_str(),
        d.knowledge[params.knowledge_level as usize - 1].as_str(),
        d.style[params.style.index()].as_str(),
        topic,
        history_summary,
        context.as_str(),
        user_msg,
    ];
    template.fill(&values)
}

/// Normalised Shannon entropy of the topics in the last `k` turns.
///
/// The entropy is divided by `ln(catalog_size)`; windows with fewer than two
/// distinct topics, empty histories and single-topic catalogs score 0.
pub fn dialogue_diversity(history: &[&str], k: usize, catalog_size: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("diversity window k must be at least 1".to_string()));
    }
    let window = &history[history.len().saturating_sub(k)..];
    Ok(normalized_entropy(window, catalog_size))
}

fn normalized_entropy(window: &[&str], catalog_size: usize) -> f64 {
    if window.is_empty() || catalog_size < 2 {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in window {
        *counts.entry(*t).or_default() += 1;
    }
    if counts.len() < 2 {
        return 0.0;
    }
    let n = window.len() as f64;
    let h: f64 = counts.values().map(|&c| {
        let p = c as f64 / n;
        -p * ln(p)
    }).sum();
    (h / ln(catalog_size as f64)).clamp(0.0, 1.0)
}

/// Default diversity window.
pub const DIVERSITY_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSuggestion {
    pub topic: String,
    pub score: f64,
    pub dd_gain: f64,
    pub affinity: f64,
}

/// Rank catalog topics by diversity gain plus expertise affinity.
/// Equal scores are ordered alphabetically.
pub fn recommend_next(catalog: &[&str], history: &[&str], profile: &UserProfile) -> Result<Vec<TopicSuggestion>> {
    if catalog.is_empty() {
        return Err(Error::EmptyInput("topic catalog"));
    }
    let window = &history[history.len().saturating_sub(DIVERSITY_WINDOW)..];
    let tail = &window[window.len().saturating_sub(DIVERSITY_WINDOW - 1)..];
    let base = normalized_entropy(window, catalog.len());
    let mut out: Vec<TopicSuggestion> = catalog
        .iter()
        .map(|&topic| {
            let mut next: Vec<&str> = tail.to_vec();
            next.push(topic);
            let dd_gain = normalized_entropy(&next, catalog.len()) - base;
            let affinity = Domain::for_topic(topic).map_or(0.0, |d| profile.expertise_affinity(d));
            TopicSuggestion { topic: topic.to_string(), score: dd_gain + affinity, dd_gain, affinity }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.topic.cmp(&b.topic)));
    Ok(out)
}

/// Profile dimensions that can be asked about before a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElicitDimension {
    Detail,
    Complexity,
    Style,
}

impl ElicitDimension {
    pub fn key(self) -> &'static str {
        match self {
            ElicitDimension::Detail => "detail",
            ElicitDimension::Complexity => "complexity",
            ElicitDimension::Style => "style",
        }
    }
}

impl fmt::Display for ElicitDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElicitationQuestion {
    pub dimension: ElicitDimension,
    pub text: String,
    pub options: Vec<String>,
}

impl ElicitationQuestion {
    pub fn for_dimension(dimension: ElicitDimension) -> Self {
        let (text, options): (&str, &[&str]) = match dimension {
            ElicitDimension::Detail => (
                "Do you prefer short answers or in-depth explanations today?",
                &["concise", "balanced", "comprehensive"],
            ),
            ElicitDimension::Complexity => (
                "How technical should my language be?",
                &["simple", "moderate", "advanced"],
            ),
            ElicitDimension::Style => (
                "Should I keep things formal or casual?",
                &["professional", "conversational"],
            ),
        };
        ElicitationQuestion {
            dimension,
            text: text.to_string(),
            options: options.iter().map(|o| o.to_string()).collect(),
        }
    }
}

/// A third question is asked only while the most certain of the three
/// dimensions is below this confidence.
pub const ELICIT_THIRD_QUESTION_BELOW: f64 = 0.8;

/// Two or three pre-session questions. Without a profile the three default
/// onboarding questions are returned; otherwise the least certain
/// dimensions come first.
pub fn elicitation_questions(profile: Option<&UserProfile>) -> Vec<ElicitationQuestion> {
    let dims = match profile {
        None => vec![ElicitDimension::Detail, ElicitDimension::Complexity, ElicitDimension::Style],
        Some(p) => {
            let mut scored = [
                (ElicitDimension::Detail, max_prob(&p.detail_dist)),
                (ElicitDimension::Complexity, max_prob(&p.complexity_dist)),
                (ElicitDimension::Style, max_prob(&p.style_dist)),
            ];
            scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            let take = if scored[2].1 < ELICIT_THIRD_QUESTION_BELOW { 3 } else { 2 };
            scored[..take].iter().map(|(d, _)| *d).collect()
        }
    };
    dims.into_iter().map(ElicitationQuestion::for_dimension).collect()
}

fn max_prob(dist: &[f64]) -> f64 {
    dist[argmax(dist)]
}
