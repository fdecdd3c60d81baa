//! Synthetic user cohort and the behaviour model that stands in for human
//! participants.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conversation::{FeedbackEvent, Liked, SurveyResponse, Utterance};
use crate::gateway::{measure_response, ObservedStyle};
use crate::math::round;
use crate::metrics::Lexicon;
use crate::prompt::{DetailLevel, ElicitDimension, Style};
use crate::rng::{self, label, StreamRng};
use crate::text::word_count;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Finance,
    Health,
    Education,
    Technology,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Finance, Domain::Health, Domain::Education, Domain::Technology];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Finance => "finance",
            Domain::Health => "health",
            Domain::Education => "education",
            Domain::Technology => "technology",
        }
    }

    /// Expertise domain a catalog topic draws on.
    pub fn for_topic(topic: &str) -> Option<Domain> {
        TOPIC_DOMAINS.iter().find(|(t, _)| t.eq_ignore_ascii_case(topic)).map(|(_, d)| *d)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownDomain(s.to_string()))
    }
}

/// The ten conversation topics and the expertise domain behind each.
pub const TOPIC_DOMAINS: [(&str, Domain); 10] = [
    ("Personal Finance", Domain::Finance),
    ("Health and Wellness", Domain::Health),
    ("Education and Learning", Domain::Education),
    ("Career Development", Domain::Education),
    ("Technology Trends", Domain::Technology),
    ("Travel and Culture", Domain::Education),
    ("Creative Projects", Domain::Technology),
    ("Work-Life Balance", Domain::Health),
    ("Environmental Sustainability", Domain::Technology),
    ("Professional Networking", Domain::Education),
];

pub fn default_topics() -> Vec<String> {
    TOPIC_DOMAINS.iter().map(|(t, _)| t.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeGroup {
    #[serde(rename = "18-25")]
    A18To25,
    #[serde(rename = "26-35")]
    A26To35,
    #[serde(rename = "36-45")]
    A36To45,
    #[serde(rename = "46-55")]
    A46To55,
    #[serde(rename = "56-65")]
    A56To65,
    #[serde(rename = "65+")]
    A65Plus,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 6] = [
        AgeGroup::A18To25,
        AgeGroup::A26To35,
        AgeGroup::A36To45,
        AgeGroup::A46To55,
        AgeGroup::A56To65,
        AgeGroup::A65Plus,
    ];

    pub fn as_str(self) -> &'static str {
        ["18-25", "26-35", "36-45", "46-55", "56-65", "65+"][self as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Education {
    HighSchool,
    SomeCollege,
    Bachelors,
    Masters,
    PhD,
    ProfessionalCert,
}

impl Education {
    /// Table order used by distribution tables and demographic counts.
    pub const ALL: [Education; 6] = [
        Education::HighSchool,
        Education::SomeCollege,
        Education::Bachelors,
        Education::Masters,
        Education::PhD,
        Education::ProfessionalCert,
    ];

    /// Position on the schooling ladder, 0 (lowest) to 5.
    pub fn rank(self) -> usize {
        match self {
            Education::HighSchool => 0,
            Education::SomeCollege => 1,
            Education::ProfessionalCert => 2,
            Education::Bachelors => 3,
            Education::Masters => 4,
            Education::PhD => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertiseLevel {
    Beginner,
    Intermediate,
    Advanced,
    Expert,
}

impl ExpertiseLevel {
    pub const ALL: [ExpertiseLevel; 4] =
        [ExpertiseLevel::Beginner, ExpertiseLevel::Intermediate, ExpertiseLevel::Advanced, ExpertiseLevel::Expert];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Matching prompt knowledge level (1..=4).
    pub fn knowledge_level(self) -> u8 {
        self as u8 + 1
    }
}

/// One value per expertise domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerDomain<T> {
    pub finance: T,
    pub health: T,
    pub education: T,
    pub technology: T,
}

impl<T: Copy> PerDomain<T> {
    pub fn uniform(v: T) -> Self {
        PerDomain { finance: v, health: v, education: v, technology: v }
    }

    pub fn get(&self, d: Domain) -> T {
        match d {
            Domain::Finance => self.finance,
            Domain::Health => self.health,
            Domain::Education => self.education,
            Domain::Technology => self.technology,
        }
    }

    pub fn get_mut(&mut self, d: Domain) -> &mut T {
        match d {
            Domain::Finance => &mut self.finance,
            Domain::Health => &mut self.health,
            Domain::Education => &mut self.education,
            Domain::Technology => &mut self.technology,
        }
    }

    pub fn set(&mut self, d: Domain, v: T) {
        *self.get_mut(d) = v;
    }
}

pub type Expertise = PerDomain<ExpertiseLevel>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: u32,
    pub age_group: AgeGroup,
    pub education: Education,
    pub occupation: String,
    /// 1 (plain) to 5 (dense).
    pub pref_complexity: u8,
    pub pref_detail: DetailLevel,
    pub pref_style: Style,
    pub expertise: Expertise,
    pub patience: f64,
    pub engagement: f64,
    pub multitasking: f64,
    pub stress: f64,
    pub confidence: f64,
    pub response_speed: f64,
    pub backstory: String,
}

impl Persona {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.pref_complexity) {
            return Err(Error::OutOfRange(format!("pref_complexity {}", self.pref_complexity)));
        }
        let reals = [
            ("patience", self.patience),
            ("engagement", self.engagement),
            ("multitasking", self.multitasking),
            ("stress", self.stress),
            ("confidence", self.confidence),
            ("response_speed", self.response_speed),
        ];
        for (name, v) in reals {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    /// Prompt levels this persona would rate highest on `domain`.
    pub fn ideal_style(&self, domain: Domain) -> ObservedStyle {
        ObservedStyle {
            complexity_level: self.pref_complexity,
            detail_level: self.pref_detail,
            knowledge_level: self.expertise.get(domain).knowledge_level(),
            style: self.pref_style,
        }
    }
}

/// Category probabilities for every sampled attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionTable {
    pub version: u32,
    /// [`AgeGroup::ALL`] order.
    pub age_group: Vec<f64>,
    /// [`Education::ALL`] order.
    pub education: Vec<f64>,
    pub occupation: Vec<(String, f64)>,
    /// Levels 1..=5.
    pub pref_complexity: Vec<f64>,
    pub pref_detail: Vec<f64>,
    pub pref_style: Vec<f64>,
    /// Shared by all four domains.
    pub expertise: Vec<f64>,
}

pub const DISTRIBUTION_TABLE_VERSION: u32 = 1;

impl Default for DistributionTable {
    fn default() -> Self {
        let occupations = [
            "teacher", "nurse", "software engineer", "student", "accountant", "retail manager",
            "designer", "retiree", "tradesperson", "researcher",
        ];
        DistributionTable {
            version: DISTRIBUTION_TABLE_VERSION,
            age_group: [0.14, 0.16, 0.20, 0.16, 0.24, 0.10].into(),
            education: [0.20, 0.18, 0.08, 0.26, 0.18, 0.10].into(),
            occupation: occupations.iter().map(|o| (o.to_string(), 0.1)).collect(),
            pref_complexity: [0.2; 5].into(),
            pref_detail: [1.0 / 3.0; 3].into(),
            pref_style: [0.5; 2].into(),
            expertise: [0.25; 4].into(),
        }
    }
}

impl DistributionTable {
    pub fn validate(&self) -> Result<()> {
        let occ: Vec<f64> = self.occupation.iter().map(|(_, p)| *p).collect();
        let checks: [(&str, &[f64], usize); 7] = [
            ("age_group", &self.age_group, 6),
            ("education", &self.education, 6),
            ("occupation", &occ, occ.len().max(1)),
            ("pref_complexity", &self.pref_complexity, 5),
            ("pref_detail", &self.pref_detail, 3),
            ("pref_style", &self.pref_style, 2),
            ("expertise", &self.expertise, 4),
        ];
        for (name, probs, len) in checks {
            if probs.len() != len {
                return Err(Error::Config(format!("{name}: expected {len} categories, got {}", probs.len())));
            }
            if probs.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Config(format!("{name}: negative probability")));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!("{name}: probabilities sum to {total}")));
            }
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` draws; remainder ties go to the
/// lower index.
pub fn quota_counts(probs: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| libm::floor(*x + 1e-9) as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// `n` category indices with exact quota counts, in shuffled order.
fn quota_column(probs: &[f64], n: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut col: Vec<usize> = quota_counts(probs, n)
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| core::iter::repeat_n(i, c))
        .collect();
    col.shuffle(rng);
    col
}

pub fn generate_personas(n: usize, seed: u64) -> Result<Vec<Persona>> {
    generate_personas_with(n, seed, &DistributionTable::default())
}

/// Cohort whose categorical marginals hit the table's quotas exactly.
pub fn generate_personas_with(n: usize, seed: u64, table: &DistributionTable) -> Result<Vec<Persona>> {
    if n == 0 {
        return Err(Error::EmptyInput("persona count"));
    }
    table.validate()?;
    let mut rng = rng::stream(seed, &[label("cohort")]);
    let occ_probs: Vec<f64> = table.occupation.iter().map(|(_, p)| *p).collect();
    let age = quota_column(&table.age_group, n, &mut rng);
    let edu = quota_column(&table.education, n, &mut rng);
    let occ = quota_column(&occ_probs, n, &mut rng);
    let cx = quota_column(&table.pref_complexity, n, &mut rng);
    let det = quota_column(&table.pref_detail, n, &mut rng);
    let sty = quota_column(&table.pref_style, n, &mut rng);
    let exp: Vec<Vec<usize>> = (0..4).map(|_| quota_column(&table.expertise, n, &mut rng)).collect();

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut expertise = Expertise::uniform(ExpertiseLevel::Beginner);
        for d in Domain::ALL {
            expertise.set(d, ExpertiseLevel::ALL[exp[d.index()][i]]);
        }
        let mut p = Persona {
            id: i as u32,
            age_group: AgeGroup::ALL[age[i]],
            education: Education::ALL[edu[i]],
            occupation: table.occupation[occ[i]].0.clone(),
            pref_complexity: cx[i] as u8 + 1,
            pref_detail: DetailLevel::ALL[det[i]],
            pref_style: Style::ALL[sty[i]],
            expertise,
            patience: rng.random(),
            engagement: rng.random(),
            multitasking: rng.random(),
            stress: rng.random(),
            confidence: rng.random(),
            response_speed: rng.random(),
            backstory: String::new(),
        };
        p.backstory = backstory(&p);
        out.push(p);
    }
    Ok(out)
}

fn backstory(p: &Persona) -> String {
    let strongest = Domain::ALL.into_iter().max_by_key(|d| (p.expertise.get(*d), core::cmp::Reverse(d.index()))).unwrap_or(Domain::Finance);
    let mood = if p.stress > 0.66 { "under pressure" } else if p.stress > 0.33 { "fairly busy" } else { "relaxed" };
    format!(
        "A {} {} aged {}, most at home with {} topics, usually {} and prefers {} answers.",
        match p.education {
            Education::HighSchool => "high-school educated",
            Education::SomeCollege => "college-educated",
            Education::Bachelors => "graduate",
            Education::Masters => "postgraduate",
            Education::PhD => "doctorate-holding",
            Education::ProfessionalCert => "certified",
        },
        p.occupation,
        p.age_group.as_str(),
        strongest,
        mood,
        p.pref_detail.as_str(),
    )
}

fn categorical_key(p: &Persona) -> [usize; 4] {
    [p.age_group as usize, p.education as usize, p.pref_detail.index(), p.pref_style.index()]
}

/// One minus mean pairwise agreement over age group, education, detail
/// preference and style preference.
pub fn diversity_index(cohort: &[Persona]) -> Result<f64> {
    let n = cohort.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("diversity needs at least 2 personas, got {n}")));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut agree = 0.0;
    for dim in 0..4 {
        let mut counts = [0usize; 6];
        for p in cohort {
            counts[categorical_key(p)[dim]] += 1;
        }
        let same: usize = counts.iter().map(|c| c * c.saturating_sub(1) / 2).sum();
        agree += same as f64 / pairs;
    }
    Ok(1.0 - agree / 4.0)
}

/// Weights of the four match dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatisfactionWeights {
    pub complexity: f64,
    pub detail: f64,
    pub style: f64,
    pub expertise: f64,
}

impl Default for SatisfactionWeights {
    fn default() -> Self {
        SatisfactionWeights { complexity: 0.3, detail: 0.25, style: 0.2, expertise: 0.25 }
    }
}

impl SatisfactionWeights {
    pub fn equal() -> Self {
        SatisfactionWeights { complexity: 0.25, detail: 0.25, style: 0.25, expertise: 0.25 }
    }
}

/// Closeness of two levels on a scale of `levels`: 1 when equal, 0 at
/// opposite ends.
fn ordinal_match(a: usize, b: usize, levels: usize) -> f64 {
    1.0 - a.abs_diff(b) as f64 / (levels - 1) as f64
}

/// Weighted preference match of a response, in [0, 1].
pub fn persona_satisfaction(p: &Persona, domain: Domain, observed: &ObservedStyle, w: &SatisfactionWeights) -> f64 {
    let total = w.complexity + w.detail + w.style + w.expertise;
    if total <= 0.0 {
        return 0.0;
    }
    let c = ordinal_match(p.pref_complexity as usize, observed.complexity_level as usize, 5);
    let d = ordinal_match(p.pref_detail.index(), observed.detail_level.index(), 3);
    let s = if p.pref_style == observed.style { 1.0 } else { 0.0 };
    let k = ordinal_match(p.expertise.get(domain).knowledge_level() as usize, observed.knowledge_level as usize, 4);
    ((w.complexity * c + w.detail * d + w.style * s + w.expertise * k) / total).clamp(0.0, 1.0)
}

/// Like with probability `satisfaction * engagement`, dislike with
/// `(1 - satisfaction) * engagement`, otherwise no reaction.
pub fn persona_feedback(p: &Persona, satisfaction: f64, rng: &mut impl Rng) -> Liked {
    let s = satisfaction.clamp(0.0, 1.0);
    let e = p.engagement.clamp(0.0, 1.0);
    let u: f64 = rng.random();
    if u < s * e {
        Liked::Like
    } else if u < e {
        Liked::Dislike
    } else {
        Liked::None
    }
}

/// Behaviour constants for simulated replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Multiplicative jitter on timings and lengths, mood noise on satisfaction.
    pub noise: bool,
    /// Grammar-error probability per word by education rank.
    pub error_rate_by_rank: [f64; 6],
    /// Error multiplier by expertise in the session domain.
    pub error_factor_by_expertise: [f64; 4],
    pub weights: SatisfactionWeights,
    /// Slowest and fastest typing speed, characters per second.
    pub min_cps: f64,
    pub max_cps: f64,
    /// Seconds before the first keystroke for an idle, patient persona.
    pub base_latency_s: f64,
    pub multitask_latency_s: f64,
    pub impatience_latency_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            noise: true,
            error_rate_by_rank: [0.06, 0.055, 0.05, 0.045, 0.04, 0.035],
            error_factor_by_expertise: [3.5, 1.6, 0.7, 0.25],
            weights: SatisfactionWeights::default(),
            min_cps: 5.0,
            max_cps: 11.0,
            base_latency_s: 2.5,
            multitask_latency_s: 2.0,
            impatience_latency_s: 1.0,
        }
    }
}

impl SimConfig {
    pub fn noiseless() -> Self {
        SimConfig { noise: false, ..Default::default() }
    }

    pub fn error_rate(&self, p: &Persona, domain: Domain) -> f64 {
        let base = self.error_rate_by_rank[p.education.rank()];
        (base * self.error_factor_by_expertise[p.expertise.get(domain).index()]).clamp(0.0, 1.0)
    }

    /// Typing speed before jitter.
    pub fn nominal_cps(&self, p: &Persona) -> f64 {
        self.min_cps + (self.max_cps - self.min_cps) * p.response_speed
    }
}

const LATENCY_BY_EXPERTISE: [f64; 4] = [2.0, 1.3, 0.8, 0.45];
/// Typing fluency on familiar ground.
const CPS_BY_EXPERTISE: [f64; 4] = [0.55, 0.8, 1.15, 1.5];

const SIMPLE_WORDS: [&str; 24] = [
    "i", "want", "to", "know", "more", "about", "this", "can", "you", "tell", "me", "how", "it", "works",
    "for", "my", "case", "what", "should", "do", "next", "so", "that", "is",
];
const RICH_WORDS: [&str; 24] = [
    "specifically", "considering", "practical", "implications", "regarding", "situation", "alternatives",
    "tradeoffs", "approach", "evaluate", "constraints", "particular", "recommendation", "strategies",
    "comparison", "underlying", "assumptions", "longer", "horizon", "priorities", "framework", "options",
    "concrete", "examples",
];

/// A simulated user turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReply {
    pub utterance: Utterance,
    pub feedback: FeedbackEvent,
    pub satisfaction_contrib: f64,
    /// Grammar errors deliberately written into the text.
    pub injected_errors: usize,
}

fn jitter(rng: &mut StreamRng, noise: bool, lo: f64, hi: f64) -> f64 {
    if noise {
        rng.random_range(lo..hi)
    } else {
        (lo + hi) / 2.0
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Sentiment word whose score is closest to `target`.
fn sentiment_word(lex: &Lexicon, target: f64) -> &str {
    let mut best: Option<(&str, f64)> = None;
    for (w, s) in lex.iter() {
        let d = (s - target).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((w, d));
        }
    }
    best.map_or("okay", |(w, _)| w)
}

/// Persona's answer to the bot message of `turn`.
///
/// The persona reacts only to properties measured from the bot text. The
/// reply is typed after a latency driven by multitasking and patience, at
/// a speed driven by `response_speed`; its length follows engagement and
/// satisfaction, its sentiment follows satisfaction, and grammar errors are
/// injected at the persona's error rate.
pub fn persona_reply(
    p: &Persona,
    bot_msg: &Utterance,
    topic: &str,
    turn: u32,
    rng: &mut StreamRng,
    cfg: &SimConfig,
    lexicon: &Lexicon,
) -> SimReply {
    let domain = Domain::for_topic(topic).unwrap_or(Domain::Education);
    let observed = measure_response(&bot_msg.text, domain);
    let base = persona_satisfaction(p, domain, &observed, &cfg.weights);
    let mood = if cfg.noise { rng.random_range(-1.0..1.0) * 0.1 * (0.5 + p.stress) } else { 0.0 };
    let contrib = (base + mood).clamp(0.0, 1.0);

    // Text: sentences of a length set by the complexity preference.
    let sent_len = 2 + 3 * p.pref_complexity as usize;
    let budget = (3.0 + 10.0 * p.engagement) * (0.5 + contrib) * jitter(rng, cfg.noise, 0.85, 1.15);
    let n_sent = (round(budget / sent_len as f64) as usize).max(1);
    let bank: &[&str] = if p.pref_complexity >= 4 { &RICH_WORDS } else { &SIMPLE_WORDS };
    let sentiment_target = (2.0 * contrib - 1.0 + jitter(rng, cfg.noise, -0.25, 0.25)).clamp(-1.0, 1.0);
    let rate = cfg.error_rate(p, domain);
    let mut injected = 0;
    let mut text = String::new();
    let mut last_word: Option<String> = None;
    for s in 0..n_sent {
        let mut words: Vec<String> = Vec::with_capacity(sent_len + 1);
        let mood_at = rng.random_range(1..sent_len);
        for i in 0..sent_len {
            let w = if i == mood_at {
                sentiment_word(lexicon, sentiment_target).to_string()
            } else {
                let prev = words.last().map(String::as_str).or(last_word.as_deref());
                let mut w = bank[rng.random_range(0..bank.len())];
                while prev.is_some_and(|p| p.eq_ignore_ascii_case(w)) {
                    w = bank[rng.random_range(0..bank.len())];
                }
                w.to_string()
            };
            words.push(w);
        }
        // Error injection: repeat a word, or skip the capital letter.
        let mut capital = true;
        let mut i = 0;
        while i < words.len() {
            if rate > 0.0 && rng.random::<f64>() < rate {
                if i == 0 && capital {
                    capital = false;
                } else {
                    let dup = words[i].clone();
                    words.insert(i, dup);
                    i += 1;
                }
                injected += 1;
            }
            i += 1;
        }
        last_word = words.last().cloned();
        if capital {
            words[0] = capitalize(&words[0]);
        }
        if s > 0 {
            text.push(' ');
        }
        text.push_str(&words.join(" "));
        text.push('.');
    }

    // Timing: read, hesitate, then type.
    let expertise = p.expertise.get(domain).index();
    let latency_s = (cfg.base_latency_s
        + cfg.multitask_latency_s * p.multitasking
        + cfg.impatience_latency_s * (1.0 - p.patience))
        * LATENCY_BY_EXPERTISE[expertise]
        * jitter(rng, cfg.noise, 0.8, 1.2);
    let cps = cfg.nominal_cps(p) * CPS_BY_EXPERTISE[expertise] * jitter(rng, cfg.noise, 0.9, 1.1);
    let chars = text.chars().count();
    let typing_ms = round(chars as f64 / cps * 1000.0).max(1.0) as u64;
    let typing_started = bot_msg.sent_at.plus_millis(round(latency_s * 1000.0) as u64);
    let sent_at = typing_started.plus_millis(typing_ms);
    let utterance = Utterance::user(text, Some(typing_started), sent_at).expect("typing start precedes send");

    let liked = persona_feedback(p, contrib, rng);
    let feedback = FeedbackEvent { turn_index: turn, liked, at: typing_started };
    SimReply { utterance, feedback, satisfaction_contrib: contrib, injected_errors: injected }
}

/// Truthful answer to an elicitation question, or `None` when skipped.
/// Less engaged personas skip more often.
pub fn persona_answer(p: &Persona, dim: ElicitDimension, rng: &mut StreamRng) -> Option<String> {
    if rng.random::<f64>() < 0.5 * (1.0 - p.engagement) {
        return None;
    }
    let a = match dim {
        ElicitDimension::Detail => p.pref_detail.as_str(),
        ElicitDimension::Complexity => match p.pref_complexity {
            1 | 2 => "simple",
            3 => "moderate",
            _ => "advanced",
        },
        ElicitDimension::Style => p.pref_style.as_str(),
    };
    Some(a.to_string())
}

/// Number of end-of-session survey questions.
pub const SURVEY_QUESTIONS: u32 = 3;

/// Likert answers scattered around `1 + 4 * satisfaction`.
pub fn persona_survey(satisfaction: f64, rng: &mut StreamRng, cfg: &SimConfig) -> Vec<SurveyResponse> {
    (0..SURVEY_QUESTIONS)
        .map(|q| {
            let noise = jitter(rng, cfg.noise, -0.5, 0.5);
            let r = round(1.0 + 4.0 * satisfaction.clamp(0.0, 1.0) + noise).clamp(1.0, 5.0) as u8;
            SurveyResponse::new(q, r).expect("rating clamped to scale")
        })
        .collect()
}

/// Words in a reply, for length checks.
pub fn reply_words(r: &SimReply) -> usize {
    word_count(&r.utterance.text)
}
