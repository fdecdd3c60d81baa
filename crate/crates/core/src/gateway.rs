//! Response generation that needs no network: the deterministic mock
//! responder, the measurement that inverts it, and lexical retrieval.
//!
//! The live HTTP client lives in the std crate; this module only defines the
//! request it sends.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::persona::Domain;
use crate::prompt::{DetailLevel, PromptParameters, Style};
use crate::rng::{self, label};
use crate::text::{folded_tokens, sentence_count, tokens};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_length: u32,
    pub temperature: f64,
    pub model: String,
    pub timeout_ms: u64,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, max_length: u32, temperature: f64, model: impl Into<String>, timeout_ms: u64) -> Result<Self> {
        let r = CompletionRequest { prompt: prompt.into(), max_length, temperature, model: model.into(), timeout_ms };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be positive".to_string()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    /// Number of HTTP attempts, 1 when the first try succeeded.
    pub attempts: u32,
}

/// Words per sentence for complexity levels 1..=5.
pub const SENTENCE_WORDS: [usize; 5] = [6, 10, 14, 18, 22];
/// Sentences per reply for each detail tier.
pub const DETAIL_SENTENCES: [usize; 3] = [2, 4, 7];

const PROFESSIONAL_MARKERS: [&str; 5] = ["Furthermore", "Additionally", "Accordingly", "Consequently", "Notably"];
const CONVERSATIONAL_MARKERS: [&str; 5] = ["Honestly", "Basically", "Anyway", "Well", "Plus"];

const FILLER: [&str; 48] = [
    "the", "plan", "works", "when", "you", "keep", "steady", "habits", "over", "time", "and", "track",
    "each", "step", "with", "care", "small", "changes", "add", "up", "to", "real", "progress", "across",
    "weeks", "many", "people", "start", "by", "setting", "clear", "goals", "then", "review", "results",
    "often", "this", "approach", "helps", "build", "confidence", "through", "practice", "simple", "routines",
    "matter", "most", "here",
];

/// Terminology lists used by the mock and by response measurement.
pub fn domain_terms(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Finance => &[
            "liquidity", "amortization", "dividend", "equity", "portfolio", "diversification", "yield",
            "collateral", "annuity", "leverage", "volatility", "compounding",
        ],
        Domain::Health => &[
            "metabolism", "cardiovascular", "circadian", "cortisol", "hydration", "mindfulness", "endurance",
            "nutrition", "recovery", "resilience", "ergonomics", "immunity",
        ],
        Domain::Education => &[
            "pedagogy", "curriculum", "scaffolding", "metacognition", "assessment", "competency", "mentorship",
            "credential", "accreditation", "rubric", "literacy", "syllabus",
        ],
        Domain::Technology => &[
            "algorithm", "latency", "encryption", "bandwidth", "virtualization", "api", "firmware",
            "automation", "scalability", "protocol", "dataset", "compiler",
        ],
    }
}

fn pick<'a, R: Rng>(bank: &[&'a str], rng: &mut R, avoid: Option<&str>) -> &'a str {
    loop {
        let w = bank[rng.random_range(0..bank.len())];
        if Some(w) != avoid || bank.len() == 1 {
            return w;
        }
    }
}

/// Deterministic reply whose sentence length, sentence count, terminology
/// density and opener words are set by `params`.
pub fn mock_complete(params: &PromptParameters, topic: &str, turn_index: u32, seed: u64) -> Result<String> {
    params.validate()?;
    let domain = Domain::for_topic(topic).unwrap_or(Domain::Education);
    let key = [
        label("mock"),
        label(topic),
        turn_index as u64,
        params.complexity_level as u64,
        params.detail_level.index() as u64,
        params.knowledge_level as u64,
        params.style.index() as u64,
    ];
    let mut rng = rng::stream(seed, &key);
    let len = SENTENCE_WORDS[params.complexity_level as usize - 1];
    let n_sent = DETAIL_SENTENCES[params.detail_level.index()];
    let n_terms = params.knowledge_level as usize - 1;
    let markers = match params.style {
        Style::Professional => &PROFESSIONAL_MARKERS,
        Style::Conversational => &CONVERSATIONAL_MARKERS,
    };
    let terms = domain_terms(domain);
    let topic_words: Vec<String> = folded_tokens(topic).into_iter().filter(|w| w != "and").collect();

    let mut out = String::new();
    for s in 0..n_sent {
        let mut body: Vec<&str> = Vec::with_capacity(len);
        let n_fill = len - 1 - n_terms;
        for _ in 0..n_fill {
            let prev = body.last().copied();
            body.push(pick(&FILLER, &mut rng, prev));
        }
        let mut chosen: Vec<&str> = terms.to_vec();
        chosen.shuffle(&mut rng);
        for t in chosen.into_iter().take(n_terms) {
            let at = rng.random_range(0..=body.len());
            body.insert(at, t);
        }
        let mut words: Vec<String> = body.iter().map(|w| w.to_string()).collect();
        if s == 0 {
            // Mention the topic in place of the trailing filler words.
            let mut slot = words.len();
            for tw in topic_words.iter().rev() {
                while slot > 0 && terms.contains(&words[slot - 1].as_str()) {
                    slot -= 1;
                }
                if slot == 0 {
                    break;
                }
                slot -= 1;
                words[slot] = tw.clone();
            }
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(pick(markers, &mut rng, None));
        out.push(',');
        for w in &words {
            out.push(' ');
            out.push_str(w);
        }
        out.push('.');
    }
    Ok(out)
}

/// Levels recovered from a response text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedStyle {
    pub complexity_level: u8,
    pub detail_level: DetailLevel,
    pub knowledge_level: u8,
    pub style: Style,
}

impl From<PromptParameters> for ObservedStyle {
    fn from(p: PromptParameters) -> Self {
        ObservedStyle {
            complexity_level: p.complexity_level,
            detail_level: p.detail_level,
            knowledge_level: p.knowledge_level,
            style: p.style,
        }
    }
}

fn nearest(table: &[usize], x: f64) -> usize {
    let mut best = 0;
    for (i, &v) in table.iter().enumerate() {
        if (v as f64 - x).abs() < (table[best] as f64 - x).abs() {
            best = i;
        }
    }
    best
}

/// Terminology tokens of `domain` per word of `text`.
pub fn term_density(text: &str, domain: Domain) -> f64 {
    let toks = folded_tokens(text);
    if toks.is_empty() {
        return 0.0;
    }
    let terms = domain_terms(domain);
    toks.iter().filter(|t| terms.contains(&t.as_str())).count() as f64 / toks.len() as f64
}

/// Read the four prompt levels back out of a response.
pub fn measure_response(text: &str, domain: Domain) -> ObservedStyle {
    let words = tokens(text);
    let n_sent = sentence_count(text).max(1);
    let asl = words.len() as f64 / n_sent as f64;
    let complexity_level = nearest(&SENTENCE_WORDS, asl) as u8 + 1;
    let detail_level = DetailLevel::from_index(nearest(&DETAIL_SENTENCES, n_sent as f64)).unwrap_or_default();
    let terms = domain_terms(domain);
    let n_terms = words.iter().filter(|w| terms.contains(&w.to_lowercase().as_str())).count();
    let per_sentence = n_terms as f64 / n_sent as f64;
    let knowledge_level = (libm::round(per_sentence) as u8 + 1).clamp(1, 4);
    let pro = words.iter().filter(|w| PROFESSIONAL_MARKERS.contains(w)).count();
    let conv = words.iter().filter(|w| CONVERSATIONAL_MARKERS.contains(w)).count();
    let style = if conv > pro { Style::Conversational } else { Style::Professional };
    ObservedStyle { complexity_level, detail_level, knowledge_level, style }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    /// Case-folded token counts of `body`.
    pub tokens: BTreeMap<String, usize>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let tokens = token_multiset(&body);
        Document { doc_id: doc_id.into(), title: title.into(), body, tokens }
    }
}

fn token_multiset(text: &str) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in folded_tokens(text) {
        *m.entry(t).or_default() += 1;
    }
    m
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentStore {
    docs: Vec<Document>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: Document) -> Result<()> {
        if self.docs.iter().any(|d| d.doc_id == doc.doc_id) {
            return Err(Error::InvalidEvent(format!("duplicate doc_id `{}`", doc.doc_id)));
        }
        if doc.tokens != token_multiset(&doc.body) {
            return Err(Error::InvalidEvent(format!("token multiset of `{}` does not match its body", doc.doc_id)));
        }
        self.docs.push(doc);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// A short reference note per topic domain.
    pub fn builtin() -> Self {
        let mut s = DocumentStore::new();
        for d in Domain::ALL {
            let terms = domain_terms(d);
            let body = format!(
                "Key ideas in {}: {}. Start with the basics and review progress each week.",
                d.as_str(),
                terms.join(", ")
            );
            s.insert(Document::new(format!("{}-basics", d.as_str()), format!("{} basics", d.as_str()), body))
                .expect("builtin ids are unique");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub doc_id: String,
    pub score: f64,
}

/// Top `k` documents by multiset token overlap with the query.
pub fn retrieve(store: &DocumentStore, query: &str, k: usize) -> Result<Vec<Retrieved>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".to_string()));
    }
    let q = token_multiset(query);
    let q_len: usize = q.values().sum();
    if q_len == 0 {
        return Err(Error::EmptyInput("query"));
    }
    let mut hits: Vec<Retrieved> = store
        .docs
        .iter()
        .filter_map(|d| {
            let shared: usize = q.iter().map(|(t, &n)| n.min(d.tokens.get(t).copied().unwrap_or(0))).sum();
            (shared > 0).then(|| Retrieved { doc_id: d.doc_id.clone(), score: shared as f64 / q_len as f64 })
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    hits.truncate(k);
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{complexity, MetricsConfig};

    fn params(c: u8, d: DetailLevel, k: u8, s: Style) -> PromptParameters {
        PromptParameters::new(c, d, k, s).unwrap()
    }

    #[test]
    fn mock_is_deterministic() {
        let p = PromptParameters::default();
        assert_eq!(mock_complete(&p, "Personal Finance", 2, 9).unwrap(), mock_complete(&p, "Personal Finance", 2, 9).unwrap());
        assert_ne!(mock_complete(&p, "Personal Finance", 2, 9).unwrap(), mock_complete(&p, "Personal Finance", 3, 9).unwrap());
    }

    #[test]
    fn asl_rises_with_complexity() {
        let cfg = MetricsConfig::default();
        let asl: Vec<f64> = (1..=5)
            .map(|c| {
                let t = mock_complete(&params(c, DetailLevel::Balanced, 2, Style::Professional), "Technology Trends", 0, 1).unwrap();
                complexity(&t, &cfg).unwrap().asl
            })
            .collect();
        assert!(asl.windows(2).all(|w| w[0] < w[1]), "{asl:?}");
    }

    #[test]
    fn measurement_inverts_the_mock() {
        for c in 1..=5 {
            for d in DetailLevel::ALL {
                for k in 1..=4 {
                    for s in Style::ALL {
                        let p = params(c, d, k, s);
                        let t = mock_complete(&p, "Health and Wellness", 4, 3).unwrap();
                        assert_eq!(measure_response(&t, Domain::Health), ObservedStyle::from(p), "{t}");
                    }
                }
            }
        }
    }

    #[test]
    fn retrieval_toy_store() {
        let mut s = DocumentStore::new();
        s.insert(Document::new("a", "A", "budget savings plan")).unwrap();
        s.insert(Document::new("b", "B", "savings")).unwrap();
        s.insert(Document::new("c", "C", "hiking")).unwrap();
        // query of 4 tokens: a shares 2, b shares 1, c none
        let r = retrieve(&s, "budget savings for retirement", 2).unwrap();
        let ids: Vec<_> = r.iter().map(|x| (x.doc_id.as_str(), x.score)).collect();
        assert_eq!(ids, [("a", 0.5), ("b", 0.25)]);
        assert!(retrieve(&s, "nothing matches", 3).unwrap().is_empty());
        assert_eq!(retrieve(&s, "budget savings plan", 1).unwrap()[0].score, 1.0);
        assert!(matches!(retrieve(&s, "  ", 1), Err(Error::EmptyInput(_))));
        assert!(retrieve(&DocumentStore::new(), "x", 1).unwrap().is_empty());
        assert!(s.insert(Document::new("a", "dup", "x")).is_err());
    }
}
