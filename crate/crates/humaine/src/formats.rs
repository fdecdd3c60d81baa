//! On-disk formats: lexicon TSV, TOML configuration documents, JSONL record
//! files, the prompt template file, model snapshots and training logs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use humaine_core::experiment::{sha256_hex, ExperimentConfig};
use humaine_core::metrics::{GrammarRule, Lexicon, MetricsConfig, FEATURE_LAYOUT_VERSION};
use humaine_core::persona::{DistributionTable, Persona, DISTRIBUTION_TABLE_VERSION};
use humaine_core::profiler::{EpochStats, PolicyModel, ProfilerModel, TrainingLog, ValueModel};
use humaine_core::prompt::{DirectiveTable, PromptTemplate, DEFAULT_PREAMBLE, DEFAULT_TEMPLATE};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Write through a sibling temporary file so readers never see half a file.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn from_toml<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| format_err(path, e.to_string().trim_end()))
}

fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("configuration types serialise to TOML")
}

// ---- JSONL ----

pub fn render_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialise to JSON"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_text(path, &render_jsonl(items))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(path, &read_text(path)?)
}

/// Cohort export: one persona per line.
pub fn read_cohort(path: &Path) -> Result<Vec<Persona>> {
    let cohort: Vec<Persona> = read_jsonl(path)?;
    for p in &cohort {
        p.validate()?;
    }
    Ok(cohort)
}

// ---- lexicon ----

/// `token<TAB>score` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_lexicon(path: &Path, text: &str) -> Result<Lexicon> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
        let (token, score) = line.split_once('\t').ok_or_else(|| err("expected `token<TAB>score`".into()))?;
        let score: f64 = score.trim().parse().map_err(|_| err(format!("bad score `{}`", score.trim())))?;
        if !(-1.0..=1.0).contains(&score) {
            return Err(err(format!("score {score} outside [-1, 1]")));
        }
        entries.push((token.trim().to_lowercase(), score));
    }
    Ok(Lexicon::new(entries)?)
}

pub fn render_lexicon(lexicon: &Lexicon) -> String {
    let mut out = String::from("# token\tscore\n");
    for (token, score) in lexicon.iter() {
        out.push_str(&format!("{token}\t{score}\n"));
    }
    out
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    parse_lexicon(path, &read_text(path)?)
}

// ---- metrics configuration ----

pub const METRICS_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsFile {
    version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    asl_ref: Option<f64>,
    /// Lexicon TSV, relative to the configuration file.
    #[serde(skip_serializing_if = "Option::is_none")]
    lexicon: Option<PathBuf>,
    #[serde(default)]
    grammar_rules: BTreeMap<GrammarRule, bool>,
}

/// Parse a metrics document. Omitted keys keep their defaults; unknown keys
/// are rejected.
pub fn parse_metrics(path: &Path, text: &str) -> Result<MetricsConfig> {
    let file: MetricsFile = from_toml(path, text)?;
    if file.version != METRICS_CONFIG_VERSION {
        return Err(Error::Version { what: "metrics config", found: file.version, expected: METRICS_CONFIG_VERSION });
    }
    let mut cfg = MetricsConfig::default();
    cfg.alpha = file.alpha.unwrap_or(cfg.alpha);
    cfg.beta = file.beta.unwrap_or(cfg.beta);
    cfg.asl_ref = file.asl_ref.unwrap_or(cfg.asl_ref);
    if let Some(lex) = &file.lexicon {
        let lex = path.parent().map_or_else(|| lex.clone(), |dir| dir.join(lex));
        cfg.sentiment_lexicon = load_lexicon(&lex)?;
    }
    for (rule, on) in &mut cfg.grammar_rules {
        if let Some(v) = file.grammar_rules.get(rule) {
            *on = *v;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The scalar settings and rule switches of `cfg`; the lexicon is referenced
/// by path when given.
pub fn render_metrics(cfg: &MetricsConfig, lexicon: Option<&Path>) -> String {
    to_toml(&MetricsFile {
        version: METRICS_CONFIG_VERSION,
        alpha: Some(cfg.alpha),
        beta: Some(cfg.beta),
        asl_ref: Some(cfg.asl_ref),
        lexicon: lexicon.map(Path::to_path_buf),
        grammar_rules: cfg.grammar_rules.iter().copied().collect(),
    })
}

pub fn load_metrics(path: &Path) -> Result<MetricsConfig> {
    parse_metrics(path, &read_text(path)?)
}

// ---- distribution table, experiment config ----

pub fn parse_distribution_table(path: &Path, text: &str) -> Result<DistributionTable> {
    let table: DistributionTable = from_toml(path, text)?;
    if table.version != DISTRIBUTION_TABLE_VERSION {
        return Err(Error::Version { what: "distribution table", found: table.version, expected: DISTRIBUTION_TABLE_VERSION });
    }
    table.validate()?;
    Ok(table)
}

pub fn render_distribution_table(table: &DistributionTable) -> String {
    to_toml(table)
}

pub fn load_distribution_table(path: &Path) -> Result<DistributionTable> {
    parse_distribution_table(path, &read_text(path)?)
}

/// Omitted keys take their defaults; unknown keys are rejected.
pub fn parse_experiment_config(path: &Path, text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = from_toml(path, text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn render_experiment_config(cfg: &ExperimentConfig) -> String {
    to_toml(cfg)
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    parse_experiment_config(path, &read_text(path)?)
}

// ---- prompt template ----

pub const TEMPLATE_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    version: u32,
    preamble: String,
    template: String,
    directives: DirectiveTable,
}

/// A template document: the `{slot}` text, the system preamble and one
/// directive table per parameter.
pub fn parse_template(path: &Path, text: &str) -> Result<PromptTemplate> {
    let file: TemplateFile = from_toml(path, text)?;
    if file.version != TEMPLATE_FILE_VERSION {
        return Err(Error::Version { what: "template", found: file.version, expected: TEMPLATE_FILE_VERSION });
    }
    Ok(PromptTemplate::parse(&file.template, &file.preamble, file.directives)?)
}

pub fn render_default_template() -> String {
    to_toml(&TemplateFile {
        version: TEMPLATE_FILE_VERSION,
        preamble: DEFAULT_PREAMBLE.to_string(),
        template: DEFAULT_TEMPLATE.to_string(),
        directives: DirectiveTable::default(),
    })
}

pub fn load_template(path: &Path) -> Result<PromptTemplate> {
    parse_template(path, &read_text(path)?)
}

// ---- model snapshot ----

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShapes {
    pub profiler: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub profiler: ProfilerModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ValueModel>,
}

/// Trained weights with the hash of the configuration that produced them
/// and a checksum over the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSnapshot {
    pub version: u32,
    pub feature_layout_version: u32,
    pub config_hash: String,
    pub shapes: LayerShapes,
    pub weights_sha256: String,
    pub networks: Networks,
}

fn weights_digest(n: &Networks) -> String {
    sha256_hex(&serde_json::to_vec(n).expect("networks serialise"))
}

impl ModelSnapshot {
    pub fn new(config_hash: impl Into<String>, networks: Networks) -> Self {
        let shapes = LayerShapes {
            profiler: networks.profiler.net.sizes.clone(),
            policy: networks.policy.as_ref().map(|p| p.net.sizes.clone()),
            value: networks.value.as_ref().map(|v| v.net.sizes.clone()),
        };
        ModelSnapshot {
            version: SNAPSHOT_VERSION,
            feature_layout_version: FEATURE_LAYOUT_VERSION,
            config_hash: config_hash.into(),
            shapes,
            weights_sha256: weights_digest(&networks),
            networks,
        }
    }

    /// Versions, declared shapes and checksum must all agree with the weights.
    pub fn verify(&self, path: &Path) -> Result<()> {
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::Version { what: "model snapshot", found: self.version, expected: SNAPSHOT_VERSION });
        }
        if self.feature_layout_version != FEATURE_LAYOUT_VERSION {
            return Err(Error::Version {
                what: "feature layout",
                found: self.feature_layout_version,
                expected: FEATURE_LAYOUT_VERSION,
            });
        }
        let n = &self.networks;
        n.profiler.validate()?;
        let shapes_ok = self.shapes.profiler == n.profiler.net.sizes
            && self.shapes.policy.as_ref() == n.policy.as_ref().map(|p| &p.net.sizes)
            && self.shapes.value.as_ref() == n.value.as_ref().map(|v| &v.net.sizes);
        if !shapes_ok {
            return Err(format_err(path, "declared layer shapes do not match the weights"));
        }
        for net in [n.policy.as_ref().map(|p| &p.net), n.value.as_ref().map(|v| &v.net)].into_iter().flatten() {
            net.validate()?;
        }
        if weights_digest(n) != self.weights_sha256 {
            return Err(format_err(path, "weights checksum mismatch"));
        }
        Ok(())
    }
}

pub fn render_snapshot(s: &ModelSnapshot) -> String {
    let mut text = serde_json::to_string_pretty(s).expect("snapshot serialises");
    text.push('\n');
    text
}

pub fn parse_snapshot(path: &Path, text: &str) -> Result<ModelSnapshot> {
    let s: ModelSnapshot = serde_json::from_str(text).map_err(|e| format_err(path, e))?;
    s.verify(path)?;
    Ok(s)
}

pub fn load_snapshot(path: &Path) -> Result<ModelSnapshot> {
    parse_snapshot(path, &read_text(path)?)
}

// ---- training log ----

const TRAINING_LOG_HEADER: &str = "epoch\tloss\tacc_complexity\tacc_detail\tacc_style\tacc_expertise";

/// Header line, a row for the untrained model (epoch 0, loss only), then one
/// row per epoch.
pub fn render_training_log(log: &TrainingLog) -> String {
    let mut out = format!("{TRAINING_LOG_HEADER}\n0\t{}\t\t\t\t\n", log.initial_loss);
    for e in &log.epochs {
        let [a, b, c, d] = e.accuracy;
        out.push_str(&format!("{}\t{}\t{a}\t{b}\t{c}\t{d}\n", e.epoch, e.loss));
    }
    out
}

pub fn parse_training_log(path: &Path, text: &str) -> Result<TrainingLog> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRAINING_LOG_HEADER => {}
        _ => return Err(Error::Parse { path: path.to_path_buf(), line: 1, message: "missing training log header".into() }),
    }
    let mut log = TrainingLog::default();
    for (i, line) in lines {
        let err = |message: &str| Error::Parse { path: path.to_path_buf(), line: i + 1, message: message.to_string() };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(err("expected 6 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
        let epoch: usize = cols[0].parse().map_err(|_| err("bad epoch"))?;
        if epoch == 0 {
            log.initial_loss = num(cols[1])?;
            continue;
        }
        let accuracy = [num(cols[2])?, num(cols[3])?, num(cols[4])?, num(cols[5])?];
        log.epochs.push(EpochStats { epoch, loss: num(cols[1])?, accuracy });
    }
    Ok(log)
}
