//! Supervised profile classifier: a shared tanh trunk with one softmax head
//! per profile dimension.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::nn::{Mlp, Sgd};
use super::UserProfile;
use crate::math::{argmax, ln, softmax_in_place};
use crate::metrics::{FeatureVector, FEATURE_LAYOUT_VERSION, FEATURE_LEN};
use crate::persona::{Domain, ExpertiseLevel, PerDomain, Persona};
use crate::prompt::{DetailLevel, Style};
use crate::rng::{self, label};
use crate::{Error, Result};

/// Width of both hidden layers.
pub const TRUNK_WIDTH: usize = 32;
/// Classes per head: complexity, detail, style, expertise.
pub const HEAD_SIZES: [usize; 4] = [5, 3, 2, 4];
const HEAD_NAMES: [&str; 4] = ["complexity", "detail", "style", "expertise"];
const N_LOGITS: usize = 14;

/// Ground truth for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileLabel {
    /// 1..=5.
    pub complexity: u8,
    pub detail: DetailLevel,
    pub style: Style,
    /// Expertise in the domain the session was about.
    pub expertise: ExpertiseLevel,
}

impl ProfileLabel {
    pub fn from_persona(p: &Persona, domain: Domain) -> Self {
        ProfileLabel {
            complexity: p.pref_complexity,
            detail: p.pref_detail,
            style: p.pref_style,
            expertise: p.expertise.get(domain),
        }
    }

    /// Class index per head.
    pub fn classes(&self) -> [usize; 4] {
        [
            self.complexity as usize - 1,
            self.detail.index(),
            self.style.index(),
            self.expertise.index(),
        ]
    }

    pub fn from_classes(c: [usize; 4]) -> Option<Self> {
        Some(ProfileLabel {
            complexity: u8::try_from(c[0] + 1).ok().filter(|v| *v <= 5)?,
            detail: DetailLevel::from_index(c[1])?,
            style: Style::from_index(c[2])?,
            expertise: *ExpertiseLevel::ALL.get(c[3])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: ProfileLabel,
    /// Examples sharing a group (the persona) stay on one side of a split.
    pub group: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub min_examples: usize,
    /// Largest epoch-over-epoch rise in training loss still counted as
    /// non-increasing.
    pub loss_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            min_examples: 200,
            loss_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean summed cross-entropy over the training set after the epoch.
    pub loss: f64,
    pub accuracy: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
}

impl TrainingLog {
    /// Largest rise in loss between consecutive epochs (0 when it never rises).
    pub fn max_loss_increase(&self) -> f64 {
        let mut prev = self.initial_loss;
        let mut worst: f64 = 0.0;
        for e in &self.epochs {
            worst = worst.max(e.loss - prev);
            prev = e.loss;
        }
        worst
    }
}

/// Per-head accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy(pub [f64; 4]);

impl Accuracy {
    pub fn complexity(&self) -> f64 {
        self.0[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilerModel {
    pub layout_version: u32,
    pub net: Mlp,
}

impl ProfilerModel {
    /// Random trunk and zero heads, so every head starts uniform.
    pub fn untrained(seed: u64) -> Self {
        let mut r = rng::stream(seed, &[label("profiler-init")]);
        let net = Mlp::new(&[FEATURE_LEN, TRUNK_WIDTH, TRUNK_WIDTH, N_LOGITS], true, &mut r)
            .expect("static layer sizes are valid");
        ProfilerModel { layout_version: FEATURE_LAYOUT_VERSION, net }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.layout_version != FEATURE_LAYOUT_VERSION {
            return Err(Error::Config(format!(
                "model expects feature layout {}, runtime has {FEATURE_LAYOUT_VERSION}",
                self.layout_version
            )));
        }
        if self.net.input_len() != FEATURE_LEN || self.net.output_len() != N_LOGITS {
            return Err(Error::Shape { expected: N_LOGITS, got: self.net.output_len() });
        }
        Ok(())
    }

    /// Softmax probabilities of each head.
    pub fn head_probs(&self, features: &[f64]) -> Result<[Vec<f64>; 4]> {
        if features.len() != FEATURE_LEN {
            return Err(Error::Shape { expected: FEATURE_LEN, got: features.len() });
        }
        let logits = self.net.predict(features)?;
        Ok(split_heads(&logits))
    }

    pub fn predict(&self, features: &[f64]) -> Result<ProfileLabel> {
        let heads = self.head_probs(features)?;
        let c = [argmax(&heads[0]), argmax(&heads[1]), argmax(&heads[2]), argmax(&heads[3])];
        Ok(ProfileLabel::from_classes(c).expect("argmax within head size"))
    }

    pub fn evaluate(&self, examples: &[LabeledExample]) -> Result<Accuracy> {
        if examples.is_empty() {
            return Err(Error::EmptyInput("evaluation set"));
        }
        let mut hits = [0usize; 4];
        for ex in examples {
            let pred = self.predict(ex.features.as_slice())?.classes();
            let truth = ex.label.classes();
            for h in 0..4 {
                hits[h] += usize::from(pred[h] == truth[h]);
            }
        }
        Ok(Accuracy(hits.map(|h| h as f64 / examples.len() as f64)))
    }
}

fn split_heads(logits: &[f64]) -> [Vec<f64>; 4] {
    let mut off = 0;
    HEAD_SIZES.map(|n| {
        let mut v = logits[off..off + n].to_vec();
        off += n;
        softmax_in_place(&mut v);
        v
    })
}

/// Accuracy of always predicting the most frequent training class.
pub fn majority_baseline(train: &[LabeledExample], test: &[LabeledExample]) -> Result<Accuracy> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("baseline split"));
    }
    let mut acc = [0.0; 4];
    for h in 0..4 {
        let mut counts = vec![0usize; HEAD_SIZES[h]];
        for ex in train {
            counts[ex.label.classes()[h]] += 1;
        }
        let counts_f: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
        let majority = argmax(&counts_f);
        let hits = test.iter().filter(|ex| ex.label.classes()[h] == majority).count();
        acc[h] = hits as f64 / test.len() as f64;
    }
    Ok(Accuracy(acc))
}

/// Split by group: groups whose hash falls in the held-out fraction go to
/// the second list.
pub fn split_by_group(examples: &[LabeledExample], holdout: f64, seed: u64) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut groups: Vec<u32> = examples.iter().map(|e| e.group).collect();
    groups.sort_unstable();
    groups.dedup();
    groups.shuffle(&mut rng::stream(seed, &[label("split")]));
    let n_test = ((groups.len() as f64 * holdout) as usize).clamp(1, groups.len().saturating_sub(1).max(1));
    let test_groups = &groups[..n_test];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for e in examples {
        if test_groups.contains(&e.group) {
            test.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    (train, test)
}

fn loss_and_grad(net: &Mlp, ex: &LabeledExample, grads: Option<&mut [f64]>, scale: f64) -> Result<f64> {
    let trace = net.forward(ex.features.as_slice())?;
    let heads = split_heads(trace.output());
    let truth = ex.label.classes();
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(N_LOGITS);
    for h in 0..4 {
        loss -= ln(heads[h][truth[h]].max(1e-300));
        for (k, p) in heads[h].iter().enumerate() {
            g.push(scale * (p - if k == truth[h] { 1.0 } else { 0.0 }));
        }
    }
    if let Some(grads) = grads {
        net.backward(&trace, &g, grads);
    }
    Ok(loss)
}

fn mean_loss(net: &Mlp, corpus: &[LabeledExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in corpus {
        total += loss_and_grad(net, ex, None, 0.0)?;
    }
    Ok(total / corpus.len() as f64)
}

/// Minimise the summed per-head cross-entropy with minibatch momentum SGD.
pub fn train_supervised(corpus: &[LabeledExample], cfg: &TrainConfig) -> Result<(ProfilerModel, TrainingLog)> {
    if corpus.len() < cfg.min_examples {
        return Err(Error::InsufficientData(format!(
            "{} examples, at least {} required",
            corpus.len(),
            cfg.min_examples
        )));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("epochs, batch size and learning rate must be positive".into()));
    }
    for (h, name) in HEAD_NAMES.iter().enumerate() {
        let first = corpus[0].label.classes()[h];
        if corpus.iter().all(|e| e.label.classes()[h] == first) {
            return Err(Error::DegenerateLabel(name));
        }
    }
    let mut model = ProfilerModel::untrained(cfg.seed);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, model.net.params.len());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut r = rng::stream(cfg.seed, &[label("profiler-batches")]);
    let mut log = TrainingLog { initial_loss: mean_loss(&model.net, corpus)?, epochs: Vec::new() };
    let mut grads = vec![0.0; model.net.params.len()];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                loss_and_grad(&model.net, &corpus[i], Some(&mut grads), scale)?;
            }
            opt.step(&mut model.net.params, &grads);
        }
        let accuracy = model.evaluate(corpus)?.0;
        log.epochs.push(EpochStats { epoch: epoch + 1, loss: mean_loss(&model.net, corpus)?, accuracy });
    }
    Ok((model, log))
}

/// Profile implied by one feature vector. The expertise head is copied to
/// every domain; callers keep only the domain the features came from.
pub fn infer_profile(model: &ProfilerModel, features: &[f64]) -> Result<UserProfile> {
    let heads = model.head_probs(features)?;
    let to5 = |v: &[f64]| -> [f64; 5] { v.try_into().expect("head of 5") };
    let expertise: [f64; 4] = heads[3].as_slice().try_into().expect("head of 4");
    let mut p = UserProfile {
        complexity_dist: to5(&heads[0]),
        detail_dist: heads[1].as_slice().try_into().expect("head of 3"),
        style_dist: heads[2].as_slice().try_into().expect("head of 2"),
        expertise_dist: PerDomain::uniform(expertise),
        confidence: 0.0,
    };
    let maxes = [&heads[0], &heads[1], &heads[2], &heads[3]].map(|h| h[argmax(h)]);
    p.confidence = maxes.iter().sum::<f64>() / 4.0;
    Ok(p)
}
