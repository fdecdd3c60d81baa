//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Built without the libtest harness so the lines always show in
//! `cargo test` output.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use humaine::report::{render_report, ReportFormat};
use humaine::runner::{self, write_run};
use humaine_core::conversation::{
    Arm, ElicitationAnswer, FeedbackEvent, Liked, SessionRecord, SurveyResponse, Timestamp, TurnRecord, Utterance,
};
use humaine_core::experiment::{
    build_report, convergence_run, evaluate_profiler, ConvergenceConfig, ExperimentConfig, ExperimentRun, HistogramSpec,
    Provenance, ReportSettings, SessionOutcome, StatsReport,
};
use humaine_core::metrics::*;
use humaine_core::profiler::{
    policy_objective, policy_objective_grad, update_policy, value_loss, value_loss_grad, AdaptationAction, Move,
    PolicyModel, PpoConfig, PpoLearner, UpdateSample, ValueModel,
};
use humaine_core::rng;
use humaine_core::stats::*;

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

const AB_SEEDS: std::ops::RangeInclusive<u64> = 1..=20;

/// Default A/B runs, shared by the outcome, cross-session and determinism checks.
fn ab_runs() -> &'static [(ExperimentRun, Duration)] {
    static RUNS: OnceLock<Vec<(ExperimentRun, Duration)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        AB_SEEDS
            .map(|seed| {
                let started = Instant::now();
                let cfg = ExperimentConfig { master_seed: seed, ..ExperimentConfig::default() };
                let run = runner::run_experiment(&cfg, &MetricsConfig::default(), runner::default_threads()).unwrap();
                (run, started.elapsed())
            })
            .collect()
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------
// Metric formulas

fn ts(ms: u64) -> Timestamp {
    Timestamp::from_millis(ms)
}

fn turn(index: u32, prompt_ms: u64, reply: Option<(&str, Option<u64>, u64)>) -> TurnRecord {
    TurnRecord {
        index,
        bot_prompt: Utterance::bot("Prompt.", ts(prompt_ms)),
        user_reply: reply.map(|(t, start, sent)| Utterance::user(t, start.map(ts), ts(sent)).unwrap()),
        feedback: None,
    }
}

fn metric_fixtures() -> Verdict {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if !close(got, want, 1e-9) {
            failures.push(format!("{name}: {got} != {want}"));
        }
    };
    let cfg = MetricsConfig::default();

    check("RT", response_time(&turn(1, 1000, Some(("ok", None, 9500)))).unwrap(), 8.5);
    check("RT zero", response_time(&turn(1, 1000, Some(("ok", None, 1000)))).unwrap(), 0.0);

    let lex = Lexicon::new([("good".into(), 1.0), ("bad".into(), -1.0)]).unwrap();
    let ss_cfg = MetricsConfig { sentiment_lexicon: lex, ..MetricsConfig::default() };
    check("SS", sentiment_score("good good bad", &ss_cfg), 1.0 / 3.0);
    check("SS unknown", sentiment_score("xyzzy qwerty", &ss_cfg), 0.0);

    let repeated = MetricsConfig::default().with_rules(&[GrammarRule::RepeatedWord]);
    check("GE", grammar_error_count("the cat cat sat.", &repeated) as f64, 1.0);
    check("GMF", grammar_mistake_frequency(2, 20).unwrap(), 0.1);

    check("CL parts", complexity_from_parts(10.0, 0.8, &cfg).raw, 0.04 * 10.0 + 0.8);
    check("TTR", complexity("the cat sat on the mat", &cfg).unwrap().ttr, 5.0 / 6.0);

    let typed = Utterance::user("x".repeat(120), Some(ts(0)), ts(30_000)).unwrap();
    check("TS", typing_speed(&typed).unwrap(), 4.0);

    let fb = |i, liked| FeedbackEvent { turn_index: i, liked, at: ts(0) };
    let likes = [fb(1, Liked::Like), fb(2, Liked::Like), fb(3, Liked::Like), fb(4, Liked::Dislike)];
    check("FS", feedback_score(&likes, 4).unwrap(), 0.75);

    let survey: Vec<_> = [4, 5, 3].iter().map(|&r| SurveyResponse::new(1, r).unwrap()).collect();
    check("SBS", survey_satisfaction(&survey).unwrap(), 4.0);

    // three turns; every slot worked out by hand
    let mut s = SessionRecord {
        session_id: "fixture".into(),
        started_at: ts(0),
        ended_at: Some(ts(60_000)),
        topic: "Personal Finance".into(),
        arm: Arm::Experimental,
        turns: vec![
            turn(1, 1_000, Some(("This is good help.", Some(5_000), 11_000))),
            turn(2, 12_000, Some(("very very bad answer here", Some(27_000), 32_000))),
            turn(3, 33_000, Some(("Perfect.", Some(35_000), 39_000))),
        ],
        surveys: vec![SurveyResponse::new(1, 4).unwrap(), SurveyResponse::new(2, 5).unwrap()],
        elicitation_answers: vec![ElicitationAnswer { question: "detail".into(), answer: "comprehensive".into() }],
    };
    s.turns[0].feedback = Some(FeedbackEvent { turn_index: 1, liked: Liked::Like, at: ts(11_500) });
    s.turns[2].feedback = Some(FeedbackEvent { turn_index: 3, liked: Liked::Dislike, at: ts(39_500) });
    let v = extract_features(&s, &cfg).unwrap();
    let scale = 0.04 * 25.0 + 1.0;
    let expected = [
        60.0 / 600.0,
        12.0 / 60.0,
        (3.0 + 5.0 + 2.0) / 3.0 / 10.0,
        (3.0 / 5.0) / 3.0 / GRAMMAR_MISTAKE_REF,
        ((0.04 * 4.0 + 1.0) + (0.04 * 5.0 + 0.8) + (0.04 * 1.0 + 1.0)) / scale / 3.0,
        [0.5, -0.5, 1.0].iter().sum::<f64>() / 3.0,
        1.0 / 3.0,
        (4.5 - 1.0) / 4.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.5,
        0.5,
        3.0 / 20.0,
        0.0,
    ];
    for (i, (a, b)) in v.as_slice().iter().zip(expected).enumerate() {
        check(&format!("feature slot {i}"), *a, b);
    }

    let elapsed = started.elapsed();
    let fast = elapsed < Duration::from_secs(1);
    let detail = if failures.is_empty() {
        format!("{} values exact to 1e-9 in {:.0} ms", 12 + expected.len(), elapsed.as_secs_f64() * 1e3)
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty() && fast, detail)
}

// ---------------------------------------------------------------------------
// Reference summaries (n = 50 per group)

const CONTROL: (f64, f64) = (0.119, 0.050);
const EXPERIMENTAL: (f64, f64) = (0.173, 0.071);
const N: usize = 50;

/// Topic, control mean, experimental mean, printed improvement.
const TOPIC_TABLE: [(&str, f64, f64, f64); 10] = [
    ("Professional Networking", 0.156, 0.235, 50.3),
    ("Creative Projects", 0.127, 0.192, 50.9),
    ("Career Development", 0.083, 0.124, 48.8),
    ("Education and Learning", 0.100, 0.149, 48.5),
    ("Environmental Sustainability", 0.135, 0.199, 48.1),
    ("Personal Finance", 0.138, 0.200, 44.4),
    ("Technology Trends", 0.094, 0.134, 42.8),
    ("Health and Wellness", 0.095, 0.133, 39.5),
    ("Work-Life Balance", 0.126, 0.176, 39.5),
    ("Travel and Culture", 0.134, 0.184, 36.8),
];

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn summary_reproduction() -> Verdict {
    let started = Instant::now();
    let t = welch_from_summary(CONTROL.0, CONTROL.1, N, EXPERIMENTAL.0, EXPERIMENTAL.1, N).unwrap();
    let ci_c = ci95_from_summary(CONTROL.0, CONTROL.1, N).unwrap();
    let ci_e = ci95_from_summary(EXPERIMENTAL.0, EXPERIMENTAL.1, N).unwrap();
    let overall = improvement_pct(CONTROL.0, EXPERIMENTAL.0).unwrap();
    let ci_ok = [round3(ci_c.0), round3(ci_c.1), round3(ci_e.0), round3(ci_e.1)] == [0.105, 0.133, 0.153, 0.193];
    let worst = TOPIC_TABLE
        .iter()
        .map(|&(_, c, e, printed)| (improvement_pct(c, e).unwrap() - printed).abs())
        .fold(0.0, f64::max);
    let pass = close(t.t.abs(), 4.394, 0.05)
        && ci_ok
        && close(overall, 45.0, 1.0)
        && worst <= 1.0
        && started.elapsed() < Duration::from_secs(1);
    verdict(
        pass,
        format!(
            "|t| {:.3}, CIs [{:.3}, {:.3}] [{:.3}, {:.3}], improvement {overall:+.1}%, worst topic gap {worst:.2}pp",
            t.t.abs(),
            ci_c.0,
            ci_c.1,
            ci_e.0,
            ci_e.1
        ),
    )
}

fn effect_size() -> Verdict {
    let d = cohens_d_from_summary(CONTROL.0, CONTROL.1, N, EXPERIMENTAL.0, EXPERIMENTAL.1, N).unwrap();
    // equal groups: pooled variance is the plain average of the two variances
    let by_hand = (EXPERIMENTAL.0 - CONTROL.0) / ((CONTROL.1.powi(2) + EXPERIMENTAL.1.powi(2)) / 2.0).sqrt();
    let power = posthoc_power(0.88, N, 0.05).unwrap();
    let pass = close(d, 0.88, 0.01) && close(d, by_hand, 1e-12) && power >= 0.98;
    verdict(pass, format!("d {d:.4} (hand {by_hand:.4}), power {power:.4}"))
}

// ---------------------------------------------------------------------------
// Statistics against independent oracles

/// Every way to pick `k` of `0..n`.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Pairs where `a` beats `b`, ties counting one half.
fn pair_count_u(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }))
        .sum()
}

fn enumerated_mann_whitney_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let centre = (a.len() * b.len()) as f64 / 2.0;
    let observed = (pair_count_u(a, b) - centre).abs();
    let splits = combinations(pooled.len(), a.len());
    let hits = splits
        .iter()
        .filter(|pick| {
            let ga: Vec<f64> = pick.iter().map(|&i| pooled[i]).collect();
            let gb: Vec<f64> = (0..pooled.len()).filter(|i| !pick.contains(i)).map(|i| pooled[i]).collect();
            (pair_count_u(&ga, &gb) - centre).abs() >= observed - 1e-9
        })
        .count();
    hits as f64 / splits.len() as f64
}

fn welch_t_by_hand(a: &[f64], b: &[f64]) -> f64 {
    let m = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let v = |x: &[f64]| {
        let mu = m(x);
        x.iter().map(|y| (y - mu).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    };
    (m(b) - m(a)) / (v(a) / a.len() as f64 + v(b) / b.len() as f64).sqrt()
}

fn permutation_welch_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let observed = welch_t_by_hand(a, b).abs();
    let splits = combinations(pooled.len(), a.len());
    let hits = splits
        .iter()
        .filter(|pick| {
            let ga: Vec<f64> = pick.iter().map(|&i| pooled[i]).collect();
            let gb: Vec<f64> = (0..pooled.len()).filter(|i| !pick.contains(i)).map(|i| pooled[i]).collect();
            welch_t_by_hand(&ga, &gb).abs() >= observed - 1e-12
        })
        .count();
    hits as f64 / splits.len() as f64
}

/// Permutation-oracle fixtures: ten per group, roughly normal, near-equal
/// spread. Smaller or heavily tied samples make the permutation distribution
/// too coarse to agree with the t approximation.
const WELCH_FIXTURES: [(&[f64], &[f64]); 5] = [
    (&[4.1, 5.0, 5.3, 4.6, 5.9, 4.8, 5.5, 4.3, 5.1, 4.9], &[5.2, 5.8, 6.1, 5.5, 6.6, 5.0, 6.3, 5.7, 5.9, 6.8]),
    (&[0.12, 0.15, 0.09, 0.11, 0.14, 0.10, 0.13, 0.16, 0.08, 0.12], &[0.14, 0.18, 0.11, 0.16, 0.13, 0.19, 0.15, 0.12, 0.17, 0.20]),
    (&[10.2, 12.1, 11.4, 13.3, 9.1, 12.6, 10.7, 11.8, 10.9, 12.4], &[11.3, 13.7, 12.2, 14.1, 10.4, 13.2, 12.8, 11.6, 12.5, 13.9]),
    (&[2.31, 1.94, 2.83, 2.12, 2.58, 2.44, 2.03, 2.71, 2.26, 2.49], &[2.52, 2.17, 3.04, 2.41, 2.93, 2.64, 2.23, 2.86, 2.37, 2.78]),
    (&[50.0, 47.0, 53.0, 49.0, 52.0, 48.0, 51.0, 46.0, 54.0, 50.0], &[55.0, 58.0, 52.0, 57.0, 54.0, 60.0, 53.0, 56.0, 59.0, 51.0]),
];

fn statistics_oracles() -> Verdict {
    let mut failures = Vec::new();

    let mut pairs = 0;
    for na in 1..10usize {
        for nb in 1..=(10 - na) {
            // one fixture without ties, one with
            let distinct: Vec<f64> = (0..na + nb).map(|i| ((i * 7 + 3) % 11) as f64).collect();
            let tied: Vec<f64> = (0..na + nb).map(|i| ((i * 5 + 1) % 4) as f64).collect();
            for pooled in [distinct, tied] {
                let (a, b) = pooled.split_at(na);
                let got = mann_whitney_u(a, b).unwrap();
                let want = enumerated_mann_whitney_p(a, b);
                if !got.exact || !close(got.p, want, 1e-12) || !close(got.u_a, pair_count_u(a, b), 1e-12) {
                    failures.push(format!("Mann-Whitney {na}+{nb}: {} vs {want}", got.p));
                }
            }
            pairs += 1;
        }
    }

    let mut worst_welch: f64 = 0.0;
    for (i, (a, b)) in WELCH_FIXTURES.iter().enumerate() {
        let got = welch_t(a, b).unwrap().p;
        let want = permutation_welch_p(a, b);
        worst_welch = worst_welch.max((got - want).abs());
        if !close(got, want, 0.01) {
            failures.push(format!("Welch fixture {i}: {got:.4} vs permutation {want:.4}"));
        }
    }

    // grand mean 3.5, SSB = 13.5 on 1 df, SSW = 4 on 4 df
    let f = one_way_anova(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap().f;
    if f != 13.5 {
        failures.push(format!("ANOVA F {f}"));
    }

    let detail = if failures.is_empty() {
        format!("Mann-Whitney exact on {pairs} size pairs, Welch worst gap {worst_welch:.4}, ANOVA F {f}")
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty(), detail)
}

// ---------------------------------------------------------------------------
// Simulated experiments

fn ab_outcome() -> Verdict {
    let runs = ab_runs();
    let mut good = 0;
    let mut slowest = Duration::ZERO;
    let mut misses = Vec::new();
    for ((run, took), seed) in runs.iter().zip(AB_SEEDS) {
        let r = &run.report;
        slowest = slowest.max(*took);
        let d = r.cohens_d.unwrap_or(f64::NAN);
        if r.experimental.mean > r.control.mean && r.welch.p < 0.01 && d >= 0.5 {
            good += 1;
        } else {
            misses.push(format!("seed {seed}: p {:.3} d {d:.2}", r.welch.p));
        }
    }
    let pass = good >= 18 && slowest < Duration::from_secs(120);
    let mut detail = format!("{good}/20 seeds significant with d >= 0.5, slowest run {:.1}s", slowest.as_secs_f64());
    if !misses.is_empty() {
        detail.push_str(&format!(" (misses: {})", misses.join(", ")));
    }
    verdict(pass, detail)
}

fn null_run() -> Verdict {
    let gaps: Vec<f64> = AB_SEEDS
        .map(|seed| {
            let run = runner::run_experiment(&ExperimentConfig::null(seed), &MetricsConfig::default(), runner::default_threads())
                .unwrap();
            run.report.improvement_pct.unwrap()
        })
        .collect();
    let inside = gaps.iter().filter(|g| g.abs() < 5.0).count();
    let worst = gaps.iter().map(|g| g.abs()).fold(0.0, f64::max);
    verdict(inside * 100 >= 95 * gaps.len(), format!("{inside}/20 seeds within 5%, largest |improvement| {worst:.2}%"))
}

// ---------------------------------------------------------------------------
// PPO

fn toy_state(k: usize, len: usize) -> Vec<f64> {
    (0..len).map(|i| ((k * 31 + i * 17) % 13) as f64 / 13.0 - 0.4).collect()
}

fn toy_action(k: usize) -> AdaptationAction {
    AdaptationAction::from_moves(core::array::from_fn(|d| Move::from_index((k + d * 2) % 3).unwrap()))
}

/// Policy with a non-zero head so that every layer receives gradient.
fn toy_policy() -> PolicyModel {
    let mut p = PolicyModel::new(11);
    for (i, w) in p.net.params.iter_mut().enumerate() {
        *w += 0.3 * (i as f64 * 1.7).sin();
    }
    p
}

/// Ratios land on both sides of the clip range and well away from its edges.
fn toy_batch(policy: &PolicyModel, value: &ValueModel) -> Vec<UpdateSample> {
    let len = policy.net.sizes[0];
    let shifts = [0.0, 0.1, -0.15, 0.5, -0.6, 0.05, -0.3, 0.4];
    let advantages = [1.0, -0.5, 0.8, 1.2, -1.1, -0.3, 0.6, -0.9];
    (0..8)
        .map(|k| {
            let state = toy_state(k, len);
            let action = toy_action(k);
            let logp = policy.log_prob(&state, &action).unwrap();
            UpdateSample {
                ret: value.value(&state).unwrap() + 0.5 - k as f64 * 0.1,
                state,
                action,
                old_log_prob: logp + shifts[k],
                advantage: advantages[k],
            }
        })
        .collect()
}

/// Largest component error over the largest component magnitude.
fn gradient_gap(params: &mut [f64], analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let up = f(params);
        params[i] = orig - h;
        let down = f(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((numeric - analytic[i]).abs());
        scale = scale.max(numeric.abs());
    }
    worst / scale.max(1e-12)
}

fn ppo_checks() -> Verdict {
    let cfg = PpoConfig { entropy_bonus: 0.05, ..PpoConfig::default() };
    let policy = toy_policy();
    let mut value = ValueModel::new(12);
    for (i, w) in value.net.params.iter_mut().enumerate() {
        *w += 0.2 * (i as f64 * 0.9).cos();
    }
    let batch = toy_batch(&policy, &value);

    let analytic = policy_objective_grad(&policy, &batch, &cfg).unwrap();
    let mut params = policy.net.params.clone();
    let mut probe = policy.clone();
    let policy_gap = gradient_gap(&mut params, &analytic, &mut |p| {
        probe.net.params.copy_from_slice(p);
        policy_objective(&probe, &batch, &cfg).unwrap()
    });

    let analytic = value_loss_grad(&value, &batch).unwrap();
    let mut params = value.net.params.clone();
    let mut probe = value.clone();
    let value_gap = gradient_gap(&mut params, &analytic, &mut |p| {
        probe.net.params.copy_from_slice(p);
        value_loss(&probe, &batch).unwrap()
    });

    // zero advantages, zero entropy bonus, returns equal to the current values
    let quiet = PpoConfig { entropy_bonus: 0.0, ..PpoConfig::default() };
    let mut learner = PpoLearner::from_models(policy.clone(), value.clone(), &quiet);
    let still: Vec<UpdateSample> = batch
        .iter()
        .map(|s| UpdateSample { advantage: 0.0, ret: value.value(&s.state).unwrap(), ..s.clone() })
        .collect();
    let before = learner.clone();
    update_policy(&mut learner, &still, &quiet, &mut rng::stream(3, &[])).unwrap();
    let no_op = learner.policy == before.policy && learner.value == before.value;

    let rates: Vec<f64> = (0..10u64)
        .map(|seed| convergence_run(&ConvergenceConfig::default(), seed, &MetricsConfig::default()).unwrap().match_rate())
        .collect();
    let converged = rates.iter().filter(|&&r| r >= 0.8).count();

    let pass = policy_gap <= 1e-4 && value_gap <= 1e-4 && no_op && converged >= 9;
    let shown: Vec<String> = rates.iter().map(|r| format!("{:.0}%", 100.0 * r)).collect();
    verdict(
        pass,
        format!(
            "gradient gaps policy {policy_gap:.1e} value {value_gap:.1e}, zero-advantage no-op {no_op}, \
             convergence {converged}/10 seeds >= 80% [{}]",
            shown.join(" ")
        ),
    )
}

// ---------------------------------------------------------------------------
// Profiler

fn profiler_checks() -> Verdict {
    let eval = evaluate_profiler(&ExperimentConfig::default(), &MetricsConfig::default()).unwrap();
    let margins = eval.margin_pp();
    let heads_ok = margins.iter().all(|&m| m >= 20.0);

    let sessions: Vec<(f64, f64)> = ab_runs()[..10]
        .iter()
        .map(|(run, _)| {
            let m = &run.report.dimension_match_by_session;
            (m[0], m[2])
        })
        .collect();
    let improved = sessions.iter().filter(|(first, third)| third >= first).count();
    let shown: Vec<String> = margins.iter().map(|m| format!("{m:+.1}")).collect();
    verdict(
        heads_ok && improved >= 9,
        format!("held-out margins over baseline [{}]pp, session 3 >= session 1 on {improved}/10 seeds", shown.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// Determinism

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let cfg = ExperimentConfig { master_seed: *AB_SEEDS.start(), ..ExperimentConfig::default() };
    let first = &ab_runs()[0].0;
    let again = runner::run_experiment(&cfg, &MetricsConfig::default(), 1).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_run(a.path(), &cfg, first).unwrap();
    write_run(b.path(), &cfg, &again).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
    let pass = ta.len() == tb.len() && differing.is_empty() && ta.contains_key(runner::OUTCOMES_FILE);
    let detail = if pass {
        format!("{} files byte-identical across a parallel and a single-threaded run", ta.len())
    } else {
        format!("differing files: {differing:?}")
    };
    verdict(pass, detail)
}

// ---------------------------------------------------------------------------
// Report fidelity

/// Fifty experimental sessions spread 5, 20, 20, 5
/// over the first four 0.05-wide bins from 0.05.
fn figure_report() -> StatsReport {
    let topics = humaine_core::persona::default_topics();
    let per_bin = [5, 20, 20, 5];
    let mut values = Vec::new();
    for (bin, &count) in per_bin.iter().enumerate() {
        let lo = 0.05 + 0.05 * bin as f64;
        values.extend((0..count).map(|k| lo + 0.05 * (k as f64 + 0.5) / count as f64));
    }
    let outcome = |id: u32, arm: Arm, satisfaction: f64| SessionOutcome {
        session_id: format!("p{id}-{arm:?}"),
        persona_id: id,
        arm,
        session_index: 0,
        topic: topics[id as usize % topics.len()].clone(),
        satisfaction,
        relevance: 0.5,
        personalization_score: 0.5,
        expertise_alignment: 0.5,
        style_match: 0.5,
        task_achievement: satisfaction,
        dimension_match: 0.5,
        mean_reward: 0.0,
        duration_s: 240.0,
        message_count: 23,
        completed: true,
    };
    let mut outcomes = Vec::new();
    for (id, &v) in values.iter().enumerate() {
        outcomes.push(outcome(id as u32, Arm::Control, 0.08 + 0.002 * id as f64));
        outcomes.push(outcome(id as u32, Arm::Experimental, v));
    }
    let cfg = ExperimentConfig::default();
    let settings = ReportSettings { alpha: 0.05, histogram: HistogramSpec::default(), sessions_per_persona: 1 };
    build_report(outcomes, Provenance::for_run(&cfg, &MetricsConfig::default()), settings).unwrap()
}

fn report_fidelity() -> Verdict {
    let report = figure_report();
    let text = render_report(&report, ReportFormat::Text).unwrap();
    let csv = render_report(&report, ReportFormat::Csv).unwrap();

    let bins: Vec<usize> = ["0.05-0.10", "0.10-0.15", "0.15-0.20", "0.20-0.25", "0.25-0.30", "0.30-0.35"]
        .iter()
        .filter_map(|label| {
            let line = text.lines().find(|l| l.starts_with(label))?;
            line.split_whitespace().nth(1)?.parse().ok()
        })
        .collect();
    let bins_ok = bins == [5, 20, 20, 5, 0, 0] && report.histogram.counts == [5, 20, 20, 5, 0, 0];

    let layouts = [
        ("Table III.", &["Group", "Mean", "Std Dev", "Median", "Range"][..], 3),
        ("Table IV.", &["Outcome", "Control", "Experimental", "Improvement"][..], 2),
        ("Table V.", &["Metric", "Control", "Experimental", "Difference"][..], 5),
        ("Table VI.", &["Topic", "Control", "Experimental", "Improvement"][..], 11),
    ];
    let mut missing = Vec::new();
    for (title, columns, rows) in layouts {
        let block: Vec<&str> = text.lines().skip_while(|l| !l.starts_with(title)).skip(1).take_while(|l| !l.is_empty()).collect();
        let header_ok = block.first().is_some_and(|h| columns.iter().all(|c| h.contains(c)));
        if !header_ok || block.len() < rows + 1 {
            missing.push(title);
        }
    }
    let sections = ["table_iii", "table_iv", "table_v", "table_vi", "histogram"];
    let csv_ok = sections.iter().all(|s| csv.lines().any(|l| l.starts_with(&format!("{s},"))));

    let pass = bins_ok && missing.is_empty() && csv_ok;
    verdict(
        pass,
        format!("histogram {bins:?}, text tables missing {missing:?}, CSV sections present {csv_ok}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric formula fixtures", metric_fixtures),
        ("reproduction from reference summaries", summary_reproduction),
        ("effect size and power", effect_size),
        ("statistics against oracles", statistics_oracles),
        ("A/B outcome over 20 seeds", ab_outcome),
        ("null experiment over 20 seeds", null_run),
        ("PPO gradients, no-op update, convergence", ppo_checks),
        ("profiler accuracy and cross-session gain", profiler_checks),
        ("determinism of outcome files and reports", determinism),
        ("report histogram and table layouts", report_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
