//! Text and CSV renderings of a [`StatsReport`]: the group summary,
//! outcome, secondary-metric and per-topic tables plus the satisfaction
//! histogram. Both renderings are pure functions of the report, so equal
//! reports give identical bytes.

use std::fmt::Write as _;
use std::str::FromStr;

use humaine_core::experiment::StatsReport;
use humaine_core::stats::Descriptive;
use humaine_core::Error as CoreError;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

pub fn render_report(report: &StatsReport, format: ReportFormat) -> Result<String> {
    check_complete(report)?;
    Ok(match format {
        ReportFormat::Text => render_text(report),
        ReportFormat::Csv => render_csv(report),
    })
}

fn check_complete(r: &StatsReport) -> Result<(), CoreError> {
    if r.control_scores.is_empty() {
        return Err(CoreError::MissingField("control"));
    }
    if r.experimental_scores.is_empty() {
        return Err(CoreError::MissingField("experimental"));
    }
    if r.secondary.is_empty() {
        return Err(CoreError::MissingField("secondary"));
    }
    if r.topics.is_empty() {
        return Err(CoreError::MissingField("topics"));
    }
    if r.histogram.counts.is_empty() {
        return Err(CoreError::MissingField("histogram"));
    }
    Ok(())
}

const CONTROL_LABEL: &str = "Control (Non-Personalized)";
const EXPERIMENTAL_LABEL: &str = "Experimental (Personalized)";

fn signed(x: f64) -> String {
    format!("{x:+.3}")
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:+.1}%"))
}

fn p_value(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.3}")
    }
}

fn opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.digits$}"))
}

fn bin_label(edges: &[f64], i: usize) -> String {
    format!("{:.2}-{:.2}", edges[i], edges[i + 1])
}

/// Widest histogram bar, in characters.
const BAR_WIDTH: usize = 40;

/// One mark per session up to [`BAR_WIDTH`], proportional beyond.
fn scaled_bar(count: usize, peak: usize) -> usize {
    if peak <= BAR_WIDTH {
        count
    } else {
        (count * BAR_WIDTH + peak / 2) / peak
    }
}

fn render_text(r: &StatsReport) -> String {
    let mut s = String::new();
    let p = &r.provenance;
    let _ = writeln!(s, "HumAIne A/B experiment report");
    let _ = writeln!(s, "generator {}  seed {}  commit {}", p.generator, p.master_seed, p.commit_tag);
    let _ = writeln!(s, "config sha256 {}", p.config_hash);
    let _ = writeln!(
        s,
        "personas {}  sessions {} ({} per persona per arm)  completion {:.1}%",
        r.n_personas,
        r.total_sessions,
        r.settings.sessions_per_persona,
        100.0 * r.completion_rate
    );
    let _ = writeln!(s, "mean session {:.2} min  mean messages {:.1}", r.mean_duration_min, r.mean_messages);
    s.push('\n');

    let _ = writeln!(s, "Table III. Satisfaction by group (per-persona means)");
    let _ = writeln!(s, "{:<30}{:>8}{:>10}{:>9}  Range", "Group", "Mean", "Std Dev", "Median");
    let row = |s: &mut String, label: &str, d: &Descriptive| {
        let _ = writeln!(
            s,
            "{label:<30}{:>8.3}{:>10}{:>9.3}  {:.3}-{:.3}",
            d.mean,
            opt(d.sd, 3),
            d.median,
            d.min,
            d.max
        );
    };
    row(&mut s, CONTROL_LABEL, &r.control);
    row(&mut s, EXPERIMENTAL_LABEL, &r.experimental);
    let sd_diff = r.control.sd.zip(r.experimental.sd).map(|(c, e)| e - c);
    let _ = writeln!(
        s,
        "{:<30}{:>8}{:>10}{:>9}  {}",
        "Difference",
        signed(r.experimental.mean - r.control.mean),
        sd_diff.map_or_else(|| "n/a".to_string(), signed),
        signed(r.experimental.median - r.control.median),
        signed(r.experimental.max - r.control.max)
    );
    s.push('\n');

    let _ = writeln!(s, "Table IV. Primary outcome");
    let _ = writeln!(s, "{:<20}{:>16}{:>16}{:>13}", "Outcome", "Control", "Experimental", "Improvement");
    let _ = writeln!(
        s,
        "{:<20}{:>16.3}{:>16.3}{:>13}",
        "Mean Satisfaction",
        r.control.mean,
        r.experimental.mean,
        pct(r.improvement_pct)
    );
    let ci = |c: (f64, f64)| format!("[{:.3}, {:.3}]", c.0, c.1);
    let _ = writeln!(s, "{:<20}{:>16}{:>16}", "95% CI", ci(r.ci_control), ci(r.ci_experimental));
    let _ = writeln!(s, "Welch t = {:.3}, df = {:.1}, p = {}", r.welch.t, r.welch.df, p_value(r.welch.p));
    let _ = writeln!(
        s,
        "Mann-Whitney U = {:.1}, p = {} ({})",
        r.mann_whitney.u,
        p_value(r.mann_whitney.p),
        if r.mann_whitney.exact { "exact" } else { "normal approximation" }
    );
    match &r.anova {
        Some(a) => {
            let _ = writeln!(
                s,
                "ANOVA across domains (experimental): F({}, {}) = {:.3}, p = {}",
                a.df_between,
                a.df_within,
                a.f,
                p_value(a.p)
            );
        }
        None => {
            let _ = writeln!(s, "ANOVA across domains (experimental): n/a");
        }
    }
    let _ = writeln!(
        s,
        "Cohen's d = {}, post-hoc power (alpha {}) = {}",
        opt(r.cohens_d, 3),
        r.settings.alpha,
        opt(r.power, 3)
    );
    s.push('\n');

    let _ = writeln!(s, "Table V. Secondary metrics (session means)");
    let _ = writeln!(s, "{:<24}{:>10}{:>14}{:>12}", "Metric", "Control", "Experimental", "Difference");
    for m in &r.secondary {
        let _ = writeln!(s, "{:<24}{:>10.3}{:>14.3}{:>12}", m.metric, m.control, m.experimental, signed(m.difference));
    }
    s.push('\n');

    let _ = writeln!(s, "Table VI. Satisfaction by topic (session means)");
    let _ = writeln!(s, "{:<30}{:>10}{:>14}{:>13}{:>10}", "Topic", "Control", "Experimental", "Improvement", "Sessions");
    for t in &r.topics {
        let _ = writeln!(
            s,
            "{:<30}{:>10.3}{:>14.3}{:>13}{:>10}",
            t.topic,
            t.control,
            t.experimental,
            pct(t.improvement_pct),
            t.sessions
        );
    }
    let _ = writeln!(
        s,
        "{:<30}{:>10.3}{:>14.3}{:>13}{:>10}",
        "Overall",
        r.control.mean,
        r.experimental.mean,
        pct(r.improvement_pct),
        r.total_sessions / 2
    );
    s.push('\n');

    let h = &r.histogram;
    let peak = h.counts.iter().copied().chain([h.underflow, h.overflow]).max().unwrap_or(0);
    let line = |s: &mut String, label: String, c: usize| {
        let row = format!("{label:<12}{c:>7}  {}", "#".repeat(scaled_bar(c, peak)));
        let _ = writeln!(s, "{}", row.trim_end());
    };
    let _ = writeln!(s, "Satisfaction distribution (experimental arm, {} sessions)", h.total());
    let _ = writeln!(s, "{:<12}{:>7}", "Bin", "Count");
    if h.underflow > 0 {
        line(&mut s, format!("<{:.2}", h.edges[0]), h.underflow);
    }
    for (i, c) in h.counts.iter().enumerate() {
        line(&mut s, bin_label(&h.edges, i), *c);
    }
    if h.overflow > 0 {
        let last = h.edges[h.edges.len() - 1];
        line(&mut s, format!(">{last:.2}"), h.overflow);
    }
    if !r.dimension_match_by_session.is_empty() {
        s.push('\n');
        let _ = writeln!(s, "Profile dimension match by session (experimental arm)");
        for (i, m) in r.dimension_match_by_session.iter().enumerate() {
            let _ = writeln!(s, "session {}  {:.3}", i + 1, m);
        }
    }
    s
}

/// Long format: `section,row,column,value`, full precision.
fn render_csv(r: &StatsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut put = |section: &str, row: &str, column: &str, value: String| {
        w.write_record([section, row, column, value.as_str()]).expect("writing to memory");
    };
    let num = |x: f64| x.to_string();
    let optn = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    put("section", "row", "column", "value".to_string());

    let p = &r.provenance;
    put("run", "provenance", "generator", p.generator.clone());
    put("run", "provenance", "master_seed", p.master_seed.to_string());
    put("run", "provenance", "config_hash", p.config_hash.clone());
    put("run", "provenance", "commit_tag", p.commit_tag.clone());
    put("run", "totals", "personas", r.n_personas.to_string());
    put("run", "totals", "sessions", r.total_sessions.to_string());
    put("run", "totals", "completion_rate", num(r.completion_rate));
    put("run", "totals", "mean_duration_min", num(r.mean_duration_min));
    put("run", "totals", "mean_messages", num(r.mean_messages));

    for (label, d) in [(CONTROL_LABEL, &r.control), (EXPERIMENTAL_LABEL, &r.experimental)] {
        put("table_iii", label, "mean", num(d.mean));
        put("table_iii", label, "sd", optn(d.sd));
        put("table_iii", label, "median", num(d.median));
        put("table_iii", label, "min", num(d.min));
        put("table_iii", label, "max", num(d.max));
        put("table_iii", label, "n", d.n.to_string());
    }

    put("table_iv", "Mean Satisfaction", "control", num(r.control.mean));
    put("table_iv", "Mean Satisfaction", "experimental", num(r.experimental.mean));
    put("table_iv", "Mean Satisfaction", "improvement_pct", optn(r.improvement_pct));
    put("table_iv", "95% CI", "control_low", num(r.ci_control.0));
    put("table_iv", "95% CI", "control_high", num(r.ci_control.1));
    put("table_iv", "95% CI", "experimental_low", num(r.ci_experimental.0));
    put("table_iv", "95% CI", "experimental_high", num(r.ci_experimental.1));
    put("tests", "welch", "t", num(r.welch.t));
    put("tests", "welch", "df", num(r.welch.df));
    put("tests", "welch", "p", num(r.welch.p));
    put("tests", "mann_whitney", "u", num(r.mann_whitney.u));
    put("tests", "mann_whitney", "p", num(r.mann_whitney.p));
    put("tests", "mann_whitney", "exact", r.mann_whitney.exact.to_string());
    if let Some(a) = &r.anova {
        put("tests", "anova", "f", num(a.f));
        put("tests", "anova", "df_between", num(a.df_between));
        put("tests", "anova", "df_within", num(a.df_within));
        put("tests", "anova", "p", num(a.p));
    }
    put("tests", "effect", "cohens_d", optn(r.cohens_d));
    put("tests", "effect", "power", optn(r.power));
    put("tests", "effect", "alpha", num(r.settings.alpha));

    for m in &r.secondary {
        put("table_v", &m.metric, "control", num(m.control));
        put("table_v", &m.metric, "experimental", num(m.experimental));
        put("table_v", &m.metric, "difference", num(m.difference));
    }
    for t in &r.topics {
        put("table_vi", &t.topic, "control", num(t.control));
        put("table_vi", &t.topic, "experimental", num(t.experimental));
        put("table_vi", &t.topic, "improvement_pct", optn(t.improvement_pct));
        put("table_vi", &t.topic, "sessions", t.sessions.to_string());
    }
    put("table_vi", "Overall", "control", num(r.control.mean));
    put("table_vi", "Overall", "experimental", num(r.experimental.mean));
    put("table_vi", "Overall", "improvement_pct", optn(r.improvement_pct));

    let h = &r.histogram;
    put("histogram", "underflow", "count", h.underflow.to_string());
    for (i, c) in h.counts.iter().enumerate() {
        put("histogram", &bin_label(&h.edges, i), "count", c.to_string());
    }
    put("histogram", "overflow", "count", h.overflow.to_string());
    for (i, m) in r.dimension_match_by_session.iter().enumerate() {
        put("dimension_match", &format!("session {}", i + 1), "experimental", num(*m));
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV of UTF-8 fields")
}
