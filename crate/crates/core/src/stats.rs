//! Hypothesis tests and summary statistics for the A/B comparison.
//!
//! Tail probabilities come from the regularized incomplete beta function
//! (continued fraction) and `erfc`, so nothing here needs `std`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{erfc, exp, fabs, floor, lgamma, ln, sqrt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single observation.
    pub sd: Option<f64>,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn mean(xs: &[f64]) -> Result<f64> {
    crate::math::mean(xs).ok_or(Error::EmptyInput("sample"))
}

/// Sample variance with the `n - 1` denominator.
pub fn variance(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!("variance needs 2 observations, got {}", xs.len())));
    }
    let m = mean(xs)?;
    Ok(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("sample"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn descriptive_stats(xs: &[f64]) -> Result<Descriptive> {
    let m = mean(xs)?;
    let sd = if xs.len() >= 2 { Some(sqrt(variance(xs)?)) } else { None };
    Ok(Descriptive {
        n: xs.len(),
        mean: m,
        sd,
        median: median(xs)?,
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if fabs(del - 1.0) < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = lgamma(a + b) - lgamma(a) - lgamma(b) + a * ln(x) + b * ln(1.0 - x);
    let front = exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail `P(|T| >= |t|)` of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Upper tail `P(F >= f)` of the F distribution.
pub fn f_upper_p(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / core::f64::consts::SQRT_2)
}

/// Standard normal quantile (Acklam's rational approximation refined by
/// one Halley step).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfRange(format!("normal quantile of {p}")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
        1.383_577_518_672_69e2, -3.066479806614716e+01, 2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
        6.680131188771972e+01, -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
        -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    let lo = 0.02425;
    let x = if p < lo {
        let q = sqrt(-2.0 * ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - lo {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = sqrt(-2.0 * ln(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * sqrt(2.0 * core::f64::consts::PI) * exp(x * x / 2.0);
    Ok(x - u / (1.0 + x * u / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance t-test from summary statistics. `t` is
/// positive when the second group's mean is larger.
pub fn welch_from_summary(mean_a: f64, sd_a: f64, n_a: usize, mean_b: f64, sd_b: f64, n_b: usize) -> Result<TTest> {
    if n_a < 2 || n_b < 2 {
        return Err(Error::InsufficientData(format!("Welch test needs n >= 2 per group, got {n_a} and {n_b}")));
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let (va, vb) = (sd_a * sd_a / na, sd_b * sd_b / nb);
    let se2 = va + vb;
    let diff = mean_b - mean_a;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest { t: diff.signum() * f64::INFINITY, df, p: 0.0 }
        });
    }
    let t = diff / sqrt(se2);
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest { t, df, p: t_two_sided_p(t, df) })
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!("Welch test needs n >= 2 per group, got {} and {}", a.len(), b.len())));
    }
    welch_from_summary(mean(a)?, sqrt(variance(a)?), a.len(), mean(b)?, sqrt(variance(b)?), b.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `min(U_a, U_b)`.
    pub u: f64,
    /// Pairs where the first sample wins, ties counting one half.
    pub u_a: f64,
    pub p: f64,
    pub exact: bool,
}

/// Largest combined size for which the p-value is computed by enumeration.
pub const MANN_WHITNEY_EXACT_MAX: usize = 12;

/// Midranks (1-based) of `xs`.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney U test, two-sided.
///
/// For at most [`MANN_WHITNEY_EXACT_MAX`] observations the p-value is the
/// share of all group labelings whose `U` lies at least as far from `mn/2`
/// as the observed one; otherwise a normal approximation with tie and
/// continuity correction is used.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("Mann-Whitney needs non-empty samples".into()));
    }
    let (m, n) = (a.len(), b.len());
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&all);
    let rank_sum_a: f64 = ranks[..m].iter().sum();
    let u_a = rank_sum_a - (m * (m + 1)) as f64 / 2.0;
    let mn = (m * n) as f64;
    let u = u_a.min(mn - u_a);
    let centre = mn / 2.0;
    let observed = fabs(u_a - centre);
    let total = m + n;
    if total <= MANN_WHITNEY_EXACT_MAX {
        let mut hits = 0u64;
        let mut count = 0u64;
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != m {
                continue;
            }
            let rs: f64 = (0..total).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            let ua = rs - (m * (m + 1)) as f64 / 2.0;
            count += 1;
            if fabs(ua - centre) >= observed - 1e-9 {
                hits += 1;
            }
        }
        return Ok(MannWhitney { u, u_a, p: hits as f64 / count as f64, exact: true });
    }
    let nf = total as f64;
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = mn / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (observed - 0.5).max(0.0) / sqrt(var);
        (2.0 * (1.0 - normal_cdf(z))).min(1.0)
    };
    Ok(MannWhitney { u, u_a, p, exact: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p: f64,
}

/// One-way ANOVA. `0/0` is read as `F = 0`.
pub fn one_way_anova(groups: &[&[f64]]) -> Result<Anova> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::InsufficientData("ANOVA needs at least 2 groups of at least 2".into()));
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = mean(g)?;
        ssb += g.len() as f64 * (m - grand) * (m - grand);
        ssw += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let df_between = (groups.len() - 1) as f64;
    let df_within = (n - groups.len()) as f64;
    let msb = ssb / df_between;
    let msw = ssw / df_within;
    let f = if msb <= 1e-300 {
        0.0
    } else if msw <= 0.0 {
        f64::INFINITY
    } else {
        msb / msw
    };
    Ok(Anova { f, df_between, df_within, p: f_upper_p(f, df_between, df_within) })
}

/// Standardised mean difference `(mean_b - mean_a) / pooled_sd`.
pub fn cohens_d_from_summary(mean_a: f64, sd_a: f64, n_a: usize, mean_b: f64, sd_b: f64, n_b: usize) -> Result<f64> {
    if n_a < 2 || n_b < 2 {
        return Err(Error::InsufficientData("Cohen's d needs n >= 2 per group".into()));
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let pooled = sqrt(((na - 1.0) * sd_a * sd_a + (nb - 1.0) * sd_b * sd_b) / (na + nb - 2.0));
    if pooled == 0.0 {
        return Err(Error::UndefinedEffect);
    }
    Ok((mean_b - mean_a) / pooled)
}

pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData("Cohen's d needs n >= 2 per group".into()));
    }
    cohens_d_from_summary(mean(a)?, sqrt(variance(a)?), a.len(), mean(b)?, sqrt(variance(b)?), b.len())
}

/// `mean +- 1.96 * sd / sqrt(n)`.
pub fn ci95_from_summary(mean: f64, sd: f64, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InsufficientData("confidence interval needs n >= 2".into()));
    }
    let h = 1.96 * sd / sqrt(n as f64);
    Ok((mean - h, mean + h))
}

pub fn ci95(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData("confidence interval needs n >= 2".into()));
    }
    ci95_from_summary(mean(xs)?, sqrt(variance(xs)?), xs.len())
}

/// Relative change of the experimental mean over the control mean, in percent.
pub fn improvement_pct(control_mean: f64, experimental_mean: f64) -> Result<f64> {
    if control_mean == 0.0 {
        return Err(Error::UndefinedImprovement);
    }
    Ok(100.0 * (experimental_mean - control_mean) / control_mean)
}

/// Two-sample normal-approximation power `Phi(d * sqrt(n / 2) - z_{1 - alpha/2})`.
pub fn posthoc_power(d: f64, n_per_group: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if n_per_group < 2 || d < 0.0 {
        return Err(Error::InsufficientData("power needs d >= 0 and n >= 2".into()));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    Ok(normal_cdf(d * sqrt(n_per_group as f64 / 2.0) - z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Values below the first edge.
    pub underflow: usize,
    /// Values above the last edge.
    pub overflow: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }
}

pub const HISTOGRAM_START: f64 = 0.05;
pub const HISTOGRAM_WIDTH: f64 = 0.05;
pub const HISTOGRAM_BINS: usize = 6;

/// Bins are closed on the left; the last bin also takes its right edge.
pub fn histogram(xs: &[f64], start: f64, width: f64, bins: usize) -> Result<Histogram> {
    if !(width > 0.0) || bins == 0 {
        return Err(Error::Config("histogram needs positive width and at least one bin".into()));
    }
    let edges: Vec<f64> = (0..=bins).map(|i| start + width * i as f64).collect();
    let mut h = Histogram { edges, counts: vec![0; bins], underflow: 0, overflow: 0 };
    let end = start + width * bins as f64;
    for &x in xs {
        if x < start - 1e-12 {
            h.underflow += 1;
        } else if x > end + 1e-12 {
            h.overflow += 1;
        } else {
            let i = (floor((x - start) / width + 1e-9) as usize).min(bins - 1);
            h.counts[i] += 1;
        }
    }
    Ok(h)
}
