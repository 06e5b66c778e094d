//! Campaign-suite statistics: runs, mean time-to-exposure, speedup, the
//! Vargha-Delaney effect size and the Mann-Whitney U test.
//!
//! Timed-out runs enter every statistic at the timeout value. Smaller TTE is
//! better throughout.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Samples up to this combined size use the exact permutation distribution.
pub const EXACT_LIMIT: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("value {value} exceeds the timeout {timeout}")]
    OverTimeout { value: f64, timeout: f64 },
    #[error("speedup undefined: our mean TTE is zero")]
    ZeroMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TteSample {
    pub values: Vec<f64>,
    pub timeout: f64,
    pub hits: usize,
}

impl TteSample {
    /// Values equal to the timeout count as misses.
    pub fn new(values: Vec<f64>, timeout: f64) -> Result<TteSample, StatsError> {
        let flags: Vec<bool> = values.iter().map(|&v| v < timeout).collect();
        TteSample::with_hits(values, &flags, timeout)
    }

    /// Explicit hit flags, for runs that hit exactly at the timeout.
    pub fn with_hits(values: Vec<f64>, hit: &[bool], timeout: f64) -> Result<TteSample, StatsError> {
        if values.is_empty() {
            return Err(StatsError::Empty);
        }
        if let Some(&value) = values.iter().find(|&&v| v > timeout) {
            return Err(StatsError::OverTimeout { value, timeout });
        }
        let hits = values.iter().zip(hit).filter(|&(&v, &h)| h || v < timeout).count();
        Ok(TteSample { values, timeout, hits })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub mu_tte: f64,
}

pub fn summarize(a: &TteSample) -> Result<Summary, StatsError> {
    if a.values.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(Summary {
        runs: a.hits,
        mu_tte: a.values.iter().sum::<f64>() / a.values.len() as f64,
    })
}

/// Baseline mean TTE over ours.
pub fn speedup(baseline: &TteSample, ours: &TteSample) -> Result<f64, StatsError> {
    let b = summarize(baseline)?.mu_tte;
    let o = summarize(ours)?.mu_tte;
    if o == 0.0 {
        return Err(StatsError::ZeroMean);
    }
    Ok(b / o)
}

/// Doubled midranks (integers) of the pooled sample, ours first.
fn doubled_ranks(ours: &[f64], baseline: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let pooled: Vec<f64> = ours.iter().chain(baseline).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // Positions i..=j share rank (i+1 + j+1)/2; doubled that is i+j+2.
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    let b = ranks.split_off(ours.len());
    (ranks, b)
}

/// Probability that a run of ours beats a baseline run, ties counting half.
pub fn a12(ours: &[f64], baseline: &[f64]) -> Result<f64, StatsError> {
    if ours.is_empty() || baseline.is_empty() {
        return Err(StatsError::Empty);
    }
    let (m, n) = (ours.len() as u64, baseline.len() as u64);
    let (r, _) = doubled_ranks(ours, baseline);
    let r_sum: u64 = r.iter().sum();
    // Doubled count of (x, y) pairs with x > y, ties counting half.
    let greater2 = r_sum - m * (m + 1);
    Ok((2 * m * n - greater2) as f64 / (2 * m * n) as f64)
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Ours tends to be smaller.
    #[default]
    Less,
    TwoSided,
}

/// Mann-Whitney U p-value. Exact for `m + n <= EXACT_LIMIT`, otherwise the
/// normal approximation with tie and continuity correction.
pub fn mann_whitney_p(ours: &[f64], baseline: &[f64], alt: Alternative) -> Result<f64, StatsError> {
    if ours.is_empty() || baseline.is_empty() {
        return Err(StatsError::Empty);
    }
    if ours.len() + baseline.len() <= EXACT_LIMIT {
        Ok(mann_whitney_exact(ours, baseline, alt))
    } else {
        Ok(mann_whitney_approx(ours, baseline, alt))
    }
}

/// Exact permutation p-value: the rank-sum distribution of every size-`m`
/// subset of the pooled ranks, counted by dynamic programming.
pub fn mann_whitney_exact(ours: &[f64], baseline: &[f64], alt: Alternative) -> f64 {
    let (r_ours, r_base) = doubled_ranks(ours, baseline);
    let m = r_ours.len();
    let all: Vec<u64> = r_ours.iter().chain(&r_base).copied().collect();
    let max_sum: u64 = all.iter().sum();
    // counts[j][s]: subsets of size j with doubled rank sum s.
    let mut counts = vec![vec![0u64; max_sum as usize + 1]; m + 1];
    counts[0][0] = 1;
    for &r in &all {
        for j in (1..=m).rev() {
            for s in (r as usize..=max_sum as usize).rev() {
                counts[j][s] += counts[j - 1][s - r as usize];
            }
        }
    }
    let observed: u64 = r_ours.iter().sum();
    let total: u64 = counts[m].iter().sum();
    let n_all = all.len() as i64;
    let center2 = m as i64 * (n_all + 1); // doubled expected rank sum
    let extreme: u64 = counts[m]
        .iter()
        .enumerate()
        .filter(|&(s, &c)| {
            c > 0
                && match alt {
                    Alternative::Less => s as u64 <= observed,
                    Alternative::TwoSided => (s as i64 - center2).abs() >= (observed as i64 - center2).abs(),
                }
        })
        .map(|(_, &c)| c)
        .sum();
    extreme as f64 / total as f64
}

pub fn mann_whitney_approx(ours: &[f64], baseline: &[f64], alt: Alternative) -> f64 {
    let (r_ours, r_base) = doubled_ranks(ours, baseline);
    let (m, n) = (r_ours.len() as f64, r_base.len() as f64);
    let big_n = m + n;
    let w = r_ours.iter().sum::<u64>() as f64 / 2.0;
    let mean = m * (big_n + 1.0) / 2.0;
    let mut all: Vec<u64> = r_ours.iter().chain(&r_base).copied().collect();
    all.sort_unstable();
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let j = all[i..].iter().take_while(|&&r| r == all[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = m * n / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let sd = var.sqrt();
    let normal = Normal::standard();
    match alt {
        Alternative::Less => normal.cdf((w - mean + 0.5) / sd),
        Alternative::TwoSided => {
            let z = ((w - mean).abs() - 0.5).max(0.0) / sd;
            (2.0 * (1.0 - normal.cdf(z))).min(1.0)
        }
    }
}

/// One row of a comparison table; statistics are `None` when undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub fuzzer: String,
    pub runs: usize,
    pub repetitions: usize,
    pub mu_tte: f64,
    pub speedup: Option<f64>,
    pub a12: Option<f64>,
    pub p_value: Option<f64>,
}

/// Compare `ours` against `baseline`. With fewer than two repetitions on
/// either side the effect size and test are left undefined.
pub fn compare(name: &str, ours: &TteSample, baseline: &TteSample, alt: Alternative) -> Result<ReportRow, StatsError> {
    let s = summarize(ours)?;
    let enough = ours.values.len() >= 2 && baseline.values.len() >= 2;
    Ok(ReportRow {
        fuzzer: name.to_string(),
        runs: s.runs,
        repetitions: ours.values.len(),
        mu_tte: s.mu_tte,
        speedup: if enough { speedup(baseline, ours).ok() } else { None },
        a12: if enough { Some(a12(&ours.values, &baseline.values)?) } else { None },
        p_value: if enough { Some(mann_whitney_p(&ours.values, &baseline.values, alt)?) } else { None },
    })
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

const HEADER: [&str; 6] = ["Fuzzer", "runs", "μTTE", "Speedup", "Â12", "p-value"];

fn cells(r: &ReportRow) -> [String; 6] {
    [
        r.fuzzer.clone(),
        format!("{}/{}", r.runs, r.repetitions),
        format!("{:.2}", r.mu_tte),
        cell(r.speedup, 2),
        cell(r.a12, 3),
        cell(r.p_value, 4),
    ]
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let body: Vec<[String; 6]> = rows.iter().map(cells).collect();
    let mut widths = HEADER.map(|h| h.chars().count());
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cols: &[String]| {
        let parts: Vec<String> = cols
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &HEADER.map(String::from));
    for r in &body {
        line(&mut out, r);
    }
    out
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("fuzzer,runs,repetitions,mu_tte,speedup,a12,p_value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.fuzzer,
            r.runs,
            r.repetitions,
            r.mu_tte,
            r.speedup.map_or("n/a".into(), |v| v.to_string()),
            r.a12.map_or("n/a".into(), |v| v.to_string()),
            r.p_value.map_or("n/a".into(), |v| v.to_string()),
        );
    }
    out
}
