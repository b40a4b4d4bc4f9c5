//! pass^k estimation, task filtering, turn statistics and error annotations.
//!
//! Scores are exact rationals; decimals appear only when formatting.

pub mod annotations;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::warn;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

pub use annotations::{annotate_error, AnnotationError, AnnotationStore, ErrorAnnotation, ErrorCategory};

use crate::runner::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub task_id: String,
    pub n: u32,
    pub c: u32,
}

/// Per-task success counts. Rows are kept in task-id order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardMatrix {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    pub rows: Vec<MatrixRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("reward matrix has no rows")]
    EmptyMatrix,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds n = {n} for task \"{task}\"")]
    KExceedsN { k: u32, n: u32, task: String },
    #[error("task \"{task}\": c = {c} exceeds n = {n}")]
    BadRow { task: String, c: u32, n: u32 },
    #[error("no trajectories left to aggregate")]
    EmptyTurnSet,
    #[error("not a decimal number: {0:?}")]
    BadDecimal(String),
}

impl RewardMatrix {
    pub fn from_rows(rows: impl IntoIterator<Item = (String, u32, u32)>) -> Self {
        let mut rows: Vec<MatrixRow> = rows.into_iter().map(|(task_id, n, c)| MatrixRow { task_id, n, c }).collect();
        rows.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        Self {
            domain: None,
            strategy: None,
            rows,
        }
    }

    /// Aggregates trajectories per task. Aborted trials are skipped unless
    /// `count_aborted` is set, in which case they count as failures.
    pub fn from_trajectories<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>, count_aborted: bool) -> Self {
        let mut counts: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
        for t in trajectories {
            let entry = counts.entry(t.task_id.as_str()).or_default();
            if t.aborted && !count_aborted {
                continue;
            }
            entry.0 += 1;
            if t.reward == 1 && !t.aborted {
                entry.1 += 1;
            }
        }
        Self::from_rows(counts.into_iter().map(|(id, (n, c))| (id.to_string(), n, c)))
    }

    pub fn check(&self) -> Result<(), MetricsError> {
        for r in &self.rows {
            if r.c > r.n {
                return Err(MetricsError::BadRow {
                    task: r.task_id.clone(),
                    c: r.c,
                    n: r.n,
                });
            }
        }
        Ok(())
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.task_id.as_str())
    }

    pub fn successes(&self) -> u64 {
        self.rows.iter().map(|r| u64::from(r.c)).sum()
    }

    /// Smallest n over rows; the largest usable K.
    pub fn min_n(&self) -> Option<u32> {
        self.rows.iter().map(|r| r.n).min()
    }
}

pub fn binomial(n: u32, k: u32) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Mean over tasks of C(c,k)/C(n,k).
pub fn pass_hat_k(matrix: &RewardMatrix, k: u32) -> Result<BigRational, MetricsError> {
    if matrix.rows.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    matrix.check()?;
    let mut sum = BigRational::zero();
    for r in &matrix.rows {
        if k > r.n {
            return Err(MetricsError::KExceedsN {
                k,
                n: r.n,
                task: r.task_id.clone(),
            });
        }
        sum += BigRational::new(binomial(r.c, k), binomial(r.n, k));
    }
    Ok(sum / BigRational::from_integer(BigInt::from(matrix.rows.len())))
}

/// Fixed-point decimal with round-half-even.
pub fn format_decimal(value: &BigRational, places: u32) -> String {
    let scale = BigInt::from(10u32).pow(places);
    let scaled = value * BigRational::from_integer(scale.clone());
    let floor = scaled.floor();
    let frac = &scaled - &floor;
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let mut units = floor.to_integer();
    if frac > half || (frac == half && units.is_odd()) {
        units += 1;
    }
    let negative = units.is_negative();
    let digits = units.abs().to_string();
    let places = places as usize;
    let padded = format!("{digits:0>width$}", width = places + 1);
    let (int, dec) = padded.split_at(padded.len() - places);
    let sign = if negative { "-" } else { "" };
    if places == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{dec}")
    }
}

pub fn format_score(value: &BigRational) -> String {
    format_decimal(value, 4)
}

/// Exact value of a decimal literal such as `58.3` or `-0.25`.
pub fn parse_decimal(text: &str) -> Result<BigRational, MetricsError> {
    let bad = || MetricsError::BadDecimal(text.to_string());
    let t = text.trim();
    let (negative, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    if int.is_empty() && frac.is_empty() || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let value = BigRational::new(digits, BigInt::from(10u32).pow(frac.len() as u32));
    Ok(if negative { -value } else { value })
}

/// Unweighted mean of per-domain scores.
pub fn overall_score(domain_scores: &[BigRational]) -> Option<BigRational> {
    if domain_scores.is_empty() {
        return None;
    }
    let sum: BigRational = domain_scores.iter().cloned().sum();
    Some(sum / BigRational::from_integer(BigInt::from(domain_scores.len())))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassHatKReport {
    /// Index `i` holds pass^(i+1).
    pub scores: Vec<BigRational>,
    pub n: u32,
    pub k_max: u32,
    pub task_count: usize,
    pub excluded: Vec<String>,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    k_max: u32,
    n: u32,
    task_count: usize,
    excluded: &'a [String],
    scores: Vec<ScoreDoc>,
}

#[derive(Serialize)]
struct ScoreDoc {
    k: u32,
    score: String,
    exact: String,
}

impl PassHatKReport {
    pub fn score(&self, k: u32) -> Option<&BigRational> {
        self.scores.get((k as usize).checked_sub(1)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tasks: {}  n: {}  K: {}", self.task_count, self.n, self.k_max);
        if !self.excluded.is_empty() {
            let _ = writeln!(out, "excluded: {}", self.excluded.join(", "));
        }
        let _ = writeln!(out, "{:>4}  {:>8}", "k", "pass^k");
        for (i, s) in self.scores.iter().enumerate() {
            let _ = writeln!(out, "{:>4}  {:>8}", i + 1, format_score(s));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = ReportDoc {
            k_max: self.k_max,
            n: self.n,
            task_count: self.task_count,
            excluded: &self.excluded,
            scores: self
                .scores
                .iter()
                .enumerate()
                .map(|(i, s)| ScoreDoc {
                    k: i as u32 + 1,
                    score: format_score(s),
                    exact: s.to_string(),
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("report serializes")
    }
}

pub fn pass_hat_k_report(matrix: &RewardMatrix, k_max: u32, excluded: &[String]) -> Result<PassHatKReport, MetricsError> {
    let n = matrix.min_n().ok_or(MetricsError::EmptyMatrix)?;
    if k_max == 0 {
        return Err(MetricsError::ZeroK);
    }
    let scores = (1..=k_max).map(|k| pass_hat_k(matrix, k)).collect::<Result<Vec<_>, _>>()?;
    Ok(PassHatKReport {
        scores,
        n,
        k_max,
        task_count: matrix.rows.len(),
        excluded: excluded.to_vec(),
    })
}

/// Drops excluded task rows; unknown ids are ignored with a warning.
pub fn filter_tasks(matrix: &RewardMatrix, exclusions: &BTreeSet<String>) -> RewardMatrix {
    let known: BTreeSet<&str> = matrix.task_ids().collect();
    for id in exclusions.iter().filter(|id| !known.contains(id.as_str())) {
        warn!("exclusion list names unknown task \"{id}\"");
    }
    RewardMatrix {
        rows: matrix.rows.iter().filter(|r| !exclusions.contains(&r.task_id)).cloned().collect(),
        ..matrix.clone()
    }
}

/// One task id per line; blank lines and `#` comments are skipped.
pub fn parse_exclusions(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// turn count -> number of trajectories
    pub histogram: BTreeMap<usize, usize>,
}

pub fn turn_stats<'a>(
    trajectories: impl IntoIterator<Item = &'a Trajectory>,
    success_only: bool,
) -> Result<TurnStats, MetricsError> {
    let mut turns: Vec<usize> = trajectories
        .into_iter()
        .filter(|t| !success_only || t.reward == 1)
        .map(|t| t.turn_count)
        .collect();
    if turns.is_empty() {
        return Err(MetricsError::EmptyTurnSet);
    }
    turns.sort_unstable();
    let count = turns.len();
    let mean = turns.iter().sum::<usize>() as f64 / count as f64;
    let median = if count % 2 == 1 {
        turns[count / 2] as f64
    } else {
        (turns[count / 2 - 1] + turns[count / 2]) as f64 / 2.0
    };
    let mut histogram = BTreeMap::new();
    for t in turns {
        *histogram.entry(t).or_insert(0) += 1;
    }
    Ok(TurnStats {
        count,
        mean,
        median,
        histogram,
    })
}

impl TurnStats {
    pub fn to_text(&self) -> String {
        let mut out = format!("trajectories: {}  mean turns: {:.2}  median: {:.1}\n", self.count, self.mean, self.median);
        for (turns, n) in &self.histogram {
            let _ = writeln!(out, "{turns:>4} | {}", "#".repeat(*n));
        }
        out
    }
}

/// Mean-turn difference of each strategy relative to `baseline`, as
/// `(name, mean, mean - baseline mean)`.
pub fn turn_comparison(stats: &[(String, TurnStats)], baseline: &str) -> Option<Vec<(String, f64, f64)>> {
    let base = stats.iter().find(|(n, _)| n == baseline)?.1.mean;
    Some(stats.iter().map(|(n, s)| (n.clone(), s.mean, s.mean - base)).collect())
}

pub fn to_f64(value: &BigRational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}
