//! Retrieval-quality and rater-agreement metrics.
//!
//! Retrieval side: Top-1 accuracy and Top-k majority vote over labeled
//! rankings. Rater side: Fleiss' κ, panel majority-vote accuracy, the
//! max-agreement consistency histogram, and McNemar's paired test. All
//! metrics are pure functions of their inputs.

mod csv;
#[cfg(test)]
mod tests;

pub use csv::{
    read_rankings_csv, read_rater_study_csv, write_rankings_csv, RankingRecord, RaterStudy,
};

use std::collections::HashMap;
use std::fmt;

use statrs::function::erf::erfc;

use crate::{Error, Result};

/// One query's ground-truth label and the labels of its ranked hits
/// (rank 1 first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRanking {
    pub query_label: u16,
    pub retrieved_labels: Vec<u16>,
}

/// True iff the modal label of the first k hits equals the query label.
/// Ties between equally frequent labels go to the label holding the best
/// (lowest) rank. Fewer than k hits are evaluated as-is with a warning;
/// an empty ranking can never match.
pub fn top_k_majority(r: &LabeledRanking, k: usize) -> bool {
    if k == 0 {
        return false;
    }
    let take = k.min(r.retrieved_labels.len());
    if take < k {
        log::warn!("top-{k} majority vote evaluated on only {take} retrieved labels");
    }
    let prefix = &r.retrieved_labels[..take];
    let mut best: Option<(u16, usize)> = None; // (label, count), first-rank order
    for (i, &label) in prefix.iter().enumerate() {
        if prefix[..i].contains(&label) {
            continue; // counted at its first occurrence
        }
        let count = prefix.iter().filter(|&&l| l == label).count();
        // Strictly-greater keeps the earlier (better-ranked) label on ties.
        if best.map_or(true, |(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    best.map_or(false, |(label, _)| label == r.query_label)
}

/// Top-1 accuracy plus Top-3/Top-5 majority-vote accuracy over a query set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracySuite {
    pub acc1: f64,
    pub mv3: f64,
    pub mv5: f64,
    pub n_queries: usize,
}

impl AccuracySuite {
    pub fn csv_string(&self) -> String {
        format!(
            "metric,value\nacc@1,{}\nmv@3,{}\nmv@5,{}\nn_queries,{}\n",
            self.acc1, self.mv3, self.mv5, self.n_queries
        )
    }
}

impl fmt::Display for AccuracySuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "queries : {}", self.n_queries)?;
        writeln!(f, "acc@1   : {:.4}", self.acc1)?;
        writeln!(f, "mv@3    : {:.4}", self.mv3)?;
        write!(f, "mv@5    : {:.4}", self.mv5)
    }
}

pub fn accuracy_suite(rankings: &[LabeledRanking]) -> Result<AccuracySuite> {
    if rankings.is_empty() {
        return Err(Error::Empty("ranking set"));
    }
    let frac = |k: usize| {
        rankings.iter().filter(|r| top_k_majority(r, k)).count() as f64 / rankings.len() as f64
    };
    Ok(AccuracySuite {
        acc1: frac(1),
        mv3: frac(3),
        mv5: frac(5),
        n_queries: rankings.len(),
    })
}

/// Subjects × categories rating counts; every row sums to the same rater
/// count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaterTable {
    counts: Vec<Vec<u64>>,
    n_raters: u64,
}

impl RaterTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Empty("rater table"));
        }
        let width = counts[0].len();
        if width == 0 {
            return Err(Error::Empty("rater table categories"));
        }
        let n_raters: u64 = counts[0].iter().sum();
        if n_raters == 0 {
            return Err(Error::InvalidValue {
                key: "rater table".into(),
                message: "row sums must be positive".into(),
            });
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    context: "rater table row width",
                    expected: width,
                    got: row.len(),
                });
            }
            let sum: u64 = row.iter().sum();
            if sum != n_raters {
                return Err(Error::InvalidValue {
                    key: "rater table".into(),
                    message: format!("row {i} sums to {sum}, expected {n_raters}"),
                });
            }
        }
        Ok(RaterTable { counts, n_raters })
    }

    /// Histogram per subject from raw per-rater labels. Category ids run
    /// over 0..=max observed label; unused columns are harmless zeros.
    pub fn from_labels(labels: &[Vec<u16>]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("rater labels"));
        }
        let max = labels
            .iter()
            .flat_map(|row| row.iter().copied())
            .max()
            .ok_or(Error::Empty("rater labels"))?;
        let counts = labels
            .iter()
            .map(|row| {
                let mut hist = vec![0u64; max as usize + 1];
                for &l in row {
                    hist[l as usize] += 1;
                }
                hist
            })
            .collect();
        Self::new(counts)
    }

    pub fn n_subjects(&self) -> usize {
        self.counts.len()
    }

    pub fn n_raters(&self) -> u64 {
        self.n_raters
    }

    pub fn n_categories(&self) -> usize {
        self.counts[0].len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }
}

/// Fleiss' κ, or the explicit degenerate case where every rating across
/// all subjects lands in one category (chance agreement is then 1 and the
/// statistic is undefined).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Value(f64),
    Degenerate,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Degenerate => None,
        }
    }
}

/// Fleiss' κ: per-subject agreement `P_i = (Σ_j n_ij² − n)/(n(n−1))`,
/// chance agreement from pooled category proportions, `κ = (P̄−P̄_e)/(1−P̄_e)`.
pub fn fleiss_kappa(t: &RaterTable) -> Result<Kappa> {
    if t.n_raters() < 2 {
        return Err(Error::InvalidValue {
            key: "n_raters".into(),
            message: "agreement needs at least 2 raters".into(),
        });
    }
    if t.n_subjects() < 2 {
        return Err(Error::InvalidValue {
            key: "n_subjects".into(),
            message: "agreement needs at least 2 subjects".into(),
        });
    }
    let n = t.n_raters() as f64;
    let big_n = t.n_subjects() as f64;

    let p_bar = t
        .counts()
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c * c) as f64).sum();
            (sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / big_n;

    let total = big_n * n;
    let p_e: f64 = (0..t.n_categories())
        .map(|j| {
            let col: u64 = t.counts().iter().map(|row| row[j]).sum();
            let p_j = col as f64 / total;
            p_j * p_j
        })
        .sum();

    if p_e >= 1.0 {
        return Ok(Kappa::Degenerate);
    }
    Ok(Kappa::Value((p_bar - p_e) / (1.0 - p_e)))
}

/// Fraction of subjects where at least `threshold` raters were correct.
pub fn panel_mv_accuracy(decisions: &[Vec<bool>], threshold: usize) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::Empty("panel decisions"));
    }
    let width = decisions[0].len();
    if width == 0 {
        return Err(Error::Empty("panel raters"));
    }
    for row in decisions {
        if row.len() != width {
            return Err(Error::DimensionMismatch {
                context: "panel row width",
                expected: width,
                got: row.len(),
            });
        }
    }
    if threshold == 0 || threshold > width {
        return Err(Error::InvalidValue {
            key: "threshold".into(),
            message: format!("{threshold} is outside 1..={width}"),
        });
    }
    let hits = decisions
        .iter()
        .filter(|row| row.iter().filter(|&&b| b).count() >= threshold)
        .count();
    Ok(hits as f64 / decisions.len() as f64)
}

/// Histogram over subjects of the largest identical-label rater group.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyDistribution {
    n_raters: usize,
    /// Index = agreement group size; `proportions[k]` is the subject
    /// fraction whose largest group has exactly k members.
    proportions: Vec<f64>,
}

impl ConsistencyDistribution {
    pub fn n_raters(&self) -> usize {
        self.n_raters
    }

    /// Fraction of subjects whose max agreement is exactly `agreement`.
    pub fn at(&self, agreement: usize) -> f64 {
        self.proportions.get(agreement).copied().unwrap_or(0.0)
    }

    /// Below-majority leftover: subjects where no two raters agreed.
    pub fn other(&self) -> f64 {
        self.proportions.iter().take(2).sum()
    }
}

pub fn consistency_distribution(labels: &[Vec<u16>]) -> Result<ConsistencyDistribution> {
    if labels.is_empty() {
        return Err(Error::Empty("rater labels"));
    }
    let width = labels[0].len();
    if width == 0 {
        return Err(Error::Empty("rater labels row"));
    }
    let mut hist = vec![0usize; width + 1];
    for row in labels {
        if row.len() != width {
            return Err(Error::DimensionMismatch {
                context: "rater labels row width",
                expected: width,
                got: row.len(),
            });
        }
        let mut counts: HashMap<u16, usize> = HashMap::new();
        for &l in row {
            *counts.entry(l).or_insert(0) += 1;
        }
        let largest = counts.values().copied().max().unwrap();
        hist[largest] += 1;
    }
    let n = labels.len() as f64;
    Ok(ConsistencyDistribution {
        n_raters: width,
        proportions: hist.into_iter().map(|h| h as f64 / n).collect(),
    })
}

/// Two-sided McNemar p-value from the discordant counts (`b`: only method
/// one correct, `c`: only method two correct). Below 25 discordant pairs
/// the exact binomial test applies: `p = 2·P(X ≤ min(b,c))` at X ~
/// Binomial(b+c, ½), capped at 1. Otherwise the continuity-corrected
/// `χ² = (|b−c|−1)²/(b+c)` with a one-degree tail. `b = c = 0` is perfect
/// concordance: p = 1 by convention.
pub fn mcnemar(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    if n < 25 {
        let k = b.min(c);
        let mut coeff: u64 = 1; // C(n, 0)
        let mut tail: u64 = 1;
        for i in 1..=k {
            coeff = coeff * (n - i + 1) / i;
            tail += coeff;
        }
        let p = 2.0 * tail as f64 / (n as f64).exp2();
        p.min(1.0)
    } else {
        let stat = ((b as f64 - c as f64).abs() - 1.0).powi(2) / n as f64;
        chi2_tail_1df(stat)
    }
}

/// Upper tail of χ² with one degree of freedom.
fn chi2_tail_1df(stat: f64) -> f64 {
    erfc((stat / 2.0).sqrt())
}
