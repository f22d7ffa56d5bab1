//! Alignment scores, aggregation and diagnostics. Everything here is a pure
//! function of its inputs.

mod classification;
mod style;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{AlignmentScores, MatchMatrix, TopicMatrix};
use crate::rational::Rational;

pub use classification::{classification_report, cohen_kappa, Averages, ClassMetrics, ClassificationReport};
pub use style::{mean_style, stylometrics, tokenize, PersonTagger, StyleMeans, StyleStats};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("match matrix for dilemma {0} is partial")]
    PartialMatrix(String),
    #[error("empty input")]
    EmptyInput,
    #[error("dilemma {0} has no row in the topic table")]
    MissingTopicRow(String),
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

pub type Pair = (String, String);

/// Matched pairs split by stance agreement.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub agree: BTreeSet<Pair>,
    pub conflict: BTreeSet<Pair>,
}

pub fn partition_matches(matrix: &MatchMatrix) -> Result<Partition, MetricsError> {
    if matrix.is_partial() {
        return Err(MetricsError::PartialMatrix(matrix.dilemma_id.clone()));
    }
    let mut p = Partition::default();
    for j in matrix.judgments().filter(|j| j.matched) {
        let pair = (j.cand_solution_id.clone(), j.ref_solution_id.clone());
        if j.stance_agree {
            p.agree.insert(pair);
        } else {
            p.conflict.insert(pair);
        }
    }
    Ok(p)
}

/// Scores one complete matrix.
pub fn score(matrix: &MatchMatrix) -> Result<AlignmentScores, MetricsError> {
    let p = partition_matches(matrix)?;
    Ok(AlignmentScores::from_counts(
        p.agree.len(),
        p.conflict.len(),
        matrix.cand_ids.len(),
        matrix.ref_ids.len(),
    ))
}

pub fn saa(matrix: &MatchMatrix) -> Result<Option<Rational>, MetricsError> {
    Ok(score(matrix)?.saa().cloned())
}

pub fn eaa(matrix: &MatchMatrix) -> Result<Option<Rational>, MetricsError> {
    Ok(score(matrix)?.eaa().cloned())
}

pub fn avg_score(scores: &AlignmentScores) -> Option<Rational> {
    scores.avg().cloned()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    #[default]
    Macro,
    Micro,
}

impl std::str::FromStr for AggregateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(AggregateMode::Macro),
            "micro" => Ok(AggregateMode::Micro),
            other => Err(format!("unknown aggregation mode {other:?}")),
        }
    }
}

/// Per-metric count of dilemmas left out of a macro mean because the metric
/// was undefined for them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub saa: usize,
    pub eaa: usize,
    pub avg: usize,
}

/// Corpus-level scores. Unlike [`AlignmentScores`] a macro aggregate is not
/// a function of pooled counts, so it carries its own shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub mode: AggregateMode,
    pub n_dilemmas: usize,
    pub saa: Option<Rational>,
    pub eaa: Option<Rational>,
    pub avg: Option<Rational>,
    pub skipped: SkipCounts,
}

pub fn aggregate(per_dilemma: &[AlignmentScores], mode: AggregateMode) -> Result<AggregateScores, MetricsError> {
    if per_dilemma.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = per_dilemma.len();
    Ok(match mode {
        AggregateMode::Macro => {
            let defined = |f: fn(&AlignmentScores) -> Option<&Rational>| -> Vec<&Rational> {
                per_dilemma.iter().filter_map(f).collect()
            };
            let saa = defined(AlignmentScores::saa);
            let eaa = defined(AlignmentScores::eaa);
            let avg = defined(AlignmentScores::avg);
            AggregateScores {
                mode,
                n_dilemmas: n,
                skipped: SkipCounts { saa: n - saa.len(), eaa: n - eaa.len(), avg: n - avg.len() },
                saa: Rational::mean(saa),
                eaa: Rational::mean(eaa),
                avg: Rational::mean(avg),
            }
        }
        AggregateMode::Micro => {
            let pooled = AlignmentScores::from_counts(
                per_dilemma.iter().map(AlignmentScores::n_agree).sum(),
                per_dilemma.iter().map(AlignmentScores::n_conflict).sum(),
                per_dilemma.iter().map(AlignmentScores::n_cand).sum(),
                per_dilemma.iter().map(AlignmentScores::n_ref).sum(),
            );
            AggregateScores {
                mode,
                n_dilemmas: n,
                saa: pooled.saa().cloned(),
                eaa: pooled.eaa().cloned(),
                avg: pooled.avg().cloned(),
                skipped: SkipCounts::default(),
            }
        }
    })
}

/// Topic-weighted mean of per-dilemma AVG. Dilemmas with undefined AVG are
/// left out; a topic whose remaining weight sums to zero is undefined.
pub fn topic_weighted_avg(
    per_dilemma_avg: &BTreeMap<String, Option<Rational>>,
    topics: &TopicMatrix,
) -> Result<BTreeMap<String, Option<Rational>>, MetricsError> {
    let mut num = vec![Rational::zero(); topics.topic_names.len()];
    let mut den = vec![Rational::zero(); topics.topic_names.len()];
    for (dilemma, avg) in per_dilemma_avg {
        let row = topics
            .proportions
            .get(dilemma)
            .ok_or_else(|| MetricsError::MissingTopicRow(dilemma.clone()))?;
        let Some(avg) = avg else { continue };
        for (t, w) in row.iter().enumerate() {
            num[t] = &num[t] + &(w * avg);
            den[t] = &den[t] + w;
        }
    }
    Ok(topics
        .topic_names
        .iter()
        .zip(num.iter().zip(&den))
        .map(|(name, (n, d))| (name.clone(), (!d.is_zero()).then(|| n / d)))
        .collect())
}
