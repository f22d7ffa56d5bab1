//! Per-class precision/recall/F1 and Cohen's kappa over string labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::rational::Rational;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: Rational,
    pub recall: Rational,
    pub f1: Rational,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: Rational,
    pub recall: Rational,
    pub f1: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Sorted by label.
    pub classes: Vec<ClassMetrics>,
    pub accuracy: Rational,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

fn ratio_or_zero(n: usize, d: usize) -> Rational {
    Rational::ratio(n, d).unwrap_or_else(Rational::zero)
}

/// Standard report treating `gold` as truth. Divisions by zero yield 0.
pub fn classification_report<S: AsRef<str>>(gold: &[S], predicted: &[S]) -> Result<ClassificationReport, MetricsError> {
    check_lengths(gold.len(), predicted.len())?;
    let labels: BTreeSet<&str> = gold.iter().chain(predicted).map(AsRef::as_ref).collect();
    let total = gold.len();
    let pairs: Vec<(&str, &str)> = gold.iter().map(AsRef::as_ref).zip(predicted.iter().map(AsRef::as_ref)).collect();
    let classes: Vec<ClassMetrics> = labels
        .iter()
        .map(|&l| {
            let tp = pairs.iter().filter(|(g, p)| *g == l && *p == l).count();
            let support = pairs.iter().filter(|(g, _)| *g == l).count();
            let predicted_l = pairs.iter().filter(|(_, p)| *p == l).count();
            let precision = ratio_or_zero(tp, predicted_l);
            let recall = ratio_or_zero(tp, support);
            let sum = &precision + &recall;
            let f1 = if sum.is_zero() {
                Rational::zero()
            } else {
                &(&Rational::from_integer(2) * &(&precision * &recall)) / &sum
            };
            ClassMetrics { label: l.to_string(), precision, recall, f1, support }
        })
        .collect();
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    let k = Rational::from_integer(classes.len() as i64);
    let n = Rational::from_integer(total as i64);
    let fold = |f: fn(&ClassMetrics) -> &Rational, weighted: bool| {
        let s = classes.iter().fold(Rational::zero(), |acc, c| {
            let w = if weighted { Rational::from_integer(c.support as i64) } else { Rational::one() };
            &acc + &(&w * f(c))
        });
        &s / if weighted { &n } else { &k }
    };
    let averages = |weighted| Averages {
        precision: fold(|c| &c.precision, weighted),
        recall: fold(|c| &c.recall, weighted),
        f1: fold(|c| &c.f1, weighted),
    };
    Ok(ClassificationReport {
        accuracy: ratio_or_zero(correct, total),
        macro_avg: averages(false),
        weighted_avg: averages(true),
        classes,
        total,
    })
}

impl ClassificationReport {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Plain-text table with values rounded half-up to `places` decimals.
    pub fn render(&self, places: u32) -> String {
        let f = |r: &Rational| r.to_decimal_string(places);
        let width = self
            .classes
            .iter()
            .map(|c| c.label.len())
            .chain([12])
            .max()
            .unwrap();
        let mut out = String::new();
        let _ = writeln!(out, "{:width$} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
        for c in &self.classes {
            let _ = writeln!(out, "{:width$} {:>9} {:>9} {:>9} {:>9}", c.label, f(&c.precision), f(&c.recall), f(&c.f1), c.support);
        }
        let _ = writeln!(out, "{:width$} {:>9} {:>9} {:>9} {:>9}", "accuracy", "", "", f(&self.accuracy), self.total);
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(out, "{:width$} {:>9} {:>9} {:>9} {:>9}", name, f(&a.precision), f(&a.recall), f(&a.f1), self.total);
        }
        out
    }
}

/// Cohen's kappa. `None` when chance agreement is 1 (both raters constant
/// on the same label).
pub fn cohen_kappa<S: AsRef<str>>(labels_a: &[S], labels_b: &[S]) -> Result<Option<Rational>, MetricsError> {
    check_lengths(labels_a.len(), labels_b.len())?;
    let n = labels_a.len();
    let mut marg_a: BTreeMap<&str, usize> = BTreeMap::new();
    let mut marg_b: BTreeMap<&str, usize> = BTreeMap::new();
    let mut agree = 0;
    for (a, b) in labels_a.iter().zip(labels_b) {
        *marg_a.entry(a.as_ref()).or_default() += 1;
        *marg_b.entry(b.as_ref()).or_default() += 1;
        agree += usize::from(a.as_ref() == b.as_ref());
    }
    let chance: usize = marg_a.iter().map(|(k, ca)| ca * marg_b.get(k).copied().unwrap_or(0)).sum();
    let p_o = ratio_or_zero(agree, n);
    let p_e = ratio_or_zero(chance, n * n);
    let one = Rational::one();
    if p_e == one {
        return Ok(None);
    }
    Ok(Some(&(&p_o - &p_e) / &(&one - &p_e)))
}
