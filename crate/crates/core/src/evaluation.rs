//! Detection metrics: ACC, AUC, per-class accuracy and mAP.
//!
//! Scores are fake-probabilities; a score `>= threshold` predicts fake.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result, ResultExt};
use crate::model::{forward, Mode, ModelParams};
use crate::record::{Label, RecordSource};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub acc: f64,
    /// `None` when the set has no real samples.
    pub real_acc: Option<f64>,
    /// `None` when the set has no fake samples.
    pub fake_acc: Option<f64>,
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::domain("metrics need at least one sample"));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::numeric(format!("score {i} is NaN")));
    }
    Ok(())
}

pub fn accuracy(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Accuracy> {
    check_inputs(scores, labels)?;
    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    for (&s, &y) in scores.iter().zip(labels) {
        let predicted = if s >= threshold {
            Label::Fake
        } else {
            Label::Real
        };
        total[y as usize] += 1;
        correct[y as usize] += (predicted == y) as usize;
    }
    let rate = |c: usize| (total[c] > 0).then(|| correct[c] as f64 / total[c] as f64);
    Ok(Accuracy {
        acc: (correct[0] + correct[1]) as f64 / scores.len() as f64,
        real_acc: rate(0),
        fake_acc: rate(1),
    })
}

fn counts(labels: &[Label]) -> (usize, usize) {
    let fake = labels.iter().filter(|&&l| l == Label::Fake).count();
    (labels.len() - fake, fake)
}

/// Indices sorted by ascending score, and the tie groups as index ranges
/// into that order.
fn tie_groups(scores: &[f64], descending: bool) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let o = scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || scores[order[i]] != scores[order[start]] {
            groups.push((start, i));
            start = i;
        }
    }
    (order, groups)
}

/// Twice the Mann-Whitney U statistic of fakes over reals, with ties
/// counted as one half. Exact in integers.
pub fn mann_whitney_2u(scores: &[f64], labels: &[Label]) -> Result<u128> {
    check_inputs(scores, labels)?;
    let (_, n_fake) = counts(labels);
    let (order, groups) = tie_groups(scores, false);
    // Twice the midrank of positions start..end (1-based ranks start+1..=end)
    // is start + 1 + end.
    let mut twice_rank_sum: u128 = 0;
    for (start, end) in groups {
        let fakes = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == Label::Fake)
            .count() as u128;
        twice_rank_sum += fakes * (start + 1 + end) as u128;
    }
    let n_fake = n_fake as u128;
    Ok(twice_rank_sum - n_fake * (n_fake + 1))
}

/// Probability that a random fake scores above a random real, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (n_real, n_fake) = counts(labels);
    if n_real == 0 || n_fake == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes"));
    }
    let twice_u = mann_whitney_2u(scores, labels)?;
    Ok(twice_u as f64 / (2 * n_real as u128 * n_fake as u128) as f64)
}

/// Non-interpolated average precision for `positive`, ranking by descending
/// score. Tied scores form one threshold: their positives are credited with
/// the precision reached after the whole tie group.
pub fn average_precision(scores: &[f64], labels: &[Label], positive: Label) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == positive).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs a positive sample",
        ));
    }
    let (order, groups) = tie_groups(scores, true);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut total = 0f64;
    for (start, end) in groups {
        let hits = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == positive)
            .count();
        tp += hits;
        seen += end - start;
        if hits > 0 {
            total += hits as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(total / n_pos as f64)
}

/// Mean of the fake-class AP and the real-class AP, the latter ranked by
/// negated scores.
pub fn mean_average_precision(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let fake = average_precision(scores, labels, Label::Fake)?;
    let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
    let real = average_precision(&negated, labels, Label::Real)?;
    Ok((fake + real) / 2.0)
}

/// Aggregate metrics as fractions. Metrics that need a class the set does
/// not contain are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub acc: f64,
    pub auc: Option<f64>,
    pub real_acc: Option<f64>,
    pub fake_acc: Option<f64>,
    pub map: Option<f64>,
    pub n_real: usize,
    pub n_fake: usize,
}

impl MetricReport {
    pub fn from_scores(scores: &[f64], labels: &[Label]) -> Result<Self> {
        let a = accuracy(scores, labels, DEFAULT_THRESHOLD)?;
        let (n_real, n_fake) = counts(labels);
        let both = n_real > 0 && n_fake > 0;
        Ok(MetricReport {
            acc: a.acc,
            auc: both.then(|| auc(scores, labels)).transpose()?,
            real_acc: a.real_acc,
            fake_acc: a.fake_acc,
            map: both
                .then(|| mean_average_precision(scores, labels))
                .transpose()?,
            n_real,
            n_fake,
        })
    }

    pub const CSV_HEADER: &'static str = "split,acc,auc,real_acc,fake_acc,map,n_real,n_fake";

    pub fn csv_row(&self, split: &str) -> String {
        let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{split},{},{},{},{},{},{},{}",
            self.acc,
            f(self.auc),
            f(self.real_acc),
            f(self.fake_acc),
            f(self.map),
            self.n_real,
            self.n_fake
        )
    }
}

/// Aligned text table, metrics as percentages with two decimals.
pub fn render_table(rows: &[(String, MetricReport)]) -> String {
    let pct = |v: Option<f64>| {
        v.map(|v| format!("{:.2}", v * 100.0))
            .unwrap_or_else(|| "n/a".into())
    };
    let width = rows.iter().map(|(s, _)| s.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}",
        "Split", "ACC", "AUC", "R-Acc", "F-Acc", "mAP"
    )
    .unwrap();
    writeln!(out, "{}", "-".repeat(width + 5 * 9)).unwrap();
    for (split, r) in rows {
        writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}",
            split,
            pct(Some(r.acc)),
            pct(r.auc),
            pct(r.real_acc),
            pct(r.fake_acc),
            pct(r.map)
        )
        .unwrap();
    }
    out
}

/// Fake-probability for every record, in source order.
pub fn predict_all<S: RecordSource + ?Sized>(
    params: &ModelParams,
    source: &S,
) -> Result<Vec<(f64, Label)>> {
    (0..source.len())
        .into_par_iter()
        .map(|i| {
            let record = source.record(i)?;
            let p =
                forward(&record, params, Mode::Inference).with_context(|| format!("record {i}"))?;
            Ok((p.probability, record.label))
        })
        .collect()
}

pub fn evaluate<S: RecordSource + ?Sized>(
    params: &ModelParams,
    source: &S,
) -> Result<MetricReport> {
    if source.is_empty() {
        return Err(Error::domain("cannot evaluate an empty dataset"));
    }
    let (scores, labels): (Vec<f64>, Vec<Label>) = predict_all(params, source)?.into_iter().unzip();
    MetricReport::from_scores(&scores, &labels)
}
