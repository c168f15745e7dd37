//! Precision-recall curves, average precision and top-k metrics.

use std::cmp::Ordering;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredLabel {
    pub score: f64,
    pub positive: bool,
    pub id: String,
}

impl ScoredLabel {
    pub fn new(id: impl Into<String>, score: f64, positive: bool) -> Self {
        ScoredLabel {
            score,
            positive,
            id: id.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

fn check_finite(items: &[ScoredLabel]) -> Result<()> {
    match items.iter().find(|i| !i.score.is_finite()) {
        Some(bad) => Err(Error::validation(format!("non-finite score for {}", bad.id))),
        None => Ok(()),
    }
}

/// Score descending, then id ascending.
pub fn rank_order(a: &ScoredLabel, b: &ScoredLabel) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// One point per distinct score, visiting thresholds from high to low. Items
/// sharing a score enter the prediction set together.
pub fn pr_curve(items: &[ScoredLabel]) -> Result<PrCurve> {
    check_finite(items)?;
    let total_pos = items.iter().filter(|i| i.positive).count();
    if total_pos == 0 {
        return Err(Error::UndefinedRecall);
    }
    let mut sorted: Vec<&ScoredLabel> = items.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / total_pos as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(PrCurve { points })
}

/// Average precision: sum over thresholds of the recall gain times precision.
pub fn pr_auc(curve: &PrCurve) -> f64 {
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for p in &curve.points {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    area
}

pub fn average_precision(items: &[ScoredLabel]) -> Result<f64> {
    Ok(pr_auc(&pr_curve(items)?))
}

fn top_k(items: &[ScoredLabel], k: usize) -> Result<Vec<&ScoredLabel>> {
    check_finite(items)?;
    if k == 0 || k > items.len() {
        return Err(Error::validation(format!("k = {k} outside 1..={}", items.len())));
    }
    let mut sorted: Vec<&ScoredLabel> = items.iter().collect();
    sorted.sort_by(|a, b| rank_order(a, b));
    sorted.truncate(k);
    Ok(sorted)
}

pub fn precision_at_k(items: &[ScoredLabel], k: usize) -> Result<f64> {
    let top = top_k(items, k)?;
    Ok(top.iter().filter(|i| i.positive).count() as f64 / k as f64)
}

pub fn recall_at_k(items: &[ScoredLabel], k: usize) -> Result<f64> {
    let total_pos = items.iter().filter(|i| i.positive).count();
    if total_pos == 0 {
        return Err(Error::UndefinedRecall);
    }
    let top = top_k(items, k)?;
    Ok(top.iter().filter(|i| i.positive).count() as f64 / total_pos as f64)
}

/// Mean precision@k over `trials` uniformly shuffled orderings.
pub fn random_baseline(items: &[ScoredLabel], k: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::validation("trials must be at least 1"));
    }
    if k == 0 || k > items.len() {
        return Err(Error::validation(format!("k = {k} outside 1..={}", items.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<bool> = items.iter().map(|i| i.positive).collect();
    let mut sum = 0.0;
    for _ in 0..trials {
        labels.shuffle(&mut rng);
        sum += labels[..k].iter().filter(|&&p| p).count() as f64 / k as f64;
    }
    Ok(sum / trials as f64)
}

pub fn write_curve_csv<W: Write>(mut w: W, curve: &PrCurve) -> std::io::Result<()> {
    writeln!(w, "threshold,recall,precision")?;
    for p in &curve.points {
        writeln!(w, "{},{},{}", p.threshold, p.recall, p.precision)?;
    }
    Ok(())
}

/// AUC plus P@10/50/100; a cutoff larger than the item count is reported as null.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub auc: f64,
    #[serde(rename = "p@10")]
    pub p_at_10: Option<f64>,
    #[serde(rename = "p@50")]
    pub p_at_50: Option<f64>,
    #[serde(rename = "p@100")]
    pub p_at_100: Option<f64>,
    pub n: usize,
    pub positives: usize,
}

pub fn summarize(items: &[ScoredLabel]) -> Result<Summary> {
    let p = |k: usize| -> Result<Option<f64>> {
        if k <= items.len() {
            precision_at_k(items, k).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(Summary {
        auc: average_precision(items)?,
        p_at_10: p(10)?,
        p_at_50: p(50)?,
        p_at_100: p(100)?,
        n: items.len(),
        positives: items.iter().filter(|i| i.positive).count(),
    })
}
