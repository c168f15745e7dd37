//! Binary logistic regression over sparse n-gram counts.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::featurize::{SparseVector, Vocabulary};
use crate::metrics::{average_precision, ScoredLabel};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit against a label.
pub fn bce_with_logit(z: f64, y: bool) -> f64 {
    softplus(z) - if y { z } else { 0.0 }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: SparseVector,
    pub y: bool,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &SparseVector) -> Result<f64> {
        let mut z = self.bias;
        for &(i, c) in x.entries() {
            let w = self.weights.get(i).ok_or(Error::Index {
                index: i,
                len: self.weights.len(),
            })?;
            z += w * c as f64;
        }
        Ok(z)
    }

    pub fn predict(&self, x: &SparseVector) -> Result<f64> {
        self.logit(x).map(sigmoid)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "dim {}", self.weights.len())?;
        writeln!(w, "bias {}", self.bias)?;
        for x in &self.weights {
            writeln!(w, "{x}")?;
        }
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = std::io::BufReader::new(file).lines().enumerate();
        let mut header = |key: &str| -> Result<String> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, "truncated model header"))?;
            let line = line.map_err(|e| Error::io(path, e))?;
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::parse(path, n + 1, format!("expected {key}")))
        };
        let dim: usize = header("dim")?
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad dim"))?;
        let bias: f64 = header("bias")?
            .parse()
            .map_err(|_| Error::parse(path, 2, "bad bias"))?;
        let mut weights = Vec::with_capacity(dim);
        for (n, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            weights.push(
                line.trim()
                    .parse()
                    .map_err(|_| Error::parse(path, n + 1, "bad weight"))?,
            );
        }
        if weights.len() != dim {
            return Err(Error::parse(path, 0, format!("expected {dim} weights, found {}", weights.len())));
        }
        Ok(LinearModel { weights, bias })
    }
}

/// Mean cross-entropy plus `l2 / 2 * ||w||^2` (bias unpenalized).
pub fn loss(model: &LinearModel, data: &[Example], l2: f64) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        total += bce_with_logit(model.logit(&ex.x)?, ex.y);
    }
    let penalty = 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    Ok(total / data.len().max(1) as f64 + penalty)
}

/// Analytic gradient of [`loss`], returned as (weights, bias).
pub fn gradient(model: &LinearModel, data: &[Example], l2: f64) -> Result<(Vec<f64>, f64)> {
    let n = data.len().max(1) as f64;
    let mut gw: Vec<f64> = model.weights.iter().map(|w| l2 * w).collect();
    let mut gb = 0.0;
    for ex in data {
        let p = sigmoid(model.logit(&ex.x)?);
        let d = (p - if ex.y { 1.0 } else { 0.0 }) / n;
        for &(i, c) in ex.x.entries() {
            gw[i] += d * c as f64;
        }
        gb += d;
    }
    Ok((gw, gb))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            learning_rate: 0.5,
            epochs: 300,
            l2: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedLinear {
    pub model: LinearModel,
    pub best_epoch: usize,
    pub curve: Vec<EpochStats>,
}

fn dev_auc(model: &LinearModel, dev: &[Example]) -> Result<Option<f64>> {
    if !dev.iter().any(|e| e.y) {
        return Ok(None);
    }
    let items = dev
        .iter()
        .enumerate()
        .map(|(i, e)| Ok(ScoredLabel::new(format!("{i:08}"), model.predict(&e.x)?, e.y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(average_precision(&items)?))
}

/// Full-batch gradient descent from zero weights. Keeps the parameters of the
/// epoch with the best dev average precision (the last epoch when dev has no positives).
pub fn train(train: &[Example], dev: &[Example], dim: usize, config: &LinearConfig) -> Result<TrainedLinear> {
    let positives = train.iter().filter(|e| e.y).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::validation("training set must contain both classes"));
    }
    if let Some(bad) = train.iter().chain(dev).find_map(|e| e.x.max_index().filter(|&i| i >= dim)) {
        return Err(Error::Index { index: bad, len: dim });
    }

    let mut model = LinearModel::zeros(dim);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_auc = dev_auc(&model, dev)?;
    let mut curve = vec![EpochStats {
        epoch: 0,
        train_loss: loss(&model, train, config.l2)?,
        dev_auc: best_auc,
    }];

    for epoch in 1..=config.epochs {
        let (gw, gb) = gradient(&model, train, config.l2)?;
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= config.learning_rate * g;
        }
        model.bias -= config.learning_rate * gb;

        let auc = dev_auc(&model, dev)?;
        curve.push(EpochStats {
            epoch,
            train_loss: loss(&model, train, config.l2)?,
            dev_auc: auc,
        });
        let improved = match (auc, best_auc) {
            (Some(a), Some(b)) => a > b,
            (None, _) => true,
            (Some(_), None) => true,
        };
        if improved {
            best = model.clone();
            best_epoch = epoch;
            best_auc = auc;
        }
    }
    Ok(TrainedLinear {
        model: best,
        best_epoch,
        curve,
    })
}

pub fn write_curve_csv<W: Write>(mut w: W, curve: &[EpochStats]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,dev_auc")?;
    for s in curve {
        match s.dev_auc {
            Some(a) => writeln!(w, "{},{},{}", s.epoch, s.train_loss, a)?,
            None => writeln!(w, "{},{},", s.epoch, s.train_loss)?,
        }
    }
    Ok(())
}

/// The `k` highest-weighted non-reserved features, ties broken lexicographically.
pub fn top_features(model: &LinearModel, vocab: &Vocabulary, k: usize) -> Vec<(String, f64)> {
    let mut feats: Vec<(String, f64)> = model
        .weights
        .iter()
        .enumerate()
        .filter(|(i, _)| !vocab.is_reserved(*i))
        .filter_map(|(i, &w)| Some((vocab.token(i)?.to_string(), w)))
        .collect();
    feats.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    feats.truncate(k);
    feats
}
