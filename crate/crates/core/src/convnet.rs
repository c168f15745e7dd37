//! 1D convolutional text classifier: embedding lookup, valid convolutions of
//! several widths, ReLU, max-over-time pooling and a single sigmoid output.
//!
//! All parameters live in one flat vector so that the optimizer, the gradient
//! check and the model file share a single layout:
//!
//! ```text
//! embedding        vocab x dim
//! for each width w: filters x w x dim weights, then filters biases
//! output           (filters * widths) weights, then 1 bias
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featurize::Vocabulary;
use crate::glove::WordVectors;
use crate::linmodel::{bce_with_logit, sigmoid};
use crate::metrics::{average_precision, ScoredLabel};

const MAGIC: &[u8; 8] = b"TCCNN001";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub vocab_size: usize,
    pub dim: usize,
    pub widths: Vec<usize>,
    pub filters: usize,
    pub pad_index: usize,
}

impl Architecture {
    pub fn new(vocab_size: usize, dim: usize, widths: Vec<usize>, filters: usize, pad_index: usize) -> Result<Self> {
        if vocab_size == 0 || dim == 0 || filters == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(Error::validation("convnet dimensions must be positive"));
        }
        if pad_index >= vocab_size {
            return Err(Error::Index {
                index: pad_index,
                len: vocab_size,
            });
        }
        Ok(Architecture {
            vocab_size,
            dim,
            widths,
            filters,
            pad_index,
        })
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    pub fn hidden(&self) -> usize {
        self.filters * self.widths.len()
    }

    fn embedding_len(&self) -> usize {
        self.vocab_size * self.dim
    }

    /// Offset of the weights of filter bank `wi`.
    pub fn bank_offset(&self, wi: usize) -> usize {
        self.embedding_len()
            + self.widths[..wi]
                .iter()
                .map(|&w| self.filters * (w * self.dim + 1))
                .sum::<usize>()
    }

    /// Offset of the biases of filter bank `wi`.
    pub fn bank_bias_offset(&self, wi: usize) -> usize {
        self.bank_offset(wi) + self.filters * self.widths[wi] * self.dim
    }

    pub fn output_offset(&self) -> usize {
        self.bank_offset(self.widths.len())
    }

    pub fn param_count(&self) -> usize {
        self.output_offset() + self.hidden() + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvModel {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Cache {
    pub indices: Vec<usize>,
    param_count: usize,
    /// Window start of the pooled maximum per hidden unit.
    pub argmax: Vec<usize>,
    /// Pre-activation at the pooled position per hidden unit.
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logit: f64,
    pub probability: f64,
}

impl ConvModel {
    pub fn zeros(arch: Architecture) -> Self {
        let params = vec![0.0; arch.param_count()];
        ConvModel { arch, params }
    }

    pub fn embedding_row(&self, token: usize) -> &[f64] {
        let d = self.arch.dim;
        &self.params[token * d..(token + 1) * d]
    }

    pub fn embedding_row_mut(&mut self, token: usize) -> &mut [f64] {
        let d = self.arch.dim;
        &mut self.params[token * d..(token + 1) * d]
    }

    /// Weights of filter `f` in bank `wi`, laid out position-major.
    pub fn filter(&self, wi: usize, f: usize) -> &[f64] {
        let len = self.arch.widths[wi] * self.arch.dim;
        let start = self.arch.bank_offset(wi) + f * len;
        &self.params[start..start + len]
    }

    pub fn filter_mut(&mut self, wi: usize, f: usize) -> &mut [f64] {
        let len = self.arch.widths[wi] * self.arch.dim;
        let start = self.arch.bank_offset(wi) + f * len;
        &mut self.params[start..start + len]
    }

    pub fn filter_bias(&self, wi: usize, f: usize) -> f64 {
        self.params[self.arch.bank_bias_offset(wi) + f]
    }

    pub fn set_filter_bias(&mut self, wi: usize, f: usize, v: f64) {
        let o = self.arch.bank_bias_offset(wi) + f;
        self.params[o] = v;
    }

    pub fn output_weights(&self) -> &[f64] {
        let o = self.arch.output_offset();
        &self.params[o..o + self.arch.hidden()]
    }

    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        let o = self.arch.output_offset();
        let h = self.arch.hidden();
        &mut self.params[o..o + h]
    }

    pub fn output_bias(&self) -> f64 {
        self.params[self.arch.param_count() - 1]
    }

    pub fn set_output_bias(&mut self, v: f64) {
        let last = self.arch.param_count() - 1;
        self.params[last] = v;
    }

    pub fn predict(&self, indices: &[usize]) -> Result<f64> {
        forward(self, indices).map(|c| c.probability)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let a = &self.arch;
        w.write_all(MAGIC)?;
        let mut header = vec![a.vocab_size, a.dim, a.filters, a.pad_index, a.widths.len()];
        header.extend(&a.widths);
        for h in header {
            w.write_all(&(h as u64).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::io("<convnet model>", e))?;
        if buf.len() < 8 || &buf[..8] != MAGIC {
            return Err(Error::validation("not a convnet model file"));
        }
        let mut pos = 8;
        let mut next_u64 = || -> Result<usize> {
            let bytes = buf
                .get(pos..pos + 8)
                .ok_or_else(|| Error::validation("truncated convnet model header"))?;
            pos += 8;
            Ok(u64::from_le_bytes(bytes.try_into().unwrap()) as usize)
        };
        let (vocab_size, dim, filters, pad_index, n_widths) =
            (next_u64()?, next_u64()?, next_u64()?, next_u64()?, next_u64()?);
        if n_widths > 64 {
            return Err(Error::validation("implausible number of filter widths"));
        }
        let widths = (0..n_widths).map(|_| next_u64()).collect::<Result<Vec<_>>>()?;
        let arch = Architecture::new(vocab_size, dim, widths, filters, pad_index)?;
        let body = &buf[8 + 8 * (5 + n_widths)..];
        if body.len() != arch.param_count() * 8 {
            return Err(Error::validation(format!(
                "expected {} parameters, found {} bytes",
                arch.param_count(),
                body.len()
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ConvModel { arch, params })
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        ConvModel::read_from(std::io::BufReader::new(f))
    }
}

/// Number of leading non-pad tokens.
fn real_length(indices: &[usize], pad: usize) -> usize {
    indices.iter().position(|&i| i == pad).unwrap_or(indices.len())
}

/// Window starts that take part in pooling: windows fully inside the real
/// tokens, or just the first window when the text is shorter than the filter.
fn pooled_windows(real_len: usize, width: usize) -> std::ops::RangeInclusive<usize> {
    0..=real_len.saturating_sub(width)
}

pub fn forward(model: &ConvModel, indices: &[usize]) -> Result<Cache> {
    let a = &model.arch;
    if indices.len() < a.max_width() {
        return Err(Error::validation(format!(
            "sequence of length {} is shorter than the widest filter ({})",
            indices.len(),
            a.max_width()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= a.vocab_size) {
        return Err(Error::Index {
            index: bad,
            len: a.vocab_size,
        });
    }
    let d = a.dim;
    let real_len = real_length(indices, a.pad_index);
    let mut argmax = Vec::with_capacity(a.hidden());
    let mut pre_activation = Vec::with_capacity(a.hidden());

    for (wi, &width) in a.widths.iter().enumerate() {
        for f in 0..a.filters {
            let weights = model.filter(wi, f);
            let bias = model.filter_bias(wi, f);
            let mut best = (0usize, f64::NEG_INFINITY);
            for t in pooled_windows(real_len, width) {
                let mut z = bias;
                for p in 0..width {
                    let row = model.embedding_row(indices[t + p]);
                    let w = &weights[p * d..(p + 1) * d];
                    z += w.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
                }
                if z > best.1 {
                    best = (t, z);
                }
            }
            argmax.push(best.0);
            pre_activation.push(best.1);
        }
    }
    // ReLU is monotone, so pooling the pre-activations then rectifying is exact.
    let hidden: Vec<f64> = pre_activation.iter().map(|&z| z.max(0.0)).collect();
    let logit = model.output_bias()
        + model
            .output_weights()
            .iter()
            .zip(&hidden)
            .map(|(u, h)| u * h)
            .sum::<f64>();
    Ok(Cache {
        indices: indices.to_vec(),
        param_count: a.param_count(),
        argmax,
        pre_activation,
        hidden,
        logit,
        probability: sigmoid(logit),
    })
}

pub fn loss(model: &ConvModel, indices: &[usize], label: bool) -> Result<f64> {
    Ok(bce_with_logit(forward(model, indices)?.logit, label))
}

/// Gradient of the cross-entropy of `cache` against `label`, in parameter layout.
pub fn backward(model: &ConvModel, cache: &Cache, label: bool) -> Result<Vec<f64>> {
    let a = &model.arch;
    if cache.param_count != a.param_count() || cache.hidden.len() != a.hidden() {
        return Err(Error::validation("cache was produced by a different model"));
    }
    let d = a.dim;
    let mut grad = vec![0.0; a.param_count()];
    let dlogit = cache.probability - if label { 1.0 } else { 0.0 };

    let out = a.output_offset();
    for (j, h) in cache.hidden.iter().enumerate() {
        grad[out + j] = dlogit * h;
    }
    grad[a.param_count() - 1] = dlogit;

    let u = model.output_weights();
    let mut j = 0;
    for (wi, &width) in a.widths.iter().enumerate() {
        let bank = a.bank_offset(wi);
        let bias_off = a.bank_bias_offset(wi);
        for f in 0..a.filters {
            let dz = if cache.pre_activation[j] > 0.0 { dlogit * u[j] } else { 0.0 };
            let t = cache.argmax[j];
            j += 1;
            if dz == 0.0 {
                continue;
            }
            grad[bias_off + f] += dz;
            let weights = model.filter(wi, f);
            let fstart = bank + f * width * d;
            for p in 0..width {
                let tok = cache.indices[t + p];
                let row = model.embedding_row(tok);
                for k in 0..d {
                    grad[fstart + p * d + k] += dz * row[k];
                }
                if tok != a.pad_index {
                    for k in 0..d {
                        grad[tok * d + k] += dz * weights[p * d + k];
                    }
                }
            }
        }
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::validation("adam: parameter, gradient and state shapes differ"));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        if state.m[i] == 0.0 {
            continue;
        }
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvConfig {
    pub dim: usize,
    pub widths: Vec<usize>,
    pub filters: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub filter_init: f64,
    pub oov_init: f64,
    pub seed: u64,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            dim: 50,
            widths: vec![3, 4, 5],
            filters: 100,
            max_len: crate::featurize::DEFAULT_MAX_LEN,
            epochs: 5,
            adam: AdamConfig::default(),
            filter_init: 0.05,
            oov_init: 0.01,
            seed: 0,
        }
    }
}

/// Random filters, zero output layer, embedding rows copied from `vectors`
/// where available and drawn uniformly from (-oov_init, oov_init) otherwise.
/// The pad row is zero.
pub fn init_model(vocab: &Vocabulary, vectors: Option<&WordVectors>, config: &ConvConfig, rng: &mut impl Rng) -> Result<ConvModel> {
    let pad = vocab
        .pad_index()
        .ok_or_else(|| Error::validation("word vocabulary has no <PAD> entry"))?;
    let arch = Architecture::new(vocab.len(), config.dim, config.widths.clone(), config.filters, pad)?;
    if let Some(v) = vectors {
        if !v.entries.is_empty() && v.dim != config.dim {
            return Err(Error::validation(format!(
                "embedding file has dimension {}, model expects {}",
                v.dim, config.dim
            )));
        }
    }
    let lookup = vectors.map(|v| v.lookup()).unwrap_or_default();
    let mut model = ConvModel::zeros(arch);
    for (i, tok) in vocab.tokens().iter().enumerate() {
        if i == pad {
            continue;
        }
        let row = model.embedding_row_mut(i);
        match lookup.get(tok.as_str()) {
            Some(v) => row.copy_from_slice(v),
            None => row
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-config.oov_init..config.oov_init)),
        }
    }
    let a = model.arch.clone();
    for wi in 0..a.widths.len() {
        for f in 0..a.filters {
            model
                .filter_mut(wi, f)
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-config.filter_init..config.filter_init));
        }
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedConv {
    pub model: ConvModel,
    pub best_epoch: usize,
    pub epochs: Vec<ConvEpoch>,
}

pub type Sequence = (Vec<usize>, bool);

pub fn mean_loss(model: &ConvModel, data: &[Sequence]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data {
        total += loss(model, x, *y)?;
    }
    Ok(total / data.len().max(1) as f64)
}

pub fn dev_auc(model: &ConvModel, dev: &[Sequence]) -> Result<Option<f64>> {
    if !dev.iter().any(|(_, y)| *y) {
        return Ok(None);
    }
    let items = dev
        .iter()
        .enumerate()
        .map(|(i, (x, y))| Ok(ScoredLabel::new(format!("{i:08}"), model.predict(x)?, *y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(average_precision(&items)?))
}

/// Batch-size-1 Adam training, shuffled each epoch under `config.seed`.
/// Returns the parameters of the epoch with the best dev average precision.
pub fn train_cnn(
    train: &[Sequence],
    dev: &[Sequence],
    vocab: &Vocabulary,
    vectors: Option<&WordVectors>,
    config: &ConvConfig,
) -> Result<TrainedConv> {
    let positives = train.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::validation("training set must contain both classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_model(vocab, vectors, config, &mut rng)?;
    let mut state = AdamState::new(model.params.len());

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_auc = dev_auc(&model, dev)?;
    let mut epochs = vec![ConvEpoch {
        epoch: 0,
        train_loss: mean_loss(&model, train)?,
        dev_auc: best_auc,
    }];

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &train[i];
            let cache = forward(&model, x)?;
            let grad = backward(&model, &cache, *y)?;
            adam_step(&mut model.params, &grad, &mut state, &config.adam)?;
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation(format!("non-finite parameters after epoch {epoch}")));
        }
        let auc = dev_auc(&model, dev)?;
        epochs.push(ConvEpoch {
            epoch,
            train_loss: mean_loss(&model, train)?,
            dev_auc: auc,
        });
        let improved = match (auc, best_auc) {
            (Some(a), Some(b)) => a > b,
            _ => true,
        };
        if improved {
            best = model.clone();
            best_epoch = epoch;
            best_auc = auc;
        }
    }
    Ok(TrainedConv {
        model: best,
        best_epoch,
        epochs,
    })
}
