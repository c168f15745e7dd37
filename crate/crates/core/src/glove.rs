//! Domain word embeddings trained with the GloVe weighted least-squares
//! objective over a distance-weighted co-occurrence table.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceTable {
    words: Vec<String>,
    index: HashMap<String, u32>,
    entries: BTreeMap<(u32, u32), f64>,
}

impl CooccurrenceTable {
    pub fn new(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        CooccurrenceTable {
            words,
            index,
            entries: BTreeMap::new(),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_index(&self, w: &str) -> Option<u32> {
        self.index.get(w).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (self.word_index(a)?, self.word_index(b)?);
        self.entries.get(&(i, j)).copied()
    }

    /// Adds `weight` to X(i, j). Non-positive weights are ignored.
    pub fn add(&mut self, i: u32, j: u32, weight: f64) {
        if weight > 0.0 {
            *self.entries.entry((i, j)).or_default() += weight;
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &x)| (i, j, x))
    }

    /// Merges another table over the same word list.
    pub fn merge(&mut self, other: &CooccurrenceTable) -> Result<()> {
        if self.words != other.words {
            return Err(Error::validation("cannot merge tables with different vocabularies"));
        }
        for (i, j, x) in other.entries() {
            self.add(i, j, x);
        }
        Ok(())
    }

    /// Little-endian `(u32 i, u32 j, f64 weight)` records, 16 bytes each, in (i, j) order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, j, x) in self.entries() {
            w.write_all(&i.to_le_bytes())?;
            w.write_all(&j.to_le_bytes())?;
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(words: Vec<String>, mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::io("<cooccurrence>", e))?;
        if buf.len() % 16 != 0 {
            return Err(Error::validation("co-occurrence file length is not a multiple of 16"));
        }
        let mut table = CooccurrenceTable::new(words);
        let n = table.words.len() as u32;
        for rec in buf.chunks_exact(16) {
            let i = u32::from_le_bytes(rec[0..4].try_into().unwrap());
            let j = u32::from_le_bytes(rec[4..8].try_into().unwrap());
            let x = f64::from_le_bytes(rec[8..16].try_into().unwrap());
            if i >= n || j >= n {
                return Err(Error::validation(format!("co-occurrence index ({i}, {j}) out of range")));
            }
            table.add(i, j, x);
        }
        Ok(table)
    }
}

/// Words ranked by descending frequency, ties lexicographic.
pub fn word_list<S: AsRef<str>>(corpus: &[Vec<S>]) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for t in doc {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    words.into_iter().map(|(w, _)| w.to_string()).collect()
}

/// Symmetric counts: each pair within `window` positions of the same tweet adds
/// 1/distance to both X(a, b) and X(b, a).
pub fn count_cooccurrences<S: AsRef<str>>(corpus: &[Vec<S>], window: usize) -> CooccurrenceTable {
    let mut table = CooccurrenceTable::new(word_list(corpus));
    for doc in corpus {
        let ids: Vec<u32> = doc
            .iter()
            .map(|t| table.word_index(t.as_ref()).expect("word list covers corpus"))
            .collect();
        for (p, &a) in ids.iter().enumerate() {
            for (d, &b) in ids[p + 1..].iter().take(window).enumerate() {
                let w = 1.0 / (d + 1) as f64;
                table.add(a, b, w);
                table.add(b, a, w);
            }
        }
    }
    table
}

pub fn glove_weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GloveConfig {
    pub dim: usize,
    pub window: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        GloveConfig {
            dim: 50,
            window: 10,
            x_max: 100.0,
            alpha: 0.75,
            learning_rate: 0.05,
            epochs: 15,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub words: Vec<String>,
    pub dim: usize,
    pub main: Vec<f64>,
    pub context: Vec<f64>,
    pub main_bias: Vec<f64>,
    pub context_bias: Vec<f64>,
}

impl EmbeddingMatrix {
    fn random(words: Vec<String>, dim: usize, rng: &mut impl Rng) -> Self {
        let n = words.len();
        let bound = 0.5 / dim as f64;
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-bound..bound)).collect() };
        let main = draw(n * dim);
        let context = draw(n * dim);
        let main_bias = draw(n);
        let context_bias = draw(n);
        EmbeddingMatrix {
            words,
            dim,
            main,
            context,
            main_bias,
            context_bias,
        }
    }

    pub fn main_row(&self, i: usize) -> &[f64] {
        &self.main[i * self.dim..(i + 1) * self.dim]
    }

    pub fn context_row(&self, i: usize) -> &[f64] {
        &self.context[i * self.dim..(i + 1) * self.dim]
    }

    /// Main plus context vector.
    pub fn export_vector(&self, i: usize) -> Vec<f64> {
        self.main_row(i)
            .iter()
            .zip(self.context_row(i))
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn word_index(&self, w: &str) -> Option<usize> {
        self.words.iter().position(|x| x == w)
    }

    /// Model output w_i . w~_j + b_i + b~_j.
    pub fn score(&self, i: usize, j: usize) -> f64 {
        dot(self.main_row(i), self.context_row(j)) + self.main_bias[i] + self.context_bias[j]
    }

    pub fn to_word_vectors(&self) -> WordVectors {
        WordVectors {
            dim: self.dim,
            entries: (0..self.words.len())
                .map(|i| (self.words[i].clone(), self.export_vector(i)))
                .collect(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Sum over table entries of f(X_ij) (w_i . w~_j + b_i + b~_j - ln X_ij)^2.
pub fn weighted_loss(emb: &EmbeddingMatrix, table: &CooccurrenceTable, config: &GloveConfig) -> f64 {
    table
        .entries()
        .map(|(i, j, x)| {
            let diff = emb.score(i as usize, j as usize) - x.ln();
            glove_weight(x, config.x_max, config.alpha) * diff * diff
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct TrainedGlove {
    pub embeddings: EmbeddingMatrix,
    /// Weighted loss at initialization followed by one value per epoch.
    pub losses: Vec<f64>,
}

/// AdaGrad over the table entries, shuffled each epoch under `config.seed`.
pub fn train_embeddings(table: &CooccurrenceTable, config: &GloveConfig) -> Result<TrainedGlove> {
    if table.is_empty() {
        return Err(Error::validation("empty co-occurrence table"));
    }
    if config.dim == 0 {
        return Err(Error::validation("embedding dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut emb = EmbeddingMatrix::random(table.words().to_vec(), config.dim, &mut rng);
    let d = config.dim;
    let n = emb.words.len();
    let mut g_main = vec![1.0; n * d];
    let mut g_context = vec![1.0; n * d];
    let mut g_main_bias = vec![1.0; n];
    let mut g_context_bias = vec![1.0; n];

    let mut entries: Vec<(u32, u32, f64)> = table.entries().collect();
    let mut losses = vec![weighted_loss(&emb, table, config)];
    let lr = config.learning_rate;

    for _ in 0..config.epochs {
        entries.shuffle(&mut rng);
        for &(i, j, x) in &entries {
            let (i, j) = (i as usize, j as usize);
            let diff = emb.score(i, j) - x.ln();
            // d/dθ of f * diff^2, halved
            let fdiff = glove_weight(x, config.x_max, config.alpha) * diff;
            for k in 0..d {
                let (wi, wj) = (i * d + k, j * d + k);
                let gm = fdiff * emb.context[wj];
                let gc = fdiff * emb.main[wi];
                g_main[wi] += gm * gm;
                g_context[wj] += gc * gc;
                emb.main[wi] -= lr * gm / g_main[wi].sqrt();
                emb.context[wj] -= lr * gc / g_context[wj].sqrt();
            }
            g_main_bias[i] += fdiff * fdiff;
            g_context_bias[j] += fdiff * fdiff;
            emb.main_bias[i] -= lr * fdiff / g_main_bias[i].sqrt();
            emb.context_bias[j] -= lr * fdiff / g_context_bias[j].sqrt();
        }
        losses.push(weighted_loss(&emb, table, config));
    }
    if emb.main.iter().chain(&emb.context).any(|v| !v.is_finite()) {
        return Err(Error::validation("embedding training diverged"));
    }
    Ok(TrainedGlove {
        embeddings: emb,
        losses,
    })
}

/// Exported word vectors, as read from or written to an embedding text file.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl WordVectors {
    pub fn lookup(&self) -> HashMap<&str, &[f64]> {
        self.entries
            .iter()
            .map(|(w, v)| (w.as_str(), v.as_slice()))
            .collect()
    }

    /// `token v1 ... vd` per line.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (tok, v) in &self.entries {
            write!(w, "{tok}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut dim = None;
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split(' ');
            let Some(tok) = parts.next().filter(|t| !t.is_empty()) else {
                continue;
            };
            let v: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, n + 1, "bad vector component"))?;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::parse(path, n + 1, format!("expected {d} components, found {}", v.len())))
                }
                _ => {}
            }
            entries.push((tok.to_string(), v));
        }
        Ok(WordVectors {
            dim: dim.unwrap_or(0),
            entries,
        })
    }

    /// The `k` other tokens most cosine-similar to `token`, ties lexicographic.
    pub fn nearest_neighbors(&self, token: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let query = self
            .entries
            .iter()
            .find(|(w, _)| w == token)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::validation(format!("token {token:?} not in vocabulary")))?;
        let mut scored: Vec<(String, f64)> = self
            .entries
            .iter()
            .filter(|(w, _)| w != token)
            .map(|(w, v)| (w.clone(), cosine(query, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

pub fn nearest_neighbors(emb: &EmbeddingMatrix, token: &str, k: usize) -> Result<Vec<(String, f64)>> {
    emb.to_word_vectors().nearest_neighbors(token, k)
}
