//! N-gram vocabularies and sparse count vectors for the linear model, and
//! padded token-index sequences for the convolutional model.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const DEFAULT_ORDERS: [usize; 3] = [2, 3, 4];
pub const DEFAULT_MAX_LEN: usize = 64;

pub fn unk_for_order(n: usize) -> String {
    format!("<UNK_{n}>")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// N-gram orders with a reserved unknown slot; empty for a word vocabulary.
    orders: Vec<usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, orders: Vec<usize>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index, orders })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn is_reserved(&self, index: usize) -> bool {
        self.tokens
            .get(index)
            .is_some_and(|t| t == PAD || t == UNK || (t.starts_with("<UNK_") && t.ends_with('>')))
    }

    pub fn pad_index(&self) -> Option<usize> {
        self.get(PAD)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(w, "{t}\t{i}")?;
        }
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let (tok, idx) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(path, n + 1, "expected token<TAB>index"))?;
            let idx: usize = idx.parse().map_err(|_| Error::parse(path, n + 1, "bad index"))?;
            if idx != tokens.len() {
                return Err(Error::parse(path, n + 1, "indices must be dense and ascending"));
            }
            tokens.push(tok.to_string());
        }
        let orders = tokens
            .iter()
            .filter_map(|t| t.strip_prefix("<UNK_")?.strip_suffix('>')?.parse().ok())
            .collect();
        Vocabulary::from_tokens(tokens, orders)
    }
}

/// All contiguous n-grams for each order (ascending), joined by single spaces.
pub fn extract_ngrams<S: AsRef<str>>(tokens: &[S], orders: &[usize]) -> Vec<String> {
    let mut sorted: Vec<usize> = orders.iter().copied().filter(|&n| n > 0).collect();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::new();
    for n in sorted {
        for w in tokens.windows(n) {
            let parts: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            out.push(parts.join(" "));
        }
    }
    out
}

fn ngram_order(ngram: &str) -> usize {
    ngram.split(' ').count()
}

fn ranked_by_frequency(counts: HashMap<String, usize>, min_count: usize) -> Vec<String> {
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.into_iter().map(|(t, _)| t).collect()
}

/// N-grams seen at least twice in the training corpus, after one unknown slot per order.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], orders: &[usize]) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot build a vocabulary from an empty corpus"));
    }
    if orders.is_empty() {
        return Err(Error::validation("no n-gram orders given"));
    }
    let mut sorted: Vec<usize> = orders.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        for g in extract_ngrams(doc, &sorted) {
            *counts.entry(g).or_default() += 1;
        }
    }
    let mut tokens: Vec<String> = sorted.iter().map(|&n| unk_for_order(n)).collect();
    tokens.extend(ranked_by_frequency(counts, 2));
    Vocabulary::from_tokens(tokens, sorted)
}

/// Unigram vocabulary for index sequences: `<PAD>` = 0, `<UNK>` = 1, then every
/// training token by descending frequency.
pub fn build_word_vocab<S: AsRef<str>>(corpus: &[Vec<S>]) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot build a vocabulary from an empty corpus"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        for t in doc {
            *counts.entry(t.as_ref().to_string()).or_default() += 1;
        }
    }
    counts.remove(PAD);
    counts.remove(UNK);
    let mut tokens = vec![PAD.to_string(), UNK.to_string()];
    tokens.extend(ranked_by_frequency(counts, 1));
    Vocabulary::from_tokens(tokens, Vec::new())
}

/// Sorted `(index, count)` pairs with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparseVector {
    entries: Vec<(usize, u32)>,
}

impl SparseVector {
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut map: BTreeMap<usize, u32> = BTreeMap::new();
        for (i, c) in counts {
            if c > 0 {
                *map.entry(i).or_default() += c;
            }
        }
        SparseVector {
            entries: map.into_iter().collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(i, _)| i)
    }
}

pub fn vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> SparseVector {
    let grams = extract_ngrams(tokens, vocab.orders());
    SparseVector::from_counts(grams.into_iter().filter_map(|g| {
        let idx = vocab
            .get(&g)
            .or_else(|| vocab.get(&unk_for_order(ngram_order(&g))))?;
        Some((idx, 1))
    }))
}

/// Token indices truncated or right-padded with `<PAD>` to `max_len`.
pub fn index_sequence<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let pad = vocab.get(PAD).unwrap_or(0);
    let unk = vocab.get(UNK).unwrap_or(pad);
    let mut out: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.get(t.as_ref()).unwrap_or(unk))
        .collect();
    out.resize(max_len, pad);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn ngram_examples() {
        let t = toks("a b c");
        assert_eq!(extract_ngrams(&t, &[2]), vec!["a b", "b c"]);
        assert_eq!(extract_ngrams(&t, &[3, 2]), vec!["a b", "b c", "a b c"]);
        assert!(extract_ngrams(&t, &[4, 5]).is_empty());
    }

    #[test]
    fn vocab_frequency_rule() {
        let corpus = vec![toks("ddos attack now"), toks("ddos attack again")];
        let v = build_vocab(&corpus, &[2]).unwrap();
        assert_eq!(v.get("<UNK_2>"), Some(0));
        assert_eq!(v.get("ddos attack"), Some(1));
        assert_eq!(v.get("attack now"), None);
        assert_eq!(v, build_vocab(&corpus, &[2]).unwrap());
        assert!(build_vocab::<String>(&[], &[2]).is_err());
    }

    #[test]
    fn vectorize_examples() {
        let corpus = vec![toks("x y"), toks("x y")];
        let v = build_vocab(&corpus, &[2, 3]).unwrap();
        assert!(vectorize::<String>(&[], &v).is_empty());

        let sv = vectorize(&toks("x y q x y"), &v);
        // bigrams: "x y" x2, "y q", "q x" unseen; trigrams: 3 unseen
        let xy = v.get("x y").unwrap();
        assert_eq!(
            sv.entries(),
            &[(v.get("<UNK_2>").unwrap(), 2), (v.get("<UNK_3>").unwrap(), 3), (xy, 2)][..]
        );
        assert_eq!(sv.total(), 7);
    }

    #[test]
    fn index_sequence_examples() {
        let v = build_word_vocab(&[toks("a b b")]).unwrap();
        assert_eq!(v.get(PAD), Some(0));
        assert_eq!(v.get("b"), Some(2));
        assert_eq!(index_sequence::<String>(&[], &v, 4), vec![0, 0, 0, 0]);
        assert_eq!(index_sequence(&toks("a b z a b"), &v, 3), vec![3, 2, 1]);
        assert_eq!(index_sequence(&toks("b a"), &v, 4), vec![2, 3, 0, 0]);
    }

    #[test]
    fn vocab_file_roundtrip() {
        let v = build_vocab(&[toks("a b c a b c")], &[2, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tsv");
        v.write_to(std::fs::File::create(&p).unwrap()).unwrap();
        let back = Vocabulary::read_from(&p).unwrap();
        assert_eq!(v, back);
        let mut a = Vec::new();
        let mut b = Vec::new();
        v.write_to(&mut a).unwrap();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }
}
