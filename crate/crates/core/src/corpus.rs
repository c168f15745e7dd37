//! Tweet ingestion, normalization, near-duplicate removal and dataset splits.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel that replaces the target entity span.
pub const TARGET: &str = "<TARGET>";

pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.7;
pub const DEFAULT_LCS_RATIO: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tweet {
    pub id: String,
    pub posted_at: DateTime<Utc>,
    pub author: String,
    pub text: String,
    pub urls: Vec<String>,
    pub entities: Vec<EntitySpan>,
}

/// A tweet prepared for classification against one target entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub tweet_id: String,
    pub target_entity: String,
    pub tokens: Vec<String>,
}

impl Tweet {
    pub fn posted_date(&self) -> NaiveDate {
        self.posted_at.date_naive()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("tweet id is empty"));
        }
        let mut spans: Vec<&EntitySpan> = self.entities.iter().collect();
        spans.sort_by_key(|s| (s.start, s.end));
        let mut last_end = 0;
        for span in spans {
            if span.start > span.end
                || span.end > self.text.len()
                || !self.text.is_char_boundary(span.start)
                || !self.text.is_char_boundary(span.end)
            {
                return Err(Error::validation(format!(
                    "tweet {}: entity span {}..{} outside text",
                    self.id, span.start, span.end
                )));
            }
            if span.start < last_end {
                return Err(Error::validation(format!(
                    "tweet {}: overlapping entity spans",
                    self.id
                )));
            }
            last_end = span.end;
        }
        Ok(())
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '–' | '—' | '«' | '»')
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://") || s.starts_with("www.")
}

fn zero_digits(s: &str) -> String {
    s.chars().map(|c| if c.is_numeric() { '0' } else { c }).collect()
}

fn push_chunk(chunk: &str, out: &mut Vec<String>) {
    let lower = zero_digits(&chunk.to_lowercase());
    let mut rest = lower.as_str();

    // leading punctuation, except a #tag or @user marker
    while let Some(c) = rest.chars().next() {
        if !is_punct(c) {
            break;
        }
        let marker = (c == '#' || c == '@')
            && rest[1..].chars().next().is_some_and(|n| n.is_alphanumeric() || n == '_');
        if marker {
            break;
        }
        out.push(c.to_string());
        rest = &rest[c.len_utf8()..];
    }

    let mut trailing = Vec::new();
    while let Some(c) = rest.chars().next_back() {
        if !is_punct(c) || (is_url(rest) && c == '/') {
            break;
        }
        trailing.push(c.to_string());
        rest = &rest[..rest.len() - c.len_utf8()];
    }
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out.extend(trailing.into_iter().rev());
}

/// Lowercases, splits on whitespace and separates leading/trailing punctuation.
/// Hashtags, mentions and URLs survive as single tokens; digits become `0`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        push_chunk(chunk, &mut out);
    }
    out
}

/// Normalizes `tweet` with the entity at `entity_index` collapsed to [`TARGET`].
pub fn normalize(tweet: &Tweet, entity_index: usize) -> Result<Instance> {
    let span = tweet.entities.get(entity_index).ok_or(Error::Index {
        index: entity_index,
        len: tweet.entities.len(),
    })?;
    let text = &tweet.text;
    let before = text
        .get(..span.start)
        .ok_or_else(|| Error::validation(format!("tweet {}: bad span start", tweet.id)))?;
    let after = text
        .get(span.end..)
        .ok_or_else(|| Error::validation(format!("tweet {}: bad span end", tweet.id)))?;
    let mut tokens = tokenize(before);
    tokens.push(TARGET.to_string());
    tokens.extend(tokenize(after));
    Ok(Instance {
        tweet_id: tweet.id.clone(),
        target_entity: span.surface.clone(),
        tokens,
    })
}

/// Normalizes the whole text with no entity collapsed.
pub fn normalize_text(tweet: &Tweet) -> Instance {
    Instance {
        tweet_id: tweet.id.clone(),
        target_entity: String::new(),
        tokens: tokenize(&tweet.text),
    }
}

/// One instance per entity, or a single whole-text instance if there are none.
pub fn instances(tweet: &Tweet) -> Result<Vec<Instance>> {
    if tweet.entities.is_empty() {
        return Ok(vec![normalize_text(tweet)]);
    }
    (0..tweet.entities.len()).map(|i| normalize(tweet, i)).collect()
}

pub fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Indices of `tweets` in posted_at order, stable for equal timestamps.
fn chronological(tweets: &[Tweet]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tweets.len()).collect();
    order.sort_by_key(|&i| tweets[i].posted_at);
    order
}

/// Drops tweets whose unigram Jaccard similarity with an earlier kept tweet
/// from the same UTC date is at least `threshold`. Input order is preserved.
pub fn dedup_by_jaccard(tweets: &[Tweet], threshold: f64) -> Vec<Tweet> {
    let sets: Vec<HashSet<String>> = tweets
        .iter()
        .map(|t| tokenize(&t.text).into_iter().collect())
        .collect();
    let mut kept_by_date: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    let mut keep = vec![false; tweets.len()];
    for i in chronological(tweets) {
        let bucket = kept_by_date.entry(tweets[i].posted_date()).or_default();
        if bucket.iter().all(|&j| jaccard(&sets[i], &sets[j]) < threshold) {
            bucket.push(i);
            keep[i] = true;
        }
    }
    tweets
        .iter()
        .zip(keep)
        .filter_map(|(t, k)| k.then(|| t.clone()))
        .collect()
}

/// Tokens used for subsequence comparison: hashtags and URLs removed, digits zeroed.
pub fn lcs_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !(t.starts_with('#') && t.len() > 1) && !is_url(t))
        .collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS length over the longer sequence; two empty sequences count as identical.
pub fn lcs_ratio<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    lcs_len(a, b) as f64 / longest as f64
}

/// Drops a tweet when its token LCS covers more than `ratio` of the longer of
/// itself and an earlier kept tweet. Greedy in posted_at order.
pub fn dedup_by_lcs(tweets: &[Tweet], ratio: f64) -> Vec<Tweet> {
    let seqs: Vec<Vec<String>> = tweets.iter().map(|t| lcs_tokens(&t.text)).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut keep = vec![false; tweets.len()];
    for i in chronological(tweets) {
        let dup = kept.iter().any(|&j| {
            let (a, b) = (&seqs[i], &seqs[j]);
            let longest = a.len().max(b.len());
            // the LCS can never exceed the shorter sequence
            if longest > 0 && (a.len().min(b.len()) as f64) / (longest as f64) <= ratio {
                return false;
            }
            lcs_ratio(a, b) > ratio
        });
        if !dup {
            kept.push(i);
            keep[i] = true;
        }
    }
    tweets
        .iter()
        .zip(keep)
        .filter_map(|(t, k)| k.then(|| t.clone()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSizes {
    Counts { train: usize, dev: usize, test: usize },
    /// Train and dev fractions; test receives the remainder.
    Fractions { train: f64, dev: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    pub sizes: SplitSizes,
}

impl SplitSpec {
    pub fn counts(seed: u64, train: usize, dev: usize, test: usize) -> Self {
        SplitSpec {
            seed,
            sizes: SplitSizes::Counts { train, dev, test },
        }
    }

    fn resolve(&self, n: usize) -> Result<(usize, usize, usize)> {
        match self.sizes {
            SplitSizes::Counts { train, dev, test } => {
                let total = train + dev + test;
                if total > n {
                    return Err(Error::Config(format!(
                        "split sizes {train}+{dev}+{test} exceed corpus size {n}"
                    )));
                }
                if total != n {
                    return Err(Error::Config(format!(
                        "split sizes {train}+{dev}+{test} do not cover corpus size {n}"
                    )));
                }
                Ok((train, dev, test))
            }
            SplitSizes::Fractions { train, dev } => {
                if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&dev) || train + dev > 1.0 {
                    return Err(Error::Config(format!("bad split fractions {train}, {dev}")));
                }
                let tr = (train * n as f64).floor() as usize;
                let dv = ((dev * n as f64).floor() as usize).min(n - tr);
                Ok((tr, dv, n - tr - dv))
            }
        }
    }
}

/// Deterministic shuffle under `spec.seed`, then contiguous train/dev/test slices.
pub fn split<T: Clone>(corpus: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (tr, dv, _) = spec.resolve(corpus.len())?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&order[..tr]),
        pick(&order[tr..tr + dv]),
        pick(&order[tr + dv..]),
    ))
}

#[derive(Serialize, Deserialize)]
struct TweetRecord {
    id: String,
    created_at: String,
    user: String,
    text: String,
    #[serde(default)]
    urls: Vec<String>,
    #[serde(default)]
    entities: Vec<EntitySpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
}

pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_tweet(line: &str) -> std::result::Result<Tweet, String> {
    let rec: TweetRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let tweet = Tweet {
        posted_at: parse_timestamp(&rec.created_at)?,
        id: rec.id,
        author: rec.user,
        text: rec.text,
        urls: rec.urls,
        entities: rec.entities,
    };
    tweet.validate().map_err(|e| e.to_string())?;
    Ok(tweet)
}

/// Reads one JSON tweet per line. Ids must be unique.
pub fn read_tweets(path: &Path) -> Result<Vec<Tweet>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tweet = parse_tweet(&line).map_err(|m| Error::parse(path, n + 1, m))?;
        if !seen.insert(tweet.id.clone()) {
            return Err(Error::parse(path, n + 1, format!("duplicate tweet id {}", tweet.id)));
        }
        out.push(tweet);
    }
    Ok(out)
}

pub fn tweet_to_json(tweet: &Tweet, with_tokens: bool) -> String {
    let rec = TweetRecord {
        id: tweet.id.clone(),
        created_at: format_timestamp(&tweet.posted_at),
        user: tweet.author.clone(),
        text: tweet.text.clone(),
        urls: tweet.urls.clone(),
        entities: tweet.entities.clone(),
        tokens: with_tokens.then(|| tokenize(&tweet.text)),
    };
    serde_json::to_string(&rec).expect("tweet record serializes")
}

pub fn write_tweets<W: Write>(mut w: W, tweets: &[Tweet], with_tokens: bool) -> std::io::Result<()> {
    for t in tweets {
        writeln!(w, "{}", tweet_to_json(t, with_tokens))?;
    }
    Ok(())
}
