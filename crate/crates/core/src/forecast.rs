//! CVE rankings from tweet severity scores or tweet volume, and their
//! evaluation against CVSS ratings, exploit lists and per-account track records.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifier::Classifier;
use crate::corpus::Tweet;
use crate::error::{Error, Result};
use crate::linker::LinkTable;
use crate::metrics::{self, ScoredLabel};
use crate::nvd::{is_severe, ExploitSet, NvdStore};

pub const CUTOFFS: [usize; 3] = [10, 50, 100];
pub const RANDOM_TRIALS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Model,
    Volume,
    TrueCvss,
    Random,
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::Model => "model",
            ScorerKind::Volume => "volume",
            ScorerKind::TrueCvss => "true-cvss",
            ScorerKind::Random => "random",
        })
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(ScorerKind::Model),
            "volume" => Ok(ScorerKind::Volume),
            "true-cvss" | "true_cvss" => Ok(ScorerKind::TrueCvss),
            "random" => Ok(ScorerKind::Random),
            other => Err(Error::validation(format!("unknown scorer {other:?}"))),
        }
    }
}

/// Severity probability of every tweet, keyed by tweet id.
pub type TweetScores = BTreeMap<String, f64>;

pub fn score_tweets<C: Classifier + ?Sized>(tweets: &[Tweet], classifier: &C) -> Result<TweetScores> {
    tweets
        .iter()
        .map(|t| Ok((t.id.clone(), classifier.tweet_probability(t)?)))
        .collect()
}

/// Maximum severity score over the tweets linked to `cve_id`.
pub fn forecast_score(cve_id: &str, table: &LinkTable, scores: &TweetScores) -> Result<f64> {
    let mut best: Option<f64> = None;
    for t in table.tweets(cve_id) {
        let s = *scores
            .get(&t.tweet_id)
            .ok_or_else(|| Error::validation(format!("no severity score for tweet {}", t.tweet_id)))?;
        best = Some(best.map_or(s, |b: f64| b.max(s)));
    }
    best.ok_or_else(|| Error::validation(format!("{cve_id} has no linked tweets")))
}

pub fn volume_score(cve_id: &str, table: &LinkTable) -> Result<usize> {
    match table.tweets(cve_id).count() {
        0 => Err(Error::validation(format!("{cve_id} has no linked tweets"))),
        n => Ok(n),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedCve {
    pub cve_id: String,
    pub score: f64,
    pub first_tweet_date: NaiveDate,
    pub n_tweets: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub scorer: ScorerKind,
    pub entries: Vec<RankedCve>,
}

pub enum Scorer<'a> {
    Model(&'a TweetScores),
    Volume,
    TrueCvss(&'a NvdStore),
    /// Uniform random scores drawn in CVE id order under the seed.
    Random(u64),
}

impl Scorer<'_> {
    pub fn kind(&self) -> ScorerKind {
        match self {
            Scorer::Model(_) => ScorerKind::Model,
            Scorer::Volume => ScorerKind::Volume,
            Scorer::TrueCvss(_) => ScorerKind::TrueCvss,
            Scorer::Random(_) => ScorerKind::Random,
        }
    }
}

/// Orders by descending score; ties go to the earlier first tweet, then the smaller id.
pub fn rank(table: &LinkTable, scorer: &Scorer<'_>) -> Result<Ranking> {
    let mut rng = match scorer {
        Scorer::Random(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let mut entries = Vec::with_capacity(table.cve_count());
    for cve in table.cves() {
        let n_tweets = volume_score(cve, table)?;
        let score = match scorer {
            Scorer::Model(scores) => forecast_score(cve, table, scores)?,
            Scorer::Volume => n_tweets as f64,
            Scorer::TrueCvss(store) => store
                .get(cve)
                .ok_or_else(|| Error::validation(format!("{cve} is not in the NVD store")))?
                .primary_score()
                .unwrap_or(0.0),
            Scorer::Random(_) => rng.as_mut().unwrap().gen::<f64>(),
        };
        entries.push(RankedCve {
            cve_id: cve.to_string(),
            score,
            first_tweet_date: table.first_tweet_date(cve).expect("non-empty"),
            n_tweets,
        });
    }
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.first_tweet_date.cmp(&b.first_tweet_date))
            .then_with(|| a.cve_id.cmp(&b.cve_id))
    });
    Ok(Ranking {
        scorer: scorer.kind(),
        entries,
    })
}

impl Ranking {
    /// Items labelled by `positive`, scored by rank position so top-k follows the ranking order.
    fn positional_items(&self, positive: impl Fn(&str) -> bool) -> Vec<ScoredLabel> {
        let n = self.entries.len();
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| ScoredLabel::new(e.cve_id.clone(), (n - i) as f64, positive(&e.cve_id)))
            .collect()
    }

    fn scored_items(&self, positive: impl Fn(&str) -> bool) -> Vec<ScoredLabel> {
        self.entries
            .iter()
            .map(|e| ScoredLabel::new(e.cve_id.clone(), e.score, positive(&e.cve_id)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W, store: &NvdStore, exploits: Option<&ExploitSet>) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "rank",
            "cve_id",
            "score",
            "cvss_v3",
            "severe",
            "exploited",
            "first_tweet_date",
            "n_tweets",
        ])?;
        for (i, e) in self.entries.iter().enumerate() {
            let rec = store.get(&e.cve_id);
            let v3 = rec.and_then(|r| r.cvss_v3).map(|s| s.to_string()).unwrap_or_default();
            let severe = rec.map(|r| is_severe(r).to_string()).unwrap_or_default();
            let exploited = exploits
                .map(|x| x.contains(&e.cve_id).to_string())
                .unwrap_or_default();
            out.write_record([
                (i + 1).to_string(),
                e.cve_id.clone(),
                e.score.to_string(),
                v3,
                severe,
                exploited,
                e.first_tweet_date.format("%Y-%m-%d").to_string(),
                e.n_tweets.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<ranking>", e))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvssEvaluation {
    pub scorer: ScorerKind,
    /// Precision at each cutoff that does not exceed the ranking length.
    pub precision: BTreeMap<usize, f64>,
    pub auc: f64,
    pub n: usize,
    pub severe: usize,
}

pub fn evaluate_vs_cvss(ranking: &Ranking, store: &NvdStore) -> Result<CvssEvaluation> {
    if let Some(missing) = ranking.entries.iter().find(|e| store.get(&e.cve_id).is_none()) {
        return Err(Error::validation(format!("{} is not in the NVD store", missing.cve_id)));
    }
    let severe = |id: &str| store.get(id).is_some_and(is_severe);
    let positional = ranking.positional_items(severe);
    let mut precision = BTreeMap::new();
    for k in CUTOFFS.into_iter().filter(|&k| k <= positional.len()) {
        precision.insert(k, metrics::precision_at_k(&positional, k)?);
    }
    let scored = ranking.scored_items(severe);
    Ok(CvssEvaluation {
        scorer: ranking.scorer,
        precision,
        auc: metrics::average_precision(&scored)?,
        n: scored.len(),
        severe: scored.iter().filter(|s| s.positive).count(),
    })
}

/// Mean P@k of `trials` random orderings of the ranked CVEs, per cutoff.
pub fn random_baseline_vs_cvss(ranking: &Ranking, store: &NvdStore, trials: usize, seed: u64) -> Result<BTreeMap<usize, f64>> {
    let items = ranking.positional_items(|id| store.get(id).is_some_and(is_severe));
    let mut out = BTreeMap::new();
    for k in CUTOFFS.into_iter().filter(|&k| k <= items.len()) {
        out.insert(k, metrics::random_baseline(&items, k, trials, seed)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExploitEvaluation {
    pub scorer: ScorerKind,
    pub precision: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub exploited: usize,
}

/// Precision and recall of the top-k CVEs against a set of exploited CVEs.
/// Recall is relative to the exploited CVEs that appear in the ranking.
pub fn evaluate_vs_exploits(ranking: &Ranking, exploits: &ExploitSet) -> Result<ExploitEvaluation> {
    let items = ranking.positional_items(|id| exploits.contains(id));
    let mut precision = BTreeMap::new();
    let mut recall = BTreeMap::new();
    for k in CUTOFFS.into_iter().filter(|&k| k <= items.len()) {
        precision.insert(k, metrics::precision_at_k(&items, k)?);
        recall.insert(k, metrics::recall_at_k(&items, k)?);
    }
    if items.iter().all(|i| !i.positive) {
        return Err(Error::UndefinedRecall);
    }
    Ok(ExploitEvaluation {
        scorer: ranking.scorer,
        precision,
        recall,
        exploited: items.iter().filter(|i| i.positive).count(),
    })
}

/// What makes an account's forecast correct.
#[derive(Clone, Copy, Debug)]
pub enum Truth<'a> {
    CvssSevere,
    Exploited(&'a ExploitSet),
}

#[derive(Clone, Copy, Debug)]
pub struct AccountConfig<'a> {
    /// Accounts need at least this many qualifying tweets.
    pub min_tweets: usize,
    /// Tweets qualify when their severity score exceeds this.
    pub score_floor: f64,
    pub truth: Truth<'a>,
}

impl Default for AccountConfig<'_> {
    fn default() -> Self {
        AccountConfig {
            min_tweets: 6,
            score_floor: 0.5,
            truth: Truth::CvssSevere,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccountReliability {
    pub account: String,
    pub correct: usize,
    pub forecasts: usize,
    pub accuracy: f64,
}

/// Per-account accuracy of severe-threat warnings. A forecast is a distinct CVE
/// warned about by at least one qualifying tweet (linked, score above the floor).
pub fn account_reliability(
    table: &LinkTable,
    authors: &HashMap<String, String>,
    scores: &TweetScores,
    store: &NvdStore,
    config: &AccountConfig<'_>,
) -> Vec<AccountReliability> {
    let mut by_account: BTreeMap<&str, (usize, BTreeSet<&str>)> = BTreeMap::new();
    for (cve, t) in table.links() {
        let (Some(author), Some(&score)) = (authors.get(&t.tweet_id), scores.get(&t.tweet_id)) else {
            continue;
        };
        if score <= config.score_floor {
            continue;
        }
        let entry = by_account.entry(author).or_default();
        entry.0 += 1;
        entry.1.insert(cve);
    }
    let correct = |cve: &str| match config.truth {
        Truth::CvssSevere => store.get(cve).is_some_and(is_severe),
        Truth::Exploited(set) => set.contains(cve),
    };
    let mut out: Vec<AccountReliability> = by_account
        .into_iter()
        .filter(|(_, (n, _))| *n >= config.min_tweets)
        .map(|(account, (_, cves))| {
            let forecasts = cves.len();
            let right = cves.iter().filter(|c| correct(c)).count();
            AccountReliability {
                account: account.to_string(),
                correct: right,
                forecasts,
                accuracy: right as f64 / forecasts as f64,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then_with(|| b.forecasts.cmp(&a.forecasts))
            .then_with(|| a.account.cmp(&b.account))
    });
    out
}
