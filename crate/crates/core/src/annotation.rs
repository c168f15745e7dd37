//! Crowd vote aggregation, worker quality control and Cohen's kappa.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Existence,
    Severity,
}

impl Phase {
    /// Number of workers asked per tweet.
    pub fn expected_votes(self) -> usize {
        match self {
            Phase::Existence => 5,
            Phase::Severity => 10,
        }
    }

    /// A tweet is positive when strictly more than this many workers agree.
    pub fn threshold(self) -> usize {
        match self {
            Phase::Existence => 3,
            Phase::Severity => 6,
        }
    }

    pub fn positive_label(self) -> Label {
        match self {
            Phase::Existence => Label::ThreatTowardEntity,
            Phase::Severity => Label::Severe,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Existence => "existence",
            Phase::Severity => "severity",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "existence" => Ok(Phase::Existence),
            "severity" => Ok(Phase::Severity),
            other => Err(Error::validation(format!("unknown phase {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    ThreatTowardEntity,
    ThreatOtherEntity,
    NoThreat,
    Severe,
    Moderate,
}

impl Label {
    pub fn legal_for(self, phase: Phase) -> bool {
        match phase {
            Phase::Existence => matches!(
                self,
                Label::ThreatTowardEntity | Label::ThreatOtherEntity | Label::NoThreat
            ),
            Phase::Severity => matches!(self, Label::Severe | Label::Moderate | Label::NoThreat),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::ThreatTowardEntity => "threat_toward_entity",
            Label::ThreatOtherEntity => "threat_other_entity",
            Label::NoThreat => "no_threat",
            Label::Severe => "severe",
            Label::Moderate => "moderate",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "threat_toward_entity" | "toward" => Label::ThreatTowardEntity,
            "threat_other_entity" | "other" => Label::ThreatOtherEntity,
            "no_threat" | "none" => Label::NoThreat,
            "severe" => Label::Severe,
            "moderate" => Label::Moderate,
            other => return Err(Error::validation(format!("unknown label {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub worker_id: String,
    pub tweet_id: String,
    pub phase: Phase,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub tweet_id: String,
    pub phase: Phase,
    pub positive_votes: usize,
    pub total_votes: usize,
    pub label: bool,
}

fn check_unique(votes: &[Vote]) -> Result<()> {
    let mut seen = HashSet::new();
    for v in votes {
        if !v.label.legal_for(v.phase) {
            return Err(Error::validation(format!(
                "label {:?} illegal for phase {}",
                v.label, v.phase
            )));
        }
        if !seen.insert((&v.worker_id, &v.tweet_id, v.phase)) {
            return Err(Error::validation(format!(
                "worker {} voted twice on tweet {} ({})",
                v.worker_id, v.tweet_id, v.phase
            )));
        }
    }
    Ok(())
}

/// Resolves the votes of one phase into per-tweet boolean labels, sorted by tweet id.
/// Under `strict`, every tweet must carry exactly the phase's expected vote count.
pub fn aggregate(votes: &[Vote], phase: Phase, strict: bool) -> Result<Vec<AggregatedLabel>> {
    check_unique(votes)?;
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for v in votes.iter().filter(|v| v.phase == phase) {
        let e = tally.entry(&v.tweet_id).or_default();
        e.1 += 1;
        if v.label == phase.positive_label() {
            e.0 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(tweet_id, (pos, total))| {
            if strict && total != phase.expected_votes() {
                return Err(Error::validation(format!(
                    "tweet {tweet_id}: {total} {phase} votes, expected {}",
                    phase.expected_votes()
                )));
            }
            Ok(AggregatedLabel {
                tweet_id: tweet_id.to_string(),
                phase,
                positive_votes: pos,
                total_votes: total,
                label: pos > phase.threshold(),
            })
        })
        .collect()
}

type Item<'a> = (&'a str, Phase);

fn votes_by_item(votes: &[Vote]) -> HashMap<Item<'_>, Vec<&Vote>> {
    let mut by_item: HashMap<Item<'_>, Vec<&Vote>> = HashMap::new();
    for v in votes {
        by_item.entry((v.tweet_id.as_str(), v.phase)).or_default().push(v);
    }
    by_item
}

/// Unique most frequent label, `None` on a tie or when there are no votes.
fn strict_majority<'a>(labels: impl Iterator<Item = &'a Label>) -> Option<Label> {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    let top = *counts.values().max()?;
    let mut winners = counts.iter().filter(|(_, &c)| c == top);
    let (label, _) = winners.next()?;
    winners.next().is_none().then_some(*label)
}

fn agreement_counts(by_item: &HashMap<Item<'_>, Vec<&Vote>>, worker_id: &str) -> (usize, usize) {
    let mut matched = 0;
    let mut evaluable = 0;
    for item_votes in by_item.values() {
        let Some(mine) = item_votes.iter().find(|v| v.worker_id == worker_id) else {
            continue;
        };
        let others = item_votes
            .iter()
            .filter(|v| v.worker_id != worker_id)
            .map(|v| &v.label);
        if let Some(majority) = strict_majority(others) {
            evaluable += 1;
            if majority == mine.label {
                matched += 1;
            }
        }
    }
    (matched, evaluable)
}

/// Fraction of a worker's votes that match the majority of the other workers on
/// the same tweet and phase. Tweets where the others tie are skipped.
pub fn worker_agreement(votes: &[Vote], worker_id: &str) -> Result<f64> {
    let (matched, evaluable) = agreement_counts(&votes_by_item(votes), worker_id);
    if evaluable == 0 {
        return Err(Error::EmptyEvidence(format!(
            "worker {worker_id} has no votes with a defined majority"
        )));
    }
    Ok(matched as f64 / evaluable as f64)
}

/// Per-worker agreement rates; workers without evaluable votes are omitted.
pub fn worker_agreements(votes: &[Vote]) -> BTreeMap<String, f64> {
    let by_item = votes_by_item(votes);
    let workers: HashSet<&str> = votes.iter().map(|v| v.worker_id.as_str()).collect();
    workers
        .into_iter()
        .filter_map(|w| {
            let (m, e) = agreement_counts(&by_item, w);
            (e > 0).then(|| (w.to_string(), m as f64 / e as f64))
        })
        .collect()
}

/// Single pass: drops every vote by a worker whose agreement is below `min_agreement`.
pub fn filter_workers(votes: &[Vote], min_agreement: f64) -> Vec<Vote> {
    let rates = worker_agreements(votes);
    votes
        .iter()
        .filter(|v| rates.get(&v.worker_id).is_none_or(|&r| r >= min_agreement))
        .cloned()
        .collect()
}

pub fn cohens_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "label sequences differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::validation("empty label sequences"));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ma: HashMap<&T, usize> = HashMap::new();
    let mut mb: HashMap<&T, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let chance: f64 = ma
        .iter()
        .map(|(k, &ca)| ca as f64 * *mb.get(k).unwrap_or(&0) as f64)
        .sum::<f64>()
        / (n * n);
    if (1.0 - chance).abs() < 1e-15 {
        return Ok(if observed == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((observed - chance) / (1.0 - chance))
}

#[derive(Deserialize)]
struct VoteRow {
    worker_id: String,
    tweet_id: String,
    phase: String,
    label: String,
}

/// Reads `worker_id,tweet_id,phase,label` CSV.
pub fn read_votes(path: &Path) -> Result<Vec<Vote>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<VoteRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let phase: Phase = row.phase.parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        let label: Label = row.label.parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        if !label.legal_for(phase) {
            return Err(Error::parse(path, line, format!("label {} illegal for {phase}", row.label)));
        }
        out.push(Vote {
            worker_id: row.worker_id,
            tweet_id: row.tweet_id,
            phase,
            label,
        });
    }
    Ok(out)
}

pub fn write_votes<W: Write>(w: W, votes: &[Vote]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["worker_id", "tweet_id", "phase", "label"])?;
    for v in votes {
        out.write_record([
            v.worker_id.as_str(),
            v.tweet_id.as_str(),
            &v.phase.to_string(),
            &v.label.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<votes>", e))?;
    Ok(())
}

pub fn write_labels<W: Write>(mut w: W, labels: &[AggregatedLabel]) -> Result<()> {
    for l in labels {
        writeln!(w, "{}", serde_json::to_string(l)?).map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<AggregatedLabel>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?);
    }
    Ok(out)
}
