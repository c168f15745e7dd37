//! Word-level contrasts between severe and moderate tweets, and
//! tweet-to-publication delay statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linker::LinkTable;
use crate::nvd::NvdStore;

/// Additive smoothing applied to every count.
pub const SMOOTHING: f64 = 0.5;
pub const DELAY_WINDOW_DAYS: i64 = 60;

/// Smoothed log-odds ratio of a token occurring `a` times out of `total_a` in
/// one group versus `b` of `total_b` in the other.
pub fn log_odds(a: u64, total_a: u64, b: u64, total_b: u64) -> Result<f64> {
    if a > total_a || b > total_b {
        return Err(Error::validation("token count exceeds group total"));
    }
    let s = SMOOTHING;
    let (a, ta, b, tb) = (a as f64, total_a as f64, b as f64, total_b as f64);
    Ok(((a + s) / (ta - a + s)).ln() - ((b + s) / (tb - b + s)).ln())
}

/// Document frequency of every token (each document counts a token once).
pub fn document_frequency<S: AsRef<str>>(docs: &[Vec<S>]) -> BTreeMap<String, u64> {
    let mut df = BTreeMap::new();
    for doc in docs {
        let uniq: HashSet<&str> = doc.iter().map(|t| t.as_ref()).collect();
        for t in uniq {
            *df.entry(t.to_string()).or_insert(0) += 1;
        }
    }
    df
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenScore {
    pub token: String,
    pub log_odds: f64,
}

/// Log-odds of each token appearing in a severe versus a moderate document.
/// Sorted by log-odds descending, then token.
pub fn contrast<S: AsRef<str>>(severe: &[Vec<S>], moderate: &[Vec<S>], only: Option<&BTreeSet<String>>) -> Result<Vec<TokenScore>> {
    if severe.is_empty() || moderate.is_empty() {
        return Err(Error::EmptyEvidence("both groups need at least one document".into()));
    }
    let ds = document_frequency(severe);
    let dm = document_frequency(moderate);
    let vocab: BTreeSet<&String> = ds.keys().chain(dm.keys()).collect();
    let mut out = Vec::new();
    for tok in vocab {
        if only.is_some_and(|set| !set.contains(tok)) {
            continue;
        }
        let a = ds.get(tok).copied().unwrap_or(0);
        let b = dm.get(tok).copied().unwrap_or(0);
        out.push(TokenScore {
            token: tok.clone(),
            log_odds: log_odds(a, severe.len() as u64, b, moderate.len() as u64)?,
        });
    }
    out.sort_by(|x, y| y.log_odds.total_cmp(&x.log_odds).then_with(|| x.token.cmp(&y.token)));
    Ok(out)
}

/// Reads a lexicon with one token per line, optionally followed by a tab and a
/// subjectivity flag (`true`/`false`, `1`/`0`, `subjective`/`objective`).
/// Entries flagged non-subjective are dropped. Blank lines and `#` comments are skipped.
pub fn read_lexicon(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let token = parts.next().unwrap_or("").trim().to_lowercase();
        let subjective = match parts.next().map(|f| f.trim().to_ascii_lowercase()) {
            None => true,
            Some(f) => match f.as_str() {
                "true" | "1" | "subjective" | "yes" => true,
                "false" | "0" | "objective" | "no" => false,
                _ => return Err(Error::parse(path, n + 1, format!("bad subjectivity flag {f:?}"))),
            },
        };
        if subjective && !token.is_empty() {
            out.insert(token);
        }
    }
    Ok(out)
}

/// The top `k` lexicon adjectives ranked by association with severe documents.
pub fn rank_adjectives<S: AsRef<str>>(
    severe: &[Vec<S>],
    moderate: &[Vec<S>],
    lexicon: &BTreeSet<String>,
    k: usize,
) -> Result<Vec<TokenScore>> {
    let mut out = contrast(severe, moderate, Some(lexicon))?;
    out.truncate(k);
    Ok(out)
}

pub fn write_scores_csv<W: Write>(w: W, scores: &[TokenScore]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["token", "log_odds"])?;
    for s in scores {
        out.write_record([s.token.clone(), s.log_odds.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DelayStats {
    pub n: usize,
    pub median_days: i64,
    pub fraction_within_window: f64,
    pub window_days: i64,
    pub min_days: i64,
    pub max_days: i64,
}

/// Lower median of the leads and the share at or below the window.
pub fn delay_stats(leads: &[i64], window_days: i64) -> Result<DelayStats> {
    if leads.is_empty() {
        return Err(Error::EmptyEvidence("no lead times".into()));
    }
    let mut v = leads.to_vec();
    v.sort_unstable();
    let within = v.iter().filter(|&&d| d <= window_days).count();
    Ok(DelayStats {
        n: v.len(),
        median_days: v[(v.len() - 1) / 2],
        fraction_within_window: within as f64 / v.len() as f64,
        window_days,
        min_days: v[0],
        max_days: v[v.len() - 1],
    })
}

/// Days from each CVE's first linked tweet to its NVD publication.
/// CVEs absent from the store are skipped.
pub fn cve_leads(table: &LinkTable, store: &NvdStore) -> Vec<(String, i64)> {
    table
        .cves()
        .filter_map(|cve| {
            let first = table.first_tweet_date(cve)?;
            let rec = store.get(cve)?;
            Some((cve.to_string(), (rec.published_at - first).num_days()))
        })
        .collect()
}

/// Delay statistics over linked CVEs whose lead is at least `min_lead` days.
pub fn table_delay_stats(table: &LinkTable, store: &NvdStore, min_lead: i64, window_days: i64) -> Result<DelayStats> {
    let leads: Vec<i64> = cve_leads(table, store)
        .into_iter()
        .map(|(_, d)| d)
        .filter(|&d| d >= min_lead)
        .collect();
    delay_stats(&leads, window_days)
}
