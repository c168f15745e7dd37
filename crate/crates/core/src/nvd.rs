//! NVD records, CVSS severity bands and exploit ground-truth lists.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const SEVERE_CUTOFF: f64 = 7.0;

fn id_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^CVE-[0-9]{4}-[0-9]{4,}$").unwrap())
}

/// Upper-cases and validates a CVE identifier.
pub fn canonical_id(raw: &str) -> Result<String> {
    let id = raw.trim().to_ascii_uppercase();
    if id_pattern().is_match(&id) {
        Ok(id)
    } else {
        Err(Error::validation(format!("malformed CVE id {raw:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CvssVersion {
    V2,
    V3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeverityCategory {
    None,
    Low,
    Medium,
    High,
    Critical,
}

impl fmt::Display for SeverityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeverityCategory::None => "NONE",
            SeverityCategory::Low => "LOW",
            SeverityCategory::Medium => "MEDIUM",
            SeverityCategory::High => "HIGH",
            SeverityCategory::Critical => "CRITICAL",
        })
    }
}

/// Qualitative NVD band of a base score.
///
/// v2: Low 0.0-3.9, Medium 4.0-6.9, High 7.0-10.0.
/// v3: None 0.0, Low 0.1-3.9, Medium 4.0-6.9, High 7.0-8.9, Critical 9.0-10.0.
pub fn categorize(score: f64, version: CvssVersion) -> Result<SeverityCategory> {
    if !(0.0..=10.0).contains(&score) {
        return Err(Error::validation(format!("CVSS score {score} outside [0, 10]")));
    }
    use SeverityCategory::*;
    Ok(match version {
        CvssVersion::V2 => match score {
            s if s < 4.0 => Low,
            s if s < 7.0 => Medium,
            _ => High,
        },
        CvssVersion::V3 => match score {
            s if s == 0.0 => None,
            s if s < 4.0 => Low,
            s if s < 7.0 => Medium,
            s if s < 9.0 => High,
            _ => Critical,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CveRecord {
    pub cve_id: String,
    #[serde(rename = "published", with = "date_format")]
    pub published_at: NaiveDate,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub cvss_v2: Option<f64>,
    #[serde(default)]
    pub cvss_v3: Option<f64>,
}

mod date_format {
    use chrono::NaiveDate;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &NaiveDate, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&d.format("%Y-%m-%d").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_date(&raw).map_err(serde::de::Error::custom)
    }
}

/// Accepts `YYYY-MM-DD`, an RFC 3339 timestamp, or an NVD-style `YYYY-MM-DDTHH:MM[:SS[.fff]]`
/// without offset. Timestamps are reduced to their UTC date.
pub fn parse_date(raw: &str) -> std::result::Result<NaiveDate, String> {
    let raw = raw.trim();
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Ok(d);
    }
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Ok(t.with_timezone(&chrono::Utc).date_naive());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%MZ", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = chrono::NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(t.date());
        }
    }
    Err(format!("bad date {raw:?}"))
}

impl CveRecord {
    pub fn validate(&self) -> Result<()> {
        if !id_pattern().is_match(&self.cve_id) {
            return Err(Error::validation(format!("malformed CVE id {:?}", self.cve_id)));
        }
        for s in [self.cvss_v2, self.cvss_v3].into_iter().flatten() {
            if !(0.0..=10.0).contains(&s) {
                return Err(Error::validation(format!("{}: CVSS score {s} outside [0, 10]", self.cve_id)));
            }
        }
        Ok(())
    }

    /// v3 score when present, else v2.
    pub fn primary_score(&self) -> Option<f64> {
        self.cvss_v3.or(self.cvss_v2)
    }

    pub fn category(&self) -> Option<SeverityCategory> {
        match (self.cvss_v3, self.cvss_v2) {
            (Some(s), _) => categorize(s, CvssVersion::V3).ok(),
            (None, Some(s)) => categorize(s, CvssVersion::V2).ok(),
            _ => None,
        }
    }
}

/// v3 score >= 7.0, falling back to v2 >= 7.0 when v3 is absent. Unscored records are not severe.
pub fn is_severe(record: &CveRecord) -> bool {
    record.primary_score().is_some_and(|s| s >= SEVERE_CUTOFF)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NvdStore {
    records: BTreeMap<String, CveRecord>,
}

impl NvdStore {
    pub fn get(&self, id: &str) -> Option<&CveRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &CveRecord> {
        self.records.values()
    }

    /// Keeps the entry with the later publication date; on equal dates the newer insert wins.
    pub fn insert(&mut self, rec: CveRecord) {
        match self.records.get(&rec.cve_id) {
            Some(old) if old.published_at > rec.published_at => {}
            _ => {
                self.records.insert(rec.cve_id.clone(), rec);
            }
        }
    }

    pub fn from_records(recs: impl IntoIterator<Item = CveRecord>) -> Self {
        let mut s = NvdStore::default();
        for r in recs {
            s.insert(r);
        }
        s
    }

    /// One JSON record per line in id order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.records.values() {
            writeln!(w, "{}", serde_json::to_string(r)?).map_err(|e| Error::io("<nvd output>", e))?;
        }
        Ok(())
    }
}

/// Result of a tolerant load: the parsed data plus one error per rejected line.
#[derive(Debug)]
pub struct Loaded<T> {
    pub value: T,
    pub errors: Vec<Error>,
}

pub fn parse_record(line: &str) -> std::result::Result<CveRecord, String> {
    let mut rec: CveRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    rec.cve_id = canonical_id(&rec.cve_id).map_err(|e| e.to_string())?;
    rec.validate().map_err(|e| e.to_string())?;
    Ok(rec)
}

pub fn load_nvd(paths: &[&Path]) -> Result<Loaded<NvdStore>> {
    let mut store = NvdStore::default();
    let mut errors = Vec::new();
    for &path in paths {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_record(&line) {
                Ok(rec) => store.insert(rec),
                Err(m) => {
                    log::warn!("{}:{}: {m}", path.display(), n + 1);
                    errors.push(Error::parse(path, n + 1, m));
                }
            }
        }
    }
    Ok(Loaded { value: store, errors })
}

pub type ExploitSet = BTreeSet<String>;

/// Union of newline-delimited CVE lists; `#` starts a comment.
pub fn load_exploits(paths: &[&Path]) -> Result<Loaded<ExploitSet>> {
    let mut set = ExploitSet::new();
    let mut errors = Vec::new();
    for &path in paths {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            match canonical_id(body) {
                Ok(id) => {
                    set.insert(id);
                }
                Err(e) => {
                    log::warn!("{}:{}: {e}", path.display(), n + 1);
                    errors.push(Error::parse(path, n + 1, e.to_string()));
                }
            }
        }
    }
    Ok(Loaded { value: set, errors })
}

fn score_at(v: &Value, path: &[&str]) -> Option<f64> {
    path.iter().try_fold(v, |cur, key| match key.parse::<usize>() {
        Ok(i) => cur.get(i),
        Err(_) => cur.get(*key),
    })?
    .as_f64()
}

fn english_description(list: Option<&Value>) -> String {
    list.and_then(Value::as_array)
        .and_then(|items| {
            items
                .iter()
                .find(|d| d.get("lang").and_then(Value::as_str) == Some("en"))
                .or_else(|| items.first())
        })
        .and_then(|d| d.get("value"))
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string()
}

/// Converts an official NVD JSON document (1.1 data feed with `CVE_Items`, or
/// API 2.0 response with `vulnerabilities`) into records. Entries that cannot
/// be converted are skipped.
pub fn convert_official_feed(doc: &Value) -> Vec<CveRecord> {
    let mut out = Vec::new();
    if let Some(items) = doc.get("CVE_Items").and_then(Value::as_array) {
        for item in items {
            let id = item.pointer("/cve/CVE_data_meta/ID").and_then(Value::as_str);
            let published = item.get("publishedDate").and_then(Value::as_str);
            let (Some(id), Some(published)) = (id, published) else { continue };
            let (Ok(cve_id), Ok(published_at)) = (canonical_id(id), parse_date(published)) else {
                continue;
            };
            out.push(CveRecord {
                cve_id,
                published_at,
                description: english_description(item.pointer("/cve/description/description_data")),
                cvss_v2: score_at(item, &["impact", "baseMetricV2", "cvssV2", "baseScore"]),
                cvss_v3: score_at(item, &["impact", "baseMetricV3", "cvssV3", "baseScore"]),
            });
        }
    }
    if let Some(items) = doc.get("vulnerabilities").and_then(Value::as_array) {
        for item in items {
            let Some(cve) = item.get("cve") else { continue };
            let id = cve.get("id").and_then(Value::as_str);
            let published = cve.get("published").and_then(Value::as_str);
            let (Some(id), Some(published)) = (id, published) else { continue };
            let (Ok(cve_id), Ok(published_at)) = (canonical_id(id), parse_date(published)) else {
                continue;
            };
            let v3 = score_at(cve, &["metrics", "cvssMetricV31", "0", "cvssData", "baseScore"])
                .or_else(|| score_at(cve, &["metrics", "cvssMetricV30", "0", "cvssData", "baseScore"]));
            out.push(CveRecord {
                cve_id,
                published_at,
                description: english_description(cve.get("descriptions")),
                cvss_v2: score_at(cve, &["metrics", "cvssMetricV2", "0", "cvssData", "baseScore"]),
                cvss_v3: v3,
            });
        }
    }
    out
}
