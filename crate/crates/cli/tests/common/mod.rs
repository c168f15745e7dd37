//! Synthetic security-tweet generator shared by the integration tests.
//!
//! Tweets are filler words plus, with probability `cue_rate`, one phrase from
//! the lexicon of their own class and otherwise one from the opposite class.
//! Phrases are multi-word so bag-of-n-gram models (orders 2..4) can see them.
//!
//! CVEs are severe with probability `severe_rate`. Severe CVEs draw CVSS v3
//! scores uniformly from [7.0, 10.0] and 3 + U{0..4} tweets; the rest draw from
//! [2.0, 6.9] and 3 + U{0..3} tweets, so tweet volume carries a weaker signal
//! than tweet language. Every CVE tweet names its CVE in the text and is posted
//! 10 to 60 days before publication.

#![allow(dead_code)]

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use threatcast::corpus::{parse_timestamp, EntitySpan, Tweet};
use threatcast::nvd::{parse_date, CveRecord};

pub const SEVERE_PHRASES: &[&str] = &[
    "remote code execution",
    "patch now",
    "actively exploited in the wild",
    "critical flaw",
    "wormable bug",
    "full system takeover",
];

pub const MODERATE_PHRASES: &[&str] = &[
    "minor issue",
    "low impact",
    "requires local access",
    "limited information disclosure",
    "hard to exploit",
    "cosmetic bug",
];

pub const FILLER: &[&str] = &[
    "security", "update", "researchers", "found", "a", "the", "in", "vulnerability", "report", "vendor",
    "software", "users", "advisory", "released", "bug", "new", "version", "team", "issue", "details",
    "blog", "today", "via", "read", "more", "about", "this", "server", "browser", "library", "kernel",
    "android", "windows", "linux", "firmware", "router", "app", "plugin", "attackers", "could",
];

pub const ENTITIES: &[&str] = &["microsoft", "apple", "google", "cisco", "oracle", "adobe", "linux", "android"];

pub fn phrase_text(rng: &mut impl Rng, severe: bool, cue_rate: f64) -> String {
    let own = rng.gen_bool(cue_rate);
    let pool = if severe == own { SEVERE_PHRASES } else { MODERATE_PHRASES };
    let phrase = pool.choose(rng).unwrap();
    let n = rng.gen_range(6..=12);
    let mut words: Vec<String> = (0..n).map(|_| FILLER.choose(rng).unwrap().to_string()).collect();
    let at = rng.gen_range(0..=words.len());
    words.insert(at, phrase.to_string());
    words.join(" ")
}

/// Tweet whose text starts with an entity name, tagged as an entity span.
pub fn tweet(id: &str, date: &str, author: &str, entity: &str, body: &str) -> Tweet {
    let text = format!("{entity}: {body}");
    Tweet {
        id: id.to_string(),
        posted_at: parse_timestamp(&format!("{date}T12:00:00Z")).unwrap(),
        author: author.to_string(),
        text,
        urls: Vec::new(),
        entities: vec![EntitySpan {
            start: 0,
            end: entity.len(),
            surface: entity.to_string(),
        }],
    }
}

pub fn day(offset: i64) -> String {
    let base = parse_date("2018-01-01").unwrap();
    (base + chrono::Duration::days(offset)).format("%Y-%m-%d").to_string()
}

/// Labelled tweets for training a severity classifier.
pub fn labelled_tweets(rng: &mut impl Rng, n: usize, prefix: &str, cue_rate: f64) -> Vec<(Tweet, bool)> {
    (0..n)
        .map(|i| {
            let severe = i % 2 == 0;
            let entity = ENTITIES.choose(rng).unwrap();
            let body = phrase_text(rng, severe, cue_rate);
            (tweet(&format!("{prefix}{i:05}"), &day(rng.gen_range(0..300)), "trainer", entity, &body), severe)
        })
        .collect()
}

pub struct CveWorld {
    pub records: Vec<CveRecord>,
    pub tweets: Vec<Tweet>,
    pub severe: Vec<bool>,
}

pub fn cve_world(rng: &mut impl Rng, n_cves: usize, severe_rate: f64, cue_rate: f64, authors: &[&str]) -> CveWorld {
    let mut records = Vec::new();
    let mut tweets = Vec::new();
    let mut severe_flags = Vec::new();
    for c in 0..n_cves {
        let severe = rng.gen_bool(severe_rate);
        let score: f64 = if severe { rng.gen_range(7.0..=10.0) } else { rng.gen_range(2.0..=6.9) };
        let id = format!("CVE-2018-{:05}", 10000 + c);
        let published = 90 + c as i64;
        records.push(CveRecord {
            cve_id: id.clone(),
            published_at: parse_date(&day(published)).unwrap(),
            description: String::new(),
            cvss_v2: None,
            cvss_v3: Some((score * 10.0).round() / 10.0),
        });
        severe_flags.push(severe);
        let n = 3 + if severe { rng.gen_range(0..=4) } else { rng.gen_range(0..=3) };
        for t in 0..n {
            let entity = ENTITIES.choose(rng).unwrap();
            let mut body = phrase_text(rng, severe, cue_rate);
            let _ = write!(body, " {id}");
            let author = authors.choose(rng).unwrap();
            let posted = published - rng.gen_range(10..=60);
            tweets.push(tweet(&format!("c{c:04}t{t:02}"), &day(posted), author, entity, &body));
        }
    }
    CveWorld {
        records,
        tweets,
        severe: severe_flags,
    }
}
