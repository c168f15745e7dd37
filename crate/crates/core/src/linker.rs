//! Matching tweets to CVE records through identifiers in the tweet text, its
//! URLs, or the pages those URLs point to, followed by the forecasting time window.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::corpus::{format_timestamp, parse_timestamp, Tweet};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::nvd::NvdStore;

fn cve_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bCVE-[0-9]{4}-[0-9]{4,}").unwrap())
}

/// Upper-cased, deduplicated CVE identifiers mentioned in `text`.
pub fn extract_cves(text: &str) -> BTreeSet<String> {
    cve_pattern()
        .find_iter(text)
        .map(|m| m.as_str().to_ascii_uppercase())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Page {
    /// URL after redirects.
    pub final_url: String,
    pub text: String,
}

/// Resolves a URL to the text of the page it points to.
pub trait PageProvider: Sync {
    /// `Ok(None)` when the URL is unknown to the provider.
    fn resolve(&self, url: &str) -> Result<Option<Page>>;
}

/// Directory of cached pages described by `manifest.tsv`:
/// `url<TAB>content-path[<TAB>final-url]`, paths relative to the directory.
#[derive(Debug)]
pub struct OfflineCache {
    dir: PathBuf,
    entries: Mutex<HashMap<String, (PathBuf, Option<String>)>>,
}

pub const MANIFEST: &str = "manifest.tsv";

impl OfflineCache {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = dir.join(MANIFEST);
        let mut entries = HashMap::new();
        if manifest.exists() {
            let file = std::fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
            for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&manifest, e))?;
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut cols = line.split('\t');
                let (Some(url), Some(path)) = (cols.next(), cols.next()) else {
                    return Err(Error::parse(&manifest, n + 1, "expected url<TAB>path"));
                };
                let final_url = cols.next().filter(|s| !s.is_empty()).map(String::from);
                entries.insert(url.to_string(), (PathBuf::from(path), final_url));
            }
        }
        Ok(OfflineCache {
            dir: dir.to_path_buf(),
            entries: Mutex::new(entries),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn contains(&self, url: &str) -> bool {
        self.entries.lock().unwrap().contains_key(url)
    }

    /// Stores a page under a content-addressed file name and appends it to the manifest.
    pub fn store(&self, url: &str, page: &Page) -> Result<()> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(url) {
            return Ok(());
        }
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let rel = PathBuf::from(format!("pages/{}.txt", &sha256_hex(url.as_bytes())[..32]));
        let abs = self.dir.join(&rel);
        std::fs::create_dir_all(abs.parent().unwrap()).map_err(|e| Error::io(&abs, e))?;
        std::fs::write(&abs, &page.text).map_err(|e| Error::io(&abs, e))?;
        let manifest = self.dir.join(MANIFEST);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest)
            .map_err(|e| Error::io(&manifest, e))?;
        writeln!(f, "{url}\t{}\t{}", rel.display(), page.final_url).map_err(|e| Error::io(&manifest, e))?;
        entries.insert(url.to_string(), (rel, Some(page.final_url.clone())));
        Ok(())
    }
}

impl PageProvider for OfflineCache {
    fn resolve(&self, url: &str) -> Result<Option<Page>> {
        let Some((rel, final_url)) = self.entries.lock().unwrap().get(url).cloned() else {
            return Ok(None);
        };
        let path = self.dir.join(rel);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(Page {
            final_url: final_url.unwrap_or_else(|| url.to_string()),
            text,
        }))
    }
}

/// Per-key counting semaphore.
#[derive(Default)]
struct HostSlots {
    busy: Mutex<HashMap<String, usize>>,
    freed: Condvar,
}

impl HostSlots {
    fn acquire(&self, host: &str, limit: usize) {
        let mut busy = self.busy.lock().unwrap();
        while busy.get(host).copied().unwrap_or(0) >= limit {
            busy = self.freed.wait(busy).unwrap();
        }
        *busy.entry(host.to_string()).or_default() += 1;
    }

    fn release(&self, host: &str) {
        let mut busy = self.busy.lock().unwrap();
        if let Some(n) = busy.get_mut(host) {
            *n -= 1;
        }
        self.freed.notify_all();
    }
}

/// Fetches pages over HTTP(S), following redirects, and writes every body
/// into an offline cache so later runs can be replayed without the network.
pub struct LiveFetcher {
    agent: ureq::Agent,
    cache: OfflineCache,
    per_host: usize,
    slots: HostSlots,
}

impl LiveFetcher {
    pub const TIMEOUT: Duration = Duration::from_secs(10);
    pub const PER_HOST: usize = 2;

    pub fn new(cache: OfflineCache) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Self::TIMEOUT))
            .max_redirects(10)
            .build();
        LiveFetcher {
            agent: config.into(),
            cache,
            per_host: Self::PER_HOST,
            slots: HostSlots::default(),
        }
    }

    pub fn cache(&self) -> &OfflineCache {
        &self.cache
    }

    fn host_of(url: &str) -> String {
        url.split("://")
            .nth(1)
            .unwrap_or(url)
            .split(['/', '?', '#'])
            .next()
            .unwrap_or("")
            .to_ascii_lowercase()
    }

    fn fetch(&self, url: &str) -> Result<Page> {
        use ureq::ResponseExt;
        let fail = |e: ureq::Error| Error::Fetch {
            url: url.to_string(),
            message: e.to_string(),
        };
        let mut resp = self.agent.get(url).call().map_err(fail)?;
        let final_url = resp.get_uri().to_string();
        let text = resp.body_mut().read_to_string().map_err(fail)?;
        Ok(Page { final_url, text })
    }
}

impl PageProvider for LiveFetcher {
    fn resolve(&self, url: &str) -> Result<Option<Page>> {
        if let Some(p) = self.cache.resolve(url)? {
            return Ok(Some(p));
        }
        let host = Self::host_of(url);
        self.slots.acquire(&host, self.per_host);
        let fetched = self.fetch(url);
        self.slots.release(&host);
        let page = fetched?;
        self.cache.store(url, &page)?;
        Ok(Some(page))
    }
}

/// Remembers the first resolution of every URL, so a provider behaves as a pure
/// function of the URL for the lifetime of this wrapper. Failures resolve to `None`.
pub struct Memoized<'a, P: ?Sized> {
    inner: &'a P,
    seen: Mutex<HashMap<String, Option<Page>>>,
}

impl<'a, P: PageProvider + ?Sized> Memoized<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Memoized {
            inner,
            seen: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, url: &str) -> Option<Page> {
        if let Some(hit) = self.seen.lock().unwrap().get(url) {
            return hit.clone();
        }
        let page = match self.inner.resolve(url) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("treating {url} as empty: {e}");
                None
            }
        };
        self.seen
            .lock()
            .unwrap()
            .entry(url.to_string())
            .or_insert(page)
            .clone()
    }

    /// Resolves `urls` on up to `threads` workers. Completion order does not matter.
    pub fn prefetch(&self, urls: &[String], threads: usize) {
        let queue = Mutex::new(urls.iter());
        std::thread::scope(|s| {
            for _ in 0..threads.max(1) {
                s.spawn(|| loop {
                    let next = queue.lock().unwrap().next();
                    match next {
                        Some(u) => {
                            self.get(u);
                        }
                        None => break,
                    }
                });
            }
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkStage {
    /// CVE named in the tweet text.
    Text,
    /// CVE named in a URL string (as posted or after redirects).
    Url,
    /// CVE found in a linked page.
    Page,
}

impl LinkStage {
    /// Explicit mentions are exempt from the maximum lead constraint.
    pub fn is_explicit(self) -> bool {
        matches!(self, LinkStage::Text | LinkStage::Url)
    }
}

impl fmt::Display for LinkStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkStage::Text => "text",
            LinkStage::Url => "url",
            LinkStage::Page => "page",
        })
    }
}

impl FromStr for LinkStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(LinkStage::Text),
            "url" => Ok(LinkStage::Url),
            "page" => Ok(LinkStage::Page),
            other => Err(Error::validation(format!("unknown link stage {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Link {
    pub cve_id: String,
    pub stage: LinkStage,
}

/// Links one tweet to a single CVE, or to nothing when no source or more than one CVE is found.
pub fn link_tweet<P: PageProvider + ?Sized>(tweet: &Tweet, pages: &Memoized<'_, P>) -> Option<Link> {
    let in_text = extract_cves(&tweet.text);
    let mut in_urls = BTreeSet::new();
    let mut resolved = Vec::new();
    for url in &tweet.urls {
        in_urls.extend(extract_cves(url));
        if let Some(page) = pages.get(url) {
            in_urls.extend(extract_cves(&page.final_url));
            resolved.push(page);
        }
    }

    let explicit: BTreeSet<&String> = in_text.iter().chain(&in_urls).collect();
    if !explicit.is_empty() {
        if explicit.len() != 1 {
            return None;
        }
        let cve_id = (*explicit.iter().next().unwrap()).clone();
        let stage = if in_text.contains(&cve_id) {
            LinkStage::Text
        } else {
            LinkStage::Url
        };
        return Some(Link { cve_id, stage });
    }

    let mut from_pages = BTreeSet::new();
    for page in &resolved {
        let found = extract_cves(&page.text);
        if found.len() == 1 {
            from_pages.extend(found);
        }
    }
    if from_pages.len() == 1 {
        return Some(Link {
            cve_id: from_pages.into_iter().next().unwrap(),
            stage: LinkStage::Page,
        });
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkedTweet {
    pub tweet_id: String,
    pub posted_at: DateTime<Utc>,
    pub stage: LinkStage,
}

/// CVE to linked tweets, and tweet to CVE. A tweet belongs to at most one CVE.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkTable {
    by_cve: BTreeMap<String, BTreeMap<String, LinkedTweet>>,
    by_tweet: BTreeMap<String, String>,
}

impl LinkTable {
    pub fn insert(&mut self, cve_id: &str, linked: LinkedTweet) -> Result<()> {
        match self.by_tweet.get(&linked.tweet_id) {
            Some(existing) if existing != cve_id => {
                return Err(Error::validation(format!(
                    "tweet {} already linked to {existing}",
                    linked.tweet_id
                )))
            }
            _ => {}
        }
        self.by_tweet.insert(linked.tweet_id.clone(), cve_id.to_string());
        self.by_cve
            .entry(cve_id.to_string())
            .or_default()
            .insert(linked.tweet_id.clone(), linked);
        Ok(())
    }

    pub fn cve_of(&self, tweet_id: &str) -> Option<&str> {
        self.by_tweet.get(tweet_id).map(String::as_str)
    }

    pub fn tweets(&self, cve_id: &str) -> impl Iterator<Item = &LinkedTweet> {
        self.by_cve.get(cve_id).into_iter().flat_map(|m| m.values())
    }

    pub fn cves(&self) -> impl Iterator<Item = &str> {
        self.by_cve.keys().map(String::as_str)
    }

    pub fn cve_count(&self) -> usize {
        self.by_cve.len()
    }

    pub fn tweet_count(&self) -> usize {
        self.by_tweet.len()
    }

    pub fn first_tweet_date(&self, cve_id: &str) -> Option<NaiveDate> {
        self.tweets(cve_id).map(|t| t.posted_at.date_naive()).min()
    }

    /// `(cve_id, tweet)` pairs in CVE then tweet id order.
    pub fn links(&self) -> impl Iterator<Item = (&str, &LinkedTweet)> {
        self.by_cve
            .iter()
            .flat_map(|(c, m)| m.values().map(move |t| (c.as_str(), t)))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["cve_id", "tweet_id", "posted_at", "stage"])?;
        for (cve, t) in self.links() {
            out.write_record([
                cve,
                &t.tweet_id,
                &format_timestamp(&t.posted_at),
                &t.stage.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<link table>", e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut table = LinkTable::default();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if row.len() != 4 {
                return Err(Error::parse(path, line, "expected 4 columns"));
            }
            let posted_at = parse_timestamp(&row[2]).map_err(|m| Error::parse(path, line, m))?;
            let stage: LinkStage = row[3].parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
            table
                .insert(
                    &row[0],
                    LinkedTweet {
                        tweet_id: row[1].to_string(),
                        posted_at,
                        stage,
                    },
                )
                .map_err(|e| Error::parse(path, line, e.to_string()))?;
        }
        Ok(table)
    }
}

/// Links every tweet, resolving URLs on `threads` workers first. The table is
/// a deterministic fold over tweets in input order.
pub fn build_link_table<P: PageProvider + ?Sized>(tweets: &[Tweet], provider: &P, threads: usize) -> Result<LinkTable> {
    let pages = Memoized::new(provider);
    let mut urls: Vec<String> = tweets.iter().flat_map(|t| t.urls.iter().cloned()).collect();
    urls.sort();
    urls.dedup();
    pages.prefetch(&urls, threads);

    let mut table = LinkTable::default();
    for tweet in tweets {
        if let Some(link) = link_tweet(tweet, &pages) {
            table.insert(
                &link.cve_id,
                LinkedTweet {
                    tweet_id: tweet.id.clone(),
                    posted_at: tweet.posted_at,
                    stage: link.stage,
                },
            )?;
        }
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeConstraints {
    pub min_lead_days: i64,
    pub max_lead_days: i64,
    pub min_tweets: usize,
}

impl Default for TimeConstraints {
    fn default() -> Self {
        TimeConstraints {
            min_lead_days: 5,
            max_lead_days: 365,
            min_tweets: 3,
        }
    }
}

/// Whole UTC days from the tweet's date to the publication date.
pub fn lead_days(posted_at: &DateTime<Utc>, published: NaiveDate) -> i64 {
    (published - posted_at.date_naive()).num_days()
}

/// Keeps tweets posted at least `min_lead_days` before publication and at most
/// `max_lead_days` before it (explicit mentions are exempt from the maximum),
/// then drops CVEs left with fewer than `min_tweets` tweets. CVEs missing from
/// the store are dropped with a warning.
pub fn apply_time_constraints(table: &LinkTable, store: &NvdStore, c: &TimeConstraints) -> LinkTable {
    let mut out = LinkTable::default();
    for cve in table.cves() {
        let Some(record) = store.get(cve) else {
            log::warn!("{cve} is not in the NVD store; excluded");
            continue;
        };
        let kept: Vec<&LinkedTweet> = table
            .tweets(cve)
            .filter(|t| {
                let lead = lead_days(&t.posted_at, record.published_at);
                lead >= c.min_lead_days && (lead <= c.max_lead_days || t.stage.is_explicit())
            })
            .collect();
        if kept.len() >= c.min_tweets {
            for t in kept {
                out.insert(cve, t.clone()).expect("source table is consistent");
            }
        }
    }
    out
}

/// `n` links drawn without replacement under `seed`, for manual inspection.
pub fn sample_links(table: &LinkTable, n: usize, seed: u64) -> Vec<(String, LinkedTweet)> {
    let mut all: Vec<(String, LinkedTweet)> = table
        .links()
        .map(|(c, t)| (c.to_string(), t.clone()))
        .collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all.truncate(n);
    all
}
