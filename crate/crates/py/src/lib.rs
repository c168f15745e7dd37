//! Python bindings: tokenization, agreement, metrics, CVSS bands, linking,
//! forecasting and an n-gram logistic regression classifier.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use threatcast::classifier::{Classifier, LinearClassifier};
use threatcast::corpus::{self, EntitySpan};
use threatcast::featurize::{self, Vocabulary};
use threatcast::forecast::{self, Scorer, TweetScores};
use threatcast::linker::{self, LinkTable, OfflineCache, TimeConstraints};
use threatcast::linmodel::{self, Example, LinearConfig};
use threatcast::metrics::{self, ScoredLabel};
use threatcast::nvd::{self, CvssVersion};

fn py_err(e: threatcast::Error) -> PyErr {
    match e {
        threatcast::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn scored(scores: &[f64], labels: &[bool]) -> PyResult<Vec<ScoredLabel>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (s, y))| ScoredLabel::new(format!("{i:09}"), *s, *y))
        .collect())
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

/// Tokens with the entity at byte span [start, end) replaced by the target marker.
#[pyfunction]
#[pyo3(signature = (text, start=None, end=None))]
fn normalize(text: &str, start: Option<usize>, end: Option<usize>) -> PyResult<Vec<String>> {
    let mut tweet = corpus::Tweet {
        id: "py".into(),
        posted_at: chrono::DateTime::UNIX_EPOCH,
        author: String::new(),
        text: text.to_string(),
        urls: Vec::new(),
        entities: Vec::new(),
    };
    match (start, end) {
        (Some(s), Some(e)) => {
            let surface = text.get(s..e).ok_or_else(|| PyValueError::new_err("span out of range"))?;
            tweet.entities.push(EntitySpan {
                start: s,
                end: e,
                surface: surface.to_string(),
            });
            Ok(corpus::normalize(&tweet, 0).map_err(py_err)?.tokens)
        }
        (None, None) => Ok(corpus::normalize_text(&tweet).tokens),
        _ => Err(PyValueError::new_err("give both start and end or neither")),
    }
}

#[pyfunction]
fn jaccard(a: Vec<String>, b: Vec<String>) -> f64 {
    let a: HashSet<String> = a.into_iter().collect();
    let b: HashSet<String> = b.into_iter().collect();
    corpus::jaccard(&a, &b)
}

#[pyfunction]
fn cohens_kappa(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    threatcast::annotation::cohens_kappa(&a, &b).map_err(py_err)
}

#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::average_precision(&scored(&scores, &labels)?).map_err(py_err)
}

/// Precision-recall points as (threshold, precision, recall) tuples.
#[pyfunction]
fn pr_curve(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Vec<(f64, f64, f64)>> {
    let curve = metrics::pr_curve(&scored(&scores, &labels)?).map_err(py_err)?;
    Ok(curve.points.iter().map(|p| (p.threshold, p.precision, p.recall)).collect())
}

#[pyfunction]
fn precision_at_k(scores: Vec<f64>, labels: Vec<bool>, k: usize) -> PyResult<f64> {
    metrics::precision_at_k(&scored(&scores, &labels)?, k).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (score, version="v3"))]
fn categorize(score: f64, version: &str) -> PyResult<String> {
    let v = match version {
        "v2" | "2" => CvssVersion::V2,
        "v3" | "3" => CvssVersion::V3,
        _ => return Err(PyValueError::new_err(format!("unknown CVSS version {version:?}"))),
    };
    Ok(nvd::categorize(score, v).map_err(py_err)?.to_string())
}

#[pyfunction]
fn extract_cves(text: &str) -> Vec<String> {
    linker::extract_cves(text).into_iter().collect()
}

#[pyfunction]
fn log_odds(a: u64, total_a: u64, b: u64, total_b: u64) -> PyResult<f64> {
    threatcast::insights::log_odds(a, total_a, b, total_b).map_err(py_err)
}

/// Bag-of-n-grams logistic regression over normalized token lists.
#[pyclass(module = "threatcast")]
struct NgramClassifier {
    inner: LinearClassifier,
}

#[pymethods]
impl NgramClassifier {
    #[staticmethod]
    #[pyo3(signature = (docs, labels, orders=vec![2, 3, 4], epochs=300, learning_rate=0.5, l2=1e-4))]
    fn train(
        docs: Vec<Vec<String>>,
        labels: Vec<bool>,
        orders: Vec<usize>,
        epochs: usize,
        learning_rate: f64,
        l2: f64,
    ) -> PyResult<Self> {
        if docs.len() != labels.len() {
            return Err(PyValueError::new_err("docs and labels differ in length"));
        }
        let vocab = featurize::build_vocab(&docs, &orders).map_err(py_err)?;
        let data: Vec<Example> = docs
            .iter()
            .zip(&labels)
            .map(|(d, y)| Example {
                x: featurize::vectorize(d, &vocab),
                y: *y,
            })
            .collect();
        let cfg = LinearConfig {
            learning_rate,
            epochs,
            l2,
        };
        let trained = linmodel::train(&data, &[], vocab.len(), &cfg).map_err(py_err)?;
        Ok(NgramClassifier {
            inner: LinearClassifier {
                model: trained.model,
                vocab,
            },
        })
    }

    /// Loads `vocab.tsv` and `model.txt` written by `threatcast train --model lr`.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let vocab = Vocabulary::read_from(&dir.join("vocab.tsv")).map_err(py_err)?;
        let model = linmodel::LinearModel::read_from(&dir.join("model.txt")).map_err(py_err)?;
        Ok(NgramClassifier {
            inner: LinearClassifier { model, vocab },
        })
    }

    fn probability(&self, tokens: Vec<String>) -> PyResult<f64> {
        self.inner.probability(&tokens).map_err(py_err)
    }

    fn predict(&self, docs: Vec<Vec<String>>) -> PyResult<Vec<f64>> {
        docs.iter().map(|d| self.inner.probability(d).map_err(py_err)).collect()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }
}

/// NVD records loaded from JSONL files.
#[pyclass(module = "threatcast")]
struct NvdStore {
    inner: nvd::NvdStore,
}

#[pymethods]
impl NvdStore {
    #[new]
    fn new(paths: Vec<PathBuf>) -> PyResult<Self> {
        let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
        Ok(NvdStore {
            inner: nvd::load_nvd(&refs).map_err(py_err)?.value,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, cve_id: &str) -> bool {
        self.inner.get(cve_id).is_some()
    }

    /// (published date, cvss v2, cvss v3) for one CVE, or None.
    fn get(&self, cve_id: &str) -> Option<(String, Option<f64>, Option<f64>)> {
        self.inner
            .get(cve_id)
            .map(|r| (r.published_at.to_string(), r.cvss_v2, r.cvss_v3))
    }

    fn is_severe(&self, cve_id: &str) -> Option<bool> {
        self.inner.get(cve_id).map(nvd::is_severe)
    }
}

/// CVE to tweet links built from a tweet file and an offline page cache.
#[pyclass(module = "threatcast")]
struct Links {
    inner: LinkTable,
}

#[pymethods]
impl Links {
    #[staticmethod]
    #[pyo3(signature = (tweets, page_cache, threads=4))]
    fn build(tweets: PathBuf, page_cache: PathBuf, threads: usize) -> PyResult<Self> {
        let tweets = corpus::read_tweets(&tweets).map_err(py_err)?;
        let cache = OfflineCache::open(&page_cache).map_err(py_err)?;
        Ok(Links {
            inner: linker::build_link_table(&tweets, &cache, threads).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Links {
            inner: LinkTable::read_csv(&path).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (store, min_lead_days=5, max_lead_days=365, min_tweets=3))]
    fn constrained(&self, store: &NvdStore, min_lead_days: i64, max_lead_days: i64, min_tweets: usize) -> Links {
        let c = TimeConstraints {
            min_lead_days,
            max_lead_days,
            min_tweets,
        };
        Links {
            inner: linker::apply_time_constraints(&self.inner, &store.inner, &c),
        }
    }

    /// (cve_id, tweet_id, stage) rows.
    fn rows(&self) -> Vec<(String, String, String)> {
        self.inner
            .links()
            .map(|(c, t)| (c.to_string(), t.tweet_id.clone(), t.stage.to_string()))
            .collect()
    }

    fn cves(&self) -> Vec<String> {
        self.inner.cves().map(String::from).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.tweet_count()
    }

    /// CVEs ordered by forecast score: max tweet score when `scores` maps
    /// tweet ids to probabilities, otherwise tweet volume.
    #[pyo3(signature = (scores=None))]
    fn rank(&self, scores: Option<std::collections::BTreeMap<String, f64>>) -> PyResult<Vec<(String, f64)>> {
        let scores: Option<TweetScores> = scores;
        let scorer = match &scores {
            Some(s) => Scorer::Model(s),
            None => Scorer::Volume,
        };
        let r = forecast::rank(&self.inner, &scorer).map_err(py_err)?;
        Ok(r.entries.into_iter().map(|e| (e.cve_id, e.score)).collect())
    }
}

#[pymodule]
#[pyo3(name = "threatcast")]
pub fn threatcast_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(pr_curve, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(categorize, m)?)?;
    m.add_function(wrap_pyfunction!(extract_cves, m)?)?;
    m.add_function(wrap_pyfunction!(log_odds, m)?)?;
    m.add_class::<NgramClassifier>()?;
    m.add_class::<NvdStore>()?;
    m.add_class::<Links>()?;
    Ok(())
}
