//! Pipeline configuration: a TOML file of `[section]` headers and `key = value` lines.
//!
//! ```toml
//! seed = 13
//!
//! [paths]
//! corpus = "tweets.jsonl"
//! votes = "votes.csv"
//! nvd = ["nvdcve.jsonl"]
//! exploits = ["symantec.txt"]
//! page_cache = "pages"
//! lexicon = "subjective.txt"
//! output_dir = "out"
//!
//! [cnn]
//! epochs = 5
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Every key is optional; missing keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use threatcast::convnet::{AdamConfig, ConvConfig};
use threatcast::glove::GloveConfig;
use threatcast::linker::TimeConstraints;
use threatcast::linmodel::LinearConfig;

pub const CACHE_ENV: &str = "THREATCAST_CACHE_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub annotate: AnnotateSection,
    pub featurize: FeaturizeSection,
    pub linear: LinearSection,
    pub glove: GloveSection,
    pub cnn: CnnSection,
    pub link: LinkSection,
    pub forecast: ForecastSection,
    pub insights: InsightsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Annotated tweet corpus (JSON lines).
    pub corpus: Option<PathBuf>,
    /// Unlabelled tweets to link and forecast from; defaults to the corpus.
    pub stream: Option<PathBuf>,
    pub votes: Option<PathBuf>,
    pub nvd: Vec<PathBuf>,
    pub exploits: Vec<PathBuf>,
    pub page_cache: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            stream: None,
            votes: None,
            nvd: Vec::new(),
            exploits: Vec::new(),
            page_cache: None,
            lexicon: None,
            embeddings: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub jaccard_threshold: f64,
    pub lcs_ratio: f64,
    /// Absolute train/dev/test counts per task; when absent the fractions apply.
    pub existence_split: Option<[usize; 3]>,
    pub severity_split: Option<[usize; 3]>,
    pub train_fraction: f64,
    pub dev_fraction: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            jaccard_threshold: threatcast::corpus::DEFAULT_JACCARD_THRESHOLD,
            lcs_ratio: threatcast::corpus::DEFAULT_LCS_RATIO,
            existence_split: None,
            severity_split: None,
            train_fraction: 4.0 / 6.0,
            dev_fraction: 1.0 / 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub strict: bool,
    pub min_agreement: f64,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        AnnotateSection {
            strict: false,
            min_agreement: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizeSection {
    pub orders: Vec<usize>,
}

impl Default for FeaturizeSection {
    fn default() -> Self {
        FeaturizeSection {
            orders: threatcast::featurize::DEFAULT_ORDERS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LinearSection {
    fn default() -> Self {
        let d = LinearConfig::default();
        LinearSection {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            l2: d.l2,
        }
    }
}

impl LinearSection {
    pub fn to_config(&self) -> LinearConfig {
        LinearConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            l2: self.l2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GloveSection {
    pub dim: usize,
    pub window: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for GloveSection {
    fn default() -> Self {
        let d = GloveConfig::default();
        GloveSection {
            dim: d.dim,
            window: d.window,
            x_max: d.x_max,
            alpha: d.alpha,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
        }
    }
}

impl GloveSection {
    pub fn to_config(&self, seed: u64) -> GloveConfig {
        GloveConfig {
            dim: self.dim,
            window: self.window,
            x_max: self.x_max,
            alpha: self.alpha,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSection {
    pub dim: usize,
    pub widths: Vec<usize>,
    pub filters: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub filter_init: f64,
    pub oov_init: f64,
}

impl Default for CnnSection {
    fn default() -> Self {
        let d = ConvConfig::default();
        CnnSection {
            dim: d.dim,
            widths: d.widths,
            filters: d.filters,
            max_len: d.max_len,
            epochs: d.epochs,
            learning_rate: d.adam.learning_rate,
            filter_init: d.filter_init,
            oov_init: d.oov_init,
        }
    }
}

impl CnnSection {
    pub fn to_config(&self, seed: u64) -> ConvConfig {
        ConvConfig {
            dim: self.dim,
            widths: self.widths.clone(),
            filters: self.filters,
            max_len: self.max_len,
            epochs: self.epochs,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            filter_init: self.filter_init,
            oov_init: self.oov_init,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub min_lead_days: i64,
    pub max_lead_days: i64,
    pub min_tweets: usize,
    pub threads: usize,
}

impl Default for LinkSection {
    fn default() -> Self {
        let d = TimeConstraints::default();
        LinkSection {
            min_lead_days: d.min_lead_days,
            max_lead_days: d.max_lead_days,
            min_tweets: d.min_tweets,
            threads: 4,
        }
    }
}

impl LinkSection {
    pub fn constraints(&self) -> TimeConstraints {
        TimeConstraints {
            min_lead_days: self.min_lead_days,
            max_lead_days: self.max_lead_days,
            min_tweets: self.min_tweets,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Cnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Cnn => "cnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    /// Severity model backing the model scorer.
    pub classifier: ModelKind,
    pub random_trials: usize,
    pub min_tweets: usize,
    pub score_floor: f64,
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection {
            classifier: ModelKind::Cnn,
            random_trials: threatcast::forecast::RANDOM_TRIALS,
            min_tweets: 6,
            score_floor: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InsightsSection {
    pub top_k: usize,
    pub window_days: i64,
    pub min_lead: i64,
}

impl Default for InsightsSection {
    fn default() -> Self {
        InsightsSection {
            top_k: 50,
            window_days: threatcast::insights::DELAY_WINDOW_DAYS,
            min_lead: 1,
        }
    }
}

impl PipelineConfig {
    /// Parses `text`, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.resolve(base);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.check_inputs_exist().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(cfg)
    }

    /// Every configured input must exist. The page cache is exempt (live
    /// fetching creates it), as are embeddings produced under the output dir.
    pub fn check_inputs_exist(&self) -> Result<(), String> {
        let p = &self.paths;
        let embeddings = p.embeddings.as_ref().filter(|e| !e.starts_with(&p.output_dir));
        let missing: Vec<String> = [&p.corpus, &p.stream, &p.votes, &p.lexicon]
            .into_iter()
            .flatten()
            .chain(embeddings)
            .chain(&p.nvd)
            .chain(&p.exploits)
            .filter(|x| !x.exists())
            .map(|x| x.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(format!("missing input {}", missing.join(", ")))
        }
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for opt in [
            &mut p.corpus,
            &mut p.stream,
            &mut p.votes,
            &mut p.page_cache,
            &mut p.lexicon,
            &mut p.embeddings,
        ] {
            if let Some(x) = opt.as_mut() {
                join(x);
            }
        }
        p.nvd.iter_mut().for_each(join);
        p.exploits.iter_mut().for_each(join);
        join(&mut p.output_dir);
    }

    fn check(&self) -> Result<(), String> {
        let c = &self.corpus;
        if !(0.0..=1.0).contains(&c.jaccard_threshold) || !(0.0..=1.0).contains(&c.lcs_ratio) {
            return Err("corpus thresholds must lie in [0, 1]".into());
        }
        if self.featurize.orders.is_empty() || self.featurize.orders.contains(&0) {
            return Err("featurize.orders must be non-empty and positive".into());
        }
        if self.cnn.widths.is_empty() || self.cnn.widths.contains(&0) || self.cnn.dim == 0 || self.cnn.filters == 0 {
            return Err("cnn widths, dim and filters must be positive".into());
        }
        if self.cnn.max_len < self.cnn.widths.iter().copied().max().unwrap_or(0) {
            return Err("cnn.max_len must be at least the widest filter".into());
        }
        if self.glove.dim == 0 || self.glove.window == 0 {
            return Err("glove dim and window must be positive".into());
        }
        if self.link.min_lead_days > self.link.max_lead_days {
            return Err("link.min_lead_days exceeds link.max_lead_days".into());
        }
        if self.link.threads == 0 {
            return Err("link.threads must be positive".into());
        }
        Ok(())
    }

    /// Page cache directory, honouring the environment override.
    pub fn page_cache(&self) -> Option<PathBuf> {
        std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.paths.page_cache.clone())
    }

    pub fn stream(&self) -> Option<&Path> {
        self.paths.stream.as_deref().or(self.paths.corpus.as_deref())
    }

    /// Canonical serialization used for hashing and manifests.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
