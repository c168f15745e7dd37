use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use threatcast::annotation::{self, Phase};
use threatcast::classifier::{Classifier, ConvClassifier, LinearClassifier};
use threatcast::convnet::{self, ConvModel};
use threatcast::corpus::{self, SplitSizes, SplitSpec, Tweet};
use threatcast::featurize::{self, Vocabulary};
use threatcast::forecast::{self, AccountConfig, Scorer, Truth, TweetScores};
use threatcast::glove::{self, WordVectors};
use threatcast::insights;
use threatcast::linker::{self, LinkTable, LiveFetcher, OfflineCache};
use threatcast::linmodel::{self, Example, LinearModel};
use threatcast::metrics::{self, ScoredLabel};
use threatcast::nvd::{self, ExploitSet, NvdStore};

use crate::config::{ModelKind, PipelineConfig};
use crate::run::{runtime, usage, Outcome, Stage};
use crate::{
    AnnotateCmd, Command, CorpusCmd, EmbedCmd, EvalCmd, ForecastCmd, InsightsCmd, LinkCmd, ScorerArg, Task,
    TrainArgs, TruthArg,
};

pub fn dispatch(cmd: Command, args: Vec<String>, cfg: &PipelineConfig) -> Outcome {
    let (name, group) = stage_name(&cmd);
    let mut stage = Stage::new(&name, group, args, cfg);
    let result = match cmd {
        Command::Corpus(c) => corpus_cmd(c, &mut stage),
        Command::Annotate(c) => annotate_cmd(c, &mut stage),
        Command::Embed(c) => embed_cmd(c, &mut stage),
        Command::Train(a) => train_cmd(a, &mut stage),
        Command::Eval(c) => eval_cmd(c, &mut stage),
        Command::Link(c) => link_cmd(c, &mut stage),
        Command::Forecast(c) => forecast_cmd(c, &mut stage),
        Command::Insights(c) => insights_cmd(c, &mut stage),
    };
    match result {
        Ok(()) => {
            let manifest = stage.finish()?;
            eprintln!("wrote {}", manifest.display());
            Ok(())
        }
        Err(e) => {
            stage.abort();
            Err(e)
        }
    }
}

fn stage_name(cmd: &Command) -> (String, &'static str) {
    match cmd {
        Command::Corpus(c) => (
            match c {
                CorpusCmd::Ingest { .. } => "ingest".into(),
                CorpusCmd::Dedup { .. } => "dedup".into(),
                CorpusCmd::Split { task, .. } => format!("split-{}", task.as_str()),
            },
            "corpus",
        ),
        Command::Annotate(c) => (
            match c {
                AnnotateCmd::Aggregate { .. } => "aggregate",
                AnnotateCmd::Kappa { .. } => "kappa",
                AnnotateCmd::FilterWorkers { .. } => "filter-workers",
            }
            .into(),
            "annotate",
        ),
        Command::Embed(c) => (
            match c {
                EmbedCmd::Train { .. } => "train",
                EmbedCmd::Neighbors { .. } => "neighbors",
            }
            .into(),
            "embed",
        ),
        Command::Train(a) => (format!("train-{}-{}", a.task.as_str(), a.model.as_str()), "models"),
        Command::Eval(EvalCmd::Pr { task, model, split }) => {
            (format!("pr-{}-{}-{split}", task.as_str(), model.as_str()), "eval")
        }
        Command::Link(c) => (
            match c {
                LinkCmd::Build { .. } => "build",
                LinkCmd::Audit { .. } => "audit",
            }
            .into(),
            "link",
        ),
        Command::Forecast(c) => match c {
            ForecastCmd::Rank { scorer } => (format!("rank-{}", scorer_name(*scorer)), "forecast"),
            ForecastCmd::Eval { scorer } => (format!("eval-{}", scorer_name(*scorer)), "forecast"),
        },
        Command::Insights(c) => (
            match c {
                InsightsCmd::Adjectives { .. } => "adjectives",
                InsightsCmd::Temporal => "temporal",
                InsightsCmd::Accounts { .. } => "accounts",
            }
            .into(),
            "insights",
        ),
    }
}

fn scorer_name(s: ScorerArg) -> &'static str {
    match s {
        ScorerArg::Model => "model",
        ScorerArg::Volume => "volume",
        ScorerArg::TrueCvss => "true-cvss",
        ScorerArg::Random => "random",
    }
}

fn out_path(cfg: &PipelineConfig, rel: &str) -> PathBuf {
    cfg.paths.output_dir.join(rel)
}

fn write_json(stage: &mut Stage<'_>, name: &str, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value)? + "\n";
    stage.write(name, text)?;
    Ok(())
}

fn write_tweets_file(stage: &mut Stage<'_>, name: &str, tweets: &[Tweet], with_tokens: bool) -> Outcome {
    let p = stage.output(name)?;
    let mut w = BufWriter::new(File::create(&p)?);
    corpus::write_tweets(&mut w, tweets, with_tokens)?;
    Ok(())
}

// corpus

fn corpus_cmd(cmd: CorpusCmd, stage: &mut Stage<'_>) -> Outcome {
    let cfg = stage.config;
    match cmd {
        CorpusCmd::Ingest { input } => {
            let input = stage.required(input.as_deref().or(cfg.paths.corpus.as_deref()), "corpus")?;
            let tweets = corpus::read_tweets(&input)?;
            for t in &tweets {
                corpus::instances(t)?;
            }
            stage.param("tweets", tweets.len());
            write_tweets_file(stage, "tweets.jsonl", &tweets, true)
        }
        CorpusCmd::Dedup { input } => {
            let default = out_path(cfg, "corpus/tweets.jsonl");
            let input = stage.input(input.as_deref().unwrap_or(&default))?;
            let tweets = corpus::read_tweets(&input)?;
            let after_jaccard = corpus::dedup_by_jaccard(&tweets, cfg.corpus.jaccard_threshold);
            let after_lcs = corpus::dedup_by_lcs(&after_jaccard, cfg.corpus.lcs_ratio);
            stage.param("input", tweets.len());
            stage.param("after_jaccard", after_jaccard.len());
            stage.param("after_lcs", after_lcs.len());
            write_tweets_file(stage, "dedup.jsonl", &after_lcs, true)
        }
        CorpusCmd::Split { task, input, labels } => {
            let default = out_path(cfg, "corpus/dedup.jsonl");
            let input = stage.input(input.as_deref().unwrap_or(&default))?;
            let default_labels = out_path(cfg, &format!("annotate/{}.jsonl", task.as_str()));
            let labels = stage.input(labels.as_deref().unwrap_or(&default_labels))?;
            let labelled: BTreeSet<String> = annotation::read_labels(&labels)?.into_iter().map(|l| l.tweet_id).collect();
            let tweets: Vec<Tweet> = corpus::read_tweets(&input)?
                .into_iter()
                .filter(|t| labelled.contains(&t.id))
                .collect();
            let counts = match task {
                Task::Existence => cfg.corpus.existence_split,
                Task::Severity => cfg.corpus.severity_split,
            };
            let sizes = match counts {
                Some([train, dev, test]) => SplitSizes::Counts { train, dev, test },
                None => SplitSizes::Fractions {
                    train: cfg.corpus.train_fraction,
                    dev: cfg.corpus.dev_fraction,
                },
            };
            let (train, dev, test) = corpus::split(&tweets, &SplitSpec { seed: cfg.seed, sizes })?;
            stage.param("train", train.len());
            stage.param("dev", dev.len());
            stage.param("test", test.len());
            let t = task.as_str();
            write_tweets_file(stage, &format!("{t}.train.jsonl"), &train, true)?;
            write_tweets_file(stage, &format!("{t}.dev.jsonl"), &dev, true)?;
            write_tweets_file(stage, &format!("{t}.test.jsonl"), &test, true)
        }
    }
}

// annotate

fn annotate_cmd(cmd: AnnotateCmd, stage: &mut Stage<'_>) -> Outcome {
    let cfg = stage.config;
    match cmd {
        AnnotateCmd::Aggregate { votes } => {
            let path = stage.required(votes.as_deref().or(cfg.paths.votes.as_deref()), "votes")?;
            let votes = annotation::read_votes(&path)?;
            for phase in [Phase::Existence, Phase::Severity] {
                let labels = annotation::aggregate(&votes, phase, cfg.annotate.strict)?;
                if labels.is_empty() {
                    continue;
                }
                stage.param(&format!("{phase}_tweets"), labels.len());
                stage.param(&format!("{phase}_positive"), labels.iter().filter(|l| l.label).count());
                let p = stage.output(&format!("{phase}.jsonl"))?;
                annotation::write_labels(BufWriter::new(File::create(p)?), &labels)?;
            }
            Ok(())
        }
        AnnotateCmd::Kappa { a, b } => {
            let a = read_label_column(&stage.input(&a)?)?;
            let b = read_label_column(&stage.input(&b)?)?;
            let shared: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
            if shared.is_empty() {
                return Err(runtime("the two label files share no tweet ids"));
            }
            let la: Vec<&str> = shared.iter().map(|k| a[*k].as_str()).collect();
            let lb: Vec<&str> = shared.iter().map(|k| b[*k].as_str()).collect();
            let kappa = annotation::cohens_kappa(&la, &lb)?;
            println!("{kappa:.6}");
            write_json(stage, "kappa.json", &serde_json::json!({ "n": shared.len(), "kappa": kappa }))
        }
        AnnotateCmd::FilterWorkers { votes, min_agreement } => {
            let path = stage.required(votes.as_deref().or(cfg.paths.votes.as_deref()), "votes")?;
            let votes = annotation::read_votes(&path)?;
            let min = min_agreement.unwrap_or(cfg.annotate.min_agreement);
            stage.param("min_agreement", min);
            let rates = annotation::worker_agreements(&votes);
            let mut csv = String::from("worker_id,agreement\n");
            for (w, r) in &rates {
                csv.push_str(&format!("{w},{r}\n"));
            }
            stage.write("agreement.csv", csv)?;
            let kept = annotation::filter_workers(&votes, min);
            stage.param("votes_in", votes.len());
            stage.param("votes_kept", kept.len());
            let p = stage.output("votes.filtered.csv")?;
            annotation::write_votes(BufWriter::new(File::create(p)?), &kept)?;
            Ok(())
        }
    }
}

fn read_label_column(path: &Path) -> Outcome<BTreeMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path).map_err(|e| runtime(e.to_string()))?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        if row.len() < 2 {
            return Err(runtime(format!("{}: expected tweet_id,label", path.display())));
        }
        out.insert(row[0].to_string(), row[1].trim().to_string());
    }
    Ok(out)
}

// embed

fn tokenized(tweets: &[Tweet]) -> Vec<Vec<String>> {
    tweets.iter().map(|t| corpus::normalize_text(t).tokens).collect()
}

fn embed_cmd(cmd: EmbedCmd, stage: &mut Stage<'_>) -> Outcome {
    let cfg = stage.config;
    match cmd {
        EmbedCmd::Train { input } => {
            let input = stage.required(input.as_deref().or(cfg.stream()), "tweet stream")?;
            let docs = tokenized(&corpus::read_tweets(&input)?);
            let gcfg = cfg.glove.to_config(cfg.seed);
            let table = glove::count_cooccurrences(&docs, gcfg.window);
            let trained = glove::train_embeddings(&table, &gcfg)?;
            stage.param("words", table.words().len());
            stage.param("pairs", table.len());
            stage.write("words.txt", table.words().join("\n") + "\n")?;
            let p = stage.output("cooccurrence.bin")?;
            table.write_binary(BufWriter::new(File::create(p)?))?;
            let p = stage.output("vectors.txt")?;
            trained.embeddings.to_word_vectors().write_to(BufWriter::new(File::create(p)?))?;
            let mut loss = String::from("epoch,loss\n");
            for (i, l) in trained.losses.iter().enumerate() {
                loss.push_str(&format!("{i},{l}\n"));
            }
            stage.write("loss.csv", loss)?;
            Ok(())
        }
        EmbedCmd::Neighbors { token, k, vectors } => {
            let default = out_path(cfg, "embed/vectors.txt");
            let path = stage.input(vectors.as_deref().unwrap_or(&default))?;
            let vectors = WordVectors::read_from(&path)?;
            let nn = vectors.nearest_neighbors(&token, k)?;
            stage.param("token", &token);
            stage.param("k", k);
            let mut out = String::from("token\tcosine\n");
            for (w, c) in &nn {
                println!("{w}\t{c:.4}");
                out.push_str(&format!("{w}\t{c}\n"));
            }
            stage.write("neighbors.tsv", out)?;
            Ok(())
        }
    }
}

// train / eval

fn phase_of(task: Task) -> Phase {
    match task {
        Task::Existence => Phase::Existence,
        Task::Severity => Phase::Severity,
    }
}

struct LabelledSplit {
    tweets: Vec<Tweet>,
    labels: Vec<bool>,
}

fn load_split(stage: &mut Stage<'_>, task: Task, split: &str) -> Outcome<LabelledSplit> {
    let cfg = stage.config;
    let tweets_path = stage.input(&out_path(cfg, &format!("corpus/{}.{split}.jsonl", task.as_str())))?;
    let labels_path = stage.input(&out_path(cfg, &format!("annotate/{}.jsonl", task.as_str())))?;
    let labels: HashMap<String, bool> = annotation::read_labels(&labels_path)?
        .into_iter()
        .filter(|l| l.phase == phase_of(task))
        .map(|l| (l.tweet_id, l.label))
        .collect();
    let tweets = corpus::read_tweets(&tweets_path)?;
    let mut ys = Vec::with_capacity(tweets.len());
    for t in &tweets {
        ys.push(
            *labels
                .get(&t.id)
                .ok_or_else(|| runtime(format!("tweet {} has no {} label", t.id, task.as_str())))?,
        );
    }
    Ok(LabelledSplit { tweets, labels: ys })
}

/// One token sequence per (tweet, entity) instance, carrying the tweet label.
fn instance_tokens(split: &LabelledSplit) -> Outcome<Vec<(Vec<String>, bool)>> {
    let mut out = Vec::new();
    for (t, &y) in split.tweets.iter().zip(&split.labels) {
        for inst in corpus::instances(t)? {
            out.push((inst.tokens, y));
        }
    }
    Ok(out)
}

fn model_dir(task: Task, model: ModelKind) -> String {
    format!("{}-{}", task.as_str(), model.as_str())
}

fn train_cmd(a: TrainArgs, stage: &mut Stage<'_>) -> Outcome {
    let cfg = stage.config;
    let train = instance_tokens(&load_split(stage, a.task, "train")?)?;
    let dev = instance_tokens(&load_split(stage, a.task, "dev")?)?;
    let dir = model_dir(a.task, a.model);
    let docs: Vec<Vec<String>> = train.iter().map(|(t, _)| t.clone()).collect();
    stage.param("train_instances", train.len());
    stage.param("dev_instances", dev.len());
    match a.model {
        ModelKind::Lr => {
            let vocab = featurize::build_vocab(&docs, &cfg.featurize.orders)?;
            let ex = |d: &[(Vec<String>, bool)]| -> Vec<Example> {
                d.iter()
                    .map(|(t, y)| Example {
                        x: featurize::vectorize(t, &vocab),
                        y: *y,
                    })
                    .collect()
            };
            let trained = linmodel::train(&ex(&train), &ex(&dev), vocab.len(), &cfg.linear.to_config())?;
            stage.param("best_epoch", trained.best_epoch);
            let p = stage.output(&format!("{dir}/vocab.tsv"))?;
            vocab.write_to(BufWriter::new(File::create(p)?))?;
            let p = stage.output(&format!("{dir}/model.txt"))?;
            trained.model.write_to(BufWriter::new(File::create(p)?))?;
            let p = stage.output(&format!("{dir}/curve.csv"))?;
            linmodel::write_curve_csv(BufWriter::new(File::create(p)?), &trained.curve)?;
            let mut top = String::from("feature\tweight\n");
            for (f, w) in linmodel::top_features(&trained.model, &vocab, 50) {
                top.push_str(&format!("{f}\t{w}\n"));
            }
            stage.write(&format!("{dir}/top_features.tsv"), top)?;
        }
        ModelKind::Cnn => {
            let vocab = featurize::build_word_vocab(&docs)?;
            let vectors = match cfg.paths.embeddings.as_deref() {
                Some(p) => Some(WordVectors::read_from(&stage.input(p)?)?),
                None => None,
            };
            let ccfg = cfg.cnn.to_config(cfg.seed);
            let seq = |d: &[(Vec<String>, bool)]| -> Vec<convnet::Sequence> {
                d.iter()
                    .map(|(t, y)| (featurize::index_sequence(t, &vocab, ccfg.max_len), *y))
                    .collect()
            };
            let trained = convnet::train_cnn(&seq(&train), &seq(&dev), &vocab, vectors.as_ref(), &ccfg)?;
            stage.param("best_epoch", trained.best_epoch);
            let p = stage.output(&format!("{dir}/vocab.tsv"))?;
            vocab.write_to(BufWriter::new(File::create(p)?))?;
            let p = stage.output(&format!("{dir}/model.bin"))?;
            trained.model.write_to(BufWriter::new(File::create(p)?))?;
            let mut curve = String::from("epoch,train_loss,dev_auc\n");
            for e in &trained.epochs {
                curve.push_str(&format!(
                    "{},{},{}\n",
                    e.epoch,
                    e.train_loss,
                    e.dev_auc.map(|v| v.to_string()).unwrap_or_default()
                ));
            }
            stage.write(&format!("{dir}/curve.csv"), curve)?;
        }
    }
    Ok(())
}

fn load_classifier(stage: &mut Stage<'_>, task: Task, kind: ModelKind) -> Outcome<Box<dyn Classifier>> {
    let cfg = stage.config;
    let dir = out_path(cfg, &format!("models/{}", model_dir(task, kind)));
    let vocab = Vocabulary::read_from(&stage.input(&dir.join("vocab.tsv"))?)?;
    Ok(match kind {
        ModelKind::Lr => Box::new(LinearClassifier {
            model: LinearModel::read_from(&stage.input(&dir.join("model.txt"))?)?,
            vocab,
        }),
        ModelKind::Cnn => Box::new(ConvClassifier {
            model: ConvModel::read_file(&stage.input(&dir.join("model.bin"))?)?,
            vocab,
            max_len: cfg.cnn.max_len,
        }),
    })
}

fn eval_cmd(cmd: EvalCmd, stage: &mut Stage<'_>) -> Outcome {
    let EvalCmd::Pr { task, model, split } = cmd;
    if split != "dev" && split != "test" {
        return Err(usage(format!("--split must be dev or test, not {split:?}")));
    }
    let data = load_split(stage, task, &split)?;
    let clf = load_classifier(stage, task, model)?;
    let mut items = Vec::with_capacity(data.tweets.len());
    for (t, &y) in data.tweets.iter().zip(&data.labels) {
        items.push(ScoredLabel::new(t.id.clone(), clf.tweet_probability(t)?, y));
    }
    let dir = format!("{}-{split}", model_dir(task, model));
    let curve = metrics::pr_curve(&items)?;
    let p = stage.output(&format!("{dir}/pr_curve.csv"))?;
    metrics::write_curve_csv(BufWriter::new(File::create(p)?), &curve)?;
    let summary = metrics::summarize(&items)?;
    println!("auc {:.4}", summary.auc);
    write_json(stage, &format!("{dir}/summary.json"), &summary)?;
    let mut scores = String::from("tweet_id,score,label\n");
    for i in &items {
        scores.push_str(&format!("{},{},{}\n", i.id, i.score, i.positive));
    }
    stage.write(&format!("{dir}/scores.csv"), scores)?;
    Ok(())
}

// link

fn load_store(stage: &mut Stage<'_>) -> Outcome<NvdStore> {
    let cfg = stage.config;
    if cfg.paths.nvd.is_empty() {
        return Err(usage("no nvd paths configured"));
    }
    let mut paths = Vec::new();
    for p in &cfg.paths.nvd {
        paths.push(stage.input(p)?);
    }
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let loaded = nvd::load_nvd(&refs)?;
    if !loaded.errors.is_empty() {
        log::warn!("{} NVD lines rejected", loaded.errors.len());
    }
    stage.param("nvd_records", loaded.value.len());
    stage.param("nvd_rejected", loaded.errors.len());
    Ok(loaded.value)
}

fn load_exploits(stage: &mut Stage<'_>) -> Outcome<Option<ExploitSet>> {
    let cfg = stage.config;
    if cfg.paths.exploits.is_empty() {
        return Ok(None);
    }
    let mut paths = Vec::new();
    for p in &cfg.paths.exploits {
        paths.push(stage.input(p)?);
    }
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    Ok(Some(nvd::load_exploits(&refs)?.value))
}

fn load_links(stage: &mut Stage<'_>) -> Outcome<LinkTable> {
    let p = stage.input(&out_path(stage.config, "link/links.filtered.csv"))?;
    Ok(LinkTable::read_csv(&p)?)
}

fn link_cmd(cmd: LinkCmd, stage: &mut Stage<'_>) -> Outcome {
    let cfg = stage.config;
    match cmd {
        LinkCmd::Build { live, input } => {
            let tweets_path = stage.required(input.as_deref().or(cfg.stream()), "tweet stream")?;
            let store = load_store(stage)?;
            let cache_dir = cfg
                .page_cache()
                .ok_or_else(|| usage(format!("no page cache configured (set paths.page_cache or {})", crate::config::CACHE_ENV)))?;
            if !live {
                stage.input(&cache_dir)?;
            }
            let tweets = corpus::read_tweets(&tweets_path)?;
            let cache = OfflineCache::open(&cache_dir)?;
            let table = if live {
                stage.param("live", true);
                linker::build_link_table(&tweets, &LiveFetcher::new(cache), cfg.link.threads)?
            } else {
                linker::build_link_table(&tweets, &cache, cfg.link.threads)?
            };
            let filtered = linker::apply_time_constraints(&table, &store, &cfg.link.constraints());
            stage.param("linked_tweets", table.tweet_count());
            stage.param("linked_cves", table.cve_count());
            stage.param("kept_tweets", filtered.tweet_count());
            stage.param("kept_cves", filtered.cve_count());
            let p = stage.output("links.csv")?;
            table.write_csv(BufWriter::new(File::create(p)?))?;
            let p = stage.output("links.filtered.csv")?;
            filtered.write_csv(BufWriter::new(File::create(p)?))?;
            Ok(())
        }
        LinkCmd::Audit { sample } => {
            let table = load_links(stage)?;
            let texts: HashMap<String, String> = match cfg.stream() {
                Some(p) if p.exists() => {
                    let p = stage.input(p)?;
                    corpus::read_tweets(&p)?.into_iter().map(|t| (t.id, t.text)).collect()
                }
                _ => HashMap::new(),
            };
            stage.param("sample", sample);
            let rows = linker::sample_links(&table, sample, cfg.seed);
            let p = stage.output("audit.csv")?;
            let mut w = csv::Writer::from_path(&p).map_err(|e| runtime(e.to_string()))?;
            let err = |e: csv::Error| runtime(e.to_string());
            w.write_record(["cve_id", "tweet_id", "posted_at", "stage", "text", "correct"]).map_err(err)?;
            for (cve, t) in rows {
                let text = texts.get(&t.tweet_id).cloned().unwrap_or_default();
                w.write_record([
                    cve.as_str(),
                    &t.tweet_id,
                    &corpus::format_timestamp(&t.posted_at),
                    &t.stage.to_string(),
                    &text,
                    "",
                ])
                .map_err(err)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

// forecast

fn severity_scores(stage: &mut Stage<'_>, table: &LinkTable) -> Outcome<(TweetScores, HashMap<String, String>)> {
    let cfg = stage.config;
    let path = stage.required(cfg.stream(), "tweet stream")?;
    let tweets: Vec<Tweet> = corpus::read_tweets(&path)?
        .into_iter()
        .filter(|t| table.cve_of(&t.id).is_some())
        .collect();
    let authors = tweets.iter().map(|t| (t.id.clone(), t.author.clone())).collect();
    let clf = load_classifier(stage, Task::Severity, cfg.forecast.classifier)?;
    let scores = forecast::score_tweets(&tweets, clf.as_ref())?;
    if let Some((_, linked)) = table.links().find(|(_, t)| !scores.contains_key(&t.tweet_id)) {
        return Err(runtime(format!("linked tweet {} is missing from the tweet stream", linked.tweet_id)));
    }
    Ok((scores, authors))
}

fn ranking_for(
    stage: &mut Stage<'_>,
    scorer: ScorerArg,
    table: &LinkTable,
    store: &NvdStore,
) -> Outcome<forecast::Ranking> {
    let seed = stage.config.seed;
    Ok(match scorer {
        ScorerArg::Model => {
            let (scores, _) = severity_scores(stage, table)?;
            let mut csv = String::from("tweet_id,score\n");
            for (id, s) in &scores {
                csv.push_str(&format!("{id},{s}\n"));
            }
            stage.write("tweet_scores.csv", csv)?;
            forecast::rank(table, &Scorer::Model(&scores))?
        }
        ScorerArg::Volume => forecast::rank(table, &Scorer::Volume)?,
        ScorerArg::TrueCvss => forecast::rank(table, &Scorer::TrueCvss(store))?,
        ScorerArg::Random => forecast::rank(table, &Scorer::Random(seed))?,
    })
}

fn forecast_cmd(cmd: ForecastCmd, stage: &mut Stage<'_>) -> Outcome {
    let cfg = stage.config;
    let (scorer, evaluate) = match cmd {
        ForecastCmd::Rank { scorer } => (scorer, false),
        ForecastCmd::Eval { scorer } => (scorer, true),
    };
    let store = load_store(stage)?;
    let exploits = load_exploits(stage)?;
    let table = load_links(stage)?;
    let ranking = ranking_for(stage, scorer, &table, &store)?;
    let name = scorer_name(scorer);
    stage.param("cves", ranking.entries.len());
    if !evaluate {
        let p = stage.output(&format!("ranking-{name}.csv"))?;
        ranking.write_csv(BufWriter::new(File::create(p)?), &store, exploits.as_ref())?;
        return Ok(());
    }
    let cvss = forecast::evaluate_vs_cvss(&ranking, &store)?;
    let random = forecast::random_baseline_vs_cvss(&ranking, &store, cfg.forecast.random_trials, cfg.seed)?;
    let exploit_eval = match &exploits {
        Some(x) => match forecast::evaluate_vs_exploits(&ranking, x) {
            Ok(e) => Some(e),
            Err(threatcast::Error::UndefinedRecall) => {
                log::warn!("no ranked CVE is in the exploit lists; skipping exploit evaluation");
                None
            }
            Err(e) => return Err(e.into()),
        },
        None => None,
    };
    for (k, p) in &cvss.precision {
        println!("P@{k} {p:.3} (random {:.3})", random[k]);
    }
    println!("AUC {:.3}", cvss.auc);
    write_json(
        stage,
        &format!("eval-{name}.json"),
        &serde_json::json!({
            "scorer": name,
            "cvss": cvss,
            "random_baseline": random,
            "random_trials": cfg.forecast.random_trials,
            "exploits": exploit_eval,
        }),
    )
}

// insights

fn insights_cmd(cmd: InsightsCmd, stage: &mut Stage<'_>) -> Outcome {
    let cfg = stage.config;
    match cmd {
        InsightsCmd::Adjectives { k } => {
            let lexicon = insights::read_lexicon(&stage.required(cfg.paths.lexicon.as_deref(), "lexicon")?)?;
            let corpus_path = stage.required(cfg.paths.corpus.as_deref(), "corpus")?;
            let labels_path = stage.input(&out_path(cfg, "annotate/severity.jsonl"))?;
            let labels: HashMap<String, bool> = annotation::read_labels(&labels_path)?
                .into_iter()
                .map(|l| (l.tweet_id, l.label))
                .collect();
            let mut severe = Vec::new();
            let mut other = Vec::new();
            for t in corpus::read_tweets(&corpus_path)? {
                match labels.get(&t.id) {
                    Some(true) => severe.push(corpus::normalize_text(&t).tokens),
                    Some(false) => other.push(corpus::normalize_text(&t).tokens),
                    None => {}
                }
            }
            let k = k.unwrap_or(cfg.insights.top_k);
            stage.param("k", k);
            stage.param("severe_docs", severe.len());
            stage.param("other_docs", other.len());
            let ranked = insights::rank_adjectives(&severe, &other, &lexicon, k)?;
            let p = stage.output("adjectives.csv")?;
            insights::write_scores_csv(BufWriter::new(File::create(p)?), &ranked)?;
            Ok(())
        }
        InsightsCmd::Temporal => {
            let store = load_store(stage)?;
            let table = load_links(stage)?;
            let leads: Vec<(String, i64)> = insights::cve_leads(&table, &store)
                .into_iter()
                .filter(|(_, d)| *d >= cfg.insights.min_lead)
                .collect();
            let values: Vec<i64> = leads.iter().map(|(_, d)| *d).collect();
            let stats = insights::delay_stats(&values, cfg.insights.window_days)?;
            println!(
                "median {} days, {:.1}% within {} days",
                stats.median_days,
                100.0 * stats.fraction_within_window,
                stats.window_days
            );
            let mut csv = String::from("cve_id,lead_days\n");
            for (c, d) in &leads {
                csv.push_str(&format!("{c},{d}\n"));
            }
            stage.write("leads.csv", csv)?;
            write_json(stage, "delay.json", &stats)
        }
        InsightsCmd::Accounts { truth } => {
            let store = load_store(stage)?;
            let exploits = load_exploits(stage)?;
            let table = load_links(stage)?;
            let (scores, authors) = severity_scores(stage, &table)?;
            let truth = match truth {
                TruthArg::Cvss => Truth::CvssSevere,
                TruthArg::Exploit => Truth::Exploited(
                    exploits
                        .as_ref()
                        .ok_or_else(|| usage("--truth exploit needs paths.exploits"))?,
                ),
            };
            let acfg = AccountConfig {
                min_tweets: cfg.forecast.min_tweets,
                score_floor: cfg.forecast.score_floor,
                truth,
            };
            let rows = forecast::account_reliability(&table, &authors, &scores, &store, &acfg);
            let mut csv = String::from("account,correct,forecasts,accuracy\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{},{}\n", r.account, r.correct, r.forecasts, r.accuracy));
            }
            stage.write("accounts.csv", csv)?;
            Ok(())
        }
    }
}
