use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/linking")
}

fn run(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_threatcast"))
        .current_dir(root)
        .env_remove("THREATCAST_CACHE_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn write_config(root: &Path, extra_paths: &str) {
    let f = fixture();
    let text = format!(
        "seed = 3\n\n[paths]\nstream = \"{}\"\noutput_dir = \"out\"\n{extra_paths}\n",
        f.join("tweets.jsonl").display()
    );
    fs::write(root.join("config.toml"), text).unwrap();
}

fn full_paths() -> String {
    let f = fixture();
    format!(
        "nvd = [\"{}\"]\npage_cache = \"{}\"",
        f.join("nvd.jsonl").display(),
        f.display()
    )
}

#[test]
fn missing_nvd_is_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &format!("page_cache = \"{}\"", fixture().display()));
    let out = run(dir.path(), &["-c", "config.toml", "link", "build"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("out/link").exists());

    write_config(dir.path(), "nvd = [\"nowhere.jsonl\"]");
    let out = run(dir.path(), &["-c", "config.toml", "link", "build"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing input"));
    assert!(!dir.path().join("out/link").exists());
}

#[test]
fn bad_config_and_bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), "[paths]\nbogus = 1\n").unwrap();
    assert_eq!(run(dir.path(), &["-c", "config.toml", "link", "audit"]).status.code(), Some(2));
    fs::write(dir.path().join("config.toml"), "seed = \"x\"\n").unwrap();
    assert_eq!(run(dir.path(), &["-c", "config.toml", "link", "audit"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["-c", "absent.toml", "link", "audit"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["forecast", "rank", "--scorer", "psychic"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["nonsense"]).status.code(), Some(2));
}

#[test]
fn corrupt_input_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tweets.jsonl"), "{not json\n").unwrap();
    write_config(dir.path(), &full_paths());
    let text = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    let stream = fixture().join("tweets.jsonl").display().to_string();
    fs::write(dir.path().join("config.toml"), text.replace(&stream, "tweets.jsonl")).unwrap();
    let out = run(dir.path(), &["-c", "config.toml", "link", "build"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("out/link").exists());
}

#[test]
fn link_build_matches_fixture_and_volume_ranking_is_sorted() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &full_paths());
    let out = run(dir.path(), &["-c", "config.toml", "link", "build"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let links = fs::read_to_string(dir.path().join("out/link/links.csv")).unwrap();
    assert_eq!(links, fs::read_to_string(fixture().join("expected_links.csv")).unwrap());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/link/build.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stage"], "build");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 3);
    assert!(manifest["outputs"]["links.csv"].as_str().unwrap().len() == 64);
    assert_eq!(manifest["params"]["kept_cves"], 6);

    let out = run(dir.path(), &["-c", "config.toml", "forecast", "rank", "--scorer", "volume"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("out/forecast/ranking-volume.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "rank,cve_id,score,cvss_v3,severe,exploited,first_tweet_date,n_tweets"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    let counts: Vec<usize> = rows.iter().map(|r| r[7].parse().unwrap()).collect();
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1).to_string());
        assert_eq!(r[2].parse::<f64>().unwrap(), counts[i] as f64);
    }
}

#[test]
fn cache_dir_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    fs::write(dir.path().join("empty/manifest.tsv"), "").unwrap();
    write_config(
        dir.path(),
        &format!("nvd = [\"{}\"]\npage_cache = \"empty\"", fixture().join("nvd.jsonl").display()),
    );
    let out = run(dir.path(), &["-c", "config.toml", "link", "build"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let without = fs::read_to_string(dir.path().join("out/link/links.csv")).unwrap();
    let expected = fs::read_to_string(fixture().join("expected_links.csv")).unwrap();
    assert_ne!(without, expected);

    let out = Command::new(env!("CARGO_BIN_EXE_threatcast"))
        .current_dir(dir.path())
        .env("THREATCAST_CACHE_DIR", fixture())
        .args(["-c", "config.toml", "link", "build"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("out/link/links.csv")).unwrap(), expected);
}

#[test]
fn forecast_without_links_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &full_paths());
    let out = run(dir.path(), &["-c", "config.toml", "forecast", "eval", "--scorer", "true-cvss"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/forecast").exists());
}

#[test]
fn config_rejects_missing_inputs_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "lexicon = \"gone.txt\"");
    let out = run(dir.path(), &["-c", "config.toml", "corpus", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gone.txt"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn nvd_convert_reads_official_feed() {
    let dir = tempfile::tempdir().unwrap();
    let feed = dir.path().join("feed.json");
    fs::write(
        &feed,
        r#"{"vulnerabilities": [{"cve": {"id": "CVE-2017-6753", "published": "2017-07-25T23:29:00.237",
            "descriptions": [{"lang": "en", "value": "WebEx"}],
            "metrics": {"cvssMetricV30": [{"cvssData": {"baseScore": 8.8}}]}}}]}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_threatcast-nvd-convert")).arg(&feed).output().unwrap();
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    let rec = threatcast::nvd::parse_record(line.trim()).unwrap();
    assert_eq!(rec.cve_id, "CVE-2017-6753");
    assert_eq!(rec.cvss_v3, Some(8.8));
    let out = Command::new(env!("CARGO_BIN_EXE_threatcast-nvd-convert")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
