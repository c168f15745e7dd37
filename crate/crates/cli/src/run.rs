//! Stage bookkeeping: input digests, tracked outputs and the manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use threatcast::digest::sha256_hex;

use crate::config::PipelineConfig;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<threatcast::Error> for Failure {
    fn from(e: threatcast::Error) -> Self {
        match e {
            threatcast::Error::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

#[derive(Serialize)]
struct Manifest<'a> {
    stage: &'a str,
    args: &'a [String],
    seed: u64,
    config_sha256: String,
    inputs: &'a BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    params: &'a BTreeMap<String, serde_json::Value>,
    config: &'a str,
}

pub struct Stage<'c> {
    pub name: String,
    pub config: &'c PipelineConfig,
    pub dir: PathBuf,
    args: Vec<String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    params: BTreeMap<String, serde_json::Value>,
    created_dir: bool,
}

impl<'c> Stage<'c> {
    /// A stage writing under `<output_dir>/<group>`.
    pub fn new(name: &str, group: &str, args: Vec<String>, config: &'c PipelineConfig) -> Self {
        Stage {
            name: name.to_string(),
            config,
            dir: config.paths.output_dir.join(group),
            args,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            params: BTreeMap::new(),
            created_dir: false,
        }
    }

    /// Checks that `path` exists and records its digest (directories hash their listing and contents).
    pub fn input(&mut self, path: &Path) -> Outcome<PathBuf> {
        if !path.exists() {
            return Err(usage(format!("missing input {}", path.display())));
        }
        let digest = digest_path(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(path.to_path_buf())
    }

    pub fn required<'p>(&mut self, path: Option<&'p Path>, what: &str) -> Outcome<PathBuf> {
        let p = path.ok_or_else(|| usage(format!("no {what} path configured")))?;
        self.input(p)
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.params
            .insert(key.to_string(), serde_json::to_value(value).expect("param serializes"));
    }

    /// Registers an output file under the stage directory and returns its path.
    pub fn output(&mut self, name: &str) -> Outcome<PathBuf> {
        if !self.dir.exists() {
            fs::create_dir_all(&self.dir)?;
            self.created_dir = true;
        }
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.outputs.push(p.clone());
        Ok(p)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Outcome<PathBuf> {
        let p = self.output(name)?;
        fs::write(&p, bytes)?;
        Ok(p)
    }

    pub fn finish(mut self) -> Outcome<PathBuf> {
        let config = self.config.to_toml();
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            let rel = p.strip_prefix(&self.dir).unwrap_or(p).display().to_string();
            outputs.insert(rel, sha256_hex(&fs::read(p)?));
        }
        let manifest = Manifest {
            stage: &self.name,
            args: &self.args,
            seed: self.config.seed,
            config_sha256: sha256_hex(config.as_bytes()),
            inputs: &self.inputs,
            outputs,
            params: &self.params,
            config: &config,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let name = format!("{}.manifest.json", self.name.replace(' ', "-"));
        let path = self.output(&name)?;
        fs::write(&path, text)?;
        self.outputs.clear();
        Ok(path)
    }

    /// Removes everything this stage wrote.
    pub fn abort(self) {
        for p in &self.outputs {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn digest_path(path: &Path) -> Outcome<String> {
    if path.is_file() {
        return Ok(sha256_hex(&fs::read(path)?));
    }
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    files.sort();
    let mut acc = Vec::new();
    for f in files {
        let rel = f.strip_prefix(path).unwrap_or(&f).display().to_string();
        acc.extend_from_slice(rel.as_bytes());
        acc.push(0);
        acc.extend_from_slice(sha256_hex(&fs::read(&f)?).as_bytes());
        acc.push(b'\n');
    }
    Ok(sha256_hex(&acc))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Outcome {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}
