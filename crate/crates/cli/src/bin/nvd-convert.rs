//! Converts official NVD JSON documents (1.1 data feeds or API 2.0 responses)
//! into the record JSONL read by `threatcast`.
//!
//! Usage: threatcast-nvd-convert FEED.json... > nvd.jsonl

use std::io::{self, BufWriter};
use std::process::ExitCode;

use threatcast::nvd::{convert_official_feed, NvdStore};

fn main() -> ExitCode {
    let paths: Vec<String> = std::env::args().skip(1).collect();
    if paths.is_empty() || paths.iter().any(|p| p == "-h" || p == "--help") {
        eprintln!("usage: threatcast-nvd-convert FEED.json... > nvd.jsonl");
        return ExitCode::from(2);
    }
    let mut store = NvdStore::default();
    for p in &paths {
        let doc: serde_json::Value = match std::fs::read(p).map_err(|e| e.to_string()).and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string())) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("threatcast-nvd-convert: {p}: {e}");
                return ExitCode::from(1);
            }
        };
        let recs = convert_official_feed(&doc);
        eprintln!("{p}: {} records", recs.len());
        for r in recs {
            store.insert(r);
        }
    }
    match store.write_to(BufWriter::new(io::stdout().lock())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("threatcast-nvd-convert: {e}");
            ExitCode::from(1)
        }
    }
}
