//! Seed-level run store: one JSON record per run under `seed-<s>/`, keyed by
//! a content hash of everything the run depends on.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rewire_core::data::Dataset;
use rewire_core::diagnostics::graph_hash;
use rewire_core::models::{BackboneConfig, GraphParam};
use rewire_core::trainers::{train, RunRecord, TrainConfig};
use rewire_core::Result;

use crate::config::mode_name;

#[derive(Serialize, Deserialize)]
pub struct StoredRun {
    pub config_hash: String,
    pub seed: u64,
    pub run_key: String,
    pub record: RunRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub seed: u64,
    pub mode: String,
    pub inner_steps: usize,
    pub run_key: String,
    pub message: String,
}

pub struct Store {
    root: PathBuf,
    config_hash: String,
    /// Canonical dataset description mixed into every run key.
    dataset_key: String,
    resume: bool,
    memo: Mutex<HashMap<String, RunRecord>>,
    outcomes: Mutex<BTreeMap<String, Option<FailedRun>>>,
    pub trained: AtomicUsize,
    pub reused: AtomicUsize,
}

impl Store {
    pub fn new(root: &Path, config_hash: String, dataset_key: String, resume: bool) -> Self {
        Self {
            root: root.to_path_buf(),
            config_hash,
            dataset_key,
            resume,
            memo: Mutex::new(HashMap::new()),
            outcomes: Mutex::new(BTreeMap::new()),
            trained: AtomicUsize::new(0),
            reused: AtomicUsize::new(0),
        }
    }

    fn key(&self, cfg: &TrainConfig, bb: &BackboneConfig, phi: &GraphParam, data: &Dataset) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(cfg).expect("config serializes"));
        h.update(serde_json::to_vec(bb).expect("backbone serializes"));
        h.update(serde_json::to_vec(phi).expect("structure serializes"));
        h.update(self.dataset_key.as_bytes());
        h.update(graph_hash(data.graph()).to_le_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, cfg: &TrainConfig, key: &str) -> PathBuf {
        self.root
            .join(format!("seed-{}", cfg.seed))
            .join(format!("{}-T{}-{}.json", mode_name(cfg.mode), cfg.inner_steps, &key[..16]))
    }

    fn load(&self, path: &Path, key: &str) -> Option<RunRecord> {
        let text = std::fs::read_to_string(path).ok()?;
        let s: StoredRun = serde_json::from_str(&text).ok()?;
        (s.run_key == key).then_some(s.record)
    }

    fn note(&self, cfg: &TrainConfig, key: &str, failure: Option<String>) {
        let f = failure.map(|message| FailedRun {
            seed: cfg.seed,
            mode: mode_name(cfg.mode).into(),
            inner_steps: cfg.inner_steps,
            run_key: key.to_string(),
            message,
        });
        self.outcomes.lock().expect("outcome lock").insert(key.to_string(), f);
    }

    /// Trains or, under `--resume`, reloads a finished record with the same key.
    pub fn run(&self, cfg: &TrainConfig, bb: &BackboneConfig, phi: &GraphParam, data: &Dataset) -> Result<RunRecord> {
        let key = self.key(cfg, bb, phi, data);
        if let Some(r) = self.memo.lock().expect("memo lock").get(&key) {
            return Ok(r.clone());
        }
        let path = self.path(cfg, &key);
        if self.resume {
            if let Some(r) = self.load(&path, &key) {
                self.reused.fetch_add(1, Ordering::Relaxed);
                self.note(cfg, &key, r.failure.clone());
                self.memo.lock().expect("memo lock").insert(key, r.clone());
                return Ok(r);
            }
        }
        self.trained.fetch_add(1, Ordering::Relaxed);
        let rec = match train(cfg, bb, phi, data) {
            Ok(r) => r,
            Err(e) => {
                self.note(cfg, &key, Some(e.to_string()));
                return Err(e);
            }
        };
        self.note(cfg, &key, rec.failure.clone());
        let stored = StoredRun {
            config_hash: self.config_hash.clone(),
            seed: cfg.seed,
            run_key: key.clone(),
            record: rec,
        };
        write_json(&path, &stored)?;
        let rec = stored.record;
        self.memo.lock().expect("memo lock").insert(key, rec.clone());
        Ok(rec)
    }

    pub fn failures(&self) -> Vec<FailedRun> {
        let o = self.outcomes.lock().expect("outcome lock");
        let mut f: Vec<FailedRun> = o.values().flatten().cloned().collect();
        f.sort_by(|a, b| (a.seed, &a.mode, a.inner_steps).cmp(&(b.seed, &b.mode, b.inner_steps)));
        f
    }

    pub fn run_count(&self) -> usize {
        self.outcomes.lock().expect("outcome lock").len()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
