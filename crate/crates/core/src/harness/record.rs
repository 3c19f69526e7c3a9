//! Evaluation records, the append-only journal, and the run manifest.
//!
//! A run appends each finished call to `rq{n}.journal.jsonl` as it
//! completes, then writes the sorted `rq{n}.records.jsonl`. Re-running reads
//! the journal back and only repeats calls that are missing or failed.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::alignment::AlignmentScore;
use crate::gateway::{AttemptLog, TransportMode};
use crate::models::ConfusionCell;
use crate::prompt::{PromptMode, Violation};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub schema_version: u32,
    pub instance_id: usize,
    pub cell: ConfusionCell,
    pub base_model: String,
    /// `provider/model`.
    pub llm: String,
    pub mode: PromptMode,
    /// `base_model:llm:mode`; with `instance_id`, the record's sort key.
    pub arm_id: String,
    pub k_out: usize,
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demo_ids: Vec<usize>,
    pub prompt: String,
    pub reply: Option<String>,
    /// Transport failure; such records carry no scores.
    pub error: Option<String>,
    /// The reply held no usable ranked line; scored as an empty ranking.
    #[serde(default)]
    pub unparseable: bool,
    pub parsed: Vec<String>,
    pub violations: Vec<Violation>,
    /// Full reference ranking, most influential first.
    pub reference: Vec<String>,
    pub scores: Option<AlignmentScore>,
    pub attempts: Vec<AttemptLog>,
}

impl EvalRecord {
    pub fn sort_key(&self) -> (usize, &str) {
        (self.instance_id, &self.arm_id)
    }

    /// Scores from the stored rankings alone.
    pub fn recompute_scores(&self) -> Result<Option<AlignmentScore>, HarnessError> {
        match &self.scores {
            None => Ok(None),
            Some(s) => Ok(Some(AlignmentScore::compute(
                &self.reference,
                &self.parsed,
                &s.k_values,
            )?)),
        }
    }
}

pub fn arm_id(base_model: &str, llm: &str, mode: PromptMode) -> String {
    format!("{base_model}:{llm}:{}", mode.as_str())
}

pub fn journal_path(dir: &Path, rq: u8) -> PathBuf {
    dir.join(format!("rq{rq}.journal.jsonl"))
}

pub fn records_path(dir: &Path, rq: u8) -> PathBuf {
    dir.join(format!("rq{rq}.records.jsonl"))
}

pub fn manifest_path(dir: &Path, rq: u8) -> PathBuf {
    dir.join(format!("rq{rq}.manifest.json"))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Successful journal entries by fingerprint; later lines win. A torn last
/// line from an interrupted write is skipped.
pub fn read_journal(path: &Path) -> Result<HashMap<String, EvalRecord>, HarnessError> {
    let mut out = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let file = File::open(path).map_err(io(path))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EvalRecord>(&line) {
            Ok(r) if r.error.is_none() => {
                out.insert(r.fingerprint.clone(), r);
            }
            Ok(r) => {
                out.remove(&r.fingerprint);
            }
            Err(e) => log::warn!("{} line {}: skipping unreadable entry ({e})", path.display(), i + 1),
        }
    }
    Ok(out)
}

/// Single-writer append handle.
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    pub fn open(path: &Path) -> Result<Self, HarnessError> {
        // a torn final line would otherwise glue onto the next entry
        let needs_newline = fs::read(path)
            .map(|b| b.last().is_some_and(|&c| c != b'\n'))
            .unwrap_or(false);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io(path))?;
        if needs_newline {
            file.write_all(b"\n").map_err(io(path))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, record: &EvalRecord) -> Result<(), HarnessError> {
        let line = serde_json::to_string(record)? + "\n";
        self.file.write_all(line.as_bytes()).map_err(io(&self.path))?;
        self.file.flush().map_err(io(&self.path))
    }
}

/// Writes through a temporary file and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: EvalRecord = serde_json::from_str(line)
            .map_err(|e| HarnessError::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if r.schema_version != RECORD_SCHEMA_VERSION {
            return Err(HarnessError::Format(format!(
                "{} line {}: record schema {} (expected {RECORD_SCHEMA_VERSION})",
                path.display(),
                i + 1,
                r.schema_version
            )));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = fs::read(path).map_err(io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash over several files in the given order, each prefixed by its length.
pub fn sha256_files(paths: &[PathBuf]) -> Result<String, HarnessError> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).map_err(io(p))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub rq: u8,
    pub transport: TransportMode,
    pub config_hash: String,
    /// Matrix, labels and split files.
    pub data_hash: String,
    pub schema_hash: String,
    pub model_hashes: BTreeMap<String, String>,
    pub seed: u64,
    pub bot_seed: u64,
    pub jitter_seed: u64,
    pub threshold: f64,
    pub per_cell: usize,
    pub template_version: u32,
    /// Sampled instance ids per base model.
    pub sample: BTreeMap<String, Vec<usize>>,
    /// Few-shot demonstration ids per base model.
    pub demo_ids: BTreeMap<String, Vec<usize>>,
    pub n_records: usize,
    pub n_resumed: usize,
    pub n_failed: usize,
    pub started_at: String,
    pub finished_at: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: usize, arm: &str, fp: &str, error: Option<&str>) -> EvalRecord {
        let reference: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let parsed: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        EvalRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            instance_id: id,
            cell: ConfusionCell::TP,
            base_model: "gbdt".into(),
            llm: "bot/echo".into(),
            mode: PromptMode::ZeroShot,
            arm_id: arm.into(),
            k_out: 3,
            fingerprint: fp.into(),
            demo_ids: vec![],
            prompt: "p".into(),
            reply: Some("1. b\n2. a\n3. c".into()),
            error: error.map(str::to_string),
            unparseable: false,
            scores: error
                .is_none()
                .then(|| AlignmentScore::compute(&reference, &parsed, &[2, 3]).unwrap()),
            parsed,
            violations: vec![],
            reference,
            attempts: vec![],
        }
    }

    #[test]
    fn journal_tolerates_torn_lines_and_retries_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = journal_path(dir.path(), 1);
        let mut j = Journal::open(&path).unwrap();
        j.append(&record(1, "x", "f1", None)).unwrap();
        j.append(&record(2, "x", "f2", Some("timeout"))).unwrap();
        drop(j);
        // simulate a crash mid-write
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"schema_version\":1,\"instance_").unwrap();
        drop(f);
        let mut j = Journal::open(&path).unwrap();
        j.append(&record(3, "x", "f3", None)).unwrap();
        let got = read_journal(&path).unwrap();
        let mut keys: Vec<_> = got.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, vec!["f1", "f3"]);
    }

    #[test]
    fn records_round_trip_and_recompute() {
        let dir = tempfile::tempdir().unwrap();
        let path = records_path(dir.path(), 2);
        let rs = vec![record(1, "a", "f1", None), record(1, "b", "f2", Some("boom"))];
        write_records(&path, &rs).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, rs);
        assert_eq!(back[0].recompute_scores().unwrap(), back[0].scores);
        assert_eq!(back[1].recompute_scores().unwrap(), None);
        let s = back[0].scores.as_ref().unwrap();
        assert_eq!(s.overlap_at_k[&2], 1.0);
        assert_eq!(s.tau_at_k[&2], Some(-1.0));
    }

    #[test]
    fn file_hashes_are_order_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        fs::write(&a, "ab").unwrap();
        fs::write(&b, "c").unwrap();
        let ab = sha256_files(&[a.clone(), b.clone()]).unwrap();
        assert_ne!(ab, sha256_files(&[b.clone(), a.clone()]).unwrap());
        fs::write(&a, "a").unwrap();
        fs::write(&b, "bc").unwrap();
        assert_ne!(ab, sha256_files(&[a, b]).unwrap());
    }
}
