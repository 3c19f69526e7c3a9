//! Line-delimited JSON store of responses keyed by request fingerprint.
//!
//! Record mode appends through a single locked writer and never rewrites a
//! line; the first entry for a fingerprint wins. Replay mode opens the file
//! read-only. No request headers or credentials are stored.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatResponse, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub provider: String,
    pub model: String,
    pub status: u16,
    pub latency_ms: u64,
    pub recorded_at: String,
    pub response_text: String,
}

impl CassetteEntry {
    pub fn to_response(&self) -> ChatResponse {
        ChatResponse {
            text: self.response_text.clone(),
            status: self.status,
            latency_ms: self.latency_ms,
            provider: self.provider.clone(),
            model: self.model.clone(),
        }
    }
}

struct State {
    entries: HashMap<String, CassetteEntry>,
    writer: Option<File>,
}

pub struct Cassette {
    path: PathBuf,
    state: Mutex<State>,
}

fn read_entries(path: &Path) -> Result<HashMap<String, CassetteEntry>, GatewayError> {
    let file = File::open(path).map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
    let mut entries = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Cassette(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(&line)
            .map_err(|e| GatewayError::Cassette(format!("{} line {}: {e}", path.display(), i + 1)))?;
        entries.entry(entry.fingerprint.clone()).or_insert(entry);
    }
    Ok(entries)
}

impl Cassette {
    pub fn open_for_replay(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self {
            path: path.to_path_buf(),
            state: Mutex::new(State {
                entries: read_entries(path)?,
                writer: None,
            }),
        })
    }

    /// Existing entries are kept; new ones are appended.
    pub fn open_for_record(path: &Path) -> Result<Self, GatewayError> {
        let entries = if path.exists() {
            read_entries(path)?
        } else {
            HashMap::new()
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| GatewayError::Cassette(e.to_string()))?;
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            state: Mutex::new(State {
                entries,
                writer: Some(writer),
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cassette lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, fingerprint: &str) -> Option<CassetteEntry> {
        self.state
            .lock()
            .expect("cassette lock")
            .entries
            .get(fingerprint)
            .cloned()
    }

    pub fn append(&self, fingerprint: &str, resp: &ChatResponse) -> Result<(), GatewayError> {
        let mut state = self.state.lock().expect("cassette lock");
        if state.entries.contains_key(fingerprint) {
            return Ok(());
        }
        let entry = CassetteEntry {
            fingerprint: fingerprint.to_string(),
            provider: resp.provider.clone(),
            model: resp.model.clone(),
            status: resp.status,
            latency_ms: resp.latency_ms,
            recorded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            response_text: resp.text.clone(),
        };
        let line = serde_json::to_string(&entry).map_err(|e| GatewayError::Cassette(e.to_string()))? + "\n";
        let writer = state
            .writer
            .as_mut()
            .ok_or_else(|| GatewayError::Cassette("cassette is open read-only".into()))?;
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| GatewayError::Cassette(e.to_string()))?;
        state.entries.insert(fingerprint.to_string(), entry);
        Ok(())
    }
}
