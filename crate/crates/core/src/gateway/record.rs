//! Audit log of every gateway call, and a provider that replays it.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{
    ChatMessage, ChatProvider, ChatRequest, ProviderError, ProviderReply, SamplingParams, Usage,
};

/// One line of the record log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub request_hash: String,
    pub endpoint: String,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub params: SamplingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    pub attempt: u32,
    #[serde(default)]
    pub usage: Usage,
}

/// Collects call records in memory and optionally appends them to a file.
/// Also tracks how many requests are in flight at once.
#[derive(Default)]
pub struct Recorder {
    entries: Mutex<Vec<CallRecord>>,
    sink: Option<Mutex<BufWriter<File>>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl std::fmt::Debug for Recorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recorder")
            .field("entries", &self.entries.lock().unwrap().len())
            .field("peak", &self.peak.load(Ordering::SeqCst))
            .finish()
    }
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            sink: Some(Mutex::new(BufWriter::new(file))),
            ..Self::default()
        })
    }

    pub fn record(&self, entry: CallRecord) {
        if let Some(sink) = &self.sink {
            let mut w = sink.lock().unwrap();
            let line = serde_json::to_string(&entry).expect("record serializes");
            // The log is an audit trail; a failed write must not fail the run.
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                tracing::warn!("record log write failed: {e}");
            }
        }
        self.entries.lock().unwrap().push(entry);
    }

    pub fn entries(&self) -> Vec<CallRecord> {
        self.entries.lock().unwrap().clone()
    }

    pub(crate) fn enter(&self) {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    pub(crate) fn exit(&self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }

    /// Largest number of simultaneously in-flight requests observed.
    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

pub fn read_record_log(path: &Path) -> std::io::Result<Vec<CallRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // A torn final line from an interrupted run is skipped.
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) => tracing::warn!("skipping unreadable record line: {e}"),
        }
    }
    Ok(out)
}

/// Reply text, latency in milliseconds and usage of one recorded call.
type Recorded = (String, u64, Usage);

/// Serves replies from a record log, keyed by request hash. Identical
/// requests are answered in the order they were recorded.
pub struct ReplayProvider {
    replies: Mutex<HashMap<String, VecDeque<Recorded>>>,
}

impl ReplayProvider {
    pub fn new(records: &[CallRecord]) -> Self {
        let mut replies: HashMap<String, VecDeque<_>> = HashMap::new();
        for r in records {
            if let Some(reply) = &r.reply {
                replies
                    .entry(r.request_hash.clone())
                    .or_default()
                    .push_back((reply.clone(), r.latency_ms, r.usage));
            }
        }
        Self {
            replies: Mutex::new(replies),
        }
    }
}

#[async_trait]
impl ChatProvider for ReplayProvider {
    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let hash = request.hash();
        let mut replies = self.replies.lock().unwrap();
        let (content, latency_ms, usage) = replies
            .get_mut(&hash)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| {
                ProviderError::ScriptMiss(format!("no recorded reply for request {hash}"))
            })?;
        Ok(ProviderReply {
            content,
            usage,
            latency: Some(Duration::from_millis(latency_ms)),
        })
    }
}
