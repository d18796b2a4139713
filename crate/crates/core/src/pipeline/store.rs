//! Curation items persisted as an append-only log of JSON events, one per
//! line. Every mutation is flushed to disk before it becomes visible.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, pair_id, write_pairs, ConceptSentencePair, CorpusError};
use crate::metrics::BatchInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ItemStatus {
    Pending,
    Accepted,
    Rejected,
}

impl ItemStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemStatus::Pending => "PENDING",
            ItemStatus::Accepted => "ACCEPTED",
            ItemStatus::Rejected => "REJECTED",
        }
    }

    pub fn can_become(self, next: ItemStatus) -> bool {
        self == ItemStatus::Pending && next != ItemStatus::Pending
    }
}

impl std::str::FromStr for ItemStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PENDING" => Ok(ItemStatus::Pending),
            "ACCEPTED" => Ok(ItemStatus::Accepted),
            "REJECTED" => Ok(ItemStatus::Rejected),
            _ => Err(format!("unknown status `{s}`; expected PENDING, ACCEPTED or REJECTED")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateMetrics {
    pub coverage_all: f64,
    pub coverage_any: f64,
    pub length: f64,
    pub diversity: f64,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub metrics: CandidateMetrics,
}

pub const SCORE_RANGE: std::ops::RangeInclusive<u8> = 1..=4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReviewRecord {
    pub reviewer_id: String,
    /// Index of the reviewed candidate.
    #[serde(default)]
    pub candidate: usize,
    pub grammaticality: u8,
    pub complexity: u8,
    pub plausibility: u8,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReviewMeans {
    pub reviews: usize,
    pub grammaticality: f64,
    pub complexity: f64,
    pub plausibility: f64,
}

impl ReviewMeans {
    fn over<'a>(reviews: impl Iterator<Item = &'a ReviewRecord>) -> Option<ReviewMeans> {
        let (mut n, mut g, mut c, mut p) = (0usize, 0u64, 0u64, 0u64);
        for r in reviews {
            n += 1;
            g += u64::from(r.grammaticality);
            c += u64::from(r.complexity);
            p += u64::from(r.plausibility);
        }
        let mean = |s: u64| s as f64 / n as f64;
        (n > 0).then(|| ReviewMeans { reviews: n, grammaticality: mean(g), complexity: mean(c), plausibility: mean(p) })
    }

    pub fn overall(&self) -> f64 {
        (self.grammaticality + self.complexity + self.plausibility) / 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ItemRecord {
    pub item_id: String,
    pub request: BatchInput,
    pub candidates: Vec<Candidate>,
    pub status: ItemStatus,
    pub reviews: Vec<ReviewRecord>,
}

impl ItemRecord {
    /// Means over every review of the item.
    pub fn means(&self) -> Option<ReviewMeans> {
        ReviewMeans::over(self.reviews.iter())
    }

    pub fn candidate_means(&self, candidate: usize) -> Option<ReviewMeans> {
        ReviewMeans::over(self.reviews.iter().filter(|r| r.candidate == candidate))
    }

    /// The reviewed candidate with the highest mean score, ties to the lower
    /// index; the first candidate when none was reviewed.
    pub fn winning_candidate(&self) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.candidates.len() {
            if let Some(m) = self.candidate_means(i) {
                if best.is_none_or(|(_, s)| m.overall() > s) {
                    best = Some((i, m.overall()));
                }
            }
        }
        best.map_or(0, |(i, _)| i)
    }

    /// The winning candidate as a dataset pair.
    pub fn to_pair(&self) -> ConceptSentencePair {
        let sentence = normalize_text(&self.candidates[self.winning_candidate()].text);
        let mut concepts = self.request.concepts.clone();
        concepts.sort();
        ConceptSentencePair {
            id: pair_id(&sentence),
            concepts: concepts.into_iter().collect(),
            sentence,
            source: format!("curation:{}", self.item_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "camelCase")]
enum Event {
    Created {
        item: ItemRecord,
    },
    #[serde(rename_all = "camelCase")]
    Reviewed {
        item_id: String,
        review: ReviewRecord,
    },
    #[serde(rename_all = "camelCase")]
    Status {
        item_id: String,
        status: ItemStatus,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no item `{0}`")]
    NotFound(String),
    #[error("item {id} is {from}; it cannot become {to}", from = .from.as_str(), to = .to.as_str())]
    InvalidTransition { id: String, from: ItemStatus, to: ItemStatus },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("{path}:{line}: corrupt store record: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Snapshot = Arc<BTreeMap<String, ItemRecord>>;

/// Log events appended since the last compaction before the next automatic
/// one.
const COMPACT_AFTER: usize = 1024;

struct Inner {
    file: File,
    items: Snapshot,
    created: u64,
    appended: usize,
}

pub struct ItemStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn apply(items: &mut BTreeMap<String, ItemRecord>, event: Event) -> Result<(), String> {
    match event {
        Event::Created { item } => {
            items.insert(item.item_id.clone(), item);
        }
        Event::Reviewed { item_id, review } => {
            items.get_mut(&item_id).ok_or(format!("review for unknown item {item_id}"))?.reviews.push(review);
        }
        Event::Status { item_id, status } => {
            items.get_mut(&item_id).ok_or(format!("status for unknown item {item_id}"))?.status = status;
        }
    }
    Ok(())
}

impl ItemStore {
    /// Opens or creates the log at `path`, replaying it. A torn final line
    /// (an interrupted append) is discarded.
    pub fn open(path: &Path) -> Result<ItemStore, StoreError> {
        let io = |source| StoreError::Io { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io)?;
        let mut items = BTreeMap::new();
        let mut reader = BufReader::new(&file);
        let mut offset = 0u64;
        let mut line_no = 0;
        let mut events = 0;
        let mut torn_at = None;
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(io)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let complete = line.ends_with('\n');
            if !line.trim().is_empty() {
                match serde_json::from_str::<Event>(line.trim()) {
                    Ok(event) => {
                        apply(&mut items, event).map_err(|reason| StoreError::Corrupt {
                            path: path.to_path_buf(),
                            line: line_no,
                            reason,
                        })?;
                        events += 1;
                    }
                    Err(_) if !complete => {
                        torn_at = Some(offset);
                        break;
                    }
                    Err(e) => return Err(StoreError::Corrupt { path: path.to_path_buf(), line: line_no, reason: e.to_string() }),
                }
            }
            offset += n as u64;
        }
        drop(reader);
        if let Some(at) = torn_at {
            log::warn!("{}: discarding torn record at byte {at}", path.display());
            file.set_len(at).map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
        }
        let created = items.len() as u64;
        Ok(ItemStore { path: path.to_path_buf(), inner: Mutex::new(Inner { file, items: Arc::new(items), created, appended: events }) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// An immutable view of every item.
    pub fn snapshot(&self) -> Snapshot {
        self.lock().items.clone()
    }

    pub fn get(&self, id: &str) -> Option<ItemRecord> {
        self.snapshot().get(id).cloned()
    }

    pub fn list(&self, status: Option<ItemStatus>) -> Vec<ItemRecord> {
        self.snapshot().values().filter(|i| status.is_none_or(|s| i.status == s)).cloned().collect()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn append(&self, inner: &mut Inner, event: &Event) -> Result<(), StoreError> {
        let io = |source| StoreError::Io { path: self.path.clone(), source };
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        inner.file.write_all(&line).map_err(io)?;
        inner.file.sync_data().map_err(io)?;
        inner.appended += 1;
        Ok(())
    }

    fn after_append(&self, inner: &mut Inner) -> Result<(), StoreError> {
        if inner.appended >= COMPACT_AFTER && inner.appended > 2 * inner.items.len() {
            self.compact_locked(inner)?;
        }
        Ok(())
    }

    /// Records a new pending item and returns it.
    pub fn create(&self, request: BatchInput, candidates: Vec<Candidate>) -> Result<ItemRecord, StoreError> {
        if candidates.is_empty() {
            return Err(StoreError::Invalid { field: "candidates", reason: "an item needs at least one candidate".into() });
        }
        let mut inner = self.lock();
        let item_id = format!("item-{:06}", inner.created + 1);
        let item = ItemRecord { item_id: item_id.clone(), request, candidates, status: ItemStatus::Pending, reviews: Vec::new() };
        self.append(&mut inner, &Event::Created { item: item.clone() })?;
        inner.created += 1;
        Arc::make_mut(&mut inner.items).insert(item_id, item.clone());
        self.after_append(&mut inner)?;
        Ok(item)
    }

    /// Appends a review. Scores must lie in `[1, 4]`; a missing timestamp is
    /// filled with the current time.
    pub fn review(&self, id: &str, mut review: ReviewRecord) -> Result<ItemRecord, StoreError> {
        for (field, v) in
            [("grammaticality", review.grammaticality), ("complexity", review.complexity), ("plausibility", review.plausibility)]
        {
            if !SCORE_RANGE.contains(&v) {
                return Err(StoreError::Invalid { field, reason: format!("{v} is outside 1..=4") });
            }
        }
        if review.reviewer_id.trim().is_empty() {
            return Err(StoreError::Invalid { field: "reviewerId", reason: "must not be empty".into() });
        }
        if review.timestamp == 0 {
            review.timestamp = now_millis();
        }
        let mut inner = self.lock();
        let item = inner.items.get(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        if review.candidate >= item.candidates.len() {
            return Err(StoreError::Invalid {
                field: "candidate",
                reason: format!("index {} but the item has {} candidates", review.candidate, item.candidates.len()),
            });
        }
        self.append(&mut inner, &Event::Reviewed { item_id: id.to_string(), review: review.clone() })?;
        let items = Arc::make_mut(&mut inner.items);
        let item = items.get_mut(id).expect("checked above");
        item.reviews.push(review);
        let item = item.clone();
        self.after_append(&mut inner)?;
        Ok(item)
    }

    pub fn set_status(&self, id: &str, status: ItemStatus) -> Result<ItemRecord, StoreError> {
        let mut inner = self.lock();
        let item = inner.items.get(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        if !item.status.can_become(status) {
            return Err(StoreError::InvalidTransition { id: id.to_string(), from: item.status, to: status });
        }
        self.append(&mut inner, &Event::Status { item_id: id.to_string(), status })?;
        let items = Arc::make_mut(&mut inner.items);
        let item = items.get_mut(id).expect("checked above");
        item.status = status;
        let item = item.clone();
        self.after_append(&mut inner)?;
        Ok(item)
    }

    /// Rewrites the log as one record per item.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut inner = self.lock();
        self.compact_locked(&mut inner)
    }

    fn compact_locked(&self, inner: &mut Inner) -> Result<(), StoreError> {
        let io = |source| StoreError::Io { path: self.path.clone(), source };
        let tmp = self.path.with_extension("compact.tmp");
        {
            let mut out = File::create(&tmp).map_err(io)?;
            for item in inner.items.values() {
                let mut line = serde_json::to_vec(&Event::Created { item: item.clone() }).expect("events serialize");
                line.push(b'\n');
                out.write_all(&line).map_err(io)?;
            }
            out.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, &self.path).map_err(io)?;
        if let Some(dir) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        inner.file = OpenOptions::new().append(true).open(&self.path).map_err(io)?;
        inner.appended = inner.items.len();
        Ok(())
    }
}

/// Accepted items in id order, each as its winning candidate's pair.
pub fn accepted_pairs(items: &BTreeMap<String, ItemRecord>) -> Vec<ConceptSentencePair> {
    items.values().filter(|i| i.status == ItemStatus::Accepted).map(ItemRecord::to_pair).collect()
}

/// Writes every accepted item to `path` in the dataset pair format and
/// returns how many were written.
pub fn export_accepted(store: &ItemStore, path: &Path) -> Result<usize, CorpusError> {
    let pairs = accepted_pairs(&store.snapshot());
    write_pairs(&pairs, path)?;
    Ok(pairs.len())
}
