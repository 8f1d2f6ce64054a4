//! Append-only cross-day history with a hashed n-gram embedder and
//! recency-decayed cosine retrieval.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::codec::{decode_trace_record, encode_trace_record, CodecError};
use crate::domain::{validate_history_record, HistoryRecord, Observation, Timestamp, Violation};

pub const EMBEDDING_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("invalid record: {0:?}")]
    InvalidRecord(Vec<Violation>),
    #[error("retrieval k must be >= 1")]
    ZeroK,
    #[error("decay lambda {0} outside (0,1]")]
    BadLambda(f64),
    #[error("now_index {now} precedes insertion index {latest}")]
    TimeTravel { now: u64, latest: u64 },
    #[error("line {line}: {source}")]
    Codec { line: usize, source: CodecError },
    #[error("sidecar has {sidecar} indices for {records} records")]
    SidecarMismatch { sidecar: usize, records: usize },
    #[error("sidecar line {0}: not an index")]
    SidecarParse(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Signed feature hashing of whitespace-token unigrams and bigrams into
/// [`EMBEDDING_DIM`] buckets, L2-normalized. Empty content maps to zero.
pub fn embed(content: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    let tokens: Vec<&str> = content.split_whitespace().collect();
    let mut add = |feature: &str| {
        let h = fnv1a(feature.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % EMBEDDING_DIM as u64) as usize] += sign;
    };
    for t in &tokens {
        add(t);
    }
    for w in tokens.windows(2) {
        add(&format!("{} {}", w[0], w[1]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Text digest of a record: scene, hour, day, executed labels and correctness flags.
pub fn record_digest(record: &HistoryRecord) -> String {
    let ts = &record.state_digest.timestamp;
    format!(
        "scene:{} hour:{} day:{} intent:{} task:{} intent_ok:{} task_ok:{}",
        record.state_digest.scene_id.0,
        ts.hour_slot,
        ts.day_index,
        record.action.intent_label,
        record.action.task_need_label,
        record.outcome.intent_correct,
        record.outcome.task_correct,
    )
}

/// Text digest of what the robot knows before inference at a step.
pub fn query_digest(observation: &Observation, ts: &Timestamp) -> String {
    let mut s = format!("scene:{} hour:{}", observation.scene_id.0, ts.hour_slot);
    if let Some(label) = observation.text_label {
        s.push_str(&format!(" intent:{label}"));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub record: HistoryRecord,
    pub embedding: Vec<f64>,
    pub insertion_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub embedding: Vec<f64>,
    pub k: usize,
    pub decay_lambda: f64,
}

/// Append-only history store. Entry ids are positions in the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
    next_index: u64,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// An empty store whose first insertion index is `index` (used when
    /// memory is reset mid-rollout so ages stay in global step units).
    pub fn starting_at(index: u64) -> Self {
        Self {
            entries: Vec::new(),
            next_index: index,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Validates and appends a record, returning its insertion index.
    pub fn append(&mut self, record: HistoryRecord) -> Result<u64, MemoryError> {
        let violations = validate_history_record(&record);
        if !violations.is_empty() {
            return Err(MemoryError::InvalidRecord(violations));
        }
        let index = self.next_index;
        self.push_entry(record, index);
        Ok(index)
    }

    fn push_entry(&mut self, record: HistoryRecord, insertion_index: u64) {
        let embedding = embed(&record_digest(&record));
        self.entries.push(MemoryEntry {
            record,
            embedding,
            insertion_index,
        });
        self.next_index = insertion_index + 1;
    }

    /// Top-k entries by `lambda^(now - insertion_index) * cosine`, ties broken
    /// by more recent insertion, then by lower entry id.
    pub fn retrieve(
        &self,
        query: &RetrievalQuery,
        now_index: u64,
    ) -> Result<Vec<(&MemoryEntry, f64)>, MemoryError> {
        if query.k == 0 {
            return Err(MemoryError::ZeroK);
        }
        if !(query.decay_lambda > 0.0 && query.decay_lambda <= 1.0) {
            return Err(MemoryError::BadLambda(query.decay_lambda));
        }
        if let Some(last) = self.entries.last() {
            if last.insertion_index > now_index {
                return Err(MemoryError::TimeTravel {
                    now: now_index,
                    latest: last.insertion_index,
                });
            }
        }
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(id, e)| {
                let age = (now_index - e.insertion_index) as i32;
                (id, query.decay_lambda.powi(age) * cosine(&query.embedding, &e.embedding))
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| {
                    self.entries[b.0]
                        .insertion_index
                        .cmp(&self.entries[a.0].insertion_index)
                })
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(query.k);
        Ok(scored
            .into_iter()
            .map(|(id, s)| (&self.entries[id], s))
            .collect())
    }

    /// Writes records as a trace file and insertion indices as a sidecar.
    pub fn save(&self, trace_path: &Path, sidecar_path: &Path) -> Result<(), MemoryError> {
        let mut trace = BufWriter::new(fs::File::create(trace_path)?);
        let mut sidecar = BufWriter::new(fs::File::create(sidecar_path)?);
        for (i, e) in self.entries.iter().enumerate() {
            let line = encode_trace_record(&e.record)
                .map_err(|source| MemoryError::Codec { line: i + 1, source })?;
            writeln!(trace, "{line}")?;
            writeln!(sidecar, "{}", e.insertion_index)?;
        }
        trace.flush()?;
        sidecar.flush()?;
        Ok(())
    }

    /// Reloads a saved store; embeddings are recomputed.
    pub fn load(trace_path: &Path, sidecar_path: &Path) -> Result<Self, MemoryError> {
        let mut records = Vec::new();
        for (i, line) in io::BufReader::new(fs::File::open(trace_path)?).lines().enumerate() {
            let line = line?;
            records.push(
                decode_trace_record(&line)
                    .map_err(|source| MemoryError::Codec { line: i + 1, source })?,
            );
        }
        let mut indices = Vec::new();
        for (i, line) in io::BufReader::new(fs::File::open(sidecar_path)?).lines().enumerate() {
            indices.push(
                line?
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| MemoryError::SidecarParse(i + 1))?,
            );
        }
        if indices.len() != records.len() {
            return Err(MemoryError::SidecarMismatch {
                sidecar: indices.len(),
                records: records.len(),
            });
        }
        let mut store = MemoryStore::new();
        for (record, index) in records.into_iter().zip(indices) {
            if index < store.next_index {
                return Err(MemoryError::SidecarParse(store.len() + 1));
            }
            store.push_entry(record, index);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::record;

    #[test]
    fn embedding_is_deterministic_and_unit_norm() {
        let a = embed("intent:7 task:12");
        assert_eq!(a, embed("intent:7 task:12"));
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
        let n: f64 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_content_embeds_to_zero() {
        assert!(embed("").iter().all(|x| *x == 0.0));
        assert!(embed("   ").iter().all(|x| *x == 0.0));
    }

    #[test]
    fn extended_content_is_partially_similar() {
        let c = cosine(&embed("intent:7 task:12"), &embed("intent:7 task:12 hour:3"));
        assert!(c > 0.0 && c < 1.0, "{c}");
    }

    #[test]
    fn appends_assign_monotone_indices_and_keep_entries() {
        let mut store = MemoryStore::new();
        assert_eq!(store.append(record()).unwrap(), 0);
        let snapshot = store.entries()[0].clone();
        assert_eq!(store.append(record()).unwrap(), 1);
        assert_eq!(store.len(), 2);
        assert_eq!(store.entries()[0], snapshot);
    }

    #[test]
    fn invalid_record_is_rejected() {
        let mut r = record();
        r.outcome.assistance_score = 2.0;
        let mut store = MemoryStore::new();
        assert!(matches!(store.append(r), Err(MemoryError::InvalidRecord(_))));
        assert!(store.is_empty());
    }

    #[test]
    fn zero_k_is_an_error() {
        let store = MemoryStore::new();
        let q = RetrievalQuery {
            embedding: embed("x"),
            k: 0,
            decay_lambda: 0.95,
        };
        assert!(matches!(store.retrieve(&q, 0), Err(MemoryError::ZeroK)));
    }

    #[test]
    fn decay_scales_equal_cosines_by_age() {
        let mut store = MemoryStore::new();
        for _ in 0..5 {
            store.append(record()).unwrap();
        }
        let q = RetrievalQuery {
            embedding: embed(&record_digest(&record())),
            k: 10,
            decay_lambda: 0.95,
        };
        // now = 5: entry 4 has age 1, entry 0 has age 5.
        let hits = store.retrieve(&q, 5).unwrap();
        let score_of = |idx: u64| hits.iter().find(|(e, _)| e.insertion_index == idx).unwrap().1;
        let ratio = score_of(0) / score_of(4);
        assert!((ratio - 0.95f64.powi(4)).abs() < 1e-12);
        assert_eq!(hits[0].0.insertion_index, 4);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::starting_at(7);
        store.append(record()).unwrap();
        store.append(record()).unwrap();
        let (t, s) = (dir.path().join("m.jsonl"), dir.path().join("m.idx"));
        store.save(&t, &s).unwrap();
        let loaded = MemoryStore::load(&t, &s).unwrap();
        assert_eq!(loaded, store);
        assert_eq!(loaded.next_index(), 9);
    }
}
