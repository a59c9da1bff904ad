//! Memory item schema, the append-only bank, and its on-disk formats.
//!
//! The bank only ever grows: consolidation appends one experience record and
//! assigns it the next sequence number; nothing is merged, pruned, or
//! rewritten. A bank value has no interior mutability, so any number of
//! readers may share `&MemoryBank` while a single writer holds `&mut` —
//! torn state is ruled out by the borrow rules. Values are `Send + Sync`.

use crate::agent::Trajectory;
use crate::judgment::Verdict;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// On-disk schema version for all bank documents.
pub const BANK_SCHEMA_VERSION: u32 = 1;

/// Tolerance on the unit-magnitude invariant of stored embeddings.
pub const EMBEDDING_NORM_TOLERANCE: f64 = 1e-6;

/// Allowed items per experience record.
pub const MAX_ITEMS_PER_RECORD: usize = 3;

/// Preamble prepended to rendered memory items when injecting them into the
/// agent's system instruction.
pub const MEMORY_PREAMBLE: &str = "Below are some memory items that I accumulated from past \
interaction from the environment that may be helpful to solve the task. You can use it when you \
feel it's relevant. In each step, please first explicitly discuss if you want to use each memory \
item or not, and then take action.";

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory item field '{0}' is empty")]
    EmptyField(&'static str),

    #[error("record has {0} items; expected 1..=3")]
    ItemCount(usize),

    #[error("embedding magnitude {0} is not 1 within 1e-6")]
    EmbeddingNotNormalized(f64),

    #[error("bank file not found: {0}")]
    MissingFile(String),

    #[error("malformed bank document: {0}")]
    Malformed(String),

    #[error("bank schema version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("bank io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One distilled strategy: a concise title, a one-sentence description, and
/// the strategy content itself. Fields are validated at construction and on
/// deserialization; the on-disk encoding escapes all text, so no field can
/// corrupt record boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMemoryItem")]
pub struct MemoryItem {
    title: String,
    description: String,
    content: String,
}

#[derive(Deserialize)]
struct RawMemoryItem {
    title: String,
    description: String,
    content: String,
}

impl TryFrom<RawMemoryItem> for MemoryItem {
    type Error = MemoryError;
    fn try_from(raw: RawMemoryItem) -> Result<Self, Self::Error> {
        MemoryItem::new(raw.title, raw.description, raw.content)
    }
}

impl MemoryItem {
    pub fn new(
        title: impl Into<String>,
        description: impl Into<String>,
        content: impl Into<String>,
    ) -> Result<Self, MemoryError> {
        let title = title.into().trim().to_string();
        let description = description.into();
        let content = content.into();
        if title.is_empty() {
            return Err(MemoryError::EmptyField("title"));
        }
        if description.trim().is_empty() {
            return Err(MemoryError::EmptyField("description"));
        }
        if content.trim().is_empty() {
            return Err(MemoryError::EmptyField("content"));
        }
        Ok(MemoryItem { title, description, content })
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn content(&self) -> &str {
        &self.content
    }
}

/// Render items for injection into a system instruction: the fixed preamble,
/// then each item as its title and content. Empty input renders to the empty
/// string so an empty-memory agent is byte-identical to a no-memory agent.
pub fn render_items(items: &[MemoryItem]) -> String {
    if items.is_empty() {
        return String::new();
    }
    let mut out = String::from(MEMORY_PREAMBLE);
    for item in items {
        out.push_str("\n\n## ");
        out.push_str(&item.title);
        out.push('\n');
        out.push_str(&item.content);
    }
    out
}

/// A completed experience about to enter the bank. The bank assigns the
/// sequence number at consolidation time.
#[derive(Debug, Clone, PartialEq)]
pub struct NewExperience {
    pub task_id: String,
    pub query: String,
    pub trajectory: Trajectory,
    pub verdict: Verdict,
    pub items: Vec<MemoryItem>,
    /// Unit-magnitude embedding of the query text.
    pub embedding: Vec<f64>,
}

/// One stored experience: a past task's query, trajectory, verdict, its
/// distilled items, and the precomputed query embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    task_id: String,
    query: String,
    trajectory: Trajectory,
    verdict: Verdict,
    items: Vec<MemoryItem>,
    embedding: Vec<f64>,
    created_seq: u64,
}

impl ExperienceRecord {
    pub fn task_id(&self) -> &str {
        &self.task_id
    }
    pub fn query(&self) -> &str {
        &self.query
    }
    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }
    pub fn verdict(&self) -> &Verdict {
        &self.verdict
    }
    pub fn items(&self) -> &[MemoryItem] {
        &self.items
    }
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }
    pub fn created_seq(&self) -> u64 {
        self.created_seq
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn validate_experience(items: &[MemoryItem], embedding: &[f64]) -> Result<(), MemoryError> {
    if items.is_empty() || items.len() > MAX_ITEMS_PER_RECORD {
        return Err(MemoryError::ItemCount(items.len()));
    }
    let magnitude = norm(embedding);
    // Written so that a NaN magnitude also fails the check.
    if !((magnitude - 1.0).abs() <= EMBEDDING_NORM_TOLERANCE) {
        return Err(MemoryError::EmbeddingNotNormalized(magnitude));
    }
    Ok(())
}

/// Append-only repository of experience records, ordered by insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryBank {
    records: Vec<ExperienceRecord>,
}

impl MemoryBank {
    pub fn new() -> Self {
        MemoryBank::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sequence number the next consolidated record will receive.
    pub fn next_seq(&self) -> u64 {
        self.records.len() as u64
    }

    /// Records in insertion order (`created_seq` 0, 1, 2, ...).
    pub fn records(&self) -> &[ExperienceRecord] {
        &self.records
    }

    /// Append one experience. Rejects records with 0 or more than 3 items and
    /// non-normalized embeddings; never mutates or removes existing records,
    /// never deduplicates.
    pub fn consolidate(&mut self, exp: NewExperience) -> Result<&ExperienceRecord, MemoryError> {
        validate_experience(&exp.items, &exp.embedding)?;
        let created_seq = self.next_seq();
        self.records.push(ExperienceRecord {
            task_id: exp.task_id,
            query: exp.query,
            trajectory: exp.trajectory,
            verdict: exp.verdict,
            items: exp.items,
            embedding: exp.embedding,
            created_seq,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let doc = BankDoc { version: BANK_SCHEMA_VERSION, records: &self.records };
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| MemoryError::Malformed(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let text = match std::fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(MemoryError::MissingFile(path.display().to_string()))
            }
            Err(e) => return Err(MemoryError::Io(e)),
        };
        let probe: VersionProbe =
            serde_json::from_str(&text).map_err(|e| MemoryError::Malformed(e.to_string()))?;
        if probe.version != BANK_SCHEMA_VERSION {
            return Err(MemoryError::VersionMismatch {
                found: probe.version,
                expected: BANK_SCHEMA_VERSION,
            });
        }
        let doc: BankDocOwned =
            serde_json::from_str(&text).map_err(|e| MemoryError::Malformed(e.to_string()))?;
        let bank = MemoryBank { records: doc.records };
        bank.validate()?;
        Ok(bank)
    }

    /// Structural invariants of a stored bank: contiguous sequence numbers
    /// from zero, 1..=3 items per record, normalized embeddings.
    pub fn validate(&self) -> Result<(), MemoryError> {
        for (i, record) in self.records.iter().enumerate() {
            if record.created_seq != i as u64 {
                return Err(MemoryError::Malformed(format!(
                    "record {} has created_seq {}",
                    i, record.created_seq
                )));
            }
            validate_experience(&record.items, &record.embedding)?;
        }
        Ok(())
    }

    /// Write the compatibility two-file layout: a memory-pool document without
    /// embeddings plus a separate embeddings document keyed by task id.
    pub fn export_compat(&self, pool_path: &Path, embeddings_path: &Path) -> Result<(), MemoryError> {
        let pool = PoolDoc {
            version: BANK_SCHEMA_VERSION,
            records: self
                .records
                .iter()
                .map(|r| PoolRecord {
                    task_id: r.task_id.clone(),
                    query: r.query.clone(),
                    trajectory: r.trajectory.clone(),
                    verdict: r.verdict.clone(),
                    items: r.items.clone(),
                    created_seq: r.created_seq,
                })
                .collect(),
        };
        // Rollouts of one task share the query, hence the same embedding; the
        // keyed map loses nothing.
        let embeddings = EmbeddingsDoc {
            version: BANK_SCHEMA_VERSION,
            embeddings: self
                .records
                .iter()
                .map(|r| (r.task_id.clone(), r.embedding.clone()))
                .collect(),
        };
        std::fs::write(
            pool_path,
            serde_json::to_string_pretty(&pool).map_err(|e| MemoryError::Malformed(e.to_string()))?,
        )?;
        std::fs::write(
            embeddings_path,
            serde_json::to_string_pretty(&embeddings)
                .map_err(|e| MemoryError::Malformed(e.to_string()))?,
        )?;
        Ok(())
    }

    /// Rebuild a bank from the compatibility two-file layout.
    pub fn import_compat(pool_path: &Path, embeddings_path: &Path) -> Result<Self, MemoryError> {
        let read = |path: &Path| -> Result<String, MemoryError> {
            match std::fs::read_to_string(path) {
                Ok(text) => Ok(text),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    Err(MemoryError::MissingFile(path.display().to_string()))
                }
                Err(e) => Err(MemoryError::Io(e)),
            }
        };
        let pool: PoolDocOwned = serde_json::from_str(&read(pool_path)?)
            .map_err(|e| MemoryError::Malformed(e.to_string()))?;
        if pool.version != BANK_SCHEMA_VERSION {
            return Err(MemoryError::VersionMismatch {
                found: pool.version,
                expected: BANK_SCHEMA_VERSION,
            });
        }
        let embeddings: EmbeddingsDoc = serde_json::from_str(&read(embeddings_path)?)
            .map_err(|e| MemoryError::Malformed(e.to_string()))?;
        if embeddings.version != BANK_SCHEMA_VERSION {
            return Err(MemoryError::VersionMismatch {
                found: embeddings.version,
                expected: BANK_SCHEMA_VERSION,
            });
        }
        let records = pool
            .records
            .into_iter()
            .map(|r| {
                let embedding = embeddings
                    .embeddings
                    .get(&r.task_id)
                    .cloned()
                    .ok_or_else(|| {
                        MemoryError::Malformed(format!("no embedding for task {}", r.task_id))
                    })?;
                Ok(ExperienceRecord {
                    task_id: r.task_id,
                    query: r.query,
                    trajectory: r.trajectory,
                    verdict: r.verdict,
                    items: r.items,
                    embedding,
                    created_seq: r.created_seq,
                })
            })
            .collect::<Result<Vec<_>, MemoryError>>()?;
        let bank = MemoryBank { records };
        bank.validate()?;
        Ok(bank)
    }
}

#[derive(Serialize)]
struct BankDoc<'a> {
    version: u32,
    records: &'a [ExperienceRecord],
}

#[derive(Deserialize)]
struct BankDocOwned {
    #[allow(dead_code)]
    version: u32,
    records: Vec<ExperienceRecord>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

#[derive(Serialize)]
struct PoolRecord {
    task_id: String,
    query: String,
    trajectory: Trajectory,
    verdict: Verdict,
    items: Vec<MemoryItem>,
    created_seq: u64,
}

#[derive(Serialize)]
struct PoolDoc {
    version: u32,
    records: Vec<PoolRecord>,
}

#[derive(Deserialize)]
struct PoolRecordOwned {
    task_id: String,
    query: String,
    trajectory: Trajectory,
    verdict: Verdict,
    items: Vec<MemoryItem>,
    created_seq: u64,
}

#[derive(Deserialize)]
struct PoolDocOwned {
    version: u32,
    records: Vec<PoolRecordOwned>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingsDoc {
    version: u32,
    embeddings: BTreeMap<String, Vec<f64>>,
}
