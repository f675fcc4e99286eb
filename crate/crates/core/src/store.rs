//! On-disk feature store.
//!
//! Layout:
//!
//! ```text
//! store/index.json              {"format":1,"extractor_version":..,"records":{id:{content_hash}}}
//! store/records/<image_id>.json one FeatureRecord each
//! ```
//!
//! Records are only comparable when they share the store's extractor
//! version. Writes go through `&mut self`, so a store handle is a single
//! writer; reads may be shared.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::eval::{file_stem, list_images, NamingRule};
use crate::features::{extract_record, FeatureRecord, SourceInfo};
use crate::mask::decode_person_image;

const FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: malformed JSON: {message}")]
    Json { path: PathBuf, message: String },
    #[error("extractor version conflict: store has {store}, record has {record}")]
    VersionConflict { store: String, record: String },
    #[error("invalid record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("invalid image id '{0}'")]
    InvalidId(String),
    #[error("{0} is not a feature store (no index.json)")]
    NotAStore(PathBuf),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Index {
    format: u32,
    extractor_version: String,
    records: BTreeMap<String, IndexEntry>,
}

/// Ids become file names, so path separators and dot-prefixed names are refused.
pub fn validate_image_id(id: &str) -> Result<(), StoreError> {
    let bad = id.is_empty()
        || id.starts_with('.')
        || id.len() > 200
        || id.chars().any(|c| c == '/' || c == '\\' || c.is_control());
    if bad {
        Err(StoreError::InvalidId(id.to_string()))
    } else {
        Ok(())
    }
}

#[derive(Debug)]
pub struct FeatureStore {
    root: PathBuf,
    index: Index,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

impl FeatureStore {
    /// Opens an existing store.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let index_path = root.join("index.json");
        if !index_path.is_file() {
            return Err(StoreError::NotAStore(root.to_path_buf()));
        }
        let text = std::fs::read(&index_path).map_err(io_err(&index_path))?;
        let index: Index = serde_json::from_slice(&text).map_err(|e| StoreError::Json {
            path: index_path.clone(),
            message: e.to_string(),
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            index,
        })
    }

    /// Opens the store at `root`, creating it if absent. An existing store
    /// built under another version is a conflict.
    pub fn open_or_create(root: &Path, extractor_version: &str) -> Result<Self, StoreError> {
        if root.join("index.json").is_file() {
            let store = Self::open(root)?;
            if store.version() != extractor_version {
                return Err(StoreError::VersionConflict {
                    store: store.version().to_string(),
                    record: extractor_version.to_string(),
                });
            }
            return Ok(store);
        }
        let records = root.join("records");
        std::fs::create_dir_all(&records).map_err(io_err(&records))?;
        let store = Self {
            root: root.to_path_buf(),
            index: Index {
                format: FORMAT,
                extractor_version: extractor_version.to_string(),
                records: BTreeMap::new(),
            },
        };
        store.write_index()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn version(&self) -> &str {
        &self.index.extractor_version
    }

    pub fn len(&self) -> usize {
        self.index.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.records.is_empty()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.index.records.contains_key(image_id)
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.index.records.keys().map(String::as_str)
    }

    pub fn entry(&self, image_id: &str) -> Option<&IndexEntry> {
        self.index.records.get(image_id)
    }

    fn record_path(&self, image_id: &str) -> PathBuf {
        self.root.join("records").join(format!("{image_id}.json"))
    }

    fn write_index(&self) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(&self.index).expect("index serializes");
        write_atomic(&self.root.join("index.json"), &bytes)
    }

    fn write_record(&mut self, record: &FeatureRecord) -> Result<(), StoreError> {
        validate_image_id(&record.image_id)?;
        if record.extractor_version != self.index.extractor_version {
            return Err(StoreError::VersionConflict {
                store: self.index.extractor_version.clone(),
                record: record.extractor_version.clone(),
            });
        }
        record.validate().map_err(|message| StoreError::InvalidRecord {
            id: record.image_id.clone(),
            message,
        })?;
        let bytes = serde_json::to_vec_pretty(record).expect("record serializes");
        write_atomic(&self.record_path(&record.image_id), &bytes)?;
        self.index.records.insert(
            record.image_id.clone(),
            IndexEntry {
                content_hash: record.source.as_ref().map(|s| s.content_hash.clone()),
            },
        );
        Ok(())
    }

    /// Writes one record, replacing any record with the same id.
    pub fn put(&mut self, record: &FeatureRecord) -> Result<(), StoreError> {
        self.write_record(record)?;
        self.write_index()
    }

    /// Writes many records and updates the index once.
    pub fn put_batch<'a>(
        &mut self,
        records: impl IntoIterator<Item = &'a FeatureRecord>,
    ) -> Result<usize, StoreError> {
        let mut n = 0;
        let mut result = Ok(());
        for r in records {
            if let Err(e) = self.write_record(r) {
                result = Err(e);
                break;
            }
            n += 1;
        }
        self.write_index()?;
        result.map(|_| n)
    }

    pub fn get(&self, image_id: &str) -> Result<Option<FeatureRecord>, StoreError> {
        if !self.contains(image_id) {
            return Ok(None);
        }
        self.read_record(image_id).map(Some)
    }

    fn read_record(&self, image_id: &str) -> Result<FeatureRecord, StoreError> {
        let path = self.record_path(image_id);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Json {
            path,
            message: e.to_string(),
        })
    }

    /// Streams every record in id order.
    pub fn get_all(&self) -> impl Iterator<Item = Result<FeatureRecord, StoreError>> + '_ {
        self.ids().map(|id| self.read_record(id))
    }

    /// Reads every record in parallel, in id order.
    pub fn load_all(&self) -> Result<Vec<FeatureRecord>, StoreError> {
        let ids: Vec<&str> = self.ids().collect();
        ids.par_iter().map(|id| self.read_record(id)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub image: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub ok: usize,
    /// Already stored with identical source content.
    pub unchanged: usize,
    pub failed: usize,
    pub failures: Vec<Failure>,
}

enum Outcome {
    Extracted(Box<FeatureRecord>),
    Unchanged,
    Failed(Failure),
}

pub fn content_hash(image_bytes: &[u8], mask_bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(image_bytes);
    h.update(mask_bytes);
    hex::encode(h.finalize())
}

fn process_pair(
    image_path: &Path,
    mask_dir: &Path,
    store: &FeatureStore,
    cfg: &EngineConfig,
    naming: Option<&NamingRule>,
) -> Outcome {
    let image_id = file_stem(image_path);
    let mask_path = mask_dir.join(format!("{image_id}.png"));
    let fail = |message: String| {
        Outcome::Failed(Failure {
            image: image_path.display().to_string(),
            message,
        })
    };
    if let Err(e) = validate_image_id(&image_id) {
        return fail(e.to_string());
    }
    let image_bytes = match std::fs::read(image_path) {
        Ok(b) => b,
        Err(e) => return fail(format!("{}: {e}", image_path.display())),
    };
    let mask_bytes = match std::fs::read(&mask_path) {
        Ok(b) => b,
        Err(e) => return fail(format!("{}: {e}", mask_path.display())),
    };
    let hash = content_hash(&image_bytes, &mask_bytes);
    if store
        .entry(&image_id)
        .is_some_and(|e| e.content_hash.as_deref() == Some(hash.as_str()))
    {
        return Outcome::Unchanged;
    }
    let img = match decode_person_image(&image_id, &image_bytes, &mask_bytes, image_path, &mask_path) {
        Ok(img) => img,
        Err(e) => return fail(e.to_string()),
    };
    let mut record = extract_record(&img, cfg);
    if let Some((pid, cam)) = naming.and_then(|n| n.parse(&image_id)) {
        record.person_id = Some(pid);
        record.camera_id = Some(cam);
    }
    record.source = Some(SourceInfo {
        image: image_path.display().to_string(),
        mask: mask_path.display().to_string(),
        content_hash: hash,
    });
    Outcome::Extracted(Box::new(record))
}

/// Extracts every image in `image_dir` whose mask `<stem>.png` exists in
/// `mask_dir`, using `parallelism` worker threads. Pairs that fail to load
/// are logged and counted; pairs whose bytes are unchanged since the last
/// run are skipped.
pub fn build_from_dataset(
    image_dir: &Path,
    mask_dir: &Path,
    store: &mut FeatureStore,
    cfg: &EngineConfig,
    parallelism: usize,
    naming: Option<&NamingRule>,
) -> Result<BuildSummary, StoreError> {
    if store.version() != cfg.version() {
        return Err(StoreError::VersionConflict {
            store: store.version().to_string(),
            record: cfg.version(),
        });
    }
    let images = list_images(image_dir).map_err(|e| StoreError::Io {
        path: image_dir.to_path_buf(),
        message: e.to_string(),
    })?;
    if !mask_dir.is_dir() {
        return Err(StoreError::Io {
            path: mask_dir.to_path_buf(),
            message: "mask directory does not exist".into(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| StoreError::Io {
            path: image_dir.to_path_buf(),
            message: e.to_string(),
        })?;
    let shared: &FeatureStore = store;
    let outcomes: Vec<Outcome> = pool.install(|| {
        images
            .par_iter()
            .map(|p| process_pair(p, mask_dir, shared, cfg, naming))
            .collect()
    });

    let mut summary = BuildSummary::default();
    let mut records = Vec::new();
    for outcome in outcomes {
        match outcome {
            Outcome::Extracted(r) => records.push(*r),
            Outcome::Unchanged => summary.unchanged += 1,
            Outcome::Failed(f) => {
                warn!("skipping {}: {}", f.image, f.message);
                summary.failures.push(f);
            }
        }
    }
    summary.ok = store.put_batch(&records)?;
    summary.failed = summary.failures.len();
    debug!(
        "extracted {} records, {} unchanged, {} failed",
        summary.ok, summary.unchanged, summary.failed
    );
    Ok(summary)
}
