//! Session engine: sampling the four pools, forced-order presentation,
//! response recording and confusion-matrix reports. Pure apart from the
//! pool loader; timestamps are supplied by the caller.

use braingan_core::dataset::Label;
use braingan_core::seeding::rng_for;
use braingan_core::store;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TuringError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("pool {pool} has {available} images, {requested} requested")]
    InsufficientPool {
        pool: PoolKind,
        available: usize,
        requested: usize,
    },
    #[error("item {got} answered out of order; the current item is {expected}")]
    OutOfOrder { expected: String, got: String },
    #[error("item {0} was already answered")]
    Duplicate(String),
    #[error("session is complete")]
    SessionComplete,
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("storage: {0}")]
    Storage(String),
}

pub type Result<T> = std::result::Result<T, TuringError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Synthetic,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
        })
    }
}

/// The four image pools in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    RealTumor,
    RealNonTumor,
    SyntheticTumor,
    SyntheticNonTumor,
}

impl PoolKind {
    pub const ALL: [PoolKind; 4] = [
        PoolKind::RealTumor,
        PoolKind::RealNonTumor,
        PoolKind::SyntheticTumor,
        PoolKind::SyntheticNonTumor,
    ];

    pub fn source(self) -> Source {
        match self {
            PoolKind::RealTumor | PoolKind::RealNonTumor => Source::Real,
            _ => Source::Synthetic,
        }
    }

    pub fn label(self) -> Label {
        match self {
            PoolKind::RealTumor | PoolKind::SyntheticTumor => Label::Tumor,
            _ => Label::NonTumor,
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.source(), self.label())
    }
}

/// Store locations (manifest files or their directories) for each pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolPaths {
    pub real_tumor: PathBuf,
    pub real_non_tumor: PathBuf,
    pub synthetic_tumor: PathBuf,
    pub synthetic_non_tumor: PathBuf,
}

impl PoolPaths {
    pub fn get(&self, kind: PoolKind) -> &Path {
        match kind {
            PoolKind::RealTumor => &self.real_tumor,
            PoolKind::RealNonTumor => &self.real_non_tumor,
            PoolKind::SyntheticTumor => &self.synthetic_tumor,
            PoolKind::SyntheticNonTumor => &self.synthetic_non_tumor,
        }
    }
}

/// Candidate image files per pool.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pools(pub BTreeMap<PoolKind, Vec<PathBuf>>);

impl Pools {
    /// Reads each store and keeps the images whose label matches the pool;
    /// a real dataset store may therefore back both real pools.
    pub fn load(paths: &PoolPaths) -> Result<Self> {
        let mut pools = BTreeMap::new();
        for kind in PoolKind::ALL {
            let entries = store::list_entries(paths.get(kind))
                .map_err(|e| TuringError::Storage(format!("{kind}: {e}")))?;
            let files: Vec<PathBuf> = entries
                .into_iter()
                .filter(|s| s.label == kind.label())
                .map(|s| s.path)
                .collect();
            pools.insert(kind, files);
        }
        Ok(Pools(pools))
    }
}

/// One presented image with its hidden truth. Never sent to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionItem {
    pub item_id: String,
    pub image_path: PathBuf,
    pub truth_source: Source,
    pub truth_label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub judged_source: Source,
    pub judged_label: Label,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuringSession {
    pub session_id: String,
    pub seed: u64,
    pub n_per_pool: usize,
    pub items: Vec<SessionItem>,
    /// Index of the first unanswered item; equals `items.len()` when done.
    pub cursor: usize,
    pub responses: BTreeMap<String, Response>,
}

/// Opaque item id: depends on seed, pool and file only, so equal seeds
/// give equal id sequences.
fn item_id(seed: u64, kind: PoolKind, path: &Path) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(kind.index().to_le_bytes());
    h.update(path.to_string_lossy().as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Draws `n_per_pool` images without replacement from each pool and
/// shuffles the union, all from `seed`.
pub fn create_session(pools: &Pools, n_per_pool: usize, seed: u64, session_id: &str) -> Result<TuringSession> {
    if n_per_pool == 0 {
        return Err(TuringError::Invalid("n_per_pool must be at least 1".into()));
    }
    let mut items = Vec::with_capacity(4 * n_per_pool);
    for kind in PoolKind::ALL {
        let files = pools.0.get(&kind).map(Vec::as_slice).unwrap_or(&[]);
        if files.len() < n_per_pool {
            return Err(TuringError::InsufficientPool {
                pool: kind,
                available: files.len(),
                requested: n_per_pool,
            });
        }
        let mut idx: Vec<usize> = (0..files.len()).collect();
        idx.shuffle(&mut rng_for(seed, &[0x7E57, kind.index()]));
        for &i in &idx[..n_per_pool] {
            items.push(SessionItem {
                item_id: item_id(seed, kind, &files[i]),
                image_path: files[i].clone(),
                truth_source: kind.source(),
                truth_label: kind.label(),
            });
        }
    }
    items.shuffle(&mut rng_for(seed, &[0x7E57, 0xFF]));
    Ok(TuringSession {
        session_id: session_id.to_string(),
        seed,
        n_per_pool,
        items,
        cursor: 0,
        responses: BTreeMap::new(),
    })
}

/// What a client sees of the current item. Carries no truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextItem {
    Item {
        item_id: String,
        image_url: String,
        index: usize,
        total: usize,
    },
    Done {
        done: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub ok: bool,
    pub answered: usize,
    pub total: usize,
    pub status: Status,
}

impl TuringSession {
    pub fn status(&self) -> Status {
        if self.cursor == self.items.len() {
            Status::Complete
        } else {
            Status::Active
        }
    }

    pub fn total(&self) -> usize {
        self.items.len()
    }

    /// The cursor item; repeated calls return the same item until it is
    /// answered.
    pub fn next_item(&self) -> NextItem {
        match self.items.get(self.cursor) {
            Some(item) => NextItem::Item {
                item_id: item.item_id.clone(),
                image_url: format!("/images/{}", item.item_id),
                index: self.cursor,
                total: self.items.len(),
            },
            None => NextItem::Done { done: true },
        }
    }

    /// Stores both judgments for the cursor item and advances. Rejected
    /// calls leave the session unchanged.
    pub fn record_response(
        &mut self,
        item_id: &str,
        judged_source: Source,
        judged_label: Label,
        timestamp: u64,
    ) -> Result<Ack> {
        if self.responses.contains_key(item_id) {
            return Err(TuringError::Duplicate(item_id.to_string()));
        }
        let Some(current) = self.items.get(self.cursor) else {
            return Err(TuringError::SessionComplete);
        };
        if current.item_id != item_id {
            if !self.items.iter().any(|i| i.item_id == item_id) {
                return Err(TuringError::UnknownItem(item_id.to_string()));
            }
            return Err(TuringError::OutOfOrder {
                expected: current.item_id.clone(),
                got: item_id.to_string(),
            });
        }
        self.responses.insert(
            item_id.to_string(),
            Response {
                judged_source,
                judged_label,
                timestamp,
            },
        );
        self.cursor += 1;
        Ok(Ack {
            ok: true,
            answered: self.cursor,
            total: self.items.len(),
            status: self.status(),
        })
    }

    pub fn report(&self) -> TuringReport {
        let mut r = TuringReport {
            session_id: self.session_id.clone(),
            partial: self.status() != Status::Complete,
            answered: 0,
            total: self.items.len(),
            source: SourceConfusion::default(),
            label: LabelConfusion::default(),
            label_errors: LabelErrorBreakdown::default(),
        };
        for item in &self.items[..self.cursor] {
            let resp = &self.responses[&item.item_id];
            r.answered += 1;
            let s = &mut r.source;
            match (item.truth_source, resp.judged_source) {
                (Source::Real, Source::Real) => s.real_as_real += 1,
                (Source::Real, Source::Synthetic) => s.real_as_synthetic += 1,
                (Source::Synthetic, Source::Real) => s.synthetic_as_real += 1,
                (Source::Synthetic, Source::Synthetic) => s.synthetic_as_synthetic += 1,
            }
            let l = &mut r.label;
            let errors = &mut r.label_errors;
            match (item.truth_label, resp.judged_label) {
                (Label::Tumor, Label::Tumor) => l.tumor_as_tumor += 1,
                (Label::Tumor, Label::NonTumor) => {
                    l.tumor_as_non_tumor += 1;
                    errors.tumor_as_non_tumor.add(item.truth_source);
                }
                (Label::NonTumor, Label::Tumor) => {
                    l.non_tumor_as_tumor += 1;
                    errors.non_tumor_as_tumor.add(item.truth_source);
                }
                (Label::NonTumor, Label::NonTumor) => l.non_tumor_as_non_tumor += 1,
            }
        }
        let ratio = |hit: usize| if r.answered == 0 { 0.0 } else { hit as f64 / r.answered as f64 };
        r.source.accuracy = ratio(r.source.real_as_real + r.source.synthetic_as_synthetic);
        r.label.accuracy = ratio(r.label.tumor_as_tumor + r.label.non_tumor_as_non_tumor);
        r
    }
}

/// Rows are truths, columns judgments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceConfusion {
    pub real_as_real: usize,
    pub real_as_synthetic: usize,
    pub synthetic_as_real: usize,
    pub synthetic_as_synthetic: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelConfusion {
    pub tumor_as_tumor: usize,
    pub tumor_as_non_tumor: usize,
    pub non_tumor_as_tumor: usize,
    pub non_tumor_as_non_tumor: usize,
    pub accuracy: f64,
}

/// Label errors split by the true source of the misjudged image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByProvenance {
    pub real: usize,
    pub synthetic: usize,
}

impl ByProvenance {
    fn add(&mut self, source: Source) {
        match source {
            Source::Real => self.real += 1,
            Source::Synthetic => self.synthetic += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelErrorBreakdown {
    pub tumor_as_non_tumor: ByProvenance,
    pub non_tumor_as_tumor: ByProvenance,
}

/// Confusion matrices over the answered items; `partial` is set until
/// every item is answered. Accuracies are fractions of `answered`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuringReport {
    pub session_id: String,
    pub partial: bool,
    pub answered: usize,
    pub total: usize,
    pub source: SourceConfusion,
    pub label: LabelConfusion,
    pub label_errors: LabelErrorBreakdown,
}
