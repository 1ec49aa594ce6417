//! Thread-safe registry of live sessions. Each session sits behind its
//! own mutex (single writer); the registry itself is read-mostly.

use crate::engine::{
    create_session, Ack, NextItem, PoolPaths, Pools, Result, Source, TuringError, TuringReport, TuringSession,
};
use crate::events::{self, Event};
use braingan_core::dataset::Label;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<TuringSession>>>>,
    images: RwLock<HashMap<String, PathBuf>>,
    log_dir: Option<PathBuf>,
    default_pools: Option<PoolPaths>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl SessionStore {
    /// Resumes every session logged under `log_dir`, creating it if needed.
    pub fn new(log_dir: Option<PathBuf>, default_pools: Option<PoolPaths>) -> Result<Self> {
        let store = SessionStore {
            sessions: RwLock::new(HashMap::new()),
            images: RwLock::new(HashMap::new()),
            log_dir,
            default_pools,
        };
        if let Some(dir) = &store.log_dir {
            std::fs::create_dir_all(dir).map_err(|e| TuringError::Storage(format!("{}: {e}", dir.display())))?;
            for session in events::replay_dir(dir)? {
                log::info!("resumed session {} at {}/{}", session.session_id, session.cursor, session.total());
                store.register(session);
            }
        }
        Ok(store)
    }

    pub fn default_pools(&self) -> Option<&PoolPaths> {
        self.default_pools.as_ref()
    }

    fn register(&self, session: TuringSession) {
        let mut images = self.images.write().unwrap();
        for item in &session.items {
            images.insert(item.item_id.clone(), item.image_path.clone());
        }
        self.sessions
            .write()
            .unwrap()
            .insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
    }

    fn log_path(&self, session_id: &str) -> Option<PathBuf> {
        self.log_dir.as_deref().map(|d| events::log_path(d, session_id))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<TuringSession>>> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| TuringError::UnknownSession(id.to_string()))
    }

    /// Loads pools (falling back to the defaults) and starts a session with
    /// a fresh random id. Returns the id and item count.
    pub fn create(&self, pools: Option<&PoolPaths>, n_per_pool: usize, seed: u64) -> Result<(String, usize)> {
        let paths = pools
            .or(self.default_pools.as_ref())
            .ok_or_else(|| TuringError::Invalid("no pools given and no defaults configured".into()))?;
        let pools = Pools::load(paths)?;
        self.create_from(&pools, n_per_pool, seed)
    }

    pub fn create_from(&self, pools: &Pools, n_per_pool: usize, seed: u64) -> Result<(String, usize)> {
        let session_id = format!("{:032x}", rand::random::<u128>());
        let session = create_session(pools, n_per_pool, seed, &session_id)?;
        if let Some(path) = self.log_path(&session_id) {
            events::append(
                &path,
                &Event::Created {
                    session_id: session_id.clone(),
                    seed,
                    n_per_pool,
                    items: session.items.clone(),
                },
            )?;
        }
        let total = session.total();
        self.register(session);
        Ok((session_id, total))
    }

    pub fn next(&self, id: &str) -> Result<NextItem> {
        Ok(self.session(id)?.lock().unwrap().next_item())
    }

    /// Validates, logs, then commits: a failed log write leaves the session
    /// unchanged.
    pub fn respond(&self, id: &str, item_id: &str, judged_source: Source, judged_label: Label) -> Result<Ack> {
        let session = self.session(id)?;
        let mut guard = session.lock().unwrap();
        let mut next = guard.clone();
        let ack = next.record_response(item_id, judged_source, judged_label, now_ms())?;
        if let Some(path) = self.log_path(id) {
            events::append(
                &path,
                &Event::Response {
                    item_id: item_id.to_string(),
                    response: next.responses[item_id],
                },
            )?;
        }
        *guard = next;
        Ok(ack)
    }

    pub fn report(&self, id: &str) -> Result<TuringReport> {
        Ok(self.session(id)?.lock().unwrap().report())
    }

    /// Snapshot of a session, truths included; for operators, not clients.
    pub fn snapshot(&self, id: &str) -> Result<TuringSession> {
        Ok(self.session(id)?.lock().unwrap().clone())
    }

    pub fn image_path(&self, item_id: &str) -> Result<PathBuf> {
        self.images
            .read()
            .unwrap()
            .get(item_id)
            .cloned()
            .ok_or_else(|| TuringError::UnknownItem(item_id.to_string()))
    }

    pub fn log_dir(&self) -> Option<&Path> {
        self.log_dir.as_deref()
    }
}
