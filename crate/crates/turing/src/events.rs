//! Append-only JSON-lines event log, one file per session. Replaying a
//! log through the engine reproduces the session exactly.

use crate::engine::{Response, SessionItem, TuringError, TuringSession, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        seed: u64,
        n_per_pool: usize,
        items: Vec<SessionItem>,
    },
    Response {
        item_id: String,
        #[serde(flatten)]
        response: Response,
    },
}

fn storage(path: &Path, e: impl std::fmt::Display) -> TuringError {
    TuringError::Storage(format!("{}: {e}", path.display()))
}

pub fn log_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{session_id}.jsonl"))
}

/// Appends one event and flushes it to disk before returning.
pub fn append(path: &Path, event: &Event) -> Result<()> {
    let mut line = serde_json::to_string(event).map_err(|e| storage(path, e))?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| storage(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| storage(path, e))?;
    f.sync_data().map_err(|e| storage(path, e))
}

/// Rebuilds a session from its log. A torn final line (crash mid-write)
/// is ignored; any other malformed line is an error.
pub fn replay(path: &Path) -> Result<TuringSession> {
    let file = File::open(path).map_err(|e| storage(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| storage(path, e))?;
    let mut session: Option<TuringSession> = None;
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = match serde_json::from_str(line) {
            Ok(ev) => ev,
            Err(_) if n + 1 == lines.len() => break,
            Err(e) => return Err(storage(path, format!("line {}: {e}", n + 1))),
        };
        match (event, session.as_mut()) {
            (
                Event::Created {
                    session_id,
                    seed,
                    n_per_pool,
                    items,
                },
                None,
            ) => {
                session = Some(TuringSession {
                    session_id,
                    seed,
                    n_per_pool,
                    items,
                    cursor: 0,
                    responses: BTreeMap::new(),
                });
            }
            (Event::Response { item_id, response }, Some(s)) => {
                s.record_response(&item_id, response.judged_source, response.judged_label, response.timestamp)?;
            }
            _ => return Err(storage(path, format!("line {}: unexpected event", n + 1))),
        }
    }
    session.ok_or_else(|| storage(path, "log holds no session"))
}

/// Replays every `*.jsonl` log in `dir`, in file-name order.
pub fn replay_dir(dir: &Path) -> Result<Vec<TuringSession>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| storage(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| replay(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{create_session, PoolKind, Pools, Source};
    use braingan_core::dataset::Label;

    fn pools() -> Pools {
        Pools(
            PoolKind::ALL
                .iter()
                .map(|&k| (k, (0..4).map(|i| PathBuf::from(format!("/p/{k}/{i}.png"))).collect()))
                .collect(),
        )
    }

    #[test]
    fn replay_reproduces_session_and_tolerates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = create_session(&pools(), 3, 5, "abc").unwrap();
        let path = log_path(dir.path(), "abc");
        append(
            &path,
            &Event::Created {
                session_id: s.session_id.clone(),
                seed: s.seed,
                n_per_pool: s.n_per_pool,
                items: s.items.clone(),
            },
        )
        .unwrap();
        for k in 0..5 {
            let id = s.items[k].item_id.clone();
            s.record_response(&id, Source::Synthetic, Label::Tumor, k as u64).unwrap();
            let response = s.responses[&id];
            append(&path, &Event::Response { item_id: id, response }).unwrap();
        }
        assert_eq!(replay(&path).unwrap(), s);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"event\":\"resp").unwrap();
        assert_eq!(replay(&path).unwrap(), s);
        assert_eq!(replay_dir(dir.path()).unwrap(), vec![s]);
    }
}
