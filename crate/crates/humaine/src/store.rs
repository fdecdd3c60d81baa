//! Append-only session logs: one `<session_id>.events.jsonl` file per
//! session, one self-describing event per line.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, PoisonError};

use humaine_core::conversation::{EventKind, SessionEvent, SessionLog};

use crate::error::{format_err, io_err, Error, Result};

pub const EVENTS_SUFFIX: &str = ".events.jsonl";

/// Session ids become file names, so only a safe alphabet is accepted.
pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(event);
    }
    Ok(out)
}

fn write_lines(path: &Path, events: &[&SessionEvent]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for e in events {
        serde_json::to_writer(&mut w, e).map_err(|e| format_err(path, e))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.into_inner().map_err(|e| io_err(path)(e.into_error()))?.sync_all().map_err(io_err(path))
}

/// Write finished sessions to `dir`, replacing existing files. Events are
/// grouped by session in first-seen order and validated before writing.
pub fn write_sessions(dir: &Path, events: &[SessionEvent]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut order: Vec<&str> = Vec::new();
    let mut by: BTreeMap<&str, Vec<&SessionEvent>> = BTreeMap::new();
    for e in events {
        let list = by.entry(e.session_id.as_str()).or_insert_with(|| {
            order.push(e.session_id.as_str());
            Vec::new()
        });
        list.push(e);
    }
    let mut paths = Vec::with_capacity(order.len());
    for id in order {
        if !valid_session_id(id) {
            return Err(format_err(dir, format!("unsafe session id `{id}`")));
        }
        let list = &by[id];
        SessionLog::from_events(list.iter().map(|e| (*e).clone()))?;
        let path = dir.join(format!("{id}{EVENTS_SUFFIX}"));
        write_lines(&path, list)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Directory of live session logs. Appends to different sessions proceed
/// concurrently; appends to one session are serialised and checked against
/// its ordering rules before they reach the file.
#[derive(Debug)]
pub struct EventStore {
    dir: PathBuf,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionLog>>>>,
}

impl EventStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(EventStore { dir, sessions: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}{EVENTS_SUFFIX}"))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.path_for(session_id).exists()
    }

    /// Ids of every session on disk, sorted.
    pub fn session_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let name = entry.map_err(io_err(&self.dir))?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(EVENTS_SUFFIX)) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn handle(&self, event: &SessionEvent) -> Result<Arc<Mutex<SessionLog>>> {
        let id = &event.session_id;
        if !valid_session_id(id) {
            return Err(humaine_core::Error::SessionNotFound(id.clone()).into());
        }
        let mut map = self.sessions.lock().unwrap_or_else(PoisonError::into_inner);
        if let Some(h) = map.get(id) {
            return Ok(Arc::clone(h));
        }
        let path = self.path_for(id);
        let log = if path.exists() {
            SessionLog::from_events(read_events(&path)?)?
        } else if matches!(event.kind, EventKind::SessionStart { .. }) {
            SessionLog::new()
        } else {
            return Err(humaine_core::Error::SessionNotFound(id.clone()).into());
        };
        let h = Arc::new(Mutex::new(log));
        map.insert(id.clone(), Arc::clone(&h));
        Ok(h)
    }

    /// Validate, write and sync one event.
    pub fn append(&self, event: &SessionEvent) -> Result<()> {
        self.append_all(std::slice::from_ref(event))
    }

    /// Append events of one or more sessions. Each session's batch is checked
    /// in full before any of it is written.
    pub fn append_all(&self, events: &[SessionEvent]) -> Result<()> {
        let mut start = 0;
        while start < events.len() {
            let id = &events[start].session_id;
            let end = events[start..].iter().position(|e| &e.session_id != id).map_or(events.len(), |n| start + n);
            self.append_batch(&events[start..end])?;
            start = end;
        }
        Ok(())
    }

    fn append_batch(&self, batch: &[SessionEvent]) -> Result<()> {
        let handle = self.handle(&batch[0])?;
        let mut log = handle.lock().unwrap_or_else(PoisonError::into_inner);
        let mut staged = log.clone();
        for e in batch {
            staged.append(e.clone())?;
        }
        let path = self.path_for(&batch[0].session_id);
        let mut buf = Vec::new();
        for e in batch {
            serde_json::to_writer(&mut buf, e).map_err(|e| format_err(&path, e))?;
            buf.push(b'\n');
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        file.write_all(&buf).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))?;
        *log = staged;
        Ok(())
    }

    /// The session's log as stored on disk.
    pub fn load(&self, session_id: &str) -> Result<SessionLog> {
        if !valid_session_id(session_id) {
            return Err(humaine_core::Error::SessionNotFound(session_id.to_string()).into());
        }
        let path = self.path_for(session_id);
        if !path.exists() {
            return Err(humaine_core::Error::SessionNotFound(session_id.to_string()).into());
        }
        Ok(SessionLog::from_events(read_events(&path)?)?)
    }
}
