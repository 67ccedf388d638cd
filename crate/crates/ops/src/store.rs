//! Directory-backed storage.
//!
//! ```text
//! data/
//!   maps/map.json
//!   missions/<id>.json
//!   schedules/<id>.json
//!   config/actions.json
//!   records/records.jsonl      append-only, one RecordEntry per line
//!   logs/interventions.jsonl   append-only
//!   artifacts/<mission>/task-<n>/
//! ```
//!
//! Whole-file entities are replaced atomically (temp file, then rename).

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ronda_core::{
    load_map, save_map, ActionRegistration, InterventionRecord, Mission, MissionOutcome, MissionRecord, Persisted,
    RecordEntry, Schedule, Store, StoreError, TaskStatus, Timestamp, TopologicalMap,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

const DIRS: [&str; 8] = ["maps", "missions", "schedules", "records", "logs", "artifacts", "config", "."];

/// A file that could not be loaded.
#[derive(Debug, Error)]
#[error("{}: {reason}", path.display())]
pub struct LoadError {
    pub path: PathBuf,
    pub reason: String,
}

impl LoadError {
    fn new(path: &Path, reason: impl ToString) -> Self {
        Self {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

pub struct DirStore {
    root: PathBuf,
}

/// Filename-safe form of an id: ASCII letters, digits, `-` and `_` pass
/// through, every other byte becomes `%XX`.
pub fn encode_id(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError(format!("{}: {e}", path.display()))
}

impl DirStore {
    /// Opens `root`, creating the layout if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, LoadError> {
        let root = root.into();
        for d in DIRS {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| LoadError::new(&p, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn map_path(&self) -> PathBuf {
        self.root.join("maps").join("map.json")
    }

    pub fn mission_path(&self, id: &str) -> PathBuf {
        self.root.join("missions").join(format!("{}.json", encode_id(id)))
    }

    pub fn schedule_path(&self, id: &str) -> PathBuf {
        self.root.join("schedules").join(format!("{}.json", encode_id(id)))
    }

    pub fn registry_path(&self) -> PathBuf {
        self.root.join("config").join("actions.json")
    }

    pub fn records_path(&self) -> PathBuf {
        self.root.join("records").join("records.jsonl")
    }

    pub fn interventions_path(&self) -> PathBuf {
        self.root.join("logs").join("interventions.jsonl")
    }

    fn put_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), StoreError> {
        let text = serde_json::to_vec_pretty(value).map_err(|e| err(path, e))?;
        write_atomic(path, &text).map_err(|e| err(path, e))
    }

    fn append_line<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(value).map_err(|e| err(path, e))?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| err(path, e))?;
        f.write_all(&line).map_err(|e| err(path, e))?;
        f.sync_data().map_err(|e| err(path, e))
    }

    /// Reads everything back. Fails on the first unreadable file without
    /// returning anything partial. A torn final line in an append-only log
    /// (a crash mid-write) is cut off, and a mission that was started but
    /// never finished gets a closing `preempted` record stamped `now`.
    pub fn load_all(&mut self, now: Timestamp) -> Result<Persisted, LoadError> {
        let map_path = self.map_path();
        let map = if map_path.exists() {
            let text = fs::read_to_string(&map_path).map_err(|e| LoadError::new(&map_path, e))?;
            Some(load_map(&text).map_err(|e| LoadError::new(&map_path, e))?)
        } else {
            None
        };
        let missions: Vec<Mission> = self.load_dir("missions", |m: &Mission| m.id.clone())?;
        let schedules: Vec<Schedule> = self.load_dir("schedules", |s: &Schedule| s.id.clone())?;
        for s in &schedules {
            s.recurrence
                .validate()
                .map_err(|e| LoadError::new(&self.schedule_path(&s.id), e))?;
        }
        let reg_path = self.registry_path();
        let registrations: Vec<ActionRegistration> = if reg_path.exists() {
            read_json(&reg_path)?
        } else {
            Vec::new()
        };
        let interventions: Vec<InterventionRecord> = read_log(&self.interventions_path())?;
        let entries: Vec<RecordEntry> = read_log(&self.records_path())?;

        let mut runs: BTreeMap<u64, MissionRecord> = BTreeMap::new();
        for entry in entries {
            match entry {
                RecordEntry::Started { record } => {
                    runs.entry(record.run_id).or_insert(record);
                }
                RecordEntry::Finished { record } => {
                    runs.insert(record.run_id, record);
                }
            }
        }
        let mut records = Vec::with_capacity(runs.len());
        for (_, mut record) in runs {
            if !record.is_finished() {
                close_interrupted(&mut record, now);
                self.append_record(&RecordEntry::Finished { record: record.clone() })
                    .map_err(|e| LoadError::new(&self.records_path(), e))?;
            }
            records.push(record);
        }
        records.sort_by(|a, b| a.started.cmp(&b.started).then(a.run_id.cmp(&b.run_id)));

        Ok(Persisted {
            map,
            missions,
            schedules,
            registrations,
            interventions,
            records,
        })
    }

    fn load_dir<T: DeserializeOwned>(&self, dir: &str, id_of: impl Fn(&T) -> String) -> Result<Vec<T>, LoadError> {
        let base = self.root.join(dir);
        let mut paths = Vec::new();
        for entry in fs::read_dir(&base).map_err(|e| LoadError::new(&base, e))? {
            let path = entry.map_err(|e| LoadError::new(&base, e))?.path();
            match path.extension().and_then(|e| e.to_str()) {
                Some("json") => paths.push(path),
                // left behind by a crash between write and rename
                Some("tmp") => {
                    let _ = fs::remove_file(&path);
                }
                _ => {}
            }
        }
        paths.sort();
        let mut seen = BTreeMap::new();
        let mut out = Vec::with_capacity(paths.len());
        for path in paths {
            let item: T = read_json(&path)?;
            let id = id_of(&item);
            let expected = format!("{}.json", encode_id(&id));
            if path.file_name().and_then(|n| n.to_str()) != Some(expected.as_str()) {
                return Err(LoadError::new(&path, format!("holds id {id:?}, expected file name {expected}")));
            }
            if let Some(other) = seen.insert(id.clone(), path.clone()) {
                return Err(LoadError::new(&path, format!("duplicate id {id:?}, also in {}", other.display())));
            }
            out.push(item);
        }
        Ok(out)
    }
}

fn close_interrupted(record: &mut MissionRecord, now: Timestamp) {
    record.outcome = Some(MissionOutcome::Preempted);
    record.ended = Some(now.max(record.started));
    for t in &mut record.tasks {
        if !t.status.is_terminal() {
            t.status = TaskStatus::Skipped;
            t.detail = Some("service stopped before the task finished".into());
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, LoadError> {
    let text = fs::read_to_string(path).map_err(|e| LoadError::new(path, e))?;
    serde_json::from_str(&text).map_err(|e| LoadError::new(path, e))
}

/// Parses a JSON-lines log. An unterminated last line that fails to parse
/// is a torn write and is truncated away; any other bad line is an error.
fn read_log<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, LoadError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = fs::read(path).map_err(|e| LoadError::new(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    let mut lineno = 0;
    let mut torn = false;
    while offset < bytes.len() {
        lineno += 1;
        let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|i| offset + i);
        let line = &bytes[offset..end.unwrap_or(bytes.len())];
        if line.iter().all(u8::is_ascii_whitespace) {
            offset = end.map_or(bytes.len(), |e| e + 1);
            continue;
        }
        match serde_json::from_slice(line) {
            Ok(v) => out.push(v),
            Err(_) if end.is_none() => {
                let f = OpenOptions::new().write(true).open(path).map_err(|e| LoadError::new(path, e))?;
                f.set_len(offset as u64).map_err(|e| LoadError::new(path, e))?;
                torn = true;
                break;
            }
            Err(e) => return Err(LoadError::new(path, format!("line {lineno}: {e}"))),
        }
        offset = end.map_or(bytes.len(), |e| e + 1);
    }
    // a complete last line that lost only its newline
    if !torn && bytes.last().is_some_and(|&b| b != b'\n') {
        let mut f = OpenOptions::new().append(true).open(path).map_err(|e| LoadError::new(path, e))?;
        f.write_all(b"\n").map_err(|e| LoadError::new(path, e))?;
    }
    Ok(out)
}

impl Store for DirStore {
    fn put_map(&mut self, map: &TopologicalMap) -> Result<(), StoreError> {
        let path = self.map_path();
        write_atomic(&path, save_map(map).as_bytes()).map_err(|e| err(&path, e))
    }

    fn put_mission(&mut self, mission: &Mission) -> Result<(), StoreError> {
        self.put_json(&self.mission_path(&mission.id), mission)
    }

    fn delete_mission(&mut self, id: &str) -> Result<(), StoreError> {
        let path = self.mission_path(id);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(err(&path, e)),
            _ => Ok(()),
        }
    }

    fn put_schedule(&mut self, schedule: &Schedule) -> Result<(), StoreError> {
        self.put_json(&self.schedule_path(&schedule.id), schedule)
    }

    fn delete_schedule(&mut self, id: &str) -> Result<(), StoreError> {
        let path = self.schedule_path(id);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(err(&path, e)),
            _ => Ok(()),
        }
    }

    fn put_registry(&mut self, registrations: &[ActionRegistration]) -> Result<(), StoreError> {
        self.put_json(&self.registry_path(), &registrations)
    }

    fn append_intervention(&mut self, record: &InterventionRecord) -> Result<(), StoreError> {
        self.append_line(&self.interventions_path(), record)
    }

    fn append_record(&mut self, entry: &RecordEntry) -> Result<(), StoreError> {
        self.append_line(&self.records_path(), entry)
    }

    fn artifact_dir(&mut self, mission_id: &str, index: usize) -> Option<PathBuf> {
        let dir = self
            .root
            .join("artifacts")
            .join(encode_id(mission_id))
            .join(format!("task-{index}"));
        fs::create_dir_all(&dir).ok().map(|_| dir)
    }
}
