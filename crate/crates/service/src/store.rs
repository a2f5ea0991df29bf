// SPDX-License-Identifier: MIT OR Apache-2.0

//! Event-sourced session store.
//!
//! Each session is an append-only newline-delimited JSON log under
//! `<data_dir>/sessions/<id>.ndjson`. The first line creates the session;
//! every later line records one accepted batch of observations together
//! with the decisions it produced. Opening a store replays all logs and
//! checks that the replayed decisions match the recorded ones exactly.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use pbos_core::par::Execution;
use pbos_core::rng::{derive_seed, splitmix64};
use pbos_core::stopping::{Decision, SessionState, StoppingConfig, WhatIf};
use pbos_core::NormalGammaParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Wall-clock milliseconds; informational only, never replayed.
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Created {
        id: String,
        config: StoppingConfig,
        prior: NormalGammaParams,
        seed: u64,
    },
    Observations {
        values: Vec<f64>,
        decisions: Vec<Decision>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub id: String,
    pub config: StoppingConfig,
    pub prior: NormalGammaParams,
    pub seed: u64,
    pub state: SessionState,
    pub events: Vec<Event>,
}

/// Result of one accepted observation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub decisions: Vec<Decision>,
    pub accepted: usize,
    /// Values left over after the session stopped.
    pub ignored: usize,
}

impl SessionRecord {
    fn create(id: String, config: StoppingConfig, prior: NormalGammaParams, seed: u64) -> Result<Self, ServiceError> {
        config.validate()?;
        let state = SessionState::new(prior, seed)?;
        let created = Event {
            seq: 0,
            timestamp_ms: now_ms(),
            kind: EventKind::Created {
                id: id.clone(),
                config: config.clone(),
                prior,
                seed,
            },
        };
        Ok(Self {
            id,
            config,
            prior,
            seed,
            state,
            events: vec![created],
        })
    }

    /// Steps `values` through the state machine in `batch`-sized chunks,
    /// without exceeding `n_max`. Nothing is mutated on error.
    fn apply(&self, values: &[f64]) -> Result<(SessionState, Applied), ServiceError> {
        if self.state.is_stopped() {
            return Err(ServiceError::Conflict(format!("session {} has already stopped", self.id)));
        }
        if values.is_empty() {
            return Err(ServiceError::invalid("values", "must not be empty"));
        }
        if let Some((j, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ServiceError::invalid(format!("values[{j}]"), format!("non-finite value {v}")));
        }
        let mut state = self.state.clone();
        let mut decisions = Vec::new();
        let mut accepted = 0;
        while accepted < values.len() && !state.is_stopped() {
            let room = self.config.n_max - state.i();
            let take = self.config.batch.min(room).min(values.len() - accepted);
            let d = state.step_with(&values[accepted..accepted + take], &self.config, Execution::Sequential)?;
            accepted += take;
            decisions.push(d);
        }
        Ok((
            state,
            Applied {
                decisions,
                accepted,
                ignored: values.len() - accepted,
            },
        ))
    }

    pub fn state_hash(&self) -> String {
        state_hash(&self.state)
    }
}

pub fn state_hash(state: &SessionState) -> String {
    let bytes = serde_json::to_vec(state).expect("session state serialises");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub struct Store {
    dir: Option<PathBuf>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<SessionRecord>>>>,
    counter: AtomicU64,
}

impl Store {
    /// Store without persistence.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            sessions: RwLock::new(BTreeMap::new()),
            counter: AtomicU64::new(now_ms()),
        }
    }

    /// Opens (creating if needed) a persistent store and replays its logs.
    pub fn open(data_dir: &Path) -> Result<Self, ServiceError> {
        let dir = data_dir.join("sessions");
        fs::create_dir_all(&dir)?;
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        paths.sort();
        let mut sessions = BTreeMap::new();
        for p in paths {
            let rec = replay_file(&p)?;
            sessions.insert(rec.id.clone(), Arc::new(Mutex::new(rec)));
        }
        tracing::info!(count = sessions.len(), dir = %dir.display(), "replayed sessions");
        Ok(Self {
            dir: Some(dir),
            sessions: RwLock::new(sessions),
            counter: AtomicU64::new(now_ms()),
        })
    }

    fn new_id(&self) -> String {
        loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let id = format!("{:016x}", splitmix64(n ^ 0x5eed_5e55_1011));
            if !self.sessions.read().expect("store lock").contains_key(&id) {
                return id;
            }
        }
    }

    pub fn create(&self, config: StoppingConfig, prior: NormalGammaParams, seed: Option<u64>) -> Result<String, ServiceError> {
        let id = self.new_id();
        let seed = seed.unwrap_or_else(|| derive_seed(u64::from_str_radix(&id, 16).unwrap_or(0), &[]));
        let rec = SessionRecord::create(id.clone(), config, prior, seed)?;
        self.append(&id, &rec.events[0], true)?;
        self.sessions
            .write()
            .expect("store lock")
            .insert(id.clone(), Arc::new(Mutex::new(rec)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<SessionRecord>>, ServiceError> {
        self.sessions
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().expect("store lock").keys().cloned().collect()
    }

    /// Serialised per session: the record lock is held while stepping and
    /// logging, so concurrent requests are applied one after another.
    pub fn add_observations(&self, id: &str, values: &[f64]) -> Result<(Applied, SessionRecord), ServiceError> {
        let handle = self.get(id)?;
        let mut rec = handle.lock().expect("session lock");
        let (state, applied) = rec.apply(values)?;
        let event = Event {
            seq: rec.events.len() as u64,
            timestamp_ms: now_ms(),
            kind: EventKind::Observations {
                values: values[..applied.accepted].to_vec(),
                decisions: applied.decisions.clone(),
            },
        };
        self.append(id, &event, false)?;
        rec.state = state;
        rec.events.push(event);
        Ok((applied, rec.clone()))
    }

    pub fn what_if(&self, id: &str, overrides: WhatIf) -> Result<Decision, ServiceError> {
        let handle = self.get(id)?;
        let rec = handle.lock().expect("session lock");
        Ok(rec.state.what_if(&rec.config, overrides)?)
    }

    pub fn snapshot(&self, id: &str) -> Result<SessionRecord, ServiceError> {
        let handle = self.get(id)?;
        let rec = handle.lock().expect("session lock");
        Ok(rec.clone())
    }

    fn append(&self, id: &str, event: &Event, create: bool) -> Result<(), ServiceError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create_new(create)
            .append(true)
            .open(dir.join(format!("{id}.ndjson")))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }
}

/// Rebuilds a session from its log, verifying every recorded decision.
pub fn replay_file(path: &Path) -> Result<SessionRecord, ServiceError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rec: Option<SessionRecord> = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line)?;
        rec = Some(replay_event(rec, event).map_err(|e| {
            ServiceError::Replay(format!("{}:{}: {e}", path.display(), n + 1))
        })?);
    }
    rec.ok_or_else(|| ServiceError::Replay(format!("{}: empty log", path.display())))
}

pub fn replay_event(rec: Option<SessionRecord>, event: Event) -> Result<SessionRecord, ServiceError> {
    match (&event.kind, rec) {
        (EventKind::Created { id, config, prior, seed }, None) => {
            let mut r = SessionRecord::create(id.clone(), config.clone(), *prior, *seed)?;
            r.events = vec![event];
            Ok(r)
        }
        (EventKind::Observations { values, decisions }, Some(mut r)) => {
            let (state, applied) = r.apply(values)?;
            let same = serde_json::to_string(&applied.decisions)? == serde_json::to_string(decisions)?;
            if !same || applied.ignored != 0 {
                return Err(ServiceError::Replay(format!("decisions diverged at event {}", event.seq)));
            }
            r.state = state;
            r.events.push(event);
            Ok(r)
        }
        (EventKind::Created { .. }, Some(_)) => Err(ServiceError::Replay("duplicate create event".into())),
        (EventKind::Observations { .. }, None) => Err(ServiceError::Replay("log does not start with create".into())),
    }
}
