//! Server-side state: loaded datasets with cached analysis, and sessions.
//!
//! Each session has a single writer: mutations hold the session lock for the
//! whole read-modify-bump-publish step, so revisions are published in order.
//! Event fan-out goes through a broadcast channel and never blocks a writer.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use aitchview_core::cluster::{ClusterError, Clustering};
use aitchview_core::session::Selection;
use aitchview_core::Dataset;
use serde::Serialize;
use tokio::sync::broadcast;

use crate::analysis::Analysis;

const EVENT_BUFFER: usize = 1024;

pub struct DatasetEntry {
    pub id: String,
    pub dataset: Dataset,
    pub analysis: Analysis,
    clusterings: Mutex<HashMap<(usize, u64), Arc<Clustering>>>,
}

impl DatasetEntry {
    pub fn new(id: String, dataset: Dataset, analysis: Analysis) -> Self {
        Self {
            id,
            dataset,
            analysis,
            clusterings: Mutex::new(HashMap::new()),
        }
    }

    /// Clustering for `(k, seed)`, computed once and cached.
    pub fn clustering(&self, k: usize, seed: u64) -> Result<Arc<Clustering>, ClusterError> {
        let mut cache = self.clusterings.lock().expect("cluster cache poisoned");
        if let Some(c) = cache.get(&(k, seed)) {
            return Ok(c.clone());
        }
        let c = Arc::new(self.analysis.cluster(k, seed)?);
        cache.insert((k, seed), c.clone());
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Changed {
    Selection,
    Clustering,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub revision: u64,
    pub changed: Vec<Changed>,
}

pub struct SessionState {
    pub revision: u64,
    pub clustering: Option<Arc<Clustering>>,
    /// `None` until the first selection is made.
    pub selection: Option<Selection>,
}

pub struct Session {
    pub id: String,
    pub dataset: Arc<DatasetEntry>,
    state: Mutex<SessionState>,
    events: broadcast::Sender<Event>,
}

impl Session {
    fn new(id: String, dataset: Arc<DatasetEntry>) -> Self {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        Self {
            id,
            dataset,
            state: Mutex::new(SessionState {
                revision: 0,
                clustering: None,
                selection: None,
            }),
            events,
        }
    }

    /// Runs `f` against a consistent snapshot of the state.
    pub fn read<T>(&self, f: impl FnOnce(&SessionState) -> T) -> T {
        f(&self.state.lock().expect("session poisoned"))
    }

    /// Applies a mutation. `f` reports what it changed; when it succeeds the
    /// revision is bumped exactly once and an event is published.
    pub fn mutate<T, E>(
        &self,
        expected_revision: Option<u64>,
        stale: impl FnOnce(u64, u64) -> E,
        f: impl FnOnce(&mut SessionState) -> Result<(T, Vec<Changed>), E>,
    ) -> Result<(T, u64), E> {
        let mut state = self.state.lock().expect("session poisoned");
        if let Some(expected) = expected_revision {
            if expected != state.revision {
                return Err(stale(state.revision, expected));
            }
        }
        let (out, changed) = f(&mut state)?;
        state.revision += 1;
        let revision = state.revision;
        // No subscribers is fine.
        let _ = self.events.send(Event { revision, changed });
        Ok((out, revision))
    }

    /// Subscribes and returns the revision the subscription starts after.
    pub fn subscribe(&self) -> (u64, broadcast::Receiver<Event>) {
        let state = self.state.lock().expect("session poisoned");
        (state.revision, self.events.subscribe())
    }
}

#[derive(Default)]
struct Registry {
    datasets: Vec<Arc<DatasetEntry>>,
    sessions: HashMap<String, Arc<Session>>,
    next_session: u64,
}

#[derive(Clone)]
pub struct AppState {
    data_dir: Arc<PathBuf>,
    registry: Arc<RwLock<Registry>>,
}

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: Arc::new(data_dir.into()),
            registry: Arc::new(RwLock::new(Registry::default())),
        }
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    /// Relative manifest paths resolve against the data directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.data_dir.join(path)
        }
    }

    pub fn add_dataset(&self, dataset: Dataset, analysis: Analysis) -> Arc<DatasetEntry> {
        let mut reg = self.registry.write().expect("registry poisoned");
        let id = format!("ds-{}", reg.datasets.len() + 1);
        let entry = Arc::new(DatasetEntry::new(id, dataset, analysis));
        reg.datasets.push(entry.clone());
        entry
    }

    pub fn dataset(&self, id: &str) -> Option<Arc<DatasetEntry>> {
        let reg = self.registry.read().expect("registry poisoned");
        reg.datasets.iter().find(|d| d.id == id).cloned()
    }

    pub fn create_session(&self, dataset: Arc<DatasetEntry>) -> Arc<Session> {
        let mut reg = self.registry.write().expect("registry poisoned");
        reg.next_session += 1;
        let id = format!("s-{}", reg.next_session);
        let session = Arc::new(Session::new(id.clone(), dataset));
        reg.sessions.insert(id, session.clone());
        session
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        let reg = self.registry.read().expect("registry poisoned");
        reg.sessions.get(id).cloned()
    }
}
