use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use ideaspace_core::engine::Engine;
use ideaspace_core::geometry::GeometryConfig;
use ideaspace_core::model::{Mutation, Session};
use tokio::sync::{Mutex, OwnedSemaphorePermit, Semaphore};

use crate::error::ApiError;
use crate::persist::{self, Journal, PersistError};

#[derive(Clone, Debug)]
pub struct Storage {
    pub root: PathBuf,
    pub snapshot_every: u64,
}

struct Writer {
    session: Session,
    journal: Option<Journal>,
}

/// One live session. Writes go through a single async lock; readers take
/// the latest published snapshot without waiting.
pub struct SessionHandle {
    writer: Mutex<Writer>,
    view: RwLock<Arc<Session>>,
    generating: AtomicBool,
    permits: Arc<Semaphore>,
}

impl SessionHandle {
    fn new(session: Session, journal: Option<Journal>, in_flight_limit: usize) -> Self {
        Self {
            view: RwLock::new(Arc::new(session.clone())),
            writer: Mutex::new(Writer { session, journal }),
            generating: AtomicBool::new(false),
            permits: Arc::new(Semaphore::new(in_flight_limit)),
        }
    }

    pub fn view(&self) -> Arc<Session> {
        self.view.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Prepares, journals and applies at most one mutation under the write
    /// lock. `prepare` returns `None` when there is nothing to do, such as
    /// a replayed request token.
    pub async fn commit<F>(&self, prepare: F) -> Result<(Arc<Session>, Option<Mutation>), ApiError>
    where
        F: FnOnce(&Session) -> Result<Option<Mutation>, ApiError>,
    {
        let mut w = self.writer.lock().await;
        let Some(m) = prepare(&w.session)? else {
            return Ok((self.view(), None));
        };
        w.session.check(&m)?;
        if let Some(j) = w.journal.as_mut() {
            j.append(&m)?;
        }
        w.session.apply(&m)?;
        let Writer { session, journal } = &mut *w;
        if let Some(j) = journal.as_mut() {
            if j.snapshot_due() {
                j.snapshot(session)?;
            }
        }
        let published = Arc::new(w.session.clone());
        *self.view.write().unwrap_or_else(|e| e.into_inner()) = published.clone();
        Ok((published, Some(m)))
    }

    pub fn is_generating(&self) -> bool {
        self.generating.load(Ordering::SeqCst)
    }

    /// Marks a generation stream as running; `None` if one already is.
    pub fn begin_generation(self: &Arc<Self>) -> Option<GenerationGuard> {
        self.generating
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .ok()
            .map(|_| GenerationGuard(self.clone()))
    }

    /// Waits for one of the session's provider-call slots.
    pub async fn provider_permit(&self) -> OwnedSemaphorePermit {
        self.permits.clone().acquire_owned().await.expect("semaphore never closed")
    }
}

pub struct GenerationGuard(Arc<SessionHandle>);

impl Drop for GenerationGuard {
    fn drop(&mut self) {
        self.0.generating.store(false, Ordering::SeqCst);
    }
}

pub struct AppState {
    pub engine: Arc<Engine>,
    pub geometry: GeometryConfig,
    pub in_flight_limit: usize,
    pub storage: Option<Storage>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, geometry: GeometryConfig, in_flight_limit: usize, storage: Option<Storage>) -> Self {
        Self {
            engine,
            geometry,
            in_flight_limit,
            storage,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Loads every persisted session.
    pub fn recover(&self) -> Result<usize, PersistError> {
        let Some(storage) = &self.storage else { return Ok(0) };
        let recovered = persist::recover_all(&storage.root, storage.snapshot_every)?;
        let n = recovered.len();
        let mut map = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        for (session, journal) in recovered {
            let id = session.id().to_string();
            map.insert(id, Arc::new(SessionHandle::new(session, Some(journal), self.in_flight_limit)));
        }
        Ok(n)
    }

    pub fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Registers a session built from `created` followed by `rest`, durably
    /// if storage is configured.
    pub fn insert_created(&self, created: &Mutation, rest: &[Mutation]) -> Result<Arc<SessionHandle>, ApiError> {
        let mut session = Session::from_created(created)?;
        let mut journal = match &self.storage {
            Some(s) => {
                let mut j = Journal::create(&s.root, session.id(), s.snapshot_every)?;
                j.append(created)?;
                Some(j)
            }
            None => None,
        };
        for m in rest {
            session.check(m)?;
            if let Some(j) = journal.as_mut() {
                j.append(m)?;
            }
            session.apply(m)?;
        }
        self.insert(session, journal)
    }

    /// Registers an imported session.
    pub fn insert_imported(&self, session: Session) -> Result<Arc<SessionHandle>, ApiError> {
        if self.sessions.read().unwrap_or_else(|e| e.into_inner()).contains_key(session.id()) {
            return Err(ApiError::conflict(format!("session {} already exists", session.id())));
        }
        let journal = match &self.storage {
            Some(s) => Some(persist::store_new(&s.root, &session, s.snapshot_every)?),
            None => None,
        };
        self.insert(session, journal)
    }

    fn insert(&self, session: Session, journal: Option<Journal>) -> Result<Arc<SessionHandle>, ApiError> {
        let id = session.id().to_string();
        let mut map = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        if map.contains_key(&id) {
            return Err(ApiError::conflict(format!("session {id} already exists")));
        }
        let handle = Arc::new(SessionHandle::new(session, journal, self.in_flight_limit));
        map.insert(id, handle.clone());
        Ok(handle)
    }
}
