//! Live sessions: one population writer per session plus an ordered event
//! stream for observers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use shaderbreed_core::audio::{decode_wav, feature_timeline, AudioFeatureTimeline, WavError};
use shaderbreed_core::evolution::{Engine, EvolveError, OffspringEvent, SelectionPolicy};
use shaderbreed_core::genome::{GenomeError, GenomeId, Operator, Population};
use shaderbreed_core::glsl::{wrap_code, CompileBackend};
use shaderbreed_core::operators::{
    Provider, ProviderError, ProviderSpec, RecordingProvider,
};
use shaderbreed_core::persistence::{
    export_selected, now_unix_ms, valid_session_id, PersistError, SessionSnapshot, SessionStore,
};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::config::{AppConfig, ConfigError};

/// Default analysis hop for uploaded audio: one frame per 60 Hz video frame.
pub const DEFAULT_HOP_SECONDS: f64 = 1.0 / 60.0;
const EVENT_BUFFER: usize = 1024;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    UnknownSession(String),
    #[error("session {0} already exists")]
    SessionExists(String),
    #[error("invalid session id {0:?}")]
    InvalidSessionId(String),
    #[error("busy: an evolve is already running")]
    Busy,
    #[error("session {0} has no audio")]
    NoAudio(String),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PopulationUpdated,
    EvolveStarted,
    OffspringReady,
    EvolveFinished,
    Error,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::PopulationUpdated => "population_updated",
            EventKind::EvolveStarted => "evolve_started",
            EventKind::OffspringReady => "offspring_ready",
            EventKind::EvolveFinished => "evolve_finished",
            EventKind::Error => "error",
        }
    }
}

/// One message on a session's event stream. `seq` strictly increases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeView {
    pub slot: usize,
    pub id: GenomeId,
    pub generation: u64,
    pub selected: bool,
    pub operator: Operator,
    pub parent_ids: Vec<GenomeId>,
    /// Sanitized user code.
    pub code: String,
    /// Complete fragment shader, ready to compile.
    pub full_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationView {
    pub session_id: String,
    pub generation: u64,
    pub evolving: bool,
    pub genomes: Vec<GenomeView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionAck {
    pub id: GenomeId,
    pub selected: bool,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveTicket {
    pub evolve_id: String,
    pub replace_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub evolve_id: String,
    pub generation: u64,
    pub replaced: usize,
    pub fallback_count: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSummary {
    pub frames: usize,
    pub hop_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSession {
    pub session_id: Option<String>,
    pub seed: Option<u64>,
}

struct State {
    snapshot: SessionSnapshot,
    /// Selection edits made while an evolve runs, replayed onto its result.
    pending: Vec<(GenomeId, bool)>,
}

pub struct Session {
    id: String,
    engine: Engine,
    state: Mutex<State>,
    evolving: AtomicBool,
    seq: Mutex<u64>,
    events: broadcast::Sender<ApiEvent>,
}

fn view_of(id: &str, pop: &Population, evolving: bool) -> PopulationView {
    PopulationView {
        session_id: id.to_owned(),
        generation: pop.generation(),
        evolving,
        genomes: pop
            .genomes()
            .iter()
            .enumerate()
            .map(|(slot, g)| GenomeView {
                slot,
                id: g.id.clone(),
                generation: g.generation,
                selected: g.selected,
                operator: g.operator,
                parent_ids: g.parent_ids.clone(),
                code: g.code.clone(),
                full_source: wrap_code(&g.code)
                    .map(|w| w.full_source)
                    .expect("population members are valid"),
            })
            .collect(),
    }
}

fn selection_payload(pop: &Population, reason: &str) -> Value {
    let selected: Vec<&GenomeId> = pop.selected().map(|g| &g.id).collect();
    json!({
        "reason": reason,
        "generation": pop.generation(),
        "selected": selected,
    })
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ApiEvent> {
        self.events.subscribe()
    }

    pub fn is_evolving(&self) -> bool {
        self.evolving.load(Ordering::SeqCst)
    }

    fn emit(&self, kind: EventKind, payload: Value) {
        let mut seq = self.seq.lock().unwrap();
        *seq += 1;
        // No receivers is fine; events are fire-and-forget.
        let _ = self.events.send(ApiEvent {
            seq: *seq,
            kind,
            payload,
        });
    }

    fn emit_error(&self, message: &str) {
        self.emit(EventKind::Error, json!({ "message": message }));
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        self.state.lock().unwrap().snapshot.clone()
    }

    pub fn population_view(&self) -> PopulationView {
        let state = self.state.lock().unwrap();
        view_of(&self.id, &state.snapshot.population, self.is_evolving())
    }
}

/// Owns every live session and the store they persist to.
pub struct SessionManager {
    config: AppConfig,
    store: SessionStore,
    backend: Arc<dyn CompileBackend>,
    record: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    counter: Mutex<u64>,
}

impl SessionManager {
    pub fn new(config: AppConfig) -> Self {
        let backend = config.backend();
        SessionManager {
            store: SessionStore::new(config.session_dir.clone()),
            config,
            backend,
            record: None,
            sessions: Mutex::new(HashMap::new()),
            counter: Mutex::new(0),
        }
    }

    /// Appends every provider exchange to a transcript for later replay.
    pub fn with_recording(mut self, path: PathBuf) -> Self {
        self.record = Some(path);
        self
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    fn provider(&self, spec: &ProviderSpec) -> Result<Arc<dyn Provider>, ServiceError> {
        let inner = spec.build()?;
        Ok(match &self.record {
            Some(path) => Arc::new(
                RecordingProvider::create(inner, path)
                    .map_err(|e| ServiceError::Invalid(format!("{}: {e}", path.display())))?,
            ),
            None => inner,
        })
    }

    fn engine_for(&self, snap: &SessionSnapshot) -> Result<Engine, ServiceError> {
        Ok(Engine::new(
            snap.config.clone(),
            snap.seed_bank.clone(),
            self.provider(&snap.provider)?,
            self.backend.clone(),
        )?)
    }

    fn fresh_id(&self) -> String {
        let mut counter = self.counter.lock().unwrap();
        loop {
            *counter += 1;
            let id = format!("s{:x}-{}", now_unix_ms(), *counter);
            if !self.sessions.lock().unwrap().contains_key(&id) {
                return id;
            }
        }
    }

    fn install(&self, snapshot: SessionSnapshot, engine: Engine) -> Arc<Session> {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let session = Arc::new(Session {
            id: snapshot.session_id.clone(),
            engine,
            state: Mutex::new(State {
                snapshot,
                pending: Vec::new(),
            }),
            evolving: AtomicBool::new(false),
            seq: Mutex::new(0),
            events,
        });
        self.sessions
            .lock()
            .unwrap()
            .insert(session.id.clone(), session.clone());
        session
    }

    /// Seeds a new generation-0 session and saves it.
    pub fn create(&self, req: CreateSession) -> Result<Arc<Session>, ServiceError> {
        let id = match req.session_id {
            Some(id) => {
                if !valid_session_id(&id) {
                    return Err(ServiceError::InvalidSessionId(id));
                }
                if self.sessions.lock().unwrap().contains_key(&id) || self.store.path_for(&id)?.exists()
                {
                    return Err(ServiceError::SessionExists(id));
                }
                id
            }
            None => self.fresh_id(),
        };
        let evolve = self.config.evolve_config(req.seed.unwrap_or(self.config.rng_seed));
        let bank = self.config.load_seed_bank()?;
        let provider_spec = self.config.provider.clone();
        let engine = Engine::new(
            evolve.clone(),
            bank.clone(),
            self.provider(&provider_spec)?,
            self.backend.clone(),
        )?;
        let (population, lineage) = engine.initialize()?;
        let snapshot = SessionSnapshot::new(id, population, lineage, evolve, bank, provider_spec);
        self.store.save(&snapshot)?;
        Ok(self.install(snapshot, engine))
    }

    /// Loads a stored session, replacing any live copy that is not evolving.
    pub fn load(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        if let Some(live) = self.sessions.lock().unwrap().get(id) {
            if live.is_evolving() {
                return Err(ServiceError::Busy);
            }
        }
        let snapshot = self.store.load(id).map_err(|e| match e {
            PersistError::NotFound(id) => ServiceError::UnknownSession(id),
            e => e.into(),
        })?;
        let engine = self.engine_for(&snapshot)?;
        let session = self.install(snapshot, engine);
        session.emit(
            EventKind::PopulationUpdated,
            selection_payload(&session.state.lock().unwrap().snapshot.population, "loaded"),
        );
        Ok(session)
    }

    /// A live session, loading it from the store on first use.
    pub fn get(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        if let Some(s) = self.sessions.lock().unwrap().get(id) {
            return Ok(s.clone());
        }
        if !valid_session_id(id) {
            return Err(ServiceError::UnknownSession(id.to_owned()));
        }
        self.load(id)
    }

    pub fn list(&self) -> Result<Vec<String>, ServiceError> {
        let mut ids = self.store.list()?;
        for id in self.sessions.lock().unwrap().keys() {
            if !ids.contains(id) {
                ids.push(id.clone());
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn persist(&self, state: &mut State) -> Result<(), ServiceError> {
        state.snapshot.updated_unix_ms = now_unix_ms();
        self.store.save(&state.snapshot)?;
        Ok(())
    }

    /// Emits `population_updated` once per actual change; unknown ids emit
    /// an error event.
    pub fn set_selection(
        &self,
        session: &Session,
        id: &GenomeId,
        flag: bool,
    ) -> Result<SelectionAck, ServiceError> {
        let mut state = session.state.lock().unwrap();
        let changed = match state.snapshot.population.set_selected(id, flag) {
            Ok(c) => c,
            Err(e) => {
                session.emit_error(&e.to_string());
                return Err(e.into());
            }
        };
        if changed {
            if session.is_evolving() {
                state.pending.push((id.clone(), flag));
            } else {
                self.persist(&mut state)?;
            }
            session.emit(
                EventKind::PopulationUpdated,
                selection_payload(&state.snapshot.population, "selection"),
            );
        }
        Ok(SelectionAck {
            id: id.clone(),
            selected: flag,
            changed,
        })
    }

    /// Validates preconditions and marks the session busy. The returned job
    /// must be run (see [`EvolveJob::run`]).
    pub fn begin_evolve(&self, session: &Arc<Session>) -> Result<EvolveJob, ServiceError> {
        let state = session.state.lock().unwrap();
        let pop = &state.snapshot.population;
        let partition = pop.partition();
        if partition.elites.is_empty() {
            let e = EvolveError::EmptySelection;
            session.emit_error(&e.to_string());
            return Err(e.into());
        }
        if session
            .evolving
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            session.emit_error("busy: an evolve is already running");
            return Err(ServiceError::Busy);
        }
        let evolve_id = format!("{}-e{}", session.id, pop.generation() + 1);
        let replace_count = partition.replaceables.len();
        session.emit(
            EventKind::EvolveStarted,
            json!({
                "evolve_id": evolve_id,
                "from_generation": pop.generation(),
                "replace_count": replace_count,
                "parents": partition.elites,
            }),
        );
        Ok(EvolveJob {
            session: session.clone(),
            population: pop.clone(),
            ticket: EvolveTicket {
                evolve_id,
                replace_count,
            },
        })
    }

    pub fn export(&self, session: &Session) -> Result<String, ServiceError> {
        let state = session.state.lock().unwrap();
        Ok(export_selected(&state.snapshot.population)?)
    }

    pub fn upload_audio(
        &self,
        session: &Session,
        wav: &[u8],
        hop_seconds: f64,
    ) -> Result<AudioSummary, ServiceError> {
        let clip = decode_wav(wav)?;
        let timeline = feature_timeline(&clip, hop_seconds).map_err(WavError::from)?;
        let summary = AudioSummary {
            frames: timeline.features.len(),
            hop_seconds,
        };
        let mut state = session.state.lock().unwrap();
        state.snapshot.audio = Some(timeline);
        if !session.is_evolving() {
            self.persist(&mut state)?;
        }
        Ok(summary)
    }

    pub fn audio(&self, session: &Session) -> Result<AudioFeatureTimeline, ServiceError> {
        session
            .state
            .lock()
            .unwrap()
            .snapshot
            .audio
            .clone()
            .ok_or_else(|| ServiceError::NoAudio(session.id.clone()))
    }

    /// Makes exactly `ids` selected.
    pub fn replace_selection(&self, session: &Session, ids: &[GenomeId]) -> Result<(), ServiceError> {
        if session.is_evolving() {
            return Err(ServiceError::Busy);
        }
        let mut state = session.state.lock().unwrap();
        let before: Vec<GenomeId> = state.snapshot.population.selected().map(|g| g.id.clone()).collect();
        if let Err(e) = state.snapshot.population.select_only(ids) {
            session.emit_error(&e.to_string());
            return Err(e.into());
        }
        let after: Vec<GenomeId> = state.snapshot.population.selected().map(|g| g.id.clone()).collect();
        if before != after {
            self.persist(&mut state)?;
            session.emit(
                EventKind::PopulationUpdated,
                selection_payload(&state.snapshot.population, "selection"),
            );
        }
        Ok(())
    }

    /// Lets `policy` choose the selection, then evolves synchronously.
    pub fn autopilot_step(
        &self,
        session: &Arc<Session>,
        policy: &dyn SelectionPolicy,
    ) -> Result<EvolveSummary, ServiceError> {
        let chosen = {
            let state = session.state.lock().unwrap();
            policy.choose(&state.snapshot.population, state.snapshot.config.rng_seed)
        };
        self.replace_selection(session, &chosen)?;
        let job = self.begin_evolve(session)?;
        self.run_evolve(job)
    }

    /// Runs a job to completion on the current thread, then installs the
    /// result. Blocking; call from a worker thread in async contexts.
    pub fn run_evolve(&self, job: EvolveJob) -> Result<EvolveSummary, ServiceError> {
        let session = job.session.clone();
        let evolve_id = job.ticket.evolve_id.clone();
        let result = session.engine.evolve_step(&job.population, |ev: &OffspringEvent| {
            let full_source = wrap_code(&ev.genome.code)
                .map(|w| w.full_source)
                .unwrap_or_default();
            session.emit(
                EventKind::OffspringReady,
                json!({
                    "evolve_id": evolve_id,
                    "slot": ev.slot,
                    "genome_id": ev.genome.id,
                    "operator": ev.genome.operator,
                    "fell_back": ev.record.fell_back,
                    "attempts_used": ev.record.attempts_used,
                    "full_source": full_source,
                }),
            );
        });

        let mut state = session.state.lock().unwrap();
        let outcome = match result {
            Ok(o) => o,
            Err(e) => {
                state.pending.clear();
                session.evolving.store(false, Ordering::SeqCst);
                session.emit_error(&e.to_string());
                return Err(e.into());
            }
        };
        let mut population = outcome.population;
        for (id, flag) in std::mem::take(&mut state.pending) {
            // Edits to genomes that were just replaced are dropped.
            let _ = population.set_selected(&id, flag);
        }
        let fallback_count = outcome.lineage.iter().filter(|r| r.fell_back).count();
        let generation = population.generation();
        state.snapshot.population = population;
        state.snapshot.lineage.extend(outcome.lineage);
        let saved = self.persist(&mut state);
        session.evolving.store(false, Ordering::SeqCst);
        session.emit(
            EventKind::EvolveFinished,
            json!({
                "evolve_id": evolve_id,
                "generation": generation,
                "fallback_count": fallback_count,
                "warnings": &outcome.warnings,
                "selected": state.snapshot.population.selected().map(|g| &g.id).collect::<Vec<_>>(),
            }),
        );
        saved?;
        Ok(EvolveSummary {
            evolve_id,
            generation,
            replaced: job.ticket.replace_count,
            fallback_count,
            warnings: outcome.warnings,
        })
    }
}

/// An accepted evolve request.
pub struct EvolveJob {
    session: Arc<Session>,
    population: Population,
    ticket: EvolveTicket,
}

impl EvolveJob {
    pub fn ticket(&self) -> &EvolveTicket {
        &self.ticket
    }
}
