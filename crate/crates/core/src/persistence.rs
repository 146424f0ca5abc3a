//! Session snapshots on disk and shader export.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioFeatureTimeline;
use crate::evolution::EvolveConfig;
use crate::genome::{verify_lineage, GenomeError, LineageRecord, Population};
use crate::operators::ProviderSpec;

pub const SNAPSHOT_SCHEMA: &str = "shaderbreed.session/v1";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("{path}: corrupt snapshot at line {line}, column {column}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: unsupported schema {found:?}")]
    Schema { path: PathBuf, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("nothing selected")]
    NothingSelected,
    #[error(transparent)]
    Genome(#[from] GenomeError),
}

/// Everything needed to resume a session exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub schema: String,
    pub session_id: String,
    pub population: Population,
    pub lineage: Vec<LineageRecord>,
    pub config: EvolveConfig,
    pub seed_bank: Vec<String>,
    pub provider: ProviderSpec,
    #[serde(default)]
    pub audio: Option<AudioFeatureTimeline>,
    pub created_unix_ms: u64,
    pub updated_unix_ms: u64,
}

pub fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl SessionSnapshot {
    pub fn new(
        session_id: impl Into<String>,
        population: Population,
        lineage: Vec<LineageRecord>,
        config: EvolveConfig,
        seed_bank: Vec<String>,
        provider: ProviderSpec,
    ) -> Self {
        let now = now_unix_ms();
        SessionSnapshot {
            schema: SNAPSHOT_SCHEMA.into(),
            session_id: session_id.into(),
            population,
            lineage,
            config,
            seed_bank,
            provider,
            audio: None,
            created_unix_ms: now,
            updated_unix_ms: now,
        }
    }
}

/// Ids become file names, so only a safe alphabet is accepted.
pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// One JSON file per session in a directory.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SessionStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: &str) -> Result<PathBuf, PersistError> {
        if !valid_session_id(id) {
            return Err(PersistError::InvalidId(id.into()));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    /// Writes to a temporary file and renames it over the old snapshot, so a
    /// crash leaves either the old or the new version.
    pub fn save(&self, snap: &SessionSnapshot) -> Result<PathBuf, PersistError> {
        let path = self.path_for(&snap.session_id)?;
        let io_err = |source| PersistError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(&self.dir).map_err(io_err)?;
        let json = serde_json::to_vec_pretty(snap).expect("snapshot serializes");
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&json).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
        drop(f);
        fs::rename(&tmp, &path).map_err(io_err)?;
        Ok(path)
    }

    pub fn load(&self, id: &str) -> Result<SessionSnapshot, PersistError> {
        let path = self.path_for(id)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(PersistError::NotFound(id.into()))
            }
            Err(source) => return Err(PersistError::Io { path, source }),
        };
        load_bytes(&path, &bytes)
    }

    pub fn list(&self) -> Result<Vec<String>, PersistError> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => {
                return Err(PersistError::Io {
                    path: self.dir.clone(),
                    source,
                })
            }
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_owned)
            })
            .filter(|id| valid_session_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }
}

/// Parses and checks a snapshot read from `path`.
pub fn load_bytes(path: &Path, bytes: &[u8]) -> Result<SessionSnapshot, PersistError> {
    let snap: SessionSnapshot = serde_json::from_slice(bytes).map_err(|e| PersistError::Corrupt {
        path: path.to_owned(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if snap.schema != SNAPSHOT_SCHEMA {
        return Err(PersistError::Schema {
            path: path.to_owned(),
            found: snap.schema,
        });
    }
    snap.population.check_invariants(&snap.config.limits)?;
    verify_lineage(&snap.lineage, snap.config.max_attempts)?;
    Ok(snap)
}

/// Concatenates the selected shaders in slot order, each under a header
/// comment naming its id and generation.
pub fn export_selected(pop: &Population) -> Result<String, PersistError> {
    let mut out = String::new();
    for g in pop.selected() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!(
            "// --- shader {} (generation {}) ---\n",
            g.id, g.generation
        ));
        out.push_str(g.code.trim_end());
        out.push('\n');
    }
    if out.is_empty() {
        return Err(PersistError::NothingSelected);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::evolution::{Engine, RandomKPolicy};
    use crate::glsl::AcceptingBackend;
    use crate::seeds;

    fn session(seed: u64, generations: usize) -> SessionSnapshot {
        let spec = ProviderSpec::Mock {
            seed,
            failure_rate: 0.3,
        };
        let config = EvolveConfig {
            rng_seed: seed,
            ..EvolveConfig::default()
        };
        let engine = Engine::new(
            config.clone(),
            seeds::builtin(),
            spec.build().unwrap(),
            Arc::new(AcceptingBackend),
        )
        .unwrap();
        let (mut pop, mut lineage) = engine.initialize().unwrap();
        for _ in 0..generations {
            let out = engine.autopilot_step(&pop, &RandomKPolicy { k: 3 }, |_| {}).unwrap();
            pop = out.population;
            lineage.extend(out.lineage);
        }
        SessionSnapshot::new("s1", pop, lineage, config, seeds::builtin(), spec)
    }

    #[test]
    fn unknown_and_corrupt_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        assert!(matches!(store.load("missing"), Err(PersistError::NotFound(_))));
        assert!(matches!(store.load("../etc"), Err(PersistError::InvalidId(_))));
        fs::write(dir.path().join("bad.json"), "{\n  \"schema\": 12,\n").unwrap();
        match store.load("bad").unwrap_err() {
            PersistError::Corrupt { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn export_in_slot_order() {
        let snap = session(2, 1);
        let text = export_selected(&snap.population).unwrap();
        let ids: Vec<_> = snap.population.selected().map(|g| g.id.to_string()).collect();
        let mut last = 0;
        for id in &ids {
            let at = text.find(&format!("// --- shader {id} ")).unwrap();
            assert!(at >= last);
            last = at;
        }
        let mut none = snap.population.clone();
        none.select_only(&[]).unwrap();
        assert_eq!(export_selected(&none).unwrap_err().to_string(), "nothing selected");
    }

    #[test]
    fn store_lists_saved_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path().join("nested"));
        assert!(store.list().unwrap().is_empty());
        store.save(&session(1, 0)).unwrap();
        assert_eq!(store.list().unwrap(), vec!["s1".to_owned()]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn save_load_round_trip(seed in 0u64..1000, generations in 0usize..4) {
            let dir = tempfile::tempdir().unwrap();
            let store = SessionStore::new(dir.path());
            let snap = session(seed, generations);
            store.save(&snap).unwrap();
            prop_assert_eq!(store.load("s1").unwrap(), snap);
        }
    }
}
