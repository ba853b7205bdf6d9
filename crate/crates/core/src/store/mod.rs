//! Append-only relational store for the five entity tables, plus the
//! write-once blob area holding raw artifacts, policy specs and plans.
//!
//! Rows are inserted with insert-or-ignore semantics and are never updated or
//! deleted; triggers reject `UPDATE` and `DELETE` on every table. Each insert
//! first recomputes the record identifier and checks that every foreign
//! reference resolves, so the provenance chain is consistent at all times.

mod blob;
mod records;

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::Serialize;
use thiserror::Error;

pub use blob::{BlobRef, BlobStore};
pub use records::{
    decision_id_for, now_ms, ContentAddressed, DecisionRecord, EngineRunRecord, FMapEntry, ManifestEntry, NewRun,
    Params, Record, RepresentationRecord, RunStatus, SnapshotRecord, TimeWindow, RECORD_VERSION,
};

use crate::canon::{self, CanonError, CanonicalValue, IdPrefix, Identifier, PayloadHash};

/// Environment variable naming the default store location.
pub const DB_PATH_ENV: &str = "DECISIONDB_PATH";

const SCHEMA_VERSION: &str = "1";
const DB_FILE: &str = "decisiondb.sqlite";
const BLOB_DIR: &str = "blobs";
const TABLES: [&str; 5] = ["snapshots", "representations", "engine_runs", "decisions", "f_map"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot open store: {check} failed: {detail}")]
    Open { check: &'static str, detail: String },
    #[error("integrity error: {kind} {claimed} does not match recomputed {recomputed}")]
    Integrity {
        kind: &'static str,
        claimed: String,
        recomputed: String,
    },
    #[error("referential error: {kind} {missing} does not exist")]
    Referential { kind: &'static str, missing: String },
    #[error("inconsistent chain: {0}")]
    Chain(String),
    #[error("blob {hash} is corrupt: {detail}")]
    Corrupt { hash: PayloadHash, detail: String },
    #[error("{0} has no table of its own")]
    NoTable(IdPrefix),
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Outcome of an insert-or-ignore write.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PutOutcome {
    Inserted,
    Ignored,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TableCounts {
    pub snapshots: u64,
    pub representations: u64,
    pub engine_runs: u64,
    pub decisions: u64,
    pub f_map: u64,
}

#[derive(Clone, Debug, Default)]
pub struct FMapFilter {
    pub snapshot_id: Option<Identifier>,
    pub plan_id: Option<Identifier>,
}

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS snapshots (
    snapshot_id TEXT PRIMARY KEY,
    time_window_start TEXT NOT NULL,
    time_window_end TEXT NOT NULL,
    artifact_manifest TEXT NOT NULL,
    version TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS representations (
    repr_id TEXT PRIMARY KEY,
    snapshot_id TEXT NOT NULL REFERENCES snapshots(snapshot_id),
    factory_name TEXT NOT NULL,
    factory_version TEXT NOT NULL,
    params TEXT NOT NULL,
    encoded_artifact_ref TEXT NOT NULL,
    version TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS engine_runs (
    run_id TEXT PRIMARY KEY,
    repr_id TEXT NOT NULL REFERENCES representations(repr_id),
    plan_id TEXT NOT NULL,
    engine_name TEXT NOT NULL,
    engine_version TEXT NOT NULL,
    query TEXT NOT NULL,
    raw_output_ref TEXT NOT NULL,
    exec_time_ms TEXT NOT NULL,
    status TEXT NOT NULL CHECK (status IN ('ok', 'failed')),
    version TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS decisions (
    decision_id TEXT PRIMARY KEY,
    policy_id TEXT NOT NULL,
    payload_hash TEXT NOT NULL,
    version TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS f_map (
    experiment_id TEXT NOT NULL,
    snapshot_id TEXT NOT NULL REFERENCES snapshots(snapshot_id),
    repr_id TEXT NOT NULL REFERENCES representations(repr_id),
    run_id TEXT NOT NULL REFERENCES engine_runs(run_id),
    decision_id TEXT NOT NULL REFERENCES decisions(decision_id),
    plan_id TEXT NOT NULL,
    created_at INTEGER NOT NULL,
    PRIMARY KEY (experiment_id, repr_id, run_id, decision_id)
);
CREATE INDEX IF NOT EXISTS f_map_decision ON f_map(decision_id);
CREATE INDEX IF NOT EXISTS f_map_plan ON f_map(experiment_id, plan_id);
"#;

fn append_only_triggers() -> String {
    TABLES
        .iter()
        .flat_map(|t| {
            ["UPDATE", "DELETE"].map(|op| {
                format!(
                    "CREATE TRIGGER IF NOT EXISTS {t}_no_{lower} BEFORE {op} ON {t} \
                     BEGIN SELECT RAISE(ABORT, '{t} is append-only'); END;",
                    lower = op.to_lowercase()
                )
            })
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Handle on an open store. Writes are serialized through an internal lock;
/// cross-process writers serialize on the SQLite file lock.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    conn: Mutex<Connection>,
    blobs: BlobStore,
}

fn open_err(check: &'static str) -> impl Fn(rusqlite::Error) -> StoreError {
    move |e| StoreError::Open {
        check,
        detail: e.to_string(),
    }
}

impl Store {
    /// Opens or initializes a store rooted at `location`.
    pub fn open(location: impl AsRef<Path>) -> Result<Store> {
        let root = location.as_ref().to_path_buf();
        std::fs::create_dir_all(&root).map_err(|e| StoreError::Open {
            check: "create store directory",
            detail: e.to_string(),
        })?;
        let conn = Connection::open(root.join(DB_FILE)).map_err(open_err("open database file"))?;
        conn.busy_timeout(std::time::Duration::from_secs(10))
            .map_err(open_err("set busy timeout"))?;
        let check: String = conn
            .query_row("PRAGMA quick_check", [], |r| r.get(0))
            .map_err(open_err("database integrity check"))?;
        if check != "ok" {
            return Err(StoreError::Open {
                check: "database integrity check",
                detail: check,
            });
        }
        conn.execute_batch("PRAGMA foreign_keys = ON; PRAGMA journal_mode = WAL;")
            .map_err(open_err("configure pragmas"))?;
        conn.execute_batch(&format!("BEGIN; {SCHEMA} {} COMMIT;", append_only_triggers()))
            .map_err(open_err("schema initialization"))?;
        let version: Option<String> = conn
            .query_row("SELECT value FROM meta WHERE key = 'schema_version'", [], |r| r.get(0))
            .optional()
            .map_err(open_err("schema version"))?;
        match version {
            None => {
                conn.execute(
                    "INSERT INTO meta (key, value) VALUES ('schema_version', ?1)",
                    [SCHEMA_VERSION],
                )
                .map_err(open_err("schema version"))?;
            }
            Some(v) if v == SCHEMA_VERSION => {}
            Some(v) => {
                return Err(StoreError::Open {
                    check: "schema version",
                    detail: format!("found {v}, expected {SCHEMA_VERSION}"),
                })
            }
        }
        let blobs = BlobStore::open(root.join(BLOB_DIR)).map_err(|e| StoreError::Open {
            check: "blob area",
            detail: e.to_string(),
        })?;
        Ok(Store {
            root,
            conn: Mutex::new(conn),
            blobs,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    // -- blobs -------------------------------------------------------------

    pub fn put_blob(&self, bytes: &[u8]) -> Result<BlobRef> {
        self.blobs.put(bytes)
    }

    /// Stores the canonical encoding of `value`.
    pub fn put_canonical(&self, value: &CanonicalValue) -> Result<BlobRef> {
        self.blobs.put(&canon::canonical_encode(value))
    }

    pub fn get_blob(&self, hash: &PayloadHash) -> Result<Option<Vec<u8>>> {
        self.blobs.get(hash)
    }

    pub fn require_blob(&self, hash: &PayloadHash) -> Result<Vec<u8>> {
        self.blobs.get(hash)?.ok_or_else(|| StoreError::Referential {
            kind: "blob",
            missing: hash.to_string(),
        })
    }

    /// The spec blob behind a `pol` or `plan` identifier. These blobs are
    /// addressed by the identifier's digest.
    pub fn spec_blob(&self, id: &Identifier) -> Result<Option<Vec<u8>>> {
        self.blobs.get(&id.digest())
    }

    pub fn blob_count(&self) -> Result<usize> {
        Ok(self.blobs.list()?.len())
    }

    // -- records -----------------------------------------------------------

    /// Inserts a record, or ignores it if its primary key already exists.
    pub fn put_record(&self, record: impl Into<Record>) -> Result<PutOutcome> {
        let record = record.into();
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let outcome = match &record {
            Record::Snapshot(r) => {
                check_id(r)?;
                for entry in &r.artifact_manifest {
                    self.require_blob_exists("artifact blob", &entry.artifact_ref)?;
                }
                tx.execute(
                    "INSERT OR IGNORE INTO snapshots VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                    params![
                        r.snapshot_id.to_string(),
                        r.time_window.start,
                        r.time_window.end,
                        json(&r.artifact_manifest)?,
                        r.version,
                        r.created_at
                    ],
                )?
            }
            Record::Representation(r) => {
                check_id(r)?;
                require_row(&tx, "snapshots", "snapshot_id", "snapshot", &r.snapshot_id)?;
                self.require_blob_exists("representation artifact", &r.encoded_artifact_ref)?;
                tx.execute(
                    "INSERT OR IGNORE INTO representations VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
                    params![
                        r.repr_id.to_string(),
                        r.snapshot_id.to_string(),
                        r.factory_name,
                        r.factory_version,
                        json(&r.params)?,
                        r.encoded_artifact_ref.to_string(),
                        r.version,
                        r.created_at
                    ],
                )?
            }
            Record::EngineRun(r) => {
                check_id(r)?;
                require_row(&tx, "representations", "repr_id", "representation", &r.repr_id)?;
                self.require_blob_exists("raw output", &r.raw_output_ref)?;
                self.require_blob_exists("plan", &r.plan_id.digest())?;
                tx.execute(
                    "INSERT OR IGNORE INTO engine_runs VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)",
                    params![
                        r.run_id.to_string(),
                        r.repr_id.to_string(),
                        r.plan_id.to_string(),
                        r.engine_name,
                        r.engine_version,
                        canon::canonical_string(&r.query),
                        r.raw_output_ref.to_string(),
                        r.exec_time_ms.to_string(),
                        r.status.as_str(),
                        r.version,
                        r.created_at
                    ],
                )?
            }
            Record::Decision(r) => {
                check_id(r)?;
                self.require_blob_exists("policy", &r.policy_id.digest())?;
                tx.execute(
                    "INSERT OR IGNORE INTO decisions VALUES (?1, ?2, ?3, ?4, ?5)",
                    params![
                        r.decision_id.to_string(),
                        r.policy_id.to_string(),
                        r.payload_hash.to_string(),
                        r.version,
                        r.created_at
                    ],
                )?
            }
            Record::FMap(e) => {
                check_fmap(&tx, e)?;
                self.require_blob_exists("plan", &e.plan_id.digest())?;
                tx.execute(
                    "INSERT OR IGNORE INTO f_map VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                    params![
                        e.experiment_id,
                        e.snapshot_id.to_string(),
                        e.repr_id.to_string(),
                        e.run_id.to_string(),
                        e.decision_id.to_string(),
                        e.plan_id.to_string(),
                        e.created_at
                    ],
                )?
            }
        };
        tx.commit()?;
        Ok(if outcome == 1 {
            PutOutcome::Inserted
        } else {
            PutOutcome::Ignored
        })
    }

    fn require_blob_exists(&self, kind: &'static str, hash: &PayloadHash) -> Result<()> {
        if self.blobs.contains(hash) {
            Ok(())
        } else {
            Err(StoreError::Referential {
                kind,
                missing: hash.to_string(),
            })
        }
    }

    /// Looks up an identifier-keyed row by the table its prefix selects.
    pub fn get_record(&self, id: &Identifier) -> Result<Option<Record>> {
        Ok(match id.prefix() {
            IdPrefix::Snap => self.get_snapshot(id)?.map(Record::Snapshot),
            IdPrefix::Repr => self.get_representation(id)?.map(Record::Representation),
            IdPrefix::Run => self.get_run(id)?.map(Record::EngineRun),
            IdPrefix::Dec => self.get_decision(id)?.map(Record::Decision),
            p @ (IdPrefix::Pol | IdPrefix::Plan) => return Err(StoreError::NoTable(p)),
        })
    }

    /// [`Store::get_record`] from the rendered identifier.
    pub fn get_record_str(&self, id: &str) -> Result<Option<Record>> {
        self.get_record(&id.parse()?)
    }

    pub fn get_snapshot(&self, id: &Identifier) -> Result<Option<SnapshotRecord>> {
        self.conn()
            .query_row(
                "SELECT * FROM snapshots WHERE snapshot_id = ?1",
                [id.to_string()],
                |r| Ok(snapshot_from_row(r)),
            )
            .optional()?
            .transpose()
    }

    pub fn get_representation(&self, id: &Identifier) -> Result<Option<RepresentationRecord>> {
        self.conn()
            .query_row(
                "SELECT * FROM representations WHERE repr_id = ?1",
                [id.to_string()],
                |r| Ok(representation_from_row(r)),
            )
            .optional()?
            .transpose()
    }

    pub fn get_run(&self, id: &Identifier) -> Result<Option<EngineRunRecord>> {
        self.conn()
            .query_row("SELECT * FROM engine_runs WHERE run_id = ?1", [id.to_string()], |r| {
                Ok(run_from_row(r))
            })
            .optional()?
            .transpose()
    }

    pub fn get_decision(&self, id: &Identifier) -> Result<Option<DecisionRecord>> {
        self.conn()
            .query_row(
                "SELECT * FROM decisions WHERE decision_id = ?1",
                [id.to_string()],
                |r| Ok(decision_from_row(r)),
            )
            .optional()?
            .transpose()
    }

    /// Row counts of all five tables, read in one transaction.
    pub fn table_counts(&self) -> Result<TableCounts> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let count = |t: &str| -> Result<u64> {
            Ok(tx.query_row(&format!("SELECT COUNT(*) FROM {t}"), [], |r| r.get::<_, i64>(0))? as u64)
        };
        let counts = TableCounts {
            snapshots: count("snapshots")?,
            representations: count("representations")?,
            engine_runs: count("engine_runs")?,
            decisions: count("decisions")?,
            f_map: count("f_map")?,
        };
        tx.commit()?;
        Ok(counts)
    }

    /// Map entries of an experiment, sorted by `repr_id` then `run_id`.
    pub fn query_fmap(&self, experiment_id: &str, filter: &FMapFilter) -> Result<Vec<FMapEntry>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT * FROM f_map WHERE experiment_id = ?1 \
             AND (?2 IS NULL OR snapshot_id = ?2) AND (?3 IS NULL OR plan_id = ?3) \
             ORDER BY repr_id, run_id, decision_id",
        )?;
        let rows = stmt.query_map(
            params![
                experiment_id,
                filter.snapshot_id.map(|i| i.to_string()),
                filter.plan_id.map(|i| i.to_string())
            ],
            |r| Ok(fmap_from_row(r)),
        )?;
        rows.map(|r| r?).collect()
    }

    /// Map entries pointing at a decision, across all experiments.
    pub fn fmap_for_decision(&self, decision_id: &Identifier) -> Result<Vec<FMapEntry>> {
        let conn = self.conn();
        let mut stmt =
            conn.prepare("SELECT * FROM f_map WHERE decision_id = ?1 ORDER BY experiment_id, repr_id, run_id")?;
        let rows = stmt.query_map([decision_id.to_string()], |r| Ok(fmap_from_row(r)))?;
        rows.map(|r| r?).collect()
    }

    /// Plans that contributed to an experiment, in first-insertion order.
    pub fn experiment_plans(&self, experiment_id: &str) -> Result<Vec<Identifier>> {
        let conn = self.conn();
        let mut stmt =
            conn.prepare("SELECT plan_id FROM f_map WHERE experiment_id = ?1 GROUP BY plan_id ORDER BY MIN(rowid)")?;
        let rows = stmt.query_map([experiment_id], |r| r.get::<_, String>(0))?;
        rows.map(|r| Ok(r?.parse()?)).collect()
    }

    /// Runs recorded for a plan, including failed ones.
    pub fn runs_for_plan(&self, plan_id: &Identifier) -> Result<Vec<EngineRunRecord>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT * FROM engine_runs WHERE plan_id = ?1 ORDER BY run_id")?;
        let rows = stmt.query_map([plan_id.to_string()], |r| Ok(run_from_row(r)))?;
        rows.map(|r| r?).collect()
    }

    pub fn all_representations(&self) -> Result<Vec<RepresentationRecord>> {
        self.scan(
            "SELECT * FROM representations ORDER BY repr_id",
            representation_from_row,
        )
    }

    pub fn all_runs(&self) -> Result<Vec<EngineRunRecord>> {
        self.scan("SELECT * FROM engine_runs ORDER BY run_id", run_from_row)
    }

    pub fn all_snapshots(&self) -> Result<Vec<SnapshotRecord>> {
        self.scan("SELECT * FROM snapshots ORDER BY snapshot_id", snapshot_from_row)
    }

    pub fn all_decisions(&self) -> Result<Vec<DecisionRecord>> {
        self.scan("SELECT * FROM decisions ORDER BY decision_id", decision_from_row)
    }

    fn scan<T>(&self, sql: &str, f: fn(&Row<'_>) -> Result<T>) -> Result<Vec<T>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(sql)?;
        let rows = stmt.query_map([], |r| Ok(f(r)))?;
        rows.map(|r| r?).collect()
    }
}

fn check_id<T: ContentAddressed>(record: &T) -> Result<()> {
    let recomputed = record.computed_id()?;
    if recomputed != record.id() {
        return Err(StoreError::Integrity {
            kind: T::PREFIX.as_str(),
            claimed: record.id().to_string(),
            recomputed: recomputed.to_string(),
        });
    }
    Ok(())
}

fn require_row(conn: &Connection, table: &str, column: &str, kind: &'static str, id: &Identifier) -> Result<()> {
    let found: Option<i64> = conn
        .query_row(
            &format!("SELECT 1 FROM {table} WHERE {column} = ?1"),
            [id.to_string()],
            |r| r.get(0),
        )
        .optional()?;
    if found.is_none() {
        return Err(StoreError::Referential {
            kind,
            missing: id.to_string(),
        });
    }
    Ok(())
}

fn check_fmap(conn: &Connection, e: &FMapEntry) -> Result<()> {
    require_row(conn, "snapshots", "snapshot_id", "snapshot", &e.snapshot_id)?;
    require_row(conn, "decisions", "decision_id", "decision", &e.decision_id)?;
    let repr_snapshot: Option<String> = conn
        .query_row(
            "SELECT snapshot_id FROM representations WHERE repr_id = ?1",
            [e.repr_id.to_string()],
            |r| r.get(0),
        )
        .optional()?;
    let repr_snapshot = repr_snapshot.ok_or_else(|| StoreError::Referential {
        kind: "representation",
        missing: e.repr_id.to_string(),
    })?;
    if repr_snapshot != e.snapshot_id.to_string() {
        return Err(StoreError::Chain(format!(
            "representation {} belongs to {repr_snapshot}, not {}",
            e.repr_id, e.snapshot_id
        )));
    }
    let run: Option<(String, String, String)> = conn
        .query_row(
            "SELECT repr_id, plan_id, status FROM engine_runs WHERE run_id = ?1",
            [e.run_id.to_string()],
            |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
        )
        .optional()?;
    let (run_repr, run_plan, status) = run.ok_or_else(|| StoreError::Referential {
        kind: "engine run",
        missing: e.run_id.to_string(),
    })?;
    if run_repr != e.repr_id.to_string() || run_plan != e.plan_id.to_string() {
        return Err(StoreError::Chain(format!(
            "run {} was executed for {run_repr} under {run_plan}",
            e.run_id
        )));
    }
    if status != RunStatus::Ok.as_str() {
        return Err(StoreError::Chain(format!("run {} did not succeed", e.run_id)));
    }
    Ok(())
}

fn json<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    Ok(canon::canonical_string(&canon::to_canonical(v)?))
}

fn col_id(r: &Row<'_>, name: &str) -> Result<Identifier> {
    Ok(r.get::<_, String>(name)?.parse()?)
}

fn col_hash(r: &Row<'_>, name: &str) -> Result<PayloadHash> {
    Ok(r.get::<_, String>(name)?.parse()?)
}

fn snapshot_from_row(r: &Row<'_>) -> Result<SnapshotRecord> {
    Ok(SnapshotRecord {
        snapshot_id: col_id(r, "snapshot_id")?,
        time_window: TimeWindow {
            start: r.get("time_window_start")?,
            end: r.get("time_window_end")?,
        },
        artifact_manifest: canon::decode_deserializable(r.get::<_, String>("artifact_manifest")?.as_bytes())?,
        version: r.get("version")?,
        created_at: r.get("created_at")?,
    })
}

fn representation_from_row(r: &Row<'_>) -> Result<RepresentationRecord> {
    Ok(RepresentationRecord {
        repr_id: col_id(r, "repr_id")?,
        snapshot_id: col_id(r, "snapshot_id")?,
        factory_name: r.get("factory_name")?,
        factory_version: r.get("factory_version")?,
        params: canon::decode_deserializable(r.get::<_, String>("params")?.as_bytes())?,
        encoded_artifact_ref: col_hash(r, "encoded_artifact_ref")?,
        version: r.get("version")?,
        created_at: r.get("created_at")?,
    })
}

fn run_from_row(r: &Row<'_>) -> Result<EngineRunRecord> {
    Ok(EngineRunRecord {
        run_id: col_id(r, "run_id")?,
        repr_id: col_id(r, "repr_id")?,
        plan_id: col_id(r, "plan_id")?,
        engine_name: r.get("engine_name")?,
        engine_version: r.get("engine_version")?,
        query: canon::canonical_decode(r.get::<_, String>("query")?.as_bytes())?,
        raw_output_ref: col_hash(r, "raw_output_ref")?,
        exec_time_ms: r.get::<_, String>("exec_time_ms")?.parse()?,
        status: r.get::<_, String>("status")?.parse()?,
        version: r.get("version")?,
        created_at: r.get("created_at")?,
    })
}

fn decision_from_row(r: &Row<'_>) -> Result<DecisionRecord> {
    Ok(DecisionRecord {
        decision_id: col_id(r, "decision_id")?,
        policy_id: col_id(r, "policy_id")?,
        payload_hash: col_hash(r, "payload_hash")?,
        version: r.get("version")?,
        created_at: r.get("created_at")?,
    })
}

fn fmap_from_row(r: &Row<'_>) -> Result<FMapEntry> {
    Ok(FMapEntry {
        experiment_id: r.get("experiment_id")?,
        snapshot_id: col_id(r, "snapshot_id")?,
        repr_id: col_id(r, "repr_id")?,
        run_id: col_id(r, "run_id")?,
        decision_id: col_id(r, "decision_id")?,
        plan_id: col_id(r, "plan_id")?,
        created_at: r.get("created_at")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> TimeWindow {
        TimeWindow {
            start: "2024-01-01T00:00:00Z".into(),
            end: "2024-01-02T00:00:00Z".into(),
        }
    }

    struct Chain {
        snap: SnapshotRecord,
        repr: RepresentationRecord,
        run: EngineRunRecord,
        dec: DecisionRecord,
        entry: FMapEntry,
    }

    fn chain(store: &Store) -> Chain {
        let art = store.put_blob(b"{\"version\":\"1\"}").unwrap();
        let snap = SnapshotRecord::new(
            window(),
            vec![ManifestEntry {
                name: "world".into(),
                artifact_ref: art.hash,
            }],
        )
        .unwrap();
        let enc = store.put_blob(b"encoded").unwrap();
        let repr = RepresentationRecord::new(snap.snapshot_id, "f", "1", Params::new(), enc.hash).unwrap();
        let plan = store.put_blob(b"plan").unwrap();
        let plan_id = Identifier::new(IdPrefix::Plan, plan.hash);
        let pol = store.put_blob(b"policy").unwrap();
        let policy_id = Identifier::new(IdPrefix::Pol, pol.hash);
        let out = store.put_blob(b"output").unwrap();
        let query = CanonicalValue::Null;
        let run = EngineRunRecord::new(NewRun {
            repr_id: repr.repr_id,
            plan_id,
            engine_name: "e",
            engine_version: "1",
            query: &query,
            raw_output_ref: out.hash,
            exec_time_ms: "0.5".parse().unwrap(),
            status: RunStatus::Ok,
        })
        .unwrap();
        let dec = DecisionRecord::new(policy_id, canon::payload_hash(b"payload")).unwrap();
        let entry = FMapEntry {
            experiment_id: "exp".into(),
            snapshot_id: snap.snapshot_id,
            repr_id: repr.repr_id,
            run_id: run.run_id,
            decision_id: dec.decision_id,
            plan_id,
            created_at: now_ms(),
        };
        Chain {
            snap,
            repr,
            run,
            dec,
            entry,
        }
    }

    fn put_chain(store: &Store, c: &Chain) {
        store.put_record(c.snap.clone()).unwrap();
        store.put_record(c.repr.clone()).unwrap();
        store.put_record(c.run.clone()).unwrap();
        store.put_record(c.dec.clone()).unwrap();
        store.put_record(c.entry.clone()).unwrap();
    }

    #[test]
    fn fresh_store_is_empty_and_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.table_counts().unwrap(), TableCounts::default());
        drop(store);
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.table_counts().unwrap(), TableCounts::default());
    }

    #[test]
    fn reopen_keeps_full_chain() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = Store::open(dir.path()).unwrap();
            let c = chain(&store);
            put_chain(&store, &c);
        }
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(
            store.table_counts().unwrap(),
            TableCounts {
                snapshots: 1,
                representations: 1,
                engine_runs: 1,
                decisions: 1,
                f_map: 1
            }
        );
    }

    #[test]
    fn insert_or_ignore() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let c = chain(&store);
        assert_eq!(store.put_record(c.snap.clone()).unwrap(), PutOutcome::Inserted);
        let mut later = c.snap.clone();
        later.created_at += 5;
        assert_eq!(store.put_record(later).unwrap(), PutOutcome::Ignored);
        assert_eq!(store.table_counts().unwrap().snapshots, 1);
        // first write wins
        assert_eq!(store.get_snapshot(&c.snap.snapshot_id).unwrap().unwrap(), c.snap);
    }

    #[test]
    fn dangling_reference_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let c = chain(&store);
        store.put_record(c.snap.clone()).unwrap();
        match store.put_record(c.run.clone()) {
            Err(StoreError::Referential { missing, .. }) => assert_eq!(missing, c.repr.repr_id.to_string()),
            other => panic!("expected referential error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_identifier_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let c = chain(&store);
        let mut dec = c.dec.clone();
        let s = dec.decision_id.to_string();
        let last = s.chars().last().unwrap();
        let flipped = if last == '0' { '1' } else { '0' };
        dec.decision_id = format!("{}{flipped}", &s[..s.len() - 1]).parse().unwrap();
        assert!(matches!(store.put_record(dec), Err(StoreError::Integrity { .. })));
    }

    #[test]
    fn get_record_by_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let c = chain(&store);
        put_chain(&store, &c);
        assert_eq!(
            store.get_record(&c.run.run_id).unwrap(),
            Some(Record::EngineRun(c.run.clone()))
        );
        assert_eq!(store.get_record_str("dec_0000000000000000").unwrap(), None);
        assert!(matches!(
            store.get_record_str("zzz_0000000000000000"),
            Err(StoreError::Canon(CanonError::InvalidIdentifier(_)))
        ));
    }

    #[test]
    fn rows_cannot_be_updated_or_deleted() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let c = chain(&store);
        put_chain(&store, &c);
        let conn = store.conn();
        for sql in [
            "UPDATE snapshots SET version = '2'",
            "DELETE FROM decisions",
            "DELETE FROM f_map",
        ] {
            assert!(conn.execute(sql, []).is_err(), "{sql}");
        }
    }

    #[test]
    fn fmap_rejects_inconsistent_chain() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let c = chain(&store);
        put_chain(&store, &c);
        let other = SnapshotRecord::new(
            TimeWindow {
                start: "x".into(),
                end: "y".into(),
            },
            vec![],
        )
        .unwrap();
        store.put_record(other.clone()).unwrap();
        let mut bad = c.entry.clone();
        bad.snapshot_id = other.snapshot_id;
        assert!(matches!(store.put_record(bad), Err(StoreError::Chain(_))));
    }

    #[test]
    fn query_fmap_filters() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let c = chain(&store);
        put_chain(&store, &c);
        assert!(store.query_fmap("unknown", &FMapFilter::default()).unwrap().is_empty());
        assert_eq!(
            store.query_fmap("exp", &FMapFilter::default()).unwrap(),
            vec![c.entry.clone()]
        );
        let f = FMapFilter {
            plan_id: Some(Identifier::new(IdPrefix::Plan, canon::payload_hash(b"other"))),
            ..Default::default()
        };
        assert!(store.query_fmap("exp", &f).unwrap().is_empty());
    }

    #[test]
    fn garbage_file_fails_open() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(DB_FILE), vec![0x42u8; 4096]).unwrap();
        match Store::open(dir.path()) {
            Err(StoreError::Open { check, .. }) => assert_eq!(check, "database integrity check"),
            other => panic!("expected open error, got {other:?}"),
        }
    }
}
