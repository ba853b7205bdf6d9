//! The five persisted entity kinds and their identifying payloads.
//!
//! Identifiers are functions of the identifying payload only. `created_at`
//! and `exec_time_ms` are stored alongside but never hashed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::canon::{self, CanonError, CanonicalValue, Decimal, IdPrefix, Identifier, PayloadHash};

/// Version stamped into every identifying payload.
pub const RECORD_VERSION: &str = "1";

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: String,
    pub end: String,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub artifact_ref: PayloadHash,
}

/// Common surface of the identifier-keyed records.
pub trait ContentAddressed {
    const PREFIX: IdPrefix;

    fn id(&self) -> Identifier;

    fn identifying_payload(&self) -> Result<CanonicalValue, CanonError>;

    fn computed_id(&self) -> Result<Identifier, CanonError> {
        canon::content_id(Self::PREFIX, &self.identifying_payload()?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub snapshot_id: Identifier,
    pub time_window: TimeWindow,
    pub artifact_manifest: Vec<ManifestEntry>,
    pub version: String,
    pub created_at: i64,
}

#[derive(Serialize)]
struct SnapshotPayload<'a> {
    time_window: &'a TimeWindow,
    artifact_manifest: &'a [ManifestEntry],
    version: &'a str,
}

impl SnapshotRecord {
    /// Builds a record with its identifier computed. The manifest is sorted
    /// by name; duplicate names are rejected.
    pub fn new(time_window: TimeWindow, mut manifest: Vec<ManifestEntry>) -> Result<Self, CanonError> {
        manifest.sort();
        if let Some(w) = manifest.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(CanonError::DuplicateKey(w[0].name.clone()));
        }
        let mut rec = SnapshotRecord {
            snapshot_id: Identifier::new(IdPrefix::Snap, canon::payload_hash(b"")),
            time_window,
            artifact_manifest: manifest,
            version: RECORD_VERSION.to_string(),
            created_at: now_ms(),
        };
        rec.snapshot_id = rec.computed_id()?;
        Ok(rec)
    }

    pub fn artifact(&self, name: &str) -> Option<PayloadHash> {
        self.artifact_manifest
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.artifact_ref)
    }
}

impl ContentAddressed for SnapshotRecord {
    const PREFIX: IdPrefix = IdPrefix::Snap;

    fn id(&self) -> Identifier {
        self.snapshot_id
    }

    fn identifying_payload(&self) -> Result<CanonicalValue, CanonError> {
        canon::to_canonical(&SnapshotPayload {
            time_window: &self.time_window,
            artifact_manifest: &self.artifact_manifest,
            version: &self.version,
        })
    }
}

/// Representation parameters, name → exact decimal.
pub type Params = BTreeMap<String, Decimal>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationRecord {
    pub repr_id: Identifier,
    pub snapshot_id: Identifier,
    pub factory_name: String,
    pub factory_version: String,
    pub params: Params,
    pub encoded_artifact_ref: PayloadHash,
    pub version: String,
    pub created_at: i64,
}

#[derive(Serialize)]
struct RepresentationPayload<'a> {
    snapshot_id: Identifier,
    factory_name: &'a str,
    factory_version: &'a str,
    params: &'a Params,
    version: &'a str,
}

impl RepresentationRecord {
    pub fn new(
        snapshot_id: Identifier,
        factory_name: &str,
        factory_version: &str,
        params: Params,
        encoded_artifact_ref: PayloadHash,
    ) -> Result<Self, CanonError> {
        let repr_id = Self::derive_id(snapshot_id, factory_name, factory_version, &params)?;
        Ok(RepresentationRecord {
            repr_id,
            snapshot_id,
            factory_name: factory_name.to_string(),
            factory_version: factory_version.to_string(),
            params,
            encoded_artifact_ref,
            version: RECORD_VERSION.to_string(),
            created_at: now_ms(),
        })
    }

    /// Identifier a representation would get, without encoding it.
    pub fn derive_id(
        snapshot_id: Identifier,
        factory_name: &str,
        factory_version: &str,
        params: &Params,
    ) -> Result<Identifier, CanonError> {
        canon::content_id_of(
            IdPrefix::Repr,
            &RepresentationPayload {
                snapshot_id,
                factory_name,
                factory_version,
                params,
                version: RECORD_VERSION,
            },
        )
    }
}

impl ContentAddressed for RepresentationRecord {
    const PREFIX: IdPrefix = IdPrefix::Repr;

    fn id(&self) -> Identifier {
        self.repr_id
    }

    fn identifying_payload(&self) -> Result<CanonicalValue, CanonError> {
        canon::to_canonical(&RepresentationPayload {
            snapshot_id: self.snapshot_id,
            factory_name: &self.factory_name,
            factory_version: &self.factory_version,
            params: &self.params,
            version: &self.version,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed => "failed",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunStatus {
    type Err = CanonError;

    fn from_str(s: &str) -> Result<Self, CanonError> {
        match s {
            "ok" => Ok(RunStatus::Ok),
            "failed" => Ok(RunStatus::Failed),
            other => Err(CanonError::Shape(format!("unknown run status {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineRunRecord {
    pub run_id: Identifier,
    pub repr_id: Identifier,
    /// Plan that scheduled this execution. Two plans sharing a grid point
    /// therefore record two runs.
    pub plan_id: Identifier,
    pub engine_name: String,
    pub engine_version: String,
    pub query: CanonicalValue,
    pub raw_output_ref: PayloadHash,
    pub exec_time_ms: Decimal,
    pub status: RunStatus,
    pub version: String,
    pub created_at: i64,
}

#[derive(Serialize)]
struct RunPayload<'a> {
    repr_id: Identifier,
    plan_id: Identifier,
    engine_name: &'a str,
    engine_version: &'a str,
    query: &'a CanonicalValue,
    raw_output_ref: PayloadHash,
    version: &'a str,
}

pub struct NewRun<'a> {
    pub repr_id: Identifier,
    pub plan_id: Identifier,
    pub engine_name: &'a str,
    pub engine_version: &'a str,
    pub query: &'a CanonicalValue,
    pub raw_output_ref: PayloadHash,
    pub exec_time_ms: Decimal,
    pub status: RunStatus,
}

impl EngineRunRecord {
    pub fn new(run: NewRun<'_>) -> Result<Self, CanonError> {
        let mut rec = EngineRunRecord {
            run_id: Identifier::new(IdPrefix::Run, canon::payload_hash(b"")),
            repr_id: run.repr_id,
            plan_id: run.plan_id,
            engine_name: run.engine_name.to_string(),
            engine_version: run.engine_version.to_string(),
            query: run.query.clone(),
            raw_output_ref: run.raw_output_ref,
            exec_time_ms: run.exec_time_ms,
            status: run.status,
            version: RECORD_VERSION.to_string(),
            created_at: now_ms(),
        };
        rec.run_id = rec.computed_id()?;
        Ok(rec)
    }
}

impl ContentAddressed for EngineRunRecord {
    const PREFIX: IdPrefix = IdPrefix::Run;

    fn id(&self) -> Identifier {
        self.run_id
    }

    fn identifying_payload(&self) -> Result<CanonicalValue, CanonError> {
        canon::to_canonical(&RunPayload {
            repr_id: self.repr_id,
            plan_id: self.plan_id,
            engine_name: &self.engine_name,
            engine_version: &self.engine_version,
            query: &self.query,
            raw_output_ref: self.raw_output_ref,
            version: &self.version,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision_id: Identifier,
    pub policy_id: Identifier,
    pub payload_hash: PayloadHash,
    pub version: String,
    pub created_at: i64,
}

#[derive(Serialize)]
struct DecisionPayload<'a> {
    policy_id: Identifier,
    payload_hash: PayloadHash,
    version: &'a str,
}

/// `dec` identifier of a (policy, payload hash) pair.
pub fn decision_id_for(policy_id: Identifier, payload_hash: PayloadHash) -> Result<Identifier, CanonError> {
    canon::content_id_of(
        IdPrefix::Dec,
        &DecisionPayload {
            policy_id,
            payload_hash,
            version: RECORD_VERSION,
        },
    )
}

impl DecisionRecord {
    pub fn new(policy_id: Identifier, payload_hash: PayloadHash) -> Result<Self, CanonError> {
        Ok(DecisionRecord {
            decision_id: decision_id_for(policy_id, payload_hash)?,
            policy_id,
            payload_hash,
            version: RECORD_VERSION.to_string(),
            created_at: now_ms(),
        })
    }
}

impl ContentAddressed for DecisionRecord {
    const PREFIX: IdPrefix = IdPrefix::Dec;

    fn id(&self) -> Identifier {
        self.decision_id
    }

    fn identifying_payload(&self) -> Result<CanonicalValue, CanonError> {
        canon::to_canonical(&DecisionPayload {
            policy_id: self.policy_id,
            payload_hash: self.payload_hash,
            version: &self.version,
        })
    }
}

/// One row of the materialized decision-valued map. Keyed by
/// `(experiment_id, repr_id, run_id, decision_id)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FMapEntry {
    pub experiment_id: String,
    pub snapshot_id: Identifier,
    pub repr_id: Identifier,
    pub run_id: Identifier,
    pub decision_id: Identifier,
    pub plan_id: Identifier,
    pub created_at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Record {
    Snapshot(SnapshotRecord),
    Representation(RepresentationRecord),
    EngineRun(EngineRunRecord),
    Decision(DecisionRecord),
    FMap(FMapEntry),
}

impl From<SnapshotRecord> for Record {
    fn from(r: SnapshotRecord) -> Self {
        Record::Snapshot(r)
    }
}

impl From<RepresentationRecord> for Record {
    fn from(r: RepresentationRecord) -> Self {
        Record::Representation(r)
    }
}

impl From<EngineRunRecord> for Record {
    fn from(r: EngineRunRecord) -> Self {
        Record::EngineRun(r)
    }
}

impl From<DecisionRecord> for Record {
    fn from(r: DecisionRecord) -> Self {
        Record::Decision(r)
    }
}

impl From<FMapEntry> for Record {
    fn from(r: FMapEntry) -> Self {
        Record::FMap(r)
    }
}

impl Record {
    /// Canonical JSON view of the full row, including non-identifying fields.
    pub fn to_canonical(&self) -> Result<CanonicalValue, CanonError> {
        match self {
            Record::Snapshot(r) => canon::to_canonical(r),
            Record::Representation(r) => canon::to_canonical(r),
            Record::EngineRun(r) => canon::to_canonical(r),
            Record::Decision(r) => canon::to_canonical(r),
            Record::FMap(r) => canon::to_canonical(r),
        }
    }
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

    #[test]
    fn created_at_not_identifying() {
        let a = SnapshotRecord::new(window(), vec![]).unwrap();
        let mut b = a.clone();
        b.created_at += 1000;
        assert_eq!(a.computed_id().unwrap(), b.computed_id().unwrap());
    }

    #[test]
    fn manifest_order_normalized() {
        let e = |n: &str, b: &[u8]| ManifestEntry {
            name: n.into(),
            artifact_ref: canon::payload_hash(b),
        };
        let a = SnapshotRecord::new(window(), vec![e("x", b"1"), e("y", b"2")]).unwrap();
        let b = SnapshotRecord::new(window(), vec![e("y", b"2"), e("x", b"1")]).unwrap();
        assert_eq!(a.snapshot_id, b.snapshot_id);
        assert!(SnapshotRecord::new(window(), vec![e("x", b"1"), e("x", b"2")]).is_err());
    }

    #[test]
    fn run_timing_not_identifying() {
        let query = CanonicalValue::Null;
        let snap = SnapshotRecord::new(window(), vec![]).unwrap();
        let repr =
            RepresentationRecord::new(snap.snapshot_id, "f", "1", Params::new(), canon::payload_hash(b"r")).unwrap();
        let plan = Identifier::new(IdPrefix::Plan, canon::payload_hash(b"p"));
        let mk = |ms: &str| {
            EngineRunRecord::new(NewRun {
                repr_id: repr.repr_id,
                plan_id: plan,
                engine_name: "e",
                engine_version: "1",
                query: &query,
                raw_output_ref: canon::payload_hash(b"out"),
                exec_time_ms: ms.parse().unwrap(),
                status: RunStatus::Ok,
            })
            .unwrap()
        };
        assert_eq!(mk("0.5").run_id, mk("1.4").run_id);
    }

    #[test]
    fn decision_id_depends_on_both_fields() {
        let p1 = Identifier::new(IdPrefix::Pol, canon::payload_hash(b"p1"));
        let p2 = Identifier::new(IdPrefix::Pol, canon::payload_hash(b"p2"));
        let h1 = canon::payload_hash(b"h1");
        let h2 = canon::payload_hash(b"h2");
        let d = |p, h| decision_id_for(p, h).unwrap();
        assert_ne!(d(p1, h1), d(p2, h1));
        assert_ne!(d(p1, h1), d(p1, h2));
        assert_eq!(d(p1, h1), DecisionRecord::new(p1, h1).unwrap().computed_id().unwrap());
    }
}
