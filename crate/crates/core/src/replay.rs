//! Read-only replay verification.
//!
//! Replay reloads the stored raw output and policy spec of a decision,
//! recomputes the policy identifier, payload hash and decision identifier,
//! and compares each against the persisted value. Mismatches are reported as
//! findings; only a broken chain (missing row or blob) is an error.
//!
//! The payload hash row also requires the raw-output blob to rehash to its
//! recorded address, so a flipped byte anywhere in the artifact is caught
//! even when the extracted field is unchanged.

use serde::Serialize;
use thiserror::Error;

use crate::canon::{self, Identifier, PayloadHash};
use crate::policy::EquivalencePolicy;
use crate::store::{decision_id_for, ContentAddressed, FMapEntry, FMapFilter, Store, StoreError, TableCounts};
use crate::sweep::SweepPlan;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("broken chain: {0}")]
    BrokenChain(String),
    #[error("replay wrote to the store: counts {before:?} became {after:?}")]
    NotReadOnly { before: TableCounts, after: TableCounts },
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T, E = ReplayError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReplayField {
    pub name: String,
    pub persisted: String,
    /// `None` when the value could not be recomputed at all.
    pub recomputed: Option<String>,
    #[serde(rename = "match")]
    pub matched: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ReplayField {
    fn compare(name: &str, persisted: String, recomputed: Option<String>) -> Self {
        let matched = recomputed.as_deref() == Some(persisted.as_str());
        ReplayField {
            name: name.to_string(),
            persisted,
            recomputed,
            matched,
            note: None,
        }
    }

    fn with_note(mut self, note: Option<String>) -> Self {
        if note.is_some() {
            self.note = note;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub decision_id: Identifier,
    pub experiment_id: String,
    pub run_id: Identifier,
    /// policy_id, payload_hash, decision_id, in that order.
    pub fields: Vec<ReplayField>,
    /// Extra identifier derivations checked in deep mode.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub deep: Vec<ReplayField>,
    pub overall_match: bool,
    pub counts_before: TableCounts,
    pub counts_after: TableCounts,
}

impl ReplayReport {
    pub fn field(&self, name: &str) -> Option<&ReplayField> {
        self.fields.iter().chain(&self.deep).find(|f| f.name == name)
    }

    pub fn mismatched(&self) -> Vec<&str> {
        self.fields
            .iter()
            .chain(&self.deep)
            .filter(|f| !f.matched)
            .map(|f| f.name.as_str())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum ReplayTarget {
    Decision(Identifier),
    Entry(FMapEntry),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplayOptions {
    /// Also verify snapshot, representation and run identifiers and the
    /// integrity of every blob on the chain.
    pub deep: bool,
}

/// Replays one decision. With a bare decision id the first linking map
/// entry is used.
pub fn replay_decision(store: &Store, target: ReplayTarget, options: ReplayOptions) -> Result<ReplayReport> {
    let entry = match target {
        ReplayTarget::Entry(e) => e,
        ReplayTarget::Decision(id) => store
            .fmap_for_decision(&id)?
            .into_iter()
            .next()
            .ok_or_else(|| ReplayError::BrokenChain(format!("no map entry links decision {id}")))?,
    };
    let counts_before = store.table_counts()?;
    let (fields, deep) = verify_entry(store, &entry, options)?;
    let counts_after = store.table_counts()?;
    if counts_before != counts_after {
        return Err(ReplayError::NotReadOnly {
            before: counts_before,
            after: counts_after,
        });
    }
    let overall_match = fields.iter().chain(&deep).all(|f| f.matched);
    Ok(ReplayReport {
        decision_id: entry.decision_id,
        experiment_id: entry.experiment_id,
        run_id: entry.run_id,
        fields,
        deep,
        overall_match,
        counts_before,
        counts_after,
    })
}

fn missing(what: impl std::fmt::Display) -> ReplayError {
    ReplayError::BrokenChain(format!("{what} is missing"))
}

fn blob_field(store: &Store, name: &str, what: &str, hash: &PayloadHash) -> Result<ReplayField> {
    let bytes = store
        .blobs()
        .read_unverified(hash)?
        .ok_or_else(|| missing(format!("{what} blob {hash}")))?;
    let actual = canon::payload_hash(&bytes);
    let field = ReplayField::compare(name, hash.to_string(), Some(actual.to_string()));
    let note = (!field.matched).then(|| format!("{what} blob content does not match its address"));
    Ok(field.with_note(note))
}

fn verify_entry(
    store: &Store,
    entry: &FMapEntry,
    options: ReplayOptions,
) -> Result<(Vec<ReplayField>, Vec<ReplayField>)> {
    let decision = store
        .get_decision(&entry.decision_id)?
        .ok_or_else(|| missing(format!("decision {}", entry.decision_id)))?;
    let run = store
        .get_run(&entry.run_id)?
        .ok_or_else(|| missing(format!("run {}", entry.run_id)))?;
    let raw_bytes = store
        .blobs()
        .read_unverified(&run.raw_output_ref)?
        .ok_or_else(|| missing(format!("raw output blob {}", run.raw_output_ref)))?;
    let policy_bytes = store
        .blobs()
        .read_unverified(&decision.policy_id.digest())?
        .ok_or_else(|| missing(format!("policy blob for {}", decision.policy_id)))?;

    let policy = EquivalencePolicy::from_json(&policy_bytes);
    let policy_field = ReplayField::compare(
        "policy_id",
        decision.policy_id.to_string(),
        policy.as_ref().ok().map(|p| p.id().to_string()),
    )
    .with_note(policy.as_ref().err().map(|e| format!("policy spec unreadable: {e}")));

    let actual_raw = canon::payload_hash(&raw_bytes);
    let integrity_note = (actual_raw != run.raw_output_ref)
        .then(|| format!("raw output blob {} rehashes to {actual_raw}", run.raw_output_ref));
    let recomputed_payload: std::result::Result<PayloadHash, String> = match &policy {
        Err(_) => Err("policy unavailable".to_string()),
        Ok(p) => canon::canonical_decode(&raw_bytes)
            .map_err(|e| format!("raw output unreadable: {e}"))
            .and_then(|raw| p.extract_decision(&raw).map_err(|e| e.to_string()))
            .map(|d| d.payload_hash),
    };
    let mut payload_field = ReplayField::compare(
        "payload_hash",
        decision.payload_hash.to_string(),
        recomputed_payload.as_ref().ok().map(|h| h.to_string()),
    )
    .with_note(recomputed_payload.as_ref().err().cloned());
    if let Some(note) = integrity_note {
        payload_field.matched = false;
        payload_field.note = Some(match payload_field.note.take() {
            Some(prev) => format!("{note}; {prev}"),
            None => note,
        });
    }

    let recomputed_decision = match (&policy, &recomputed_payload) {
        (Ok(p), Ok(h)) => decision_id_for(p.id(), *h).ok().map(|d| d.to_string()),
        _ => None,
    };
    let decision_field = ReplayField::compare("decision_id", decision.decision_id.to_string(), recomputed_decision);

    let deep = if options.deep {
        deep_fields(store, entry)?
    } else {
        Vec::new()
    };
    Ok((vec![policy_field, payload_field, decision_field], deep))
}

fn id_field<T: ContentAddressed>(name: &str, record: &T) -> ReplayField {
    let recomputed = record.computed_id();
    ReplayField::compare(
        name,
        record.id().to_string(),
        recomputed.as_ref().ok().map(|i| i.to_string()),
    )
    .with_note(recomputed.err().map(|e| e.to_string()))
}

fn deep_fields(store: &Store, entry: &FMapEntry) -> Result<Vec<ReplayField>> {
    let run = store
        .get_run(&entry.run_id)?
        .ok_or_else(|| missing(format!("run {}", entry.run_id)))?;
    let repr = store
        .get_representation(&entry.repr_id)?
        .ok_or_else(|| missing(format!("representation {}", entry.repr_id)))?;
    let snap = store
        .get_snapshot(&entry.snapshot_id)?
        .ok_or_else(|| missing(format!("snapshot {}", entry.snapshot_id)))?;
    let decision = store
        .get_decision(&entry.decision_id)?
        .ok_or_else(|| missing(format!("decision {}", entry.decision_id)))?;

    let mut fields = vec![
        id_field("snapshot_id", &snap),
        id_field("repr_id", &repr),
        id_field("run_id", &run),
        id_field("decision_row_id", &decision),
    ];
    fields.push(blob_field(store, "raw_output_ref", "raw output", &run.raw_output_ref)?);
    fields.push(blob_field(
        store,
        "encoded_artifact_ref",
        "representation",
        &repr.encoded_artifact_ref,
    )?);
    for m in &snap.artifact_manifest {
        fields.push(blob_field(
            store,
            &format!("artifact:{}", m.name),
            "snapshot artifact",
            &m.artifact_ref,
        )?);
    }
    let plan = store
        .blobs()
        .read_unverified(&entry.plan_id.digest())?
        .ok_or_else(|| missing(format!("plan blob for {}", entry.plan_id)))?;
    let recomputed_plan = SweepPlan::from_json(&plan);
    fields.push(
        ReplayField::compare(
            "plan_id",
            entry.plan_id.to_string(),
            recomputed_plan.as_ref().ok().map(|p| p.id().to_string()),
        )
        .with_note(recomputed_plan.err().map(|e| e.to_string())),
    );
    Ok(fields)
}

#[derive(Debug, Serialize)]
pub struct BatchItem {
    pub run_id: Identifier,
    pub decision_id: Identifier,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ReplayReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BatchItem {
    pub fn matched(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.overall_match)
    }
}

#[derive(Debug, Serialize)]
pub struct ReplayBatch {
    pub experiment_id: String,
    pub items: Vec<BatchItem>,
    pub total: usize,
    pub matched: usize,
    pub counts_before: TableCounts,
    pub counts_after: TableCounts,
}

impl ReplayBatch {
    pub fn all_matched(&self) -> bool {
        self.matched == self.total
    }
}

/// Replays every map entry of an experiment in `(repr_id, run_id)` order.
/// Per-entry errors are collected, not propagated.
pub fn replay_all(store: &Store, experiment_id: &str, options: ReplayOptions) -> Result<ReplayBatch> {
    let counts_before = store.table_counts()?;
    let entries = store.query_fmap(experiment_id, &FMapFilter::default())?;
    let items: Vec<BatchItem> = entries
        .into_iter()
        .map(|e| {
            let (run_id, decision_id) = (e.run_id, e.decision_id);
            match replay_decision(store, ReplayTarget::Entry(e), options) {
                Ok(r) => BatchItem {
                    run_id,
                    decision_id,
                    report: Some(r),
                    error: None,
                },
                Err(err) => BatchItem {
                    run_id,
                    decision_id,
                    report: None,
                    error: Some(err.to_string()),
                },
            }
        })
        .collect();
    let counts_after = store.table_counts()?;
    let matched = items.iter().filter(|i| i.matched()).count();
    Ok(ReplayBatch {
        experiment_id: experiment_id.to_string(),
        total: items.len(),
        matched,
        items,
        counts_before,
        counts_after,
    })
}
