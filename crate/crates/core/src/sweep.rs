//! The five-stage representational sweep and queries over the resulting
//! decision-valued map.
//!
//! 1. [`freeze_snapshot`] stores world-state artifacts and seals a snapshot.
//! 2. [`declare_representations`] encodes the snapshot once per grid point.
//! 3. [`plan_sweep`] content-addresses and persists the plan.
//! 4. and 5. [`execute_sweep`] runs the engine on each representation, stores
//!    raw outputs, extracts decisions and links everything in the map table.
//!
//! [`materialize_map`] and [`classify_axis`] read the map back without running
//! the engine. [`refine_boundary`] bisects a bracketed boundary by running
//! extra single-point plans.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{self, CanonError, CanonicalValue, Decimal, IdPrefix, Identifier};
use crate::policy::{EquivalencePolicy, PolicyError};
use crate::store::{
    now_ms, DecisionRecord, EngineRunRecord, FMapEntry, FMapFilter, ManifestEntry, NewRun, Params,
    RepresentationRecord, RunStatus, SnapshotRecord, Store, StoreError, TimeWindow,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("factory error: {0}")]
    Factory(String),
    #[error("factory is not deterministic at {point}: artifact {first} then {second}")]
    Determinism {
        point: String,
        first: String,
        second: String,
    },
    #[error("{kind} mismatch: plan wants {expected}, got {actual}")]
    Mismatch {
        kind: &'static str,
        expected: String,
        actual: String,
    },
    #[error("representation for {0} has not been declared")]
    Undeclared(String),
    #[error("unknown plan {0}")]
    UnknownPlan(Identifier),
    #[error("invalid comparison: {0}")]
    InvalidComparison(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{} grid point(s) failed: {}", .0.len(), .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    FailedPoints(Vec<FailedPoint>),
}

pub type Result<T, E = SweepError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct FactoryError(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct EngineError(pub String);

/// Loaded snapshot: the record plus its verified artifact bytes.
#[derive(Clone, Debug)]
pub struct SnapshotArtifacts {
    pub record: SnapshotRecord,
    artifacts: BTreeMap<String, Vec<u8>>,
}

impl SnapshotArtifacts {
    pub fn load(store: &Store, snapshot_id: &Identifier) -> Result<Self> {
        let record = store
            .get_snapshot(snapshot_id)?
            .ok_or_else(|| StoreError::Referential {
                kind: "snapshot",
                missing: snapshot_id.to_string(),
            })?;
        let artifacts = record
            .artifact_manifest
            .iter()
            .map(|e| Ok((e.name.clone(), store.require_blob(&e.artifact_ref)?)))
            .collect::<Result<_>>()?;
        Ok(SnapshotArtifacts { record, artifacts })
    }

    pub fn artifact(&self, name: &str) -> Option<&[u8]> {
        self.artifacts.get(name).map(Vec::as_slice)
    }
}

/// Versioned, deterministic encoder of a snapshot under a parameter set.
pub trait RepresentationFactory: Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    fn encode(&self, snapshot: &SnapshotArtifacts, params: &Params) -> Result<CanonicalValue, FactoryError>;
}

/// Fixed engine. `evaluate` must be deterministic in its inputs.
pub trait EngineAdapter: Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    fn evaluate(&self, representation: &[u8], query: &CanonicalValue) -> Result<CanonicalValue, EngineError>;
}

// ---------------------------------------------------------------------------
// Stage 1
// ---------------------------------------------------------------------------

/// Stores each artifact's canonical encoding and inserts the snapshot.
/// Freezing identical state again returns the original record.
pub fn freeze_snapshot<S: AsRef<str>>(
    store: &Store,
    world_state: &[(S, CanonicalValue)],
    time_window: TimeWindow,
) -> Result<SnapshotRecord> {
    let manifest = world_state
        .iter()
        .map(|(name, value)| {
            Ok(ManifestEntry {
                name: name.as_ref().to_string(),
                artifact_ref: store.put_canonical(value)?.hash,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let record = SnapshotRecord::new(time_window, manifest)?;
    store.put_record(record.clone())?;
    Ok(store.get_snapshot(&record.snapshot_id)?.unwrap_or(record))
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: String,
    pub values: Vec<Decimal>,
}

/// The identifying content of a sweep plan, as authored in plan files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub snapshot_id: Identifier,
    pub factory_name: String,
    pub factory_version: String,
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub fixed_params: Params,
    pub engine_name: String,
    pub engine_version: String,
    pub query: CanonicalValue,
    pub policy_id: Identifier,
    pub version: String,
}

/// A normalized, content-addressed plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepPlan {
    plan_id: Identifier,
    spec: PlanSpec,
}

impl SweepPlan {
    /// Normalizes the spec (axes sorted by name, values ascending and
    /// deduplicated) and computes the plan identifier.
    pub fn new(mut spec: PlanSpec) -> Result<Self> {
        if spec.snapshot_id.prefix() != IdPrefix::Snap {
            return Err(SweepError::InvalidPlan(format!(
                "{} is not a snapshot id",
                spec.snapshot_id
            )));
        }
        if spec.policy_id.prefix() != IdPrefix::Pol {
            return Err(SweepError::InvalidPlan(format!(
                "{} is not a policy id",
                spec.policy_id
            )));
        }
        for axis in &mut spec.axes {
            axis.values.sort();
            axis.values.dedup();
        }
        spec.axes.sort_by(|a, b| a.param.cmp(&b.param));
        if let Some(w) = spec.axes.windows(2).find(|w| w[0].param == w[1].param) {
            return Err(SweepError::InvalidPlan(format!("axis {} declared twice", w[0].param)));
        }
        if let Some(a) = spec.axes.iter().find(|a| spec.fixed_params.contains_key(&a.param)) {
            return Err(SweepError::InvalidPlan(format!("{} is both swept and fixed", a.param)));
        }
        let plan_id = canon::content_id_of(IdPrefix::Plan, &spec)?;
        Ok(SweepPlan { plan_id, spec })
    }

    /// Parses a plan file.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value = canon::canonical_decode(bytes)?;
        let spec: PlanSpec = canon::from_canonical(&value).map_err(|e| SweepError::InvalidPlan(e.to_string()))?;
        Self::new(spec)
    }

    /// Reloads a persisted plan by identifier.
    pub fn load(store: &Store, plan_id: &Identifier) -> Result<Self> {
        let bytes = store.spec_blob(plan_id)?.ok_or(SweepError::UnknownPlan(*plan_id))?;
        let plan = Self::from_json(&bytes)?;
        if plan.plan_id != *plan_id {
            return Err(StoreError::Integrity {
                kind: "plan",
                claimed: plan_id.to_string(),
                recomputed: plan.plan_id.to_string(),
            }
            .into());
        }
        Ok(plan)
    }

    pub fn id(&self) -> Identifier {
        self.plan_id
    }

    pub fn spec(&self) -> &PlanSpec {
        &self.spec
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canon::encode_serializable(&self.spec).expect("plan spec is canonical")
    }

    /// Cartesian grid of the axes, each point merged with the fixed params.
    /// Points are ordered lexicographically by axis (axes sorted by name).
    pub fn grid(&self) -> Vec<Params> {
        let mut points = vec![self.spec.fixed_params.clone()];
        for axis in &self.spec.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(axis.param.clone(), *v);
                        q
                    })
                })
                .collect();
        }
        points
    }

    pub fn repr_id_for(&self, params: &Params) -> Result<Identifier> {
        Ok(RepresentationRecord::derive_id(
            self.spec.snapshot_id,
            &self.spec.factory_name,
            &self.spec.factory_version,
            params,
        )?)
    }
}

/// Renders a parameter assignment as `a=1.0, b=0.25`.
pub fn format_params(params: &Params) -> String {
    params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Stage 3: persists a plan whose snapshot and policy exist.
pub fn plan_sweep(store: &Store, spec: PlanSpec) -> Result<SweepPlan> {
    let plan = SweepPlan::new(spec)?;
    if store.get_snapshot(&plan.spec.snapshot_id)?.is_none() {
        return Err(StoreError::Referential {
            kind: "snapshot",
            missing: plan.spec.snapshot_id.to_string(),
        }
        .into());
    }
    EquivalencePolicy::load(store, &plan.spec.policy_id)?;
    let blob = store.put_blob(&plan.canonical_bytes())?;
    debug_assert_eq!(blob.hash, plan.plan_id.digest());
    Ok(plan)
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

/// One representation per grid point. Each point is encoded twice and the
/// two artifacts must agree, as must any previously stored encoding.
pub fn declare_representations(
    store: &Store,
    plan: &SweepPlan,
    factory: &dyn RepresentationFactory,
) -> Result<Vec<RepresentationRecord>> {
    let spec = &plan.spec;
    if factory.name() != spec.factory_name || factory.version() != spec.factory_version {
        return Err(SweepError::Mismatch {
            kind: "factory",
            expected: format!("{}@{}", spec.factory_name, spec.factory_version),
            actual: format!("{}@{}", factory.name(), factory.version()),
        });
    }
    let grid = plan.grid();
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    let snapshot = SnapshotArtifacts::load(store, &spec.snapshot_id)?;
    grid.iter()
        .map(|params| {
            let encode = || -> Result<Vec<u8>> {
                let v = factory
                    .encode(&snapshot, params)
                    .map_err(|e| SweepError::Factory(format!("{}: {e}", format_params(params))))?;
                Ok(canon::canonical_encode(&v))
            };
            let first = encode()?;
            let second = encode()?;
            let (h1, h2) = (canon::payload_hash(&first), canon::payload_hash(&second));
            if h1 != h2 {
                return Err(SweepError::Determinism {
                    point: format_params(params),
                    first: h1.to_string(),
                    second: h2.to_string(),
                });
            }
            let repr_id = plan.repr_id_for(params)?;
            if let Some(existing) = store.get_representation(&repr_id)? {
                if existing.encoded_artifact_ref != h1 {
                    return Err(SweepError::Determinism {
                        point: format_params(params),
                        first: existing.encoded_artifact_ref.to_string(),
                        second: h1.to_string(),
                    });
                }
                return Ok(existing);
            }
            store.put_blob(&first)?;
            let record = RepresentationRecord::new(
                spec.snapshot_id,
                &spec.factory_name,
                &spec.factory_version,
                params.clone(),
                h1,
            )?;
            store.put_record(record.clone())?;
            Ok(store.get_representation(&repr_id)?.unwrap_or(record))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Stages 4 and 5
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FailedPoint {
    pub params: Params,
    pub run_id: Identifier,
    pub error: String,
}

impl fmt::Display for FailedPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", format_params(&self.params), self.run_id, self.error)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutcome {
    pub entries: Vec<FMapEntry>,
    pub failed: Vec<FailedPoint>,
}

impl SweepOutcome {
    /// Turns recorded failures into an error.
    pub fn ensure_complete(self) -> Result<Vec<FMapEntry>> {
        if self.failed.is_empty() {
            Ok(self.entries)
        } else {
            Err(SweepError::FailedPoints(self.failed))
        }
    }
}

#[derive(Serialize)]
struct FailureOutput<'a> {
    error: &'a str,
    engine: EngineTag<'a>,
    query: &'a CanonicalValue,
    version: &'a str,
}

#[derive(Serialize)]
struct EngineTag<'a> {
    name: &'a str,
    version: &'a str,
}

fn elapsed_ms(start: Instant) -> Decimal {
    Decimal::from_scaled(start.elapsed().as_micros().min(i64::MAX as u128) as i64, 3)
}

/// Evaluates every grid point, stores raw outputs and run records, extracts
/// decisions and links them in the map. Engine evaluations run on worker
/// threads; all writes happen afterwards in grid order. A failing point is
/// recorded as a failed run with no decision and does not stop the sweep.
pub fn execute_sweep(
    store: &Store,
    plan: &SweepPlan,
    engine: &dyn EngineAdapter,
    experiment_id: &str,
) -> Result<SweepOutcome> {
    let spec = &plan.spec;
    if engine.name() != spec.engine_name || engine.version() != spec.engine_version {
        return Err(SweepError::Mismatch {
            kind: "engine",
            expected: format!("{}@{}", spec.engine_name, spec.engine_version),
            actual: format!("{}@{}", engine.name(), engine.version()),
        });
    }
    if store.spec_blob(&plan.plan_id)?.is_none() {
        return Err(SweepError::UnknownPlan(plan.plan_id));
    }
    let policy = EquivalencePolicy::load(store, &spec.policy_id)?;

    let mut inputs = Vec::new();
    for params in plan.grid() {
        let repr_id = plan.repr_id_for(&params)?;
        let repr = store
            .get_representation(&repr_id)?
            .ok_or_else(|| SweepError::Undeclared(format_params(&params)))?;
        let bytes = store.require_blob(&repr.encoded_artifact_ref)?;
        inputs.push((params, repr, bytes));
    }

    let evaluations = evaluate_all(engine, &spec.query, &inputs);

    let mut outcome = SweepOutcome::default();
    for ((params, repr, _), (result, exec_time_ms)) in inputs.iter().zip(evaluations) {
        let (output, status) = match &result {
            Ok(raw) => (raw.clone(), RunStatus::Ok),
            Err(e) => (
                canon::to_canonical(&FailureOutput {
                    error: &e.0,
                    engine: EngineTag {
                        name: engine.name(),
                        version: engine.version(),
                    },
                    query: &spec.query,
                    version: "1",
                })?,
                RunStatus::Failed,
            ),
        };
        let blob = store.put_canonical(&output)?;
        let run = EngineRunRecord::new(NewRun {
            repr_id: repr.repr_id,
            plan_id: plan.plan_id,
            engine_name: engine.name(),
            engine_version: engine.version(),
            query: &spec.query,
            raw_output_ref: blob.hash,
            exec_time_ms,
            status,
        })?;
        store.put_record(run.clone())?;

        if let Err(e) = result {
            outcome.failed.push(FailedPoint {
                params: params.clone(),
                run_id: run.run_id,
                error: e.0,
            });
            continue;
        }
        let identity = policy.extract_decision(&output)?;
        store.put_record(DecisionRecord::new(identity.policy_id, identity.payload_hash)?)?;
        let entry = FMapEntry {
            experiment_id: experiment_id.to_string(),
            snapshot_id: repr.snapshot_id,
            repr_id: repr.repr_id,
            run_id: run.run_id,
            decision_id: identity.decision_id,
            plan_id: plan.plan_id,
            created_at: now_ms(),
        };
        store.put_record(entry.clone())?;
        outcome.entries.push(entry);
    }
    Ok(outcome)
}

type Evaluation = (std::result::Result<CanonicalValue, EngineError>, Decimal);

fn evaluate_all(
    engine: &dyn EngineAdapter,
    query: &CanonicalValue,
    inputs: &[(Params, RepresentationRecord, Vec<u8>)],
) -> Vec<Evaluation> {
    let run_one = |bytes: &[u8]| {
        let start = Instant::now();
        let r = engine.evaluate(bytes, query);
        (r, elapsed_ms(start))
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(inputs.len());
    if workers <= 1 {
        return inputs.iter().map(|(_, _, b)| run_one(b)).collect();
    }
    let chunk = inputs.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|(_, _, b)| run_one(b)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("engine worker panicked"))
            .collect()
    })
}

// ---------------------------------------------------------------------------
// Map queries
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MapCell {
    pub repr_id: Identifier,
    pub run_id: Identifier,
    pub decision_id: Identifier,
}

/// Grid point → identifiers, for one plan within one experiment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionMap {
    pub plan_id: Identifier,
    pub experiment_id: String,
    pub entries: BTreeMap<Params, MapCell>,
}

impl DecisionMap {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct decision identifiers in first-seen grid order.
    pub fn distinct_decisions(&self) -> Vec<Identifier> {
        let mut seen = Vec::new();
        for cell in self.entries.values() {
            if !seen.contains(&cell.decision_id) {
                seen.push(cell.decision_id);
            }
        }
        seen
    }
}

/// Reads a plan's map back from the store. Never runs the engine.
pub fn materialize_map(store: &Store, plan_id: &Identifier, experiment_id: &str) -> Result<DecisionMap> {
    if store.spec_blob(plan_id)?.is_none() {
        return Err(SweepError::UnknownPlan(*plan_id));
    }
    let filter = FMapFilter {
        plan_id: Some(*plan_id),
        ..Default::default()
    };
    let mut entries = BTreeMap::new();
    for e in store.query_fmap(experiment_id, &filter)? {
        let repr = store
            .get_representation(&e.repr_id)?
            .ok_or_else(|| StoreError::Referential {
                kind: "representation",
                missing: e.repr_id.to_string(),
            })?;
        entries.insert(
            repr.params,
            MapCell {
                repr_id: e.repr_id,
                run_id: e.run_id,
                decision_id: e.decision_id,
            },
        );
    }
    Ok(DecisionMap {
        plan_id: *plan_id,
        experiment_id: experiment_id.to_string(),
        entries,
    })
}

/// Splits a map into slices along `axis`: one slice per assignment of the
/// remaining parameters, each suitable for [`classify_axis`].
pub fn slices(map: &DecisionMap, axis: &str) -> Vec<(Params, DecisionMap)> {
    let mut groups: BTreeMap<Params, DecisionMap> = BTreeMap::new();
    for (params, cell) in &map.entries {
        let mut rest = params.clone();
        rest.remove(axis);
        groups
            .entry(rest)
            .or_insert_with(|| DecisionMap {
                plan_id: map.plan_id,
                experiment_id: map.experiment_id.clone(),
                entries: BTreeMap::new(),
            })
            .entries
            .insert(params.clone(), *cell);
    }
    groups.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub value_range: [Decimal; 2],
    pub decision_id: Identifier,
}

/// A change of identity somewhere strictly between two sampled values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Boundary {
    pub between: [Decimal; 2],
    pub from: Identifier,
    pub to: Identifier,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AxisStructureReport {
    pub axis: String,
    /// Sampled values with their identities, ascending.
    pub samples: Vec<(Decimal, Identifier)>,
    pub segments: Vec<Segment>,
    pub boundaries: Vec<Boundary>,
    pub version: String,
}

/// Persistence regions and boundaries along one axis. All other parameters
/// must be constant across the map.
pub fn classify_axis(map: &DecisionMap, axis: &str) -> Result<AxisStructureReport> {
    if map.entries.is_empty() {
        return Err(SweepError::InvalidComparison("map is empty".into()));
    }
    let mut rest: Option<Params> = None;
    let mut samples = Vec::new();
    for (params, cell) in &map.entries {
        let value = *params.get(axis).ok_or_else(|| {
            SweepError::InvalidComparison(format!("axis {axis} missing at [{}]", format_params(params)))
        })?;
        let mut others = params.clone();
        others.remove(axis);
        match &rest {
            None => rest = Some(others),
            Some(r) if *r != others => {
                return Err(SweepError::InvalidComparison(format!(
                    "non-axis parameters differ: [{}] vs [{}]",
                    format_params(r),
                    format_params(&others)
                )))
            }
            Some(_) => {}
        }
        samples.push((value, cell.decision_id));
    }
    samples.sort();

    let mut segments: Vec<Segment> = Vec::new();
    let mut boundaries = Vec::new();
    for (i, &(value, id)) in samples.iter().enumerate() {
        match segments.last_mut() {
            Some(seg) if seg.decision_id == id => seg.value_range[1] = value,
            _ => {
                if let Some(seg) = segments.last() {
                    boundaries.push(Boundary {
                        between: [samples[i - 1].0, value],
                        from: seg.decision_id,
                        to: id,
                    });
                }
                segments.push(Segment {
                    value_range: [value, value],
                    decision_id: id,
                });
            }
        }
    }
    Ok(AxisStructureReport {
        axis: axis.to_string(),
        samples,
        segments,
        boundaries,
        version: "1".into(),
    })
}

// ---------------------------------------------------------------------------
// Boundary refinement
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefineOptions {
    pub max_evals: usize,
    /// Stop once the interval is no wider than this. Defaults to 1e-6 of
    /// the starting span.
    pub resolution: Option<Decimal>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RefineStatus {
    /// One boundary lies in the returned interval.
    Bracketed,
    /// A midpoint matched neither endpoint; the interval holds more than one
    /// region boundary.
    MultiRegion { at: Decimal, decision_id: Identifier },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Refinement {
    pub axis: String,
    pub interval: [Decimal; 2],
    pub lo_decision: Identifier,
    pub hi_decision: Identifier,
    pub evaluations: usize,
    pub status: RefineStatus,
}

/// Bisects `[lo, hi]` along `axis`. Every evaluated point runs through the
/// full pipeline as its own single-point plan derived from `plan`.
#[allow(clippy::too_many_arguments)]
pub fn refine_boundary(
    store: &Store,
    plan: &SweepPlan,
    axis: &str,
    interval: [Decimal; 2],
    factory: &dyn RepresentationFactory,
    engine: &dyn EngineAdapter,
    experiment_id: &str,
    options: RefineOptions,
) -> Result<Refinement> {
    let [mut lo, mut hi] = interval;
    if lo >= hi {
        return Err(SweepError::Precondition(format!("empty interval [{lo}, {hi}]")));
    }
    let mut base = plan.spec.fixed_params.clone();
    let mut found_axis = false;
    for a in &plan.spec.axes {
        if a.param == axis {
            found_axis = true;
        } else if let [only] = a.values.as_slice() {
            base.insert(a.param.clone(), *only);
        } else {
            return Err(SweepError::InvalidComparison(format!(
                "axis {} has {} values; refinement needs every other parameter fixed",
                a.param,
                a.values.len()
            )));
        }
    }
    if !found_axis {
        return Err(SweepError::InvalidPlan(format!("plan does not sweep {axis}")));
    }

    let existing = materialize_map(store, &plan.plan_id, experiment_id)?;
    let decision_at = |value: Decimal| -> Result<Identifier> {
        let mut params = base.clone();
        params.insert(axis.to_string(), value);
        if let Some(cell) = existing.entries.get(&params) {
            return Ok(cell.decision_id);
        }
        evaluate_point(store, plan, &base, axis, value, factory, engine, experiment_id)
    };

    let lo_decision = decision_at(lo)?;
    let hi_decision = decision_at(hi)?;
    if lo_decision == hi_decision {
        return Err(SweepError::Precondition(format!(
            "both ends of [{lo}, {hi}] have decision {lo_decision}"
        )));
    }
    let resolution = options.resolution.unwrap_or_else(|| {
        let r = (hi - lo) * Decimal::from_scaled(1, 6);
        if r.is_zero() {
            Decimal::from_scaled(1, 12)
        } else {
            r
        }
    });

    let mut evaluations = 0;
    let mut status = RefineStatus::Bracketed;
    while evaluations < options.max_evals && hi - lo > resolution {
        let mid = lo.midpoint(hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let d = evaluate_point(store, plan, &base, axis, mid, factory, engine, experiment_id)?;
        evaluations += 1;
        if d == lo_decision {
            lo = mid;
        } else if d == hi_decision {
            hi = mid;
        } else {
            status = RefineStatus::MultiRegion {
                at: mid,
                decision_id: d,
            };
            break;
        }
    }
    Ok(Refinement {
        axis: axis.to_string(),
        interval: [lo, hi],
        lo_decision,
        hi_decision,
        evaluations,
        status,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_point(
    store: &Store,
    plan: &SweepPlan,
    base: &Params,
    axis: &str,
    value: Decimal,
    factory: &dyn RepresentationFactory,
    engine: &dyn EngineAdapter,
    experiment_id: &str,
) -> Result<Identifier> {
    let child = plan_sweep(
        store,
        PlanSpec {
            axes: vec![Axis {
                param: axis.to_string(),
                values: vec![value],
            }],
            fixed_params: base.clone(),
            ..plan.spec.clone()
        },
    )?;
    declare_representations(store, &child, factory)?;
    let entries = execute_sweep(store, &child, engine, experiment_id)?.ensure_complete()?;
    Ok(entries[0].decision_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(prefix: IdPrefix, seed: &[u8]) -> Identifier {
        Identifier::new(prefix, canon::payload_hash(seed))
    }

    fn spec(axes: Vec<Axis>) -> PlanSpec {
        PlanSpec {
            snapshot_id: id(IdPrefix::Snap, b"s"),
            factory_name: "f".into(),
            factory_version: "1".into(),
            axes,
            fixed_params: Params::from([("k".to_string(), "0.25".parse().unwrap())]),
            engine_name: "e".into(),
            engine_version: "1".into(),
            query: CanonicalValue::Null,
            policy_id: id(IdPrefix::Pol, b"p"),
            version: "1".into(),
        }
    }

    fn axis(param: &str, values: &[&str]) -> Axis {
        Axis {
            param: param.into(),
            values: values.iter().map(|v| v.parse().unwrap()).collect(),
        }
    }

    #[test]
    fn axis_values_normalized_before_hashing() {
        let a = SweepPlan::new(spec(vec![axis("w", &["1.0", "0.5"])])).unwrap();
        let b = SweepPlan::new(spec(vec![axis("w", &["0.5", "1", "0.50"])])).unwrap();
        assert_eq!(a.id(), b.id());
        assert_eq!(a.spec().axes[0].values, b.spec().axes[0].values);
    }

    #[test]
    fn grid_is_cartesian() {
        let p = SweepPlan::new(spec(vec![axis("b", &["1", "2"]), axis("a", &["3", "4", "5"])])).unwrap();
        let grid = p.grid();
        assert_eq!(grid.len(), 6);
        assert!(grid.iter().all(|g| g.len() == 3));
        assert_eq!(format_params(&grid[0]), "a=3.0, b=1.0, k=0.25");
        assert!(SweepPlan::new(spec(vec![axis("a", &[])])).unwrap().grid().is_empty());
    }

    #[test]
    fn invalid_plans() {
        assert!(SweepPlan::new(spec(vec![axis("k", &["1"])])).is_err());
        assert!(SweepPlan::new(spec(vec![axis("a", &["1"]), axis("a", &["2"])])).is_err());
        let mut s = spec(vec![]);
        s.policy_id = id(IdPrefix::Dec, b"x");
        assert!(SweepPlan::new(s).is_err());
    }

    fn map(points: &[(&str, &[u8])]) -> DecisionMap {
        DecisionMap {
            plan_id: id(IdPrefix::Plan, b"p"),
            experiment_id: "x".into(),
            entries: points
                .iter()
                .map(|(v, d)| {
                    (
                        Params::from([
                            ("w".to_string(), v.parse().unwrap()),
                            ("k".to_string(), "1".parse().unwrap()),
                        ]),
                        MapCell {
                            repr_id: id(IdPrefix::Repr, v.as_bytes()),
                            run_id: id(IdPrefix::Run, v.as_bytes()),
                            decision_id: id(IdPrefix::Dec, d),
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn classify_constant_axis() {
        let r = classify_axis(&map(&[("0.5", b"A"), ("1.0", b"A")]), "w").unwrap();
        assert_eq!(r.segments.len(), 1);
        assert_eq!(
            r.segments[0].value_range,
            ["0.5".parse().unwrap(), "1".parse().unwrap()]
        );
        assert!(r.boundaries.is_empty());
    }

    #[test]
    fn classify_fractured_axis() {
        let r = classify_axis(&map(&[("0.5", b"B"), ("0.25", b"A")]), "w").unwrap();
        assert_eq!(r.segments.len(), 2);
        assert_eq!(r.boundaries.len(), 1);
        assert_eq!(
            r.boundaries[0].between,
            ["0.25".parse().unwrap(), "0.5".parse().unwrap()]
        );
        assert_eq!(r.boundaries[0].from, id(IdPrefix::Dec, b"A"));
    }

    #[test]
    fn classify_returning_identity_is_two_boundaries() {
        let r = classify_axis(&map(&[("1", b"A"), ("2", b"B"), ("3", b"A")]), "w").unwrap();
        assert_eq!(r.segments.len(), 3);
        assert_eq!(r.boundaries.len(), 2);
    }

    #[test]
    fn classify_single_point() {
        let r = classify_axis(&map(&[("0.5", b"A")]), "w").unwrap();
        assert_eq!(r.segments.len(), 1);
        assert!(r.boundaries.is_empty());
    }

    #[test]
    fn slices_split_by_other_params() {
        let mut m = map(&[("0.5", b"A"), ("1", b"B")]);
        m.entries.insert(
            Params::from([
                ("w".to_string(), "1".parse().unwrap()),
                ("k".to_string(), "2".parse().unwrap()),
            ]),
            MapCell {
                repr_id: id(IdPrefix::Repr, b"r"),
                run_id: id(IdPrefix::Run, b"r"),
                decision_id: id(IdPrefix::Dec, b"A"),
            },
        );
        let parts = slices(&m, "w");
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].1.len(), 2);
        assert_eq!(classify_axis(&parts[0].1, "w").unwrap().boundaries.len(), 1);
        assert_eq!(parts[1].1.len(), 1);
    }

    #[test]
    fn classify_rejects_mixed_slices() {
        let mut m = map(&[("0.5", b"A")]);
        m.entries.insert(
            Params::from([
                ("w".to_string(), "1".parse().unwrap()),
                ("k".to_string(), "2".parse().unwrap()),
            ]),
            MapCell {
                repr_id: id(IdPrefix::Repr, b"r"),
                run_id: id(IdPrefix::Run, b"r"),
                decision_id: id(IdPrefix::Dec, b"A"),
            },
        );
        assert!(matches!(classify_axis(&m, "w"), Err(SweepError::InvalidComparison(_))));
        assert!(matches!(
            classify_axis(&map(&[("1", b"A")]), "zz"),
            Err(SweepError::InvalidComparison(_))
        ));
    }
}
