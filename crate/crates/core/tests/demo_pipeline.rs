use std::collections::BTreeSet;
use std::fs;
use std::os::unix::fs::PermissionsExt;

use decisiondb_core::replay::{replay_all, replay_decision, ReplayOptions, ReplayTarget};
use decisiondb_core::routing::{demo_arena, CostSurfaceFactory, DemoArena, DijkstraEngine, DEMO_EXPERIMENT, DEMO_SEED};
use decisiondb_core::store::{FMapFilter, Record};
use decisiondb_core::sweep::{self, classify_axis, materialize_map};
use decisiondb_core::{Decimal, IdPrefix, Store, TableCounts};

fn demo_store() -> (tempfile::TempDir, Store, DemoArena) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let arena = demo_arena(DEMO_SEED).unwrap();
    for outcome in arena.run(&store, DEMO_EXPERIMENT).unwrap() {
        outcome.ensure_complete().unwrap();
    }
    (dir, store, arena)
}

fn dec(s: &str) -> Decimal {
    s.parse().unwrap()
}

fn expected_counts() -> TableCounts {
    TableCounts {
        snapshots: 1,
        representations: 3,
        engine_runs: 4,
        decisions: 2,
        f_map: 4,
    }
}

#[test]
fn demo_counts() {
    let (_dir, store, arena) = demo_store();
    assert_eq!(store.table_counts().unwrap(), expected_counts());
    let all = store.query_fmap(DEMO_EXPERIMENT, &FMapFilter::default()).unwrap();
    assert_eq!(all.len(), 4);
    let by_plan = FMapFilter {
        plan_id: Some(arena.plans[1].id()),
        ..Default::default()
    };
    assert_eq!(store.query_fmap(DEMO_EXPERIMENT, &by_plan).unwrap().len(), 2);
    assert!(store.query_fmap("other", &FMapFilter::default()).unwrap().is_empty());
    assert_eq!(
        store.experiment_plans(DEMO_EXPERIMENT).unwrap(),
        vec![arena.plans[0].id(), arena.plans[1].id()]
    );
}

#[test]
fn rerun_is_idempotent() {
    let (_dir, store, arena) = demo_store();
    let blobs = store.blobs().list().unwrap();
    let again = arena.run(&store, DEMO_EXPERIMENT).unwrap();
    assert_eq!(again.iter().map(|o| o.entries.len()).sum::<usize>(), 4);
    assert_eq!(store.table_counts().unwrap(), expected_counts());
    assert_eq!(store.blobs().list().unwrap(), blobs);
}

#[test]
fn counts_survive_reopen() {
    let (dir, store, _arena) = demo_store();
    drop(store);
    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(reopened.table_counts().unwrap(), expected_counts());
}

#[test]
fn demo_structure() {
    let (_dir, store, arena) = demo_store();
    let nw = materialize_map(&store, &arena.plans[0].id(), DEMO_EXPERIMENT).unwrap();
    let report = classify_axis(&nw, "neighbor_weight").unwrap();
    assert_eq!(report.segments.len(), 1);
    assert!(report.boundaries.is_empty());

    let sw = materialize_map(&store, &arena.plans[1].id(), DEMO_EXPERIMENT).unwrap();
    let report = classify_axis(&sw, "second_order_weight").unwrap();
    assert_eq!(report.segments.len(), 2);
    assert_eq!(report.boundaries.len(), 1);
    assert_eq!(report.boundaries[0].between, [dec("0.25"), dec("0.5")]);

    let shared = nw.distinct_decisions()[0];
    assert_eq!(report.boundaries[0].from, shared);
    let decisions: BTreeSet<_> = nw
        .distinct_decisions()
        .into_iter()
        .chain(sw.distinct_decisions())
        .collect();
    assert_eq!(decisions.len(), 2);
}

#[test]
fn plan_order_does_not_change_contents() {
    let (_dir, store, arena) = demo_store();
    let dir = tempfile::tempdir().unwrap();
    let other = Store::open(dir.path()).unwrap();
    arena.freeze(&other).unwrap();
    for plan in arena.plans.iter().rev() {
        sweep::plan_sweep(&other, plan.spec().clone()).unwrap();
        sweep::declare_representations(&other, plan, &CostSurfaceFactory).unwrap();
        sweep::execute_sweep(&other, plan, &DijkstraEngine, DEMO_EXPERIMENT).unwrap();
    }
    assert_eq!(other.table_counts().unwrap(), store.table_counts().unwrap());
    assert_eq!(other.blobs().list().unwrap(), store.blobs().list().unwrap());
    let ids = |s: &Store| {
        let mut v: Vec<String> = s.all_runs().unwrap().iter().map(|r| r.run_id.to_string()).collect();
        v.extend(s.all_representations().unwrap().iter().map(|r| r.repr_id.to_string()));
        v.extend(s.all_decisions().unwrap().iter().map(|r| r.decision_id.to_string()));
        v.sort();
        v
    };
    assert_eq!(ids(&other), ids(&store));
    let links = |s: &Store| {
        let mut v: Vec<_> = s
            .query_fmap(DEMO_EXPERIMENT, &FMapFilter::default())
            .unwrap()
            .into_iter()
            .map(|e| (e.plan_id, e.repr_id, e.run_id, e.decision_id))
            .collect();
        v.sort();
        v
    };
    assert_eq!(links(&other), links(&store));
}

#[test]
fn records_are_reachable_by_identifier() {
    let (_dir, store, arena) = demo_store();
    let entry = &store.query_fmap(DEMO_EXPERIMENT, &FMapFilter::default()).unwrap()[0];
    assert!(matches!(
        store.get_record(&entry.run_id).unwrap(),
        Some(Record::EngineRun(_))
    ));
    assert!(matches!(
        store.get_record_str(&entry.decision_id.to_string()).unwrap(),
        Some(Record::Decision(_))
    ));
    assert_eq!(arena.snapshot_id.prefix(), IdPrefix::Snap);
    assert!(store.spec_blob(&arena.plans[0].id()).unwrap().is_some());
    assert!(store.spec_blob(&arena.policy.id()).unwrap().is_some());
}

#[test]
fn replay_matches_everything_and_writes_nothing() {
    let (_dir, store, _arena) = demo_store();
    let before = store.table_counts().unwrap();
    let blobs = store.blobs().list().unwrap();
    for deep in [false, true] {
        let batch = replay_all(&store, DEMO_EXPERIMENT, ReplayOptions { deep }).unwrap();
        assert_eq!((batch.matched, batch.total), (4, 4));
        assert_eq!(batch.counts_before, batch.counts_after);
    }
    assert_eq!(store.table_counts().unwrap(), before);
    assert_eq!(store.blobs().list().unwrap(), blobs);
}

#[test]
fn replay_single_decision_reports_three_fields() {
    let (_dir, store, _arena) = demo_store();
    let entry = store
        .query_fmap(DEMO_EXPERIMENT, &FMapFilter::default())
        .unwrap()
        .remove(0);
    let report = replay_decision(
        &store,
        ReplayTarget::Decision(entry.decision_id),
        ReplayOptions::default(),
    )
    .unwrap();
    let names: Vec<_> = report.fields.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(names, ["policy_id", "payload_hash", "decision_id"]);
    assert!(report.overall_match);
    assert!(report.deep.is_empty());
}

#[test]
fn corrupted_raw_output_is_detected() {
    let (_dir, store, _arena) = demo_store();
    let runs = store.all_runs().unwrap();
    let target = runs
        .iter()
        .find(|r| runs.iter().filter(|o| o.raw_output_ref == r.raw_output_ref).count() == 1)
        .expect("a raw output used by one run");
    let path = store.blobs().path_for(&target.raw_output_ref);
    let mut bytes = fs::read(&path).unwrap();
    let i = bytes.len() / 2;
    bytes[i] ^= 0x01;
    fs::set_permissions(&path, fs::Permissions::from_mode(0o644)).unwrap();
    fs::write(&path, &bytes).unwrap();

    let batch = replay_all(&store, DEMO_EXPERIMENT, ReplayOptions::default()).unwrap();
    assert_eq!((batch.matched, batch.total), (3, 4));
    let bad = batch.items.iter().find(|i| !i.matched()).unwrap();
    assert_eq!(bad.run_id, target.run_id);
    let report = bad.report.as_ref().unwrap();
    assert!(!report.field("payload_hash").unwrap().matched);
    assert!(report.field("policy_id").unwrap().matched);
}

#[test]
fn missing_blob_is_a_broken_chain() {
    let (_dir, store, _arena) = demo_store();
    let run = &store.all_runs().unwrap()[0];
    fs::remove_file(store.blobs().path_for(&run.raw_output_ref)).unwrap();
    let batch = replay_all(&store, DEMO_EXPERIMENT, ReplayOptions::default()).unwrap();
    assert!(batch.matched < 4);
    assert!(batch
        .items
        .iter()
        .any(|i| i.error.as_deref().is_some_and(|e| e.contains("broken chain"))));
}
