use decisiondb_core::routing::{
    single_axis_plan, CostSurfaceFactory, DijkstraEngine, Edge, GraphSnapshot, Node, Position, RouteQuery,
    GRAPH_ARTIFACT, NEIGHBOR_WEIGHT, SECOND_ORDER_WEIGHT,
};
use decisiondb_core::store::TimeWindow;
use decisiondb_core::sweep::{self, refine_boundary, RefineOptions, RefineStatus, SweepPlan};
use decisiondb_core::{Decimal, EquivalencePolicy, Store};

const EXPERIMENT: &str = "refine";

fn dec(s: &str) -> Decimal {
    s.parse().unwrap()
}

fn edge(from: i64, to: i64, baseline: &str, stress: &str) -> Edge {
    Edge {
        from,
        to,
        baseline_cost: dec(baseline),
        stress: dec(stress),
    }
}

/// Route 0-1-3 costs 21 + 9w and route 0-2-3 costs 24, where w is the
/// second-order weight: the only stressed edge is two hops past node 1.
/// The routes swap at w = 1/3; the tie resolves to 0-1-3.
fn two_path_graph() -> GraphSnapshot {
    GraphSnapshot {
        nodes: (0..6)
            .map(|id| Node {
                id,
                position: Position { x: id, y: 0 },
            })
            .collect(),
        edges: vec![
            edge(0, 1, "9", "0"),
            edge(1, 3, "12", "0"),
            edge(0, 2, "12", "0"),
            edge(2, 3, "12", "0"),
            edge(1, 4, "100", "0"),
            edge(4, 5, "1", "1"),
        ],
        version: "1".into(),
    }
}

fn setup(values: &[&str]) -> (tempfile::TempDir, Store, SweepPlan) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let policy = EquivalencePolicy::route_nodes();
    policy.persist(&store).unwrap();
    let window = TimeWindow {
        start: "2024-01-01T00:00:00Z".into(),
        end: "2024-01-02T00:00:00Z".into(),
    };
    let snap = sweep::freeze_snapshot(
        &store,
        &[(GRAPH_ARTIFACT, two_path_graph().to_canonical().unwrap())],
        window,
    )
    .unwrap();
    let plan = single_axis_plan(
        snap.snapshot_id,
        &policy,
        RouteQuery { start: 0, end: 3 },
        SECOND_ORDER_WEIGHT,
        values,
        (NEIGHBOR_WEIGHT, "0"),
    )
    .unwrap();
    sweep::plan_sweep(&store, plan.spec().clone()).unwrap();
    sweep::declare_representations(&store, &plan, &CostSurfaceFactory).unwrap();
    sweep::execute_sweep(&store, &plan, &DijkstraEngine, EXPERIMENT)
        .unwrap()
        .ensure_complete()
        .unwrap();
    (dir, store, plan)
}

fn refine(store: &Store, plan: &SweepPlan, max_evals: usize) -> sweep::Refinement {
    refine_boundary(
        store,
        plan,
        SECOND_ORDER_WEIGHT,
        [dec("0"), dec("1")],
        &CostSurfaceFactory,
        &DijkstraEngine,
        EXPERIMENT,
        RefineOptions {
            max_evals,
            resolution: None,
        },
    )
    .unwrap()
}

fn third() -> Decimal {
    Decimal::ONE.checked_div(Decimal::from_int(3)).unwrap()
}

#[test]
fn zero_budget_keeps_the_interval() {
    let (_dir, store, plan) = setup(&["0", "1"]);
    let before = store.table_counts().unwrap();
    let r = refine(&store, &plan, 0);
    assert_eq!(r.interval, [dec("0"), dec("1")]);
    assert_eq!(r.evaluations, 0);
    assert_ne!(r.lo_decision, r.hi_decision);
    assert_eq!(store.table_counts().unwrap(), before);
}

#[test]
fn each_evaluation_halves_the_interval() {
    let resolution = dec("0.000001");
    for budget in [1, 8, 20] {
        let (_dir, store, plan) = setup(&["0", "1"]);
        let r = refine(&store, &plan, budget);
        let [lo, hi] = r.interval;
        let width = hi - lo;
        assert_eq!(r.status, RefineStatus::Bracketed);
        assert_eq!(r.evaluations, budget);
        let bound = Decimal::ONE.checked_div(Decimal::from_int(1 << budget)).unwrap() + resolution;
        assert!(width <= bound, "budget {budget}: width {width} > {bound}");
        assert!(
            lo <= third() && third() <= hi,
            "budget {budget}: [{lo}, {hi}] misses 1/3"
        );
    }
}

#[test]
fn refinement_stops_at_resolution() {
    let (_dir, store, plan) = setup(&["0", "1"]);
    let r = refine(&store, &plan, 100);
    assert_eq!(r.evaluations, 20);
    assert!(r.interval[1] - r.interval[0] <= dec("0.000001"));
}

#[test]
fn refinement_points_are_recorded_as_runs() {
    let (_dir, store, plan) = setup(&["0", "1"]);
    refine(&store, &plan, 3);
    let counts = store.table_counts().unwrap();
    assert_eq!(counts.engine_runs, 5);
    assert_eq!(counts.f_map, 5);
    assert_eq!(counts.decisions, 2);
    assert_eq!(store.experiment_plans(EXPERIMENT).unwrap().len(), 4);
}

#[test]
fn same_decision_at_both_ends_is_rejected() {
    let (_dir, store, plan) = setup(&["0", "0.25"]);
    let err = refine_boundary(
        &store,
        &plan,
        SECOND_ORDER_WEIGHT,
        [dec("0"), dec("0.25")],
        &CostSurfaceFactory,
        &DijkstraEngine,
        EXPERIMENT,
        RefineOptions {
            max_evals: 4,
            resolution: None,
        },
    );
    assert!(matches!(err, Err(sweep::SweepError::Precondition(_))));
}
