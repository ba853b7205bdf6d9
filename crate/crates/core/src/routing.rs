//! Reference routing arena: a seeded synthetic directed graph, a cost-surface
//! representation factory with two weights, and a Dijkstra engine.
//!
//! Edge cost under weights `(nw, sw)`:
//!
//! ```text
//! cost(e) = baseline(e) * (1 + nw * N1(e) + sw * N2(e))
//! N1(e)   = mean stress of edges leaving head(e)
//! N2(e)   = mean stress of edges leaving the heads of those edges
//! ```
//!
//! An empty mean is 0. All arithmetic is fixed-point decimal (12 fractional
//! digits, half-even) so serialized costs are platform independent.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{self, CanonError, CanonicalValue, Decimal};
use crate::policy::EquivalencePolicy;
use crate::store::{Params, SnapshotRecord, Store, TimeWindow};
use crate::sweep::{
    self, Axis, EngineAdapter, EngineError, FactoryError, PlanSpec, RepresentationFactory, SnapshotArtifacts,
    SweepError, SweepOutcome, SweepPlan,
};

pub const NEIGHBOR_WEIGHT: &str = "neighbor_weight";
pub const SECOND_ORDER_WEIGHT: &str = "second_order_weight";
/// Manifest name of the graph artifact inside a snapshot.
pub const GRAPH_ARTIFACT: &str = "graph";

pub const FACTORY_NAME: &str = "cost_surface";
pub const FACTORY_VERSION: &str = "1";
pub const ENGINE_NAME: &str = "dijkstra";
pub const ENGINE_VERSION: &str = "1";

/// Seed of the demo graph. Chosen by `examples/tune_seed.rs` as the first
/// seed whose two demo sweeps show one persistence region and one fracture.
pub const DEMO_SEED: u64 = 9;
pub const DEMO_NODES: usize = 564;
pub const DEMO_START: i64 = 85;
pub const DEMO_END: i64 = 50;
pub const DEMO_EXPERIMENT: &str = "demo";

const NEAREST_NEIGHBORS: usize = 4;
const GRID_EXTENT: i64 = 10_000;

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("weight {name} must be non-negative, got {value}")]
    NegativeWeight { name: &'static str, value: Decimal },
    #[error("unknown node {0}")]
    UnknownNode(i64),
    #[error("no route from {start} to {end}")]
    Unreachable { start: i64, end: i64 },
    #[error(transparent)]
    Canon(#[from] CanonError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub x: i64,
    pub y: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: i64,
    pub position: Position,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: i64,
    pub to: i64,
    pub baseline_cost: Decimal,
    pub stress: Decimal,
}

/// Frozen directed graph with immutable edge attributes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub version: String,
}

impl GraphSnapshot {
    pub fn validate(&self) -> Result<(), RoutingError> {
        let ids: BTreeSet<i64> = self.nodes.iter().map(|n| n.id).collect();
        if ids.len() != self.nodes.len() {
            return Err(RoutingError::InvalidGraph("duplicate node id".into()));
        }
        for e in &self.edges {
            if !ids.contains(&e.from) || !ids.contains(&e.to) {
                return Err(RoutingError::InvalidGraph(format!(
                    "edge {}->{} has unknown endpoint",
                    e.from, e.to
                )));
            }
            if e.baseline_cost <= Decimal::ZERO {
                return Err(RoutingError::InvalidGraph(format!(
                    "edge {}->{} has non-positive cost",
                    e.from, e.to
                )));
            }
            if e.stress < Decimal::ZERO || e.stress > Decimal::ONE {
                return Err(RoutingError::InvalidGraph(format!(
                    "edge {}->{} stress outside [0, 1]",
                    e.from, e.to
                )));
            }
        }
        Ok(())
    }

    pub fn to_canonical(&self) -> Result<CanonicalValue, CanonError> {
        canon::to_canonical(self)
    }
}

fn rounded_distance(a: Position, b: Position) -> Decimal {
    let dx = (a.x - b.x).unsigned_abs() as u128;
    let dy = (a.y - b.y).unsigned_abs() as u128;
    // distance * 1000, rounded half-up, with integer arithmetic only
    let scaled = (dx * dx + dy * dy) * 1_000_000;
    let mut r = scaled.isqrt();
    if 4 * scaled >= (2 * r + 1) * (2 * r + 1) {
        r += 1;
    }
    Decimal::from_scaled(r as i64, 3)
}

/// Deterministic near-neighbor graph. Every node links both ways to its
/// nearest neighbors; disconnected components are then joined through their
/// closest node pairs.
pub fn generate_demo_graph(seed: u64, n_nodes: usize) -> Result<GraphSnapshot, RoutingError> {
    if n_nodes < 2 {
        return Err(RoutingError::TooFewNodes(n_nodes));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let mut nodes = Vec::with_capacity(n_nodes);
    while nodes.len() < n_nodes {
        let p = Position {
            x: rng.random_range(0..GRID_EXTENT),
            y: rng.random_range(0..GRID_EXTENT),
        };
        if taken.insert((p.x, p.y)) {
            nodes.push(Node {
                id: nodes.len() as i64,
                position: p,
            });
        }
    }

    let d2 = |a: &Node, b: &Node| {
        let dx = a.position.x - b.position.x;
        let dy = a.position.y - b.position.y;
        dx * dx + dy * dy
    };
    let mut pairs: BTreeSet<(i64, i64)> = BTreeSet::new();
    for a in &nodes {
        let mut near: Vec<&Node> = nodes.iter().filter(|b| b.id != a.id).collect();
        near.sort_by_key(|b| (d2(a, b), b.id));
        for b in near.into_iter().take(NEAREST_NEIGHBORS) {
            pairs.insert((a.id.min(b.id), a.id.max(b.id)));
        }
    }

    // join components
    loop {
        let comp = components(n_nodes, &pairs);
        let first = comp[0];
        if comp.iter().all(|&c| c == first) {
            break;
        }
        let (inside, outside): (Vec<&Node>, Vec<&Node>) = nodes.iter().partition(|n| comp[n.id as usize] == first);
        let (a, b) = inside
            .iter()
            .flat_map(|a| outside.iter().map(move |b| (*a, *b)))
            .min_by_key(|(a, b)| (d2(a, b), a.id, b.id))
            .expect("two non-empty sides");
        pairs.insert((a.id.min(b.id), a.id.max(b.id)));
    }

    let mut directed: Vec<(i64, i64)> = pairs.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    directed.sort();
    let edges = directed
        .into_iter()
        .map(|(from, to)| Edge {
            from,
            to,
            baseline_cost: rounded_distance(nodes[from as usize].position, nodes[to as usize].position),
            stress: Decimal::from_scaled(rng.random_range(0..=1000), 3),
        })
        .collect();

    let graph = GraphSnapshot {
        nodes,
        edges,
        version: "1".into(),
    };
    graph.validate()?;
    Ok(graph)
}

fn components(n: usize, pairs: &BTreeSet<(i64, i64)>) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a as usize), find(&mut parent, b as usize));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostParams {
    pub neighbor_weight: Decimal,
    pub second_order_weight: Decimal,
}

impl CostParams {
    pub fn new(neighbor_weight: &str, second_order_weight: &str) -> Result<Self, RoutingError> {
        Ok(CostParams {
            neighbor_weight: neighbor_weight.parse()?,
            second_order_weight: second_order_weight.parse()?,
        })
    }

    pub fn from_params(params: &Params) -> Result<Self, RoutingError> {
        let get = |k: &str| {
            params
                .get(k)
                .copied()
                .ok_or_else(|| RoutingError::InvalidGraph(format!("missing parameter {k}")))
        };
        if let Some(k) = params
            .keys()
            .find(|k| *k != NEIGHBOR_WEIGHT && *k != SECOND_ORDER_WEIGHT)
        {
            return Err(RoutingError::InvalidGraph(format!("unknown parameter {k}")));
        }
        Ok(CostParams {
            neighbor_weight: get(NEIGHBOR_WEIGHT)?,
            second_order_weight: get(SECOND_ORDER_WEIGHT)?,
        })
    }

    pub fn to_params(self) -> Params {
        Params::from([
            (NEIGHBOR_WEIGHT.to_string(), self.neighbor_weight),
            (SECOND_ORDER_WEIGHT.to_string(), self.second_order_weight),
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEdge {
    pub from: i64,
    pub to: i64,
    pub cost: Decimal,
}

/// Edge costs of a graph under one weight setting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRepresentation {
    pub params: CostParams,
    pub nodes: Vec<i64>,
    pub edges: Vec<CostEdge>,
    pub version: String,
}

fn mean(values: impl Iterator<Item = Decimal>) -> Decimal {
    let (sum, n) = values.fold((Decimal::ZERO, 0i64), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        Decimal::ZERO
    } else {
        sum.checked_div(Decimal::from_int(n)).expect("non-zero divisor")
    }
}

/// Neighbor and second-order stress components of every edge, in edge order.
pub fn stress_components(graph: &GraphSnapshot) -> Vec<(Decimal, Decimal)> {
    let mut out_edges: HashMap<i64, Vec<&Edge>> = HashMap::new();
    for e in &graph.edges {
        out_edges.entry(e.from).or_default().push(e);
    }
    let leaving = |n: i64| out_edges.get(&n).map(Vec::as_slice).unwrap_or(&[]);
    graph
        .edges
        .iter()
        .map(|e| {
            let first = leaving(e.to);
            let n1 = mean(first.iter().map(|f| f.stress));
            let n2 = mean(first.iter().flat_map(|f| leaving(f.to)).map(|g| g.stress));
            (n1, n2)
        })
        .collect()
}

pub fn build_cost_representation(
    graph: &GraphSnapshot,
    params: CostParams,
) -> Result<CostRepresentation, RoutingError> {
    if params.neighbor_weight.is_negative() {
        return Err(RoutingError::NegativeWeight {
            name: NEIGHBOR_WEIGHT,
            value: params.neighbor_weight,
        });
    }
    if params.second_order_weight.is_negative() {
        return Err(RoutingError::NegativeWeight {
            name: SECOND_ORDER_WEIGHT,
            value: params.second_order_weight,
        });
    }
    let edges = graph
        .edges
        .iter()
        .zip(stress_components(graph))
        .map(|(e, (n1, n2))| {
            let factor = Decimal::ONE + params.neighbor_weight * n1 + params.second_order_weight * n2;
            CostEdge {
                from: e.from,
                to: e.to,
                cost: e.baseline_cost * factor,
            }
        })
        .collect();
    Ok(CostRepresentation {
        params,
        nodes: graph.nodes.iter().map(|n| n.id).collect(),
        edges,
        version: "1".into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteQuery {
    pub start: i64,
    pub end: i64,
}

impl RouteQuery {
    pub fn to_canonical(self) -> CanonicalValue {
        canon::to_canonical(&self).expect("query is canonical")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineInfo {
    pub name: String,
    pub version: String,
}

/// Raw output of one routing evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteOutput {
    pub route_nodes: Vec<i64>,
    pub total_cost: Decimal,
    pub engine: EngineInfo,
    pub query: RouteQuery,
    pub version: String,
}

/// Least-cost route; equal-cost routes resolve to the lexicographically
/// smallest node sequence.
pub fn dijkstra_route(rep: &CostRepresentation, start: i64, end: i64) -> Result<RouteOutput, RoutingError> {
    let index: HashMap<i64, usize> = rep.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let &s = index.get(&start).ok_or(RoutingError::UnknownNode(start))?;
    let &t = index.get(&end).ok_or(RoutingError::UnknownNode(end))?;
    let mut adj: Vec<Vec<(usize, Decimal)>> = vec![Vec::new(); rep.nodes.len()];
    for e in &rep.edges {
        let (&u, &v) = match (index.get(&e.from), index.get(&e.to)) {
            (Some(u), Some(v)) => (u, v),
            _ => {
                return Err(RoutingError::InvalidGraph(format!(
                    "edge {}->{} has unknown endpoint",
                    e.from, e.to
                )))
            }
        };
        if e.cost <= Decimal::ZERO {
            return Err(RoutingError::InvalidGraph(format!(
                "edge {}->{} has non-positive cost",
                e.from, e.to
            )));
        }
        adj[u].push((v, e.cost));
    }

    let n = rep.nodes.len();
    let mut dist: Vec<Option<Decimal>> = vec![None; n];
    let mut path: Vec<Vec<i64>> = vec![Vec::new(); n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[s] = Some(Decimal::ZERO);
    path[s] = vec![start];
    heap.push(Reverse((Decimal::ZERO, s)));

    while let Some(Reverse((d, u))) = heap.pop() {
        if done[u] || dist[u] != Some(d) {
            continue;
        }
        done[u] = true;
        if u == t {
            break;
        }
        for &(v, c) in &adj[u] {
            if done[v] {
                continue;
            }
            let nd = d + c;
            let better = match dist[v] {
                None => true,
                Some(cur) if nd < cur => true,
                Some(cur) if nd == cur => {
                    // same cost: keep the smaller node sequence
                    let mut cand = path[u].clone();
                    cand.push(rep.nodes[v]);
                    if cand < path[v] {
                        path[v] = cand;
                    }
                    false
                }
                Some(_) => false,
            };
            if better {
                dist[v] = Some(nd);
                let mut p = path[u].clone();
                p.push(rep.nodes[v]);
                path[v] = p;
                heap.push(Reverse((nd, v)));
            }
        }
    }

    let total_cost = dist[t]
        .filter(|_| done[t])
        .ok_or(RoutingError::Unreachable { start, end })?;
    Ok(RouteOutput {
        route_nodes: std::mem::take(&mut path[t]),
        total_cost,
        engine: EngineInfo {
            name: ENGINE_NAME.into(),
            version: ENGINE_VERSION.into(),
        },
        query: RouteQuery { start, end },
        version: "1".into(),
    })
}

/// Representation factory over a snapshot holding a `graph` artifact.
#[derive(Clone, Copy, Debug, Default)]
pub struct CostSurfaceFactory;

impl RepresentationFactory for CostSurfaceFactory {
    fn name(&self) -> &str {
        FACTORY_NAME
    }

    fn version(&self) -> &str {
        FACTORY_VERSION
    }

    fn encode(&self, snapshot: &SnapshotArtifacts, params: &Params) -> Result<CanonicalValue, FactoryError> {
        let bytes = snapshot
            .artifact(GRAPH_ARTIFACT)
            .ok_or_else(|| FactoryError(format!("snapshot has no `{GRAPH_ARTIFACT}` artifact")))?;
        let graph: GraphSnapshot = canon::decode_deserializable(bytes).map_err(|e| FactoryError(e.to_string()))?;
        graph.validate().map_err(|e| FactoryError(e.to_string()))?;
        let params = CostParams::from_params(params).map_err(|e| FactoryError(e.to_string()))?;
        let rep = build_cost_representation(&graph, params).map_err(|e| FactoryError(e.to_string()))?;
        canon::to_canonical(&rep).map_err(|e| FactoryError(e.to_string()))
    }
}

/// Dijkstra engine adapter. Queries are `{"start": id, "end": id}`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DijkstraEngine;

impl EngineAdapter for DijkstraEngine {
    fn name(&self) -> &str {
        ENGINE_NAME
    }

    fn version(&self) -> &str {
        ENGINE_VERSION
    }

    fn evaluate(&self, representation: &[u8], query: &CanonicalValue) -> Result<CanonicalValue, EngineError> {
        let rep: CostRepresentation =
            canon::decode_deserializable(representation).map_err(|e| EngineError(e.to_string()))?;
        let q: RouteQuery = canon::from_canonical(query).map_err(|e| EngineError(format!("bad query: {e}")))?;
        let out = dijkstra_route(&rep, q.start, q.end).map_err(|e| EngineError(e.to_string()))?;
        canon::to_canonical(&out).map_err(|e| EngineError(e.to_string()))
    }
}

/// Everything needed to replay the two demo sweeps.
#[derive(Clone, Debug)]
pub struct DemoArena {
    pub seed: u64,
    pub graph: GraphSnapshot,
    pub time_window: TimeWindow,
    pub query: RouteQuery,
    pub policy: EquivalencePolicy,
    pub snapshot_id: crate::canon::Identifier,
    /// Neighbor-weight sweep, then second-order-weight sweep.
    pub plans: [SweepPlan; 2],
}

pub fn demo_time_window() -> TimeWindow {
    TimeWindow {
        start: "2024-01-01T00:00:00Z".into(),
        end: "2024-01-31T23:59:59Z".into(),
    }
}

/// Plan sweeping one weight with the other fixed.
pub fn single_axis_plan(
    snapshot_id: crate::canon::Identifier,
    policy: &EquivalencePolicy,
    query: RouteQuery,
    axis: &str,
    values: &[&str],
    fixed: (&str, &str),
) -> Result<SweepPlan, SweepError> {
    let values = values.iter().map(|v| v.parse()).collect::<Result<Vec<Decimal>, _>>()?;
    SweepPlan::new(PlanSpec {
        snapshot_id,
        factory_name: FACTORY_NAME.into(),
        factory_version: FACTORY_VERSION.into(),
        axes: vec![Axis {
            param: axis.into(),
            values,
        }],
        fixed_params: BTreeMap::from([(fixed.0.to_string(), fixed.1.parse()?)]),
        engine_name: ENGINE_NAME.into(),
        engine_version: ENGINE_VERSION.into(),
        query: query.to_canonical(),
        policy_id: policy.id(),
        version: "1".into(),
    })
}

/// Demo configuration on the graph generated from `seed`: query 85 → 50,
/// neighbor weight at 0.5 and 1.0 with second-order weight 0.25, then
/// second-order weight at 0.25 and 0.5 with neighbor weight 0.5.
pub fn demo_arena(seed: u64) -> Result<DemoArena, SweepError> {
    let graph = generate_demo_graph(seed, DEMO_NODES).map_err(|e| SweepError::Factory(e.to_string()))?;
    let time_window = demo_time_window();
    let graph_bytes = canon::canonical_encode(&graph.to_canonical()?);
    let snapshot = SnapshotRecord::new(
        time_window.clone(),
        vec![crate::store::ManifestEntry {
            name: GRAPH_ARTIFACT.into(),
            artifact_ref: canon::payload_hash(&graph_bytes),
        }],
    )?;
    let policy = EquivalencePolicy::route_nodes();
    let query = RouteQuery {
        start: DEMO_START,
        end: DEMO_END,
    };
    let sid = snapshot.snapshot_id;
    let plans = [
        single_axis_plan(
            sid,
            &policy,
            query,
            NEIGHBOR_WEIGHT,
            &["0.5", "1.0"],
            (SECOND_ORDER_WEIGHT, "0.25"),
        )?,
        single_axis_plan(
            sid,
            &policy,
            query,
            SECOND_ORDER_WEIGHT,
            &["0.25", "0.5"],
            (NEIGHBOR_WEIGHT, "0.5"),
        )?,
    ];
    Ok(DemoArena {
        seed,
        graph,
        time_window,
        query,
        policy,
        snapshot_id: sid,
        plans,
    })
}

impl DemoArena {
    /// Freezes the graph and registers the policy.
    pub fn freeze(&self, store: &Store) -> Result<SnapshotRecord, SweepError> {
        self.policy.persist(store)?;
        let snap = sweep::freeze_snapshot(
            store,
            &[(GRAPH_ARTIFACT, self.graph.to_canonical()?)],
            self.time_window.clone(),
        )?;
        debug_assert_eq!(snap.snapshot_id, self.snapshot_id);
        Ok(snap)
    }

    /// Runs all five stages for both demo plans under `experiment_id`.
    pub fn run(&self, store: &Store, experiment_id: &str) -> Result<Vec<SweepOutcome>, SweepError> {
        self.freeze(store)?;
        self.plans
            .iter()
            .map(|plan| {
                sweep::plan_sweep(store, plan.spec().clone())?;
                sweep::declare_representations(store, plan, &CostSurfaceFactory)?;
                sweep::execute_sweep(store, plan, &DijkstraEngine, experiment_id)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    fn edge(from: i64, to: i64, cost: &str, stress: &str) -> Edge {
        Edge {
            from,
            to,
            baseline_cost: d(cost),
            stress: d(stress),
        }
    }

    fn graph(n: i64, edges: Vec<Edge>) -> GraphSnapshot {
        GraphSnapshot {
            nodes: (0..n)
                .map(|id| Node {
                    id,
                    position: Position { x: id, y: 0 },
                })
                .collect(),
            edges,
            version: "1".into(),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_demo_graph(7, 564).unwrap();
        let b = generate_demo_graph(7, 564).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nodes.len(), 564);
        assert_ne!(a, generate_demo_graph(8, 564).unwrap());
    }

    #[test]
    fn small_graph_stress_in_range() {
        let g = generate_demo_graph(7, 10).unwrap();
        assert!(g
            .edges
            .iter()
            .all(|e| e.stress >= Decimal::ZERO && e.stress <= Decimal::ONE));
        assert!(g.edges.iter().all(|e| e.baseline_cost > Decimal::ZERO));
        assert!(matches!(generate_demo_graph(7, 1), Err(RoutingError::TooFewNodes(1))));
    }

    #[test]
    fn rounded_distance_exact() {
        let p = |x, y| Position { x, y };
        assert_eq!(rounded_distance(p(0, 0), p(3, 4)), d("5"));
        // sqrt(2) = 1.41421356...
        assert_eq!(rounded_distance(p(0, 0), p(1, 1)), d("1.414"));
        // sqrt(5) = 2.2360679...
        assert_eq!(rounded_distance(p(0, 0), p(1, 2)), d("2.236"));
        // sqrt(8) = 2.8284271...
        assert_eq!(rounded_distance(p(0, 0), p(2, 2)), d("2.828"));
        // sqrt(13) = 3.6055512...
        assert_eq!(rounded_distance(p(0, 0), p(2, 3)), d("3.606"));
    }

    #[test]
    fn zero_weights_give_baseline() {
        let g = generate_demo_graph(3, 30).unwrap();
        let rep = build_cost_representation(&g, CostParams::new("0", "0").unwrap()).unwrap();
        for (e, c) in g.edges.iter().zip(&rep.edges) {
            assert_eq!(e.baseline_cost, c.cost);
        }
    }

    #[test]
    fn zero_stress_gives_baseline() {
        let mut g = generate_demo_graph(3, 30).unwrap();
        for e in &mut g.edges {
            e.stress = Decimal::ZERO;
        }
        let rep = build_cost_representation(&g, CostParams::new("3.5", "0.75").unwrap()).unwrap();
        for (e, c) in g.edges.iter().zip(&rep.edges) {
            assert_eq!(e.baseline_cost, c.cost);
        }
    }

    #[test]
    fn negative_weight_rejected() {
        let g = generate_demo_graph(3, 5).unwrap();
        assert!(matches!(
            build_cost_representation(&g, CostParams::new("-0.1", "0").unwrap()),
            Err(RoutingError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn chain_costs_match_hand_computation() {
        // 0 -> 1 -> 2 -> 3, plus a back edge 2 -> 0.
        let g = graph(
            4,
            vec![
                edge(0, 1, "10", "0.2"),
                edge(1, 2, "4", "0.4"),
                edge(2, 3, "2", "0.6"),
                edge(2, 0, "8", "1.0"),
            ],
        );
        // Edges leaving each node: 0:{0.2} 1:{0.4} 2:{0.6, 1.0} 3:{}
        // e01: N1 = mean(out 1) = 0.4 ; N2 = mean(out 2) = 0.8
        // e12: N1 = mean(out 2) = 0.8 ; N2 = mean(out 3 ∪ out 0) = 0.2
        // e23: N1 = 0 ; N2 = 0
        // e20: N1 = mean(out 0) = 0.2 ; N2 = mean(out 1) = 0.4
        let comps = stress_components(&g);
        assert_eq!(
            comps,
            vec![
                (d("0.4"), d("0.8")),
                (d("0.8"), d("0.2")),
                (d("0"), d("0")),
                (d("0.2"), d("0.4"))
            ]
        );
        // nw = 0.5, sw = 0.25
        // e01: 10 * (1 + 0.2 + 0.2)  = 14
        // e12: 4  * (1 + 0.4 + 0.05) = 5.8
        // e23: 2  * 1                = 2
        // e20: 8  * (1 + 0.1 + 0.1)  = 9.6
        let rep = build_cost_representation(&g, CostParams::new("0.5", "0.25").unwrap()).unwrap();
        let costs: Vec<String> = rep.edges.iter().map(|e| e.cost.to_string()).collect();
        assert_eq!(costs, vec!["14.0", "5.8", "2.0", "9.6"]);
    }

    #[test]
    fn repeating_mean_rounds_to_twelve_digits() {
        // out(1) stresses 0.1, 0.1, 0.2 -> mean 0.133333333333
        let g = graph(
            4,
            vec![
                edge(0, 1, "3", "0"),
                edge(1, 0, "1", "0.1"),
                edge(1, 2, "1", "0.1"),
                edge(1, 3, "1", "0.2"),
            ],
        );
        let rep = build_cost_representation(&g, CostParams::new("1", "0").unwrap()).unwrap();
        // 3 * 1.133333333333 = 3.399999999999
        assert_eq!(rep.edges[0].cost.to_string(), "3.399999999999");
    }

    #[test]
    fn start_equals_end() {
        let g = generate_demo_graph(1, 6).unwrap();
        let rep = build_cost_representation(&g, CostParams::new("0", "0").unwrap()).unwrap();
        let r = dijkstra_route(&rep, 2, 2).unwrap();
        assert_eq!(r.route_nodes, vec![2]);
        assert_eq!(r.total_cost, Decimal::ZERO);
    }

    #[test]
    fn diamond_prefers_cheaper_upper_path() {
        // upper 0-1-3 costs 2+2, lower 0-2-3 costs 3+3
        let g = graph(
            4,
            vec![
                edge(0, 1, "2", "0"),
                edge(1, 3, "2", "0"),
                edge(0, 2, "3", "0"),
                edge(2, 3, "3", "0"),
            ],
        );
        let rep = build_cost_representation(&g, CostParams::new("0", "0").unwrap()).unwrap();
        let r = dijkstra_route(&rep, 0, 3).unwrap();
        assert_eq!(r.route_nodes, vec![0, 1, 3]);
        assert_eq!(r.total_cost, d("4"));
    }

    #[test]
    fn ties_prefer_smaller_sequence() {
        // 0-2-3 (1+3) is settled first; 0-1-3 (2+2) ties later and must win
        let g = graph(
            4,
            vec![
                edge(0, 2, "1", "0"),
                edge(2, 3, "3", "0"),
                edge(0, 1, "2", "0"),
                edge(1, 3, "2", "0"),
            ],
        );
        let rep = build_cost_representation(&g, CostParams::new("0", "0").unwrap()).unwrap();
        assert_eq!(dijkstra_route(&rep, 0, 3).unwrap().route_nodes, vec![0, 1, 3]);
    }

    #[test]
    fn unreachable_and_unknown() {
        let g = graph(3, vec![edge(0, 1, "1", "0")]);
        let rep = build_cost_representation(&g, CostParams::new("0", "0").unwrap()).unwrap();
        assert!(matches!(
            dijkstra_route(&rep, 0, 2),
            Err(RoutingError::Unreachable { .. })
        ));
        assert!(matches!(dijkstra_route(&rep, 0, 9), Err(RoutingError::UnknownNode(9))));
    }

    #[test]
    fn demo_arena_shape() {
        let arena = demo_arena(DEMO_SEED).unwrap();
        assert_eq!(arena.policy.spec().hash_source, vec!["route_nodes".to_string()]);
        let grid: usize = arena.plans.iter().map(|p| p.grid().len()).sum();
        assert_eq!(grid, 4);
        assert_ne!(arena.plans[0].id(), arena.plans[1].id());
        for p in &arena.plans {
            assert_eq!(p.spec().snapshot_id, arena.snapshot_id);
            assert_eq!(p.spec().engine_version, ENGINE_VERSION);
        }
    }
}
