//! Searches graph seeds for the demo fixture.
//!
//! A seed qualifies when, on the 564-node graph with query 85 -> 50:
//! - neighbor weight 0.5 and 1.0 (second-order weight 0.25) give the same route
//! - second-order weight 0.25 and 0.5 (neighbor weight 0.5) give different routes
//!
//! The first qualifying seed from 0 upwards is pinned as `routing::DEMO_SEED`.
//!
//! ```text
//! cargo run --release -p decisiondb-core --example tune_seed -- [max_seed]
//! ```

use decisiondb_core::routing::{
    build_cost_representation, dijkstra_route, generate_demo_graph, CostParams, DEMO_END, DEMO_NODES, DEMO_START,
};

fn route(graph: &decisiondb_core::routing::GraphSnapshot, nw: &str, sw: &str) -> Vec<i64> {
    let rep = build_cost_representation(graph, CostParams::new(nw, sw).unwrap()).unwrap();
    dijkstra_route(&rep, DEMO_START, DEMO_END).unwrap().route_nodes
}

fn main() {
    let max_seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1000);
    for seed in 0..=max_seed {
        let graph = generate_demo_graph(seed, DEMO_NODES).unwrap();
        let a = route(&graph, "0.5", "0.25");
        let nw_high = route(&graph, "1.0", "0.25");
        let sw_high = route(&graph, "0.5", "0.5");
        let persists = a == nw_high;
        let fractures = a != sw_high;
        println!(
            "seed {seed:>4}: A={} nodes, nw=1.0 {}, sw=0.5 {} ({} nodes)",
            a.len(),
            if persists { "same" } else { "differs" },
            if fractures { "differs" } else { "same" },
            sw_high.len()
        );
        if persists && fractures {
            println!("selected seed {seed}");
            return;
        }
    }
    println!("no qualifying seed up to {max_seed}");
    std::process::exit(1);
}
