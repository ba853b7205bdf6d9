use std::error::Error;
use std::fs;
use std::path::Path;

use decisiondb_core::canon::{self, CanonicalValue, IdPrefix, Identifier, PayloadHash};
use decisiondb_core::replay::{self, ReplayError, ReplayOptions, ReplayTarget};
use decisiondb_core::routing::{demo_arena, CostSurfaceFactory, DijkstraEngine};
use decisiondb_core::store::{FMapFilter, TimeWindow};
use decisiondb_core::sweep::{self, EngineAdapter, RepresentationFactory, SweepPlan};
use decisiondb_core::{EquivalencePolicy, Store};
use serde::Serialize;

use crate::output::{self, emit_json};
use crate::{Cli, Command, DemoCommand, FreezeArgs, MapArgs, ReplayArgs, SweepCommand};

pub type Result<T> = std::result::Result<T, Box<dyn Error>>;

const MISMATCH: u8 = 2;

pub fn dispatch(cli: Cli) -> Result<u8> {
    let store = open_store(cli.db.as_deref())?;
    match cli.command {
        Command::Init { json } => init(&store, json),
        Command::Freeze(args) => freeze(&store, args),
        Command::Sweep(SweepCommand::Run {
            plan,
            policy,
            experiment,
            json,
        }) => sweep_run(&store, &plan, policy.as_deref(), &experiment, json),
        Command::Sweep(SweepCommand::Report {
            plan_ids,
            experiment,
            json,
        }) => {
            let ids = plan_ids
                .iter()
                .map(|s| Identifier::parse_with(IdPrefix::Plan, s))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            report(&store, ids, &experiment, json)
        }
        Command::Map(args) => map(&store, args),
        Command::Replay(args) => replay_cmd(&store, args),
        Command::Inspect { id, json } => inspect(&store, id.as_deref(), json),
        Command::Demo(DemoCommand::Generate { seed, json }) => demo_generate(&store, seed, json),
        Command::Demo(DemoCommand::Sweep { seed, experiment, json }) => demo_sweep(&store, seed, &experiment, json),
        Command::Demo(DemoCommand::Replay { experiment, deep, json }) => replay_cmd(
            &store,
            ReplayArgs {
                decision: None,
                experiment: Some(experiment),
                deep,
                json,
            },
        ),
    }
}

fn open_store(db: Option<&Path>) -> Result<Store> {
    let path = db.ok_or("no store given: pass --db or set DECISIONDB_PATH")?;
    Ok(Store::open(path)?)
}

fn init(store: &Store, json: bool) -> Result<u8> {
    #[derive(Serialize)]
    struct Init {
        path: String,
        counts: decisiondb_core::TableCounts,
        blobs: usize,
    }
    let out = Init {
        path: store.root().display().to_string(),
        counts: store.table_counts()?,
        blobs: store.blob_count()?,
    };
    if json {
        emit_json(&out)?;
    } else {
        println!("store ready at {}", out.path);
        println!("{}", output::counts_line(&out.counts));
    }
    Ok(0)
}

fn freeze(store: &Store, args: FreezeArgs) -> Result<u8> {
    let mut world = Vec::new();
    for spec in &args.artifacts {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| format!("artifact `{spec}` is not NAME=PATH"))?;
        let bytes = fs::read(path).map_err(|e| format!("reading {path}: {e}"))?;
        let value = canon::canonical_decode(&bytes).map_err(|e| format!("artifact {name}: {e}"))?;
        world.push((name.to_string(), value));
    }
    let window = TimeWindow {
        start: args.window_start,
        end: args.window_end,
    };
    let snapshot = sweep::freeze_snapshot(store, &world, window)?;
    if args.json {
        emit_json(&snapshot)?;
    } else {
        println!("snapshot {}", snapshot.snapshot_id);
        for m in &snapshot.artifact_manifest {
            println!("  {}  {}", m.name, m.artifact_ref);
        }
    }
    Ok(0)
}

fn factory_for(name: &str, version: &str) -> Result<&'static dyn RepresentationFactory> {
    let known: [&'static dyn RepresentationFactory; 1] = [&CostSurfaceFactory];
    known
        .into_iter()
        .find(|f| f.name() == name && f.version() == version)
        .ok_or_else(|| format!("no representation factory {name}@{version}").into())
}

fn engine_for(name: &str, version: &str) -> Result<&'static dyn EngineAdapter> {
    let known: [&'static dyn EngineAdapter; 1] = [&DijkstraEngine];
    known
        .into_iter()
        .find(|e| e.name() == name && e.version() == version)
        .ok_or_else(|| format!("no engine {name}@{version}").into())
}

#[derive(Serialize)]
struct RunSummary {
    plan_id: Identifier,
    experiment_id: String,
    grid_points: usize,
    entries: usize,
    distinct_decisions: usize,
    failed: Vec<FailedSummary>,
}

#[derive(Serialize)]
struct FailedSummary {
    params: String,
    run_id: Identifier,
    error: String,
}

fn execute(store: &Store, plan: &SweepPlan, experiment: &str) -> Result<RunSummary> {
    let spec = plan.spec();
    let factory = factory_for(&spec.factory_name, &spec.factory_version)?;
    let engine = engine_for(&spec.engine_name, &spec.engine_version)?;
    sweep::plan_sweep(store, spec.clone())?;
    sweep::declare_representations(store, plan, factory)?;
    let outcome = sweep::execute_sweep(store, plan, engine, experiment)?;
    let mut decisions: Vec<_> = outcome.entries.iter().map(|e| e.decision_id).collect();
    decisions.sort();
    decisions.dedup();
    Ok(RunSummary {
        plan_id: plan.id(),
        experiment_id: experiment.to_string(),
        grid_points: plan.grid().len(),
        entries: outcome.entries.len(),
        distinct_decisions: decisions.len(),
        failed: outcome
            .failed
            .into_iter()
            .map(|f| FailedSummary {
                params: sweep::format_params(&f.params),
                run_id: f.run_id,
                error: f.error,
            })
            .collect(),
    })
}

fn print_summary(s: &RunSummary) {
    println!(
        "plan {} experiment {}: {}/{} points recorded, {} distinct decision(s)",
        s.plan_id, s.experiment_id, s.entries, s.grid_points, s.distinct_decisions
    );
    for f in &s.failed {
        println!("  failed [{}] {}: {}", f.params, f.run_id, f.error);
    }
}

fn sweep_run(store: &Store, plan_path: &Path, policy: Option<&Path>, experiment: &str, json: bool) -> Result<u8> {
    let bytes = fs::read(plan_path).map_err(|e| format!("reading {}: {e}", plan_path.display()))?;
    let plan = SweepPlan::from_json(&bytes)?;
    if let Some(path) = policy {
        let bytes = fs::read(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        let policy = EquivalencePolicy::from_json(&bytes)?;
        if policy.id() != plan.spec().policy_id {
            return Err(format!(
                "plan names policy {}, file defines {}",
                plan.spec().policy_id,
                policy.id()
            )
            .into());
        }
        policy.persist(store)?;
    }
    let summary = execute(store, &plan, experiment)?;
    if json {
        emit_json(&summary)?;
    } else {
        print_summary(&summary);
    }
    Ok(if summary.failed.is_empty() { 0 } else { 1 })
}

fn report(store: &Store, plan_ids: Vec<Identifier>, experiment: &str, json: bool) -> Result<u8> {
    let plan_ids = if plan_ids.is_empty() {
        store.experiment_plans(experiment)?
    } else {
        plan_ids
    };
    if plan_ids.is_empty() {
        return Err(format!("experiment {experiment} has no sweeps").into());
    }
    let report = output::build_report(store, &plan_ids, experiment)?;
    if json {
        emit_json(&report)?;
    } else {
        print!("{}", output::render_report(&report));
    }
    Ok(0)
}

fn map(store: &Store, args: MapArgs) -> Result<u8> {
    let filter = FMapFilter {
        plan_id: args
            .plan_id
            .as_deref()
            .map(|s| Identifier::parse_with(IdPrefix::Plan, s))
            .transpose()?,
        snapshot_id: args
            .snapshot_id
            .as_deref()
            .map(|s| Identifier::parse_with(IdPrefix::Snap, s))
            .transpose()?,
    };
    let rows = output::map_rows(store, &store.query_fmap(&args.experiment, &filter)?)?;
    if args.json {
        emit_json(&output::MapListing {
            experiment_id: args.experiment,
            entries: rows,
        })?;
    } else {
        print!("{}", output::render_map(&rows));
    }
    Ok(0)
}

fn replay_cmd(store: &Store, args: ReplayArgs) -> Result<u8> {
    let options = ReplayOptions { deep: args.deep };
    if let Some(id) = args.decision {
        let id = Identifier::parse_with(IdPrefix::Dec, &id)?;
        let report = match replay::replay_decision(store, ReplayTarget::Decision(id), options) {
            Ok(r) => r,
            Err(ReplayError::BrokenChain(msg)) => {
                eprintln!("replay failed: broken chain: {msg}");
                return Ok(MISMATCH);
            }
            Err(e) => return Err(e.into()),
        };
        if args.json {
            emit_json(&report)?;
        } else {
            print!("{}", output::render_replay(&report));
            println!(
                "{}",
                if report.overall_match {
                    "1/1 matched"
                } else {
                    "0/1 matched"
                }
            );
        }
        return Ok(if report.overall_match { 0 } else { MISMATCH });
    }
    let experiment = args.experiment.expect("clap requires a target");
    let batch = replay::replay_all(store, &experiment, options)?;
    if batch.total == 0 {
        return Err(format!("experiment {experiment} has no map entries").into());
    }
    if args.json {
        emit_json(&batch)?;
    } else {
        print!("{}", output::render_batch(&batch));
    }
    Ok(if batch.all_matched() { 0 } else { MISMATCH })
}

fn inspect(store: &Store, id: Option<&str>, json: bool) -> Result<u8> {
    let Some(id) = id else {
        return init(store, json);
    };
    let value: CanonicalValue = if let Ok(hash) = id.parse::<PayloadHash>() {
        let bytes = store.get_blob(&hash)?.ok_or_else(|| format!("no blob {hash}"))?;
        match canon::canonical_decode(&bytes) {
            Ok(v) => v,
            Err(_) => {
                println!("{} bytes, not canonical JSON", bytes.len());
                return Ok(0);
            }
        }
    } else {
        let ident: Identifier = id.parse()?;
        match ident.prefix() {
            IdPrefix::Pol | IdPrefix::Plan => {
                let bytes = store
                    .spec_blob(&ident)?
                    .ok_or_else(|| format!("no spec stored for {ident}"))?;
                canon::canonical_decode(&bytes)?
            }
            _ => store
                .get_record(&ident)?
                .ok_or_else(|| format!("no record {ident}"))?
                .to_canonical()?,
        }
    };
    if json {
        println!("{}", canon::canonical_string(&value));
    } else {
        println!("{}", output::pretty(&value));
    }
    Ok(0)
}

#[derive(Serialize)]
struct DemoInfo {
    seed: u64,
    snapshot_id: Identifier,
    nodes: usize,
    edges: usize,
    query: decisiondb_core::routing::RouteQuery,
    policy_id: Identifier,
    plan_ids: Vec<Identifier>,
}

fn demo_generate(store: &Store, seed: u64, json: bool) -> Result<u8> {
    let arena = demo_arena(seed)?;
    arena.freeze(store)?;
    for plan in &arena.plans {
        sweep::plan_sweep(store, plan.spec().clone())?;
    }
    let info = DemoInfo {
        seed,
        snapshot_id: arena.snapshot_id,
        nodes: arena.graph.nodes.len(),
        edges: arena.graph.edges.len(),
        query: arena.query,
        policy_id: arena.policy.id(),
        plan_ids: arena.plans.iter().map(SweepPlan::id).collect(),
    };
    if json {
        emit_json(&info)?;
    } else {
        println!("seed {}: {} nodes, {} edges", info.seed, info.nodes, info.edges);
        println!("snapshot {}", info.snapshot_id);
        println!("policy   {}", info.policy_id);
        for id in &info.plan_ids {
            println!("plan     {id}");
        }
        println!("query    {} -> {}", info.query.start, info.query.end);
    }
    Ok(0)
}

fn demo_sweep(store: &Store, seed: u64, experiment: &str, json: bool) -> Result<u8> {
    let arena = demo_arena(seed)?;
    arena.freeze(store)?;
    let summaries = arena
        .plans
        .iter()
        .map(|plan| execute(store, plan, experiment))
        .collect::<Result<Vec<_>>>()?;
    let failed = summaries.iter().any(|s| !s.failed.is_empty());
    let plan_ids: Vec<_> = arena.plans.iter().map(SweepPlan::id).collect();
    let report = output::build_report(store, &plan_ids, experiment)?;
    if json {
        emit_json(&report)?;
    } else {
        for s in &summaries {
            print_summary(s);
        }
        println!();
        print!("{}", output::render_report(&report));
    }
    Ok(if failed { 1 } else { 0 })
}
