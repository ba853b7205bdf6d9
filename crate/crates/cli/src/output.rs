use std::collections::BTreeMap;
use std::fmt::Write as _;

use decisiondb_core::canon::{self, CanonicalValue, Decimal, Identifier};
use decisiondb_core::replay::{ReplayBatch, ReplayReport};
use decisiondb_core::store::{FMapEntry, Params};
use decisiondb_core::sweep::{self, AxisStructureReport, SweepPlan};
use decisiondb_core::{EquivalencePolicy, Store, TableCounts};
use serde::Serialize;

use crate::commands::Result;

/// Prints `value` as one line of canonical JSON.
pub fn emit_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", canon::canonical_string(&canon::to_canonical(value)?));
    Ok(())
}

pub fn pretty(value: &CanonicalValue) -> String {
    let v: serde_json::Value = serde_json::from_str(&canon::canonical_string(value)).expect("canonical JSON parses");
    serde_json::to_string_pretty(&v).expect("value serializes")
}

pub fn counts_line(c: &TableCounts) -> String {
    format!(
        "snapshots={} representations={} engine_runs={} decisions={} f_map={}",
        c.snapshots, c.representations, c.engine_runs, c.decisions, c.f_map
    )
}

fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
    };
    line(&mut headers.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut rule.iter().map(String::as_str));
    for row in rows {
        line(&mut row.iter().map(String::as_str));
    }
    out
}

fn label(i: usize) -> String {
    let mut n = i;
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

#[derive(Serialize)]
pub struct ReportRow {
    pub parameter: String,
    pub value: Decimal,
    pub label: String,
    pub decision_id: Identifier,
    pub run_id: Identifier,
    /// Length of the decision payload when it is a sequence.
    pub nodes: Option<usize>,
    /// Whether the decision differs from the previous row; absent on the
    /// first row of a slice.
    pub boundary: Option<bool>,
}

#[derive(Serialize)]
pub struct SliceReport {
    pub fixed: Params,
    pub structure: AxisStructureReport,
    pub rows: Vec<ReportRow>,
}

#[derive(Serialize)]
pub struct PlanReport {
    pub plan_id: Identifier,
    pub policy_id: Identifier,
    pub slices: Vec<SliceReport>,
}

#[derive(Serialize)]
pub struct Report {
    pub experiment_id: String,
    pub plans: Vec<PlanReport>,
    pub labels: BTreeMap<String, Identifier>,
    pub version: String,
}

fn payload_len(store: &Store, policy: &EquivalencePolicy, run_id: &Identifier) -> Result<Option<usize>> {
    let run = store
        .get_run(run_id)?
        .ok_or_else(|| format!("run {run_id} is missing"))?;
    let raw = canon::canonical_decode(&store.require_blob(&run.raw_output_ref)?)?;
    Ok(policy.extract_payload(&raw)?.as_seq().map(<[_]>::len))
}

pub fn build_report(store: &Store, plan_ids: &[Identifier], experiment: &str) -> Result<Report> {
    let mut labels: Vec<Identifier> = Vec::new();
    let mut plans = Vec::new();
    for plan_id in plan_ids {
        let plan = SweepPlan::load(store, plan_id)?;
        let policy = EquivalencePolicy::load(store, &plan.spec().policy_id)?;
        let map = sweep::materialize_map(store, plan_id, experiment)?;
        let mut slices = Vec::new();
        for axis in &plan.spec().axes {
            for (fixed, slice) in sweep::slices(&map, &axis.param) {
                let structure = sweep::classify_axis(&slice, &axis.param)?;
                let mut rows = Vec::new();
                let mut prev: Option<Identifier> = None;
                for (params, cell) in &slice.entries {
                    let i = labels.iter().position(|d| *d == cell.decision_id).unwrap_or_else(|| {
                        labels.push(cell.decision_id);
                        labels.len() - 1
                    });
                    rows.push(ReportRow {
                        parameter: axis.param.clone(),
                        value: params[&axis.param],
                        label: label(i),
                        decision_id: cell.decision_id,
                        run_id: cell.run_id,
                        nodes: payload_len(store, &policy, &cell.run_id)?,
                        boundary: prev.map(|p| p != cell.decision_id),
                    });
                    prev = Some(cell.decision_id);
                }
                slices.push(SliceReport { fixed, structure, rows });
            }
        }
        plans.push(PlanReport {
            plan_id: *plan_id,
            policy_id: policy.id(),
            slices,
        });
    }
    Ok(Report {
        experiment_id: experiment.to_string(),
        plans,
        labels: labels.into_iter().enumerate().map(|(i, d)| (label(i), d)).collect(),
        version: "1".into(),
    })
}

pub fn render_report(report: &Report) -> String {
    let slices = || report.plans.iter().flat_map(|p| p.slices.iter().map(move |s| (p, s)));
    let rows: Vec<Vec<String>> = slices()
        .flat_map(|(_, s)| &s.rows)
        .map(|r| {
            vec![
                r.parameter.clone(),
                r.value.to_string(),
                r.label.clone(),
                r.nodes.map_or("-".into(), |n| n.to_string()),
                match r.boundary {
                    None => String::new(),
                    Some(false) => "No".into(),
                    Some(true) => "Yes".into(),
                },
            ]
        })
        .collect();
    let mut out = table(&["sweep parameter", "value", "decision", "nodes", "boundary"], &rows);
    out.push('\n');
    for (plan, slice) in slices() {
        let s = &slice.structure;
        let _ = write!(out, "{} along {}", plan.plan_id, s.axis);
        if !slice.fixed.is_empty() {
            let _ = write!(out, " [{}]", sweep::format_params(&slice.fixed));
        }
        let _ = write!(out, ": {} region(s)", s.segments.len());
        for b in &s.boundaries {
            let _ = write!(out, ", boundary in ({}, {})", b.between[0], b.between[1]);
        }
        out.push('\n');
    }
    out.push('\n');
    for (l, d) in &report.labels {
        let _ = writeln!(out, "{l} = {d}");
    }
    out
}

#[derive(Serialize)]
pub struct MapRow {
    pub plan_id: Identifier,
    pub params: Params,
    pub repr_id: Identifier,
    pub run_id: Identifier,
    pub decision_id: Identifier,
}

#[derive(Serialize)]
pub struct MapListing {
    pub experiment_id: String,
    pub entries: Vec<MapRow>,
}

pub fn map_rows(store: &Store, entries: &[FMapEntry]) -> Result<Vec<MapRow>> {
    entries
        .iter()
        .map(|e| {
            let repr = store
                .get_representation(&e.repr_id)?
                .ok_or_else(|| format!("representation {} is missing", e.repr_id))?;
            Ok(MapRow {
                plan_id: e.plan_id,
                params: repr.params,
                repr_id: e.repr_id,
                run_id: e.run_id,
                decision_id: e.decision_id,
            })
        })
        .collect()
}

pub fn render_map(rows: &[MapRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.plan_id.to_string(),
                sweep::format_params(&r.params),
                r.run_id.to_string(),
                r.decision_id.to_string(),
            ]
        })
        .collect();
    let mut out = table(&["plan", "parameters", "run", "decision"], &cells);
    let _ = writeln!(out, "{} entr{}", rows.len(), if rows.len() == 1 { "y" } else { "ies" });
    out
}

pub fn render_replay(report: &ReplayReport) -> String {
    let mut out = format!(
        "decision {} (experiment {}, run {})\n",
        report.decision_id, report.experiment_id, report.run_id
    );
    let rows: Vec<Vec<String>> = report
        .fields
        .iter()
        .chain(&report.deep)
        .map(|f| {
            vec![
                field_label(&f.name),
                f.persisted.clone(),
                f.recomputed.clone().unwrap_or_else(|| "-".into()),
                if f.matched { "yes" } else { "NO" }.into(),
                f.note.clone().unwrap_or_default(),
            ]
        })
        .collect();
    out.push_str(&table(&["field", "persisted", "recomputed", "match", "note"], &rows));
    out
}

fn field_label(name: &str) -> String {
    match name {
        "policy_id" => "Policy ID".into(),
        "payload_hash" => "Payload hash".into(),
        "decision_id" => "Decision ID".into(),
        other => other.to_string(),
    }
}

pub fn render_batch(batch: &ReplayBatch) -> String {
    let mut out = String::new();
    for item in &batch.items {
        match (&item.report, &item.error) {
            (Some(r), _) => out.push_str(&render_replay(r)),
            (None, Some(e)) => {
                let _ = writeln!(out, "decision {} (run {}): {e}", item.decision_id, item.run_id);
            }
            (None, None) => {}
        }
        out.push('\n');
    }
    let _ = writeln!(out, "{}/{} matched", batch.matched, batch.total);
    let _ = writeln!(
        out,
        "store {}: {}",
        if batch.counts_before == batch.counts_after {
            "unchanged"
        } else {
            "CHANGED"
        },
        counts_line(&batch.counts_after)
    );
    out
}
