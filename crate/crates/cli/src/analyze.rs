//! The per-class analyses: `check`, `loops` and `reach`.

use crate::inputs::SmlInput;
use crate::report::{Finding, UnitResult};
use serde_json::json;
use smlcheck_core::kripke::{child_model, ChildModel, ModelOptions};
use smlcheck_core::loop_sat::{default_bound, encode, find_loops_sat};
use smlcheck_core::reach::{ReachGraph, UNDER_APPROXIMATION_NOTE};
use smlcheck_core::semantics::Child;
use smlcheck_core::sml::{validate, ClassDef};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

/// Printed whenever a class has when clauses that run actions: those
/// clauses never move the machine, so the cycle search treats them as dead
/// ends and cannot see loops that pass through action behavior.
pub const DO_REFERER_NOTE: &str = "when clauses with do referers are treated as dead ends; \
cycles through action behavior are out of scope for this search";

/// Runs `f` once per input file on its own thread; results come back in
/// input order regardless of completion order.
pub fn per_file_units<F>(inputs: &[SmlInput], f: F) -> Vec<UnitResult>
where
    F: Fn(&SmlInput) -> Vec<UnitResult> + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = inputs.iter().map(|input| scope.spawn(|| f(input))).collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("analysis thread panicked"))
            .collect()
    })
}

/// The parse-failure unit shared by every per-class subcommand.
pub fn parse_error_unit(input: &SmlInput) -> Option<UnitResult> {
    let err = input.classes.as_ref().err()?;
    let mut unit = UnitResult::new(&input.display, None);
    unit.findings.push(
        Finding::new("parse-error", format!("{}: {}", err.pos, err.message))
            .with_data(json!({ "line": err.pos.line, "col": err.pos.col })),
    );
    Some(unit)
}

pub fn check_units(input: &SmlInput, known: &BTreeSet<String>) -> Vec<UnitResult> {
    if let Some(unit) = parse_error_unit(input) {
        return vec![unit];
    }
    let classes = input.classes.as_ref().expect("parse checked above");
    let mut units = Vec::new();
    for class in classes {
        let t0 = Instant::now();
        let mut unit = UnitResult::new(&input.display, Some(class.name.clone()));
        for diag in validate(class, known, &input.display) {
            unit.findings.push(
                Finding::new("validation", diag.to_string()).with_data(&diag),
            );
        }
        unit.timing_ms = t0.elapsed().as_millis() as u64;
        units.push(unit);
    }
    units
}

/// Model options from the shared `--multiplicity` / `--child-states` flags.
pub fn model_options(
    default_count: usize,
    counts: &BTreeMap<String, usize>,
    overrides: &BTreeMap<String, Vec<String>>,
) -> ModelOptions {
    ModelOptions {
        default_count,
        counts: counts.clone(),
        state_overrides: overrides.clone(),
    }
}

fn config_label(config: &[Child]) -> String {
    config
        .iter()
        .map(|c| format!("{}#{}={}", c.ptype, c.id, c.state))
        .collect::<Vec<_>>()
        .join(", ")
}

fn cycle_label(states: &[String]) -> String {
    format!("{} -> {}", states.join(" -> "), states[0])
}

pub struct LoopsParams {
    pub options: ModelOptions,
    pub bound: Option<usize>,
    pub max_witnesses: usize,
}

pub fn loops_units(
    input: &SmlInput,
    registry: &BTreeMap<String, ClassDef>,
    params: &LoopsParams,
) -> Vec<UnitResult> {
    if let Some(unit) = parse_error_unit(input) {
        return vec![unit];
    }
    let classes = input.classes.as_ref().expect("parse checked above");
    let mut units = Vec::new();
    for class in classes {
        let t0 = Instant::now();
        let mut unit = UnitResult::new(&input.display, Some(class.name.clone()));
        match child_model(class, registry, &params.options) {
            Err(e) => unit.findings.push(Finding::new("model-error", e.to_string())),
            Ok(model) => {
                let k = params.bound.unwrap_or_else(|| default_bound(class));
                let search = find_loops_sat(class, &model, k, params.max_witnesses);
                for witness in &search.witnesses {
                    unit.findings.push(
                        Finding::new(
                            "loop",
                            format!(
                                "when-phase cycle {} sustained by {}",
                                cycle_label(&witness.states),
                                config_label(&witness.config)
                            ),
                        )
                        .with_data(json!({
                            "states": witness.states,
                            "config": witness.config,
                            "self_loop": witness.is_self_loop(),
                        })),
                    );
                }
                if search.uses_do_referers {
                    unit.notes.push(DO_REFERER_NOTE.to_string());
                }
                if !search.exhausted {
                    unit.notes.push(format!(
                        "stopped at the witness cap ({}); more sustaining configurations exist",
                        search.witnesses.len()
                    ));
                }
                unit.summary = Some(json!({
                    "bound": k,
                    "vars": search.vars,
                    "clauses": search.clauses,
                    "configurations": model.n_configs(),
                }));
            }
        }
        unit.timing_ms = t0.elapsed().as_millis() as u64;
        units.push(unit);
    }
    units
}

/// Writes the loop CNF for one class in DIMACS form. The caller has
/// already checked there is exactly one class.
pub fn write_dimacs(
    class: &ClassDef,
    model: &ChildModel,
    bound: Option<usize>,
    path: &std::path::Path,
) -> anyhow::Result<(u32, usize)> {
    let k = bound.unwrap_or_else(|| default_bound(class));
    let enc = encode(class, model, k);
    let mut file = std::fs::File::create(path)?;
    enc.cnf.write_dimacs(&mut file)?;
    Ok((enc.cnf.n_vars(), enc.cnf.clauses.len()))
}

pub fn reach_units(
    input: &SmlInput,
    registry: &BTreeMap<String, ClassDef>,
    options: &ModelOptions,
) -> Vec<UnitResult> {
    if let Some(unit) = parse_error_unit(input) {
        return vec![unit];
    }
    let classes = input.classes.as_ref().expect("parse checked above");
    let mut units = Vec::new();
    for class in classes {
        let t0 = Instant::now();
        let mut unit = UnitResult::new(&input.display, Some(class.name.clone()));
        match child_model(class, registry, options) {
            Err(e) => unit.findings.push(Finding::new("model-error", e.to_string())),
            Ok(model) => match ReachGraph::build(class, model) {
                Err(e) => unit.findings.push(Finding::new("model-error", e.to_string())),
                Ok(graph) => {
                    for finding in graph.findings() {
                        unit.findings
                            .push(Finding::new("scc", finding.to_string()).with_data(&finding));
                    }
                    unit.summary = Some(json!({
                        "states": graph.states().len(),
                        "edges": graph.n_edges(),
                        "components": graph.components().len(),
                    }));
                }
            },
        }
        unit.notes.push(UNDER_APPROXIMATION_NOTE.to_string());
        unit.timing_ms = t0.elapsed().as_millis() as u64;
        units.push(unit);
    }
    units
}
