//! Consumer-level checks: the crate's public API carries a class file
//! from source text to every back-end without internal access.

use smlcheck_core::kripke::{child_model, KripkeGraph, ModelOptions};
use smlcheck_core::loop_sat::{default_bound, find_loops_sat};
use smlcheck_core::mcrl2::{check_structure, export_class};
use smlcheck_core::reach::ReachGraph;
use smlcheck_core::semantics::{CompiledClass, Event, FsmInstance, StepOutcome, WhenResult};
use smlcheck_core::sml::{parse, validate, ClassDef};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

fn fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn monitor() -> ClassDef {
    parse(&fixture("rpc_monitor.sml")).expect("fixture parses")[0].clone()
}

#[test]
fn a_class_file_flows_through_every_backend() {
    let classes = parse(&fixture("chamber.sml")).expect("fixture parses");
    assert_eq!(classes.len(), 1);
    let class = &classes[0];

    let mut registry = BTreeMap::new();
    for name in ["rpc_hv.sml", "rpc_lv.sml", "rpc_t.sml"] {
        for sibling in parse(&fixture(name)).expect("sibling parses") {
            registry.insert(sibling.name.clone(), sibling);
        }
    }
    let known: BTreeSet<String> = registry.keys().cloned().collect();
    assert!(validate(class, &known, "chamber.sml").is_empty());

    let options = ModelOptions::default();
    let model = child_model(class, &registry, &options).expect("model builds");
    let graph = KripkeGraph::build(class, model.clone()).expect("graph builds");
    assert!(!graph.has_loop());

    let search = find_loops_sat(class, &model, default_bound(class), 8);
    assert!(!search.has_loop());
    assert!(search.exhausted);

    let reach = ReachGraph::build(class, model).expect("reach graph builds");
    assert!(!reach.states().is_empty());

    assert!(check_structure(&export_class(class)).is_empty());
}

#[test]
fn a_command_travels_down_and_the_report_travels_up() {
    let class = Arc::new(CompiledClass::new(monitor()));
    let children = vec![
        smlcheck_core::semantics::Child::new(2, "FwCHILDREN", "OFF"),
        smlcheck_core::semantics::Child::new(3, "FwCHILDREN", "OFF"),
    ];
    let mut events = Vec::new();
    let mut fsm = FsmInstance::new(class, 1, 0, children);

    // Settle first: OFF has no satisfied when clause with both children OFF.
    assert_eq!(fsm.run_when_phase(&mut events), WhenResult::Settled);
    assert!(fsm.awaiting_command());

    fsm.receive_command("ON", &mut events);
    loop {
        match fsm.exec_step(&mut events) {
            StepOutcome::Continue => {}
            StepOutcome::NeedsFlush => fsm.flush_all(&mut events),
            StepOutcome::ActionEnded => break,
            other => panic!("unexpected outcome {other:?}"),
        }
    }
    let delivered: Vec<(u64, &str)> = events
        .iter()
        .filter_map(|e| match e {
            Event::CommCommand { child, command, .. } => Some((*child, command.as_str())),
            _ => None,
        })
        .collect();
    assert_eq!(delivered, [(2, "ON"), (3, "ON")]);

    // Children oblige, one report per settling cycle: an update lands at
    // the selection point and drops the parent back into its when phase.
    assert_eq!(fsm.run_when_phase(&mut events), WhenResult::Settled);
    fsm.receive_state_update(2, "ON", &mut events);
    assert_eq!(fsm.run_when_phase(&mut events), WhenResult::Settled);
    assert_eq!(fsm.state, "OFF", "one child on is not enough");
    fsm.receive_state_update(3, "ON", &mut events);
    events.clear();
    assert_eq!(fsm.run_when_phase(&mut events), WhenResult::Settled);
    assert_eq!(fsm.state, "ON");
    assert!(events.iter().any(|e| matches!(
        e,
        Event::SendState { id: 1, parent: 0, state } if state == "ON"
    )));
}
