//! Explicit livelock graph of one class over frozen child configurations.
//!
//! While a state machine runs its when phase the child states it reads do
//! not change (updates only arrive in the action phase), so every when-phase
//! run happens against one frozen configuration. The graph built here has a
//! node per (class state, configuration) pair and an edge to the state the
//! topmost enabled `move_to` clause selects, under the same configuration.
//! Every node has at most one successor, so the graph is a function graph
//! and a when phase livelocks exactly when its node can reach a cycle.
//!
//! `do` referers do not move the machine, so their nodes are terminal here;
//! the graph remembers that it saw one because a looping action could still
//! keep the machine busy in ways this abstraction does not cover.

use crate::semantics::{when_outcome, Child, WhenOutcome};
use crate::sml::ast::ClassDef;
use crate::sml::{alphabet, when_guard_states};
use std::collections::BTreeMap;
use thiserror::Error;

/// Hard cap on graph size; larger models must go through the bounded SAT
/// search instead.
pub const NODE_LIMIT: u64 = 10_000_000;

/// Pseudo class name given to synthesized children when a class only ever
/// quantifies over `FwCHILDREN`.
pub const ANON_CHILD_CLASS: &str = "FwCHILDREN";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("class '{class}' references child class '{child}' but no definition or state override is available")]
    UnknownChildClass { class: String, child: String },
    #[error("child class '{child}' has an empty state alphabet")]
    EmptyAlphabet { child: String },
    #[error("model for class '{class}' needs {nodes} nodes, over the limit of {limit}")]
    TooLarge { class: String, nodes: u64, limit: u64 },
}

/// One modelled child class: its observable states and how many children of
/// it the configuration holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChildClassSpec {
    pub name: String,
    /// Sorted and deduplicated; never empty.
    pub states: Vec<String>,
    pub count: usize,
}

/// The set of child configurations a class is analyzed against: an ordered
/// product of child slots. Two children of the same class are distinct
/// slots, so configurations are ordered tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChildModel {
    pub specs: Vec<ChildClassSpec>,
}

/// Knobs for [`child_model`]. State overrides replace the alphabet a child
/// class would contribute; counts give per-class multiplicities.
#[derive(Debug, Clone)]
pub struct ModelOptions {
    pub default_count: usize,
    pub counts: BTreeMap<String, usize>,
    pub state_overrides: BTreeMap<String, Vec<String>>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            default_count: 1,
            counts: BTreeMap::new(),
            state_overrides: BTreeMap::new(),
        }
    }
}

/// Derives the child model of `class`. Each referenced child class takes
/// its state alphabet from `registry` unless overridden. A class whose
/// guards only use `FwCHILDREN` gets one synthesized child class (named
/// [`ANON_CHILD_CLASS`]) whose states are the ones the when guards mention.
pub fn child_model(
    class: &ClassDef,
    registry: &BTreeMap<String, ClassDef>,
    opts: &ModelOptions,
) -> Result<ChildModel, ModelError> {
    let count_for = |name: &str| *opts.counts.get(name).unwrap_or(&opts.default_count);
    let mut specs = Vec::new();
    let names = alphabet(class).child_classes;
    if names.is_empty() {
        let states: Vec<String> = when_guard_states(class).into_iter().collect();
        if !states.is_empty() {
            specs.push(ChildClassSpec {
                name: ANON_CHILD_CLASS.to_string(),
                states,
                count: count_for(ANON_CHILD_CLASS),
            });
        }
        return Ok(ChildModel { specs });
    }
    for name in names {
        let states: Vec<String> = if let Some(over) = opts.state_overrides.get(&name) {
            let mut s = over.clone();
            s.sort();
            s.dedup();
            s
        } else if let Some(def) = registry.get(&name) {
            alphabet(def).states.into_iter().collect()
        } else {
            return Err(ModelError::UnknownChildClass {
                class: class.name.clone(),
                child: name,
            });
        };
        if states.is_empty() {
            return Err(ModelError::EmptyAlphabet { child: name });
        }
        specs.push(ChildClassSpec {
            name: name.clone(),
            states,
            count: count_for(&name),
        });
    }
    Ok(ChildModel { specs })
}

impl ChildModel {
    /// Number of configurations: the product over slots of each slot's
    /// state count. `None` on overflow.
    pub fn n_configs(&self) -> Option<u64> {
        let mut n: u64 = 1;
        for spec in &self.specs {
            for _ in 0..spec.count {
                n = n.checked_mul(spec.states.len() as u64)?;
            }
        }
        Some(n)
    }

    pub fn total_children(&self) -> usize {
        self.specs.iter().map(|s| s.count).sum()
    }

    /// Children in slot order with ids 1.., each in its class's first state.
    pub fn children_template(&self) -> Vec<Child> {
        let mut out = Vec::with_capacity(self.total_children());
        for spec in &self.specs {
            for _ in 0..spec.count {
                out.push(Child::new(out.len() as u64 + 1, &spec.name, &spec.states[0]));
            }
        }
        out
    }

    /// Writes configuration `idx` into `children` (slot-major mixed radix,
    /// first slot least significant).
    pub fn decode(&self, mut idx: u64, children: &mut [Child]) {
        let mut slot = 0;
        for spec in &self.specs {
            let radix = spec.states.len() as u64;
            for _ in 0..spec.count {
                let digit = (idx % radix) as usize;
                idx /= radix;
                children[slot].state = spec.states[digit].clone();
                slot += 1;
            }
        }
        debug_assert_eq!(idx, 0, "config index out of range");
    }
}

/// A when-phase cycle: the states it runs through and the frozen child
/// configuration that sustains it. `states` is rotated so the smallest
/// state name comes first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopWitness {
    pub states: Vec<String>,
    pub config: Vec<Child>,
}

impl LoopWitness {
    /// Builds a witness with the cycle rotated to its canonical form.
    pub fn new(mut states: Vec<String>, config: Vec<Child>) -> Self {
        let smallest = states
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.cmp(b))
            .map(|(i, _)| i)
            .expect("a cycle has at least one state");
        states.rotate_left(smallest);
        LoopWitness { states, config }
    }

    pub fn is_self_loop(&self) -> bool {
        self.states.len() == 1
    }
}

/// The full state universe of a class: declared states in source order,
/// then states that only appear as `move_to` targets, sorted.
pub fn state_universe(class: &ClassDef) -> Vec<String> {
    let mut states: Vec<String> = class.declared_states().iter().map(|s| s.to_string()).collect();
    let mut extra: Vec<String> = alphabet(class)
        .states
        .into_iter()
        .filter(|s| !states.iter().any(|d| d == s))
        .collect();
    extra.sort();
    states.extend(extra);
    states
}

/// Configuration with same-class children in a fixed order, for comparing
/// configurations that differ only by a permutation of equal children.
pub fn canonical_config(children: &[Child]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = children
        .iter()
        .map(|c| (c.ptype.clone(), c.state.clone()))
        .collect();
    out.sort();
    out
}

const NO_SUCC: u32 = u32::MAX;

#[derive(Debug)]
pub struct KripkeGraph {
    /// Declared states in source order, then bare `move_to` targets, sorted.
    states: Vec<String>,
    model: ChildModel,
    n_configs: u64,
    /// Successor node per node, `NO_SUCC` for settled/do-referer terminals.
    succ: Vec<u32>,
    uses_do_referers: bool,
}

impl KripkeGraph {
    pub fn build(class: &ClassDef, model: ChildModel) -> Result<Self, ModelError> {
        let states = state_universe(class);
        let n_configs = model.n_configs().unwrap_or(u64::MAX);
        let nodes = (states.len() as u64).checked_mul(n_configs).unwrap_or(u64::MAX);
        if nodes > NODE_LIMIT {
            return Err(ModelError::TooLarge {
                class: class.name.clone(),
                nodes,
                limit: NODE_LIMIT,
            });
        }

        let state_index: BTreeMap<&str, u32> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        let mut succ = vec![NO_SUCC; nodes as usize];
        let mut uses_do_referers = false;
        let mut children = model.children_template();
        for config in 0..n_configs {
            model.decode(config, &mut children);
            for (si, state) in states.iter().enumerate() {
                match when_outcome(class, state, &children) {
                    WhenOutcome::Settle => {}
                    WhenOutcome::RunAction { .. } => uses_do_referers = true,
                    WhenOutcome::Move { target, .. } => {
                        let ti = state_index[target];
                        succ[si * n_configs as usize + config as usize] =
                            ti * n_configs as u32 + config as u32;
                    }
                }
            }
        }
        Ok(KripkeGraph {
            states,
            model,
            n_configs,
            succ,
            uses_do_referers,
        })
    }

    pub fn n_nodes(&self) -> u64 {
        self.succ.len() as u64
    }

    pub fn n_configs(&self) -> u64 {
        self.n_configs
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn model(&self) -> &ChildModel {
        &self.model
    }

    pub fn uses_do_referers(&self) -> bool {
        self.uses_do_referers
    }

    pub fn node(&self, state_idx: usize, config: u64) -> u64 {
        state_idx as u64 * self.n_configs + config
    }

    pub fn successor(&self, node: u64) -> Option<u64> {
        let s = self.succ[node as usize];
        (s != NO_SUCC).then_some(s as u64)
    }

    pub fn config_children(&self, config: u64) -> Vec<Child> {
        let mut children = self.model.children_template();
        self.model.decode(config, &mut children);
        children
    }

    /// Follows successors from `node`; true when the walk enters a cycle.
    pub fn reaches_cycle(&self, node: u64) -> bool {
        let mut seen = Vec::new();
        let mut cur = node;
        loop {
            if seen.contains(&cur) {
                return true;
            }
            seen.push(cur);
            match self.successor(cur) {
                Some(next) => cur = next,
                None => return false,
            }
        }
    }

    /// All cycles of the graph, each reported once, in node order. Since
    /// out-degree is at most one, cycles are disjoint and the walk from each
    /// unvisited node finds at most one new cycle.
    pub fn find_loops(&self) -> Vec<LoopWitness> {
        const FRESH: u8 = 0;
        const ON_PATH: u8 = 1;
        const DONE: u8 = 2;
        let mut color = vec![FRESH; self.succ.len()];
        let mut loops = Vec::new();
        for start in 0..self.succ.len() as u64 {
            if color[start as usize] != FRESH {
                continue;
            }
            let mut path = Vec::new();
            let mut cur = start;
            loop {
                match color[cur as usize] {
                    ON_PATH => {
                        let pos = path.iter().position(|&n| n == cur).unwrap();
                        loops.push(self.witness(&path[pos..]));
                        break;
                    }
                    DONE => break,
                    _ => {
                        color[cur as usize] = ON_PATH;
                        path.push(cur);
                        match self.successor(cur) {
                            Some(next) => cur = next,
                            None => break,
                        }
                    }
                }
            }
            for n in path {
                color[n as usize] = DONE;
            }
        }
        loops
    }

    /// True when some when phase can cycle at all.
    pub fn has_loop(&self) -> bool {
        !self.find_loops().is_empty()
    }

    fn witness(&self, cycle: &[u64]) -> LoopWitness {
        debug_assert!(cycle
            .windows(2)
            .all(|w| w[0] % self.n_configs == w[1] % self.n_configs));
        let states: Vec<String> = cycle
            .iter()
            .map(|n| self.states[(n / self.n_configs) as usize].clone())
            .collect();
        LoopWitness::new(states, self.config_children(cycle[0] % self.n_configs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{CompiledClass, FsmInstance, WhenResult};
    use crate::testutil::fixture_class;
    use std::sync::Arc;

    fn registry(files: &[&str]) -> BTreeMap<String, ClassDef> {
        files
            .iter()
            .map(|f| {
                let class = fixture_class(f);
                (class.name.clone(), class)
            })
            .collect()
    }

    fn ecal_graph(count: usize) -> KripkeGraph {
        let class = fixture_class("ecal_cooling_dee.sml");
        let opts = ModelOptions {
            counts: [(ANON_CHILD_CLASS.to_string(), count)].into(),
            ..ModelOptions::default()
        };
        let model = child_model(&class, &BTreeMap::new(), &opts).unwrap();
        KripkeGraph::build(&class, model).unwrap()
    }

    #[test]
    fn anonymous_children_get_guard_alphabet() {
        let graph = ecal_graph(2);
        assert_eq!(
            graph.model().specs,
            vec![ChildClassSpec {
                name: ANON_CHILD_CLASS.to_string(),
                states: vec![
                    "ERROR".to_string(),
                    "NO_CONNECTION".to_string(),
                    "OK".to_string()
                ],
                count: 2,
            }]
        );
        // 3 class states (ERROR, NO_CONNECTION and the bare target OK)
        // times 3^2 configurations.
        assert_eq!(graph.n_nodes(), 27);
        assert_eq!(graph.states(), &["ERROR", "NO_CONNECTION", "OK"]);
    }

    #[test]
    fn ecal_cycles_need_one_error_and_one_no_connection() {
        let graph = ecal_graph(2);
        let loops = graph.find_loops();
        assert_eq!(loops.len(), 2);
        for witness in &loops {
            assert_eq!(witness.states, vec!["ERROR", "NO_CONNECTION"]);
            assert!(!witness.is_self_loop());
            assert_eq!(
                canonical_config(&witness.config),
                vec![
                    (ANON_CHILD_CLASS.to_string(), "ERROR".to_string()),
                    (ANON_CHILD_CLASS.to_string(), "NO_CONNECTION".to_string()),
                ]
            );
        }
        // The two witnesses differ only in which slot holds which state.
        assert_ne!(loops[0].config, loops[1].config);
        assert!(graph.has_loop());
    }

    #[test]
    fn chamber_sized_from_sibling_alphabets() {
        let class = fixture_class("chamber.sml");
        let reg = registry(&["rpc_hv.sml", "rpc_lv.sml", "rpc_t.sml"]);
        let opts = ModelOptions {
            counts: [("RPC_HV".to_string(), 2)].into(),
            ..ModelOptions::default()
        };
        let model = child_model(&class, &reg, &opts).unwrap();
        let hv = model.specs.iter().find(|s| s.name == "RPC_HV").unwrap();
        assert_eq!(hv.states.len(), 5);
        assert_eq!(hv.count, 2);
        // 5 class states, 5^2 HV times 3 LV times 2 T configurations.
        let graph = KripkeGraph::build(&class, model).unwrap();
        assert_eq!(graph.n_nodes(), 5 * 25 * 3 * 2);
    }

    #[test]
    fn chamber_when_clauses_never_cycle() {
        let class = fixture_class("chamber.sml");
        let reg = registry(&["rpc_hv.sml", "rpc_lv.sml", "rpc_t.sml"]);
        let model = child_model(&class, &reg, &ModelOptions::default()).unwrap();
        let graph = KripkeGraph::build(&class, model).unwrap();
        assert_eq!(graph.n_nodes(), 150);
        assert_eq!(graph.find_loops(), vec![]);
        assert!(!graph.uses_do_referers());
    }

    #[test]
    fn unknown_child_class_is_an_error() {
        let class = fixture_class("chamber.sml");
        let err = child_model(&class, &BTreeMap::new(), &ModelOptions::default()).unwrap_err();
        let ModelError::UnknownChildClass { child, .. } = err else {
            panic!("unexpected error: {err}");
        };
        assert_eq!(child, "RPC_HV");
    }

    #[test]
    fn state_override_replaces_registry_alphabet() {
        let class = fixture_class("chamber.sml");
        let reg = registry(&["rpc_lv.sml", "rpc_t.sml"]);
        let opts = ModelOptions {
            state_overrides: [(
                "RPC_HV".to_string(),
                vec!["OFF".to_string(), "ON".to_string()],
            )]
            .into(),
            ..ModelOptions::default()
        };
        let model = child_model(&class, &reg, &opts).unwrap();
        let hv = model.specs.iter().find(|s| s.name == "RPC_HV").unwrap();
        assert_eq!(hv.states, vec!["OFF", "ON"]);
    }

    #[test]
    fn node_limit_is_enforced() {
        let class = fixture_class("chamber.sml");
        let reg = registry(&["rpc_hv.sml", "rpc_lv.sml", "rpc_t.sml"]);
        let opts = ModelOptions {
            counts: [("RPC_HV".to_string(), 12)].into(),
            ..ModelOptions::default()
        };
        let model = child_model(&class, &reg, &opts).unwrap();
        let err = KripkeGraph::build(&class, model).unwrap_err();
        assert!(matches!(err, ModelError::TooLarge { .. }), "{err}");
    }

    #[test]
    fn self_loop_is_a_one_state_cycle() {
        let source = "\
class: Blinker
    state: S
        when ( $ANY$P in_state X ) move_to S
";
        let class = crate::sml::parse(source).unwrap().remove(0);
        let opts = ModelOptions {
            state_overrides: [("P".to_string(), vec!["X".to_string(), "Y".to_string()])].into(),
            ..ModelOptions::default()
        };
        let model = child_model(&class, &BTreeMap::new(), &opts).unwrap();
        let graph = KripkeGraph::build(&class, model).unwrap();
        let loops = graph.find_loops();
        assert_eq!(loops.len(), 1);
        assert!(loops[0].is_self_loop());
        assert_eq!(loops[0].states, vec!["S"]);
        assert_eq!(loops[0].config[0].state, "X");
    }

    /// Every node's livelock verdict must match what the executable when
    /// phase reports when started from that state under that configuration.
    #[test]
    fn cycle_reachability_matches_executable_when_phase() {
        for (file, count) in [("ecal_cooling_dee.sml", 2), ("chamber.sml", 1)] {
            let class = fixture_class(file);
            let reg = registry(&["rpc_hv.sml", "rpc_lv.sml", "rpc_t.sml"]);
            let opts = ModelOptions {
                counts: [(ANON_CHILD_CLASS.to_string(), count)].into(),
                ..ModelOptions::default()
            };
            let model = child_model(&class, &reg, &opts).unwrap();
            let graph = KripkeGraph::build(&class, model).unwrap();
            let compiled = Arc::new(CompiledClass::new(class));
            for config in 0..graph.n_configs() {
                let children = graph.config_children(config);
                for (si, state) in graph.states().iter().enumerate() {
                    let mut fsm = FsmInstance::new(Arc::clone(&compiled), 1, 0, children.clone());
                    fsm.state = state.clone();
                    let mut events = Vec::new();
                    let livelocked =
                        matches!(fsm.run_when_phase(&mut events), WhenResult::Livelock { .. });
                    assert_eq!(
                        livelocked,
                        graph.reaches_cycle(graph.node(si, config)),
                        "{file}: state {state} config {config}"
                    );
                }
            }
        }
    }
}
