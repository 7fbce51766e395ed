//! State-change graph of one class: which `move_to` transitions some child
//! configuration can actually trigger.
//!
//! An edge s -> s' means at least one configuration of the child model
//! makes a clause targeting s' the topmost enabled clause of s. Two routes
//! compute the edge set. [`ReachGraph::build`] enumerates every child
//! configuration and asks the executable when phase; [`sat_edges`] encodes
//! a single transition as CNF and solves one instance per state pair. They
//! must agree, and keeping both is the point: each checks the other.
//!
//! Edges are existential over the supplied child model only, hence the
//! [`UNDER_APPROXIMATION_NOTE`] every report carries.

use crate::kripke::{state_universe, ChildModel, ModelError, NODE_LIMIT};
use crate::loop_sat::encode_step;
use crate::semantics::{when_outcome, Child, WhenOutcome};
use crate::sml::ast::ClassDef;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fmt::Write as _;

/// Carried verbatim by every surface that shows reach results.
pub const UNDER_APPROXIMATION_NOTE: &str = "edges are witnessed within the analyzed child model; \
a missing edge is not a proof of impossibility for other child counts or state alphabets";

/// Structural problems of the state-change graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReachFinding {
    /// The states split into more than one strongly connected component,
    /// so some state changes cannot be undone.
    NotStronglyConnected { components: usize },
    /// No edge from outside enters this component: once left, never
    /// re-entered.
    SourceOnly { states: Vec<String> },
    /// No edge leaves this component: once entered, never left.
    Trap { states: Vec<String> },
    /// No path from the initial state reaches these states.
    Unreachable { states: Vec<String> },
}

impl fmt::Display for ReachFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReachFinding::NotStronglyConnected { components } => write!(
                f,
                "states fall into {components} strongly connected components, expected one"
            ),
            ReachFinding::SourceOnly { states } => write!(
                f,
                "component {{{}}} cannot be re-entered once left",
                states.join(", ")
            ),
            ReachFinding::Trap { states } => write!(
                f,
                "component {{{}}} cannot be left once entered",
                states.join(", ")
            ),
            ReachFinding::Unreachable { states } => write!(
                f,
                "unreachable from the initial state: {}",
                states.join(", ")
            ),
        }
    }
}

/// The enumerated state-change graph, with one witnessing configuration
/// per edge (the first one found, so rebuilding is deterministic).
pub struct ReachGraph {
    states: Vec<String>,
    initial: String,
    model: ChildModel,
    edges: BTreeMap<(usize, usize), Vec<Child>>,
    /// Strongly connected components; members sorted by state index,
    /// components sorted by their smallest member.
    comps: Vec<Vec<usize>>,
    comp_of: Vec<usize>,
}

impl ReachGraph {
    pub fn build(class: &ClassDef, model: ChildModel) -> Result<Self, ModelError> {
        let states = state_universe(class);
        let n_configs = model.n_configs().unwrap_or(u64::MAX);
        let cells = (states.len() as u64).checked_mul(n_configs).unwrap_or(u64::MAX);
        if cells > NODE_LIMIT {
            return Err(ModelError::TooLarge {
                class: class.name.clone(),
                nodes: cells,
                limit: NODE_LIMIT,
            });
        }

        let mut edges: BTreeMap<(usize, usize), Vec<Child>> = BTreeMap::new();
        let mut children = model.children_template();
        for config in 0..n_configs {
            model.decode(config, &mut children);
            for (si, s) in states.iter().enumerate() {
                if let WhenOutcome::Move { target, .. } = when_outcome(class, s, &children) {
                    let ti = states.iter().position(|t| t == target).unwrap();
                    edges
                        .entry((si, ti))
                        .or_insert_with(|| children.clone());
                }
            }
        }

        let (comps, comp_of) = condense(states.len(), &edges);
        Ok(ReachGraph {
            states,
            initial: class.states[0].name.clone(),
            model,
            edges,
            comps,
            comp_of,
        })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn model(&self) -> &ChildModel {
        &self.model
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_set(&self) -> BTreeSet<(String, String)> {
        self.edges
            .keys()
            .map(|&(a, b)| (self.states[a].clone(), self.states[b].clone()))
            .collect()
    }

    /// The configuration that witnesses `from -> to`, if the edge exists.
    pub fn witness(&self, from: &str, to: &str) -> Option<&[Child]> {
        let a = self.states.iter().position(|s| s == from)?;
        let b = self.states.iter().position(|s| s == to)?;
        self.edges.get(&(a, b)).map(|c| c.as_slice())
    }

    pub fn components(&self) -> Vec<Vec<String>> {
        self.comps
            .iter()
            .map(|c| c.iter().map(|&i| self.states[i].clone()).collect())
            .collect()
    }

    fn is_mutual(&self, a: usize, b: usize) -> bool {
        self.edges.contains_key(&(a, b)) && self.edges.contains_key(&(b, a))
    }

    pub fn findings(&self) -> Vec<ReachFinding> {
        let mut out = Vec::new();
        if self.comps.len() > 1 {
            out.push(ReachFinding::NotStronglyConnected {
                components: self.comps.len(),
            });
            // Cross-component degrees decide sources and traps.
            let mut incoming = vec![0usize; self.comps.len()];
            let mut outgoing = vec![0usize; self.comps.len()];
            for &(a, b) in self.edges.keys() {
                let (ca, cb) = (self.comp_of[a], self.comp_of[b]);
                if ca != cb {
                    outgoing[ca] += 1;
                    incoming[cb] += 1;
                }
            }
            for (ci, comp) in self.comps.iter().enumerate() {
                let states = || comp.iter().map(|&i| self.states[i].clone()).collect();
                if incoming[ci] == 0 {
                    out.push(ReachFinding::SourceOnly { states: states() });
                }
                if outgoing[ci] == 0 {
                    out.push(ReachFinding::Trap { states: states() });
                }
            }
        }
        let unreachable = self.unreachable_from_initial();
        if !unreachable.is_empty() {
            out.push(ReachFinding::Unreachable {
                states: unreachable,
            });
        }
        out
    }

    fn unreachable_from_initial(&self) -> Vec<String> {
        let start = self
            .states
            .iter()
            .position(|s| *s == self.initial)
            .expect("the initial state is declared");
        let mut seen = vec![false; self.states.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &(a, b) in self.edges.keys() {
                if a == v && !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        self.states
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen[*i])
            .map(|(_, s)| s.clone())
            .collect()
    }

    /// Graphviz rendering: components as clusters, mutual edges drawn once
    /// with arrowheads on both ends, one-way edges dashed.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        out.push_str("digraph state_changes {\n");
        let _ = writeln!(out, "  // {UNDER_APPROXIMATION_NOTE}");
        out.push_str("  rankdir=LR;\n  node [shape=box];\n");
        for (ci, comp) in self.comps.iter().enumerate() {
            let _ = writeln!(out, "  subgraph cluster_{ci} {{");
            let _ = writeln!(out, "    label=\"component {}\";", ci + 1);
            for &i in comp {
                let _ = writeln!(out, "    \"{}\";", self.states[i]);
            }
            out.push_str("  }\n");
        }
        for &(a, b) in self.edges.keys() {
            let line = if a == b {
                format!("  \"{}\" -> \"{}\";", self.states[a], self.states[b])
            } else if self.is_mutual(a, b) {
                if a > b {
                    continue; // drawn once, from the smaller index
                }
                format!(
                    "  \"{}\" -> \"{}\" [dir=both];",
                    self.states[a], self.states[b]
                )
            } else {
                format!(
                    "  \"{}\" -> \"{}\" [style=dashed];",
                    self.states[a], self.states[b]
                )
            };
            out.push_str(&line);
            out.push('\n');
        }
        out.push_str("}\n");
        out
    }
}

/// Tarjan's algorithm, then components reordered by smallest member for a
/// stable presentation.
fn condense(
    n: usize,
    edges: &BTreeMap<(usize, usize), Vec<Child>>,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges.keys() {
        adj[a].push(b);
    }

    struct Walk<'a> {
        adj: &'a [Vec<usize>],
        index: Vec<Option<u32>>,
        low: Vec<u32>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: u32,
        comps: Vec<Vec<usize>>,
    }
    // Recursion depth is bounded by the state count of one class, which
    // stays tiny compared to the stack.
    fn connect(v: usize, w: &mut Walk) {
        w.index[v] = Some(w.next);
        w.low[v] = w.next;
        w.next += 1;
        w.stack.push(v);
        w.on_stack[v] = true;
        for i in 0..w.adj[v].len() {
            let t = w.adj[v][i];
            match w.index[t] {
                None => {
                    connect(t, w);
                    w.low[v] = w.low[v].min(w.low[t]);
                }
                Some(idx) if w.on_stack[t] => w.low[v] = w.low[v].min(idx),
                Some(_) => {}
            }
        }
        if w.low[v] == w.index[v].unwrap() {
            let mut comp = Vec::new();
            loop {
                let t = w.stack.pop().unwrap();
                w.on_stack[t] = false;
                comp.push(t);
                if t == v {
                    break;
                }
            }
            comp.sort_unstable();
            w.comps.push(comp);
        }
    }

    let mut walk = Walk {
        adj: &adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        comps: Vec::new(),
    };
    for v in 0..n {
        if walk.index[v].is_none() {
            connect(v, &mut walk);
        }
    }
    let mut comps = walk.comps;
    comps.sort_unstable_by_key(|c| c[0]);
    let mut comp_of = vec![0; n];
    for (ci, comp) in comps.iter().enumerate() {
        for &v in comp {
            comp_of[v] = ci;
        }
    }
    (comps, comp_of)
}

/// The SAT route: one single-transition instance per ordered state pair.
/// Must equal [`ReachGraph::edge_set`]; the differential tests and the
/// checker CLI hold the two routes against each other.
pub fn sat_edges(class: &ClassDef, model: &ChildModel) -> BTreeSet<(String, String)> {
    let states = state_universe(class);
    let base = encode_step(class, model);
    let mut out = BTreeSet::new();
    for from in &states {
        for to in &states {
            let mut cnf = base.cnf.clone();
            cnf.add(vec![base.parent_lit(from, 0).unwrap()]);
            cnf.add(vec![base.parent_lit(to, 1).unwrap()]);
            if cnf.solve().is_sat() {
                out.insert((from.clone(), to.clone()));
            }
        }
    }
    out
}
