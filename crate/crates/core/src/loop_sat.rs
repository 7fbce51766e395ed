//! Bounded SAT search for when-phase livelocks.
//!
//! Instead of enumerating every child configuration like the explicit graph
//! does, this encodes a k-step run of the when phase as CNF: one boolean
//! per (process, state, step), where process 0 is the analyzed class and
//! the rest are its child slots. Children never change state during a when
//! phase, so their steps are chained to step 0; the parent must take a
//! genuine `move_to` step each transition, justified by the topmost enabled
//! clause; and the start state has to recur. A model is therefore a state
//! cycle plus the frozen configuration that sustains it, and with the bound
//! set to the number of states the search is exact: a cycle of c distinct
//! states can be walked from any of its members in c <= k moves, and k
//! moves under a frozen configuration must repeat a state.
//!
//! Every witness is replayed against the executable when phase before it is
//! reported; a divergence would mean the encoding is wrong, so it panics.
//!
//! Negated guards stay clause-shaped without auxiliary variables because a
//! child is outside a state set exactly when it is inside the complement of
//! the set relative to its alphabet, which the exactly-one constraint makes
//! sound.

use crate::kripke::{state_universe, ChildModel, LoopWitness};
use crate::sat::{Cnf, Lit, Solver, Var};
use crate::semantics::{when_outcome, Child, WhenOutcome};
use crate::sml::ast::{ClassDef, Guard, Quant, Referer, Selector, StateClause};
use thiserror::Error;

/// Alphabets at least this wide get a sequential-counter at-most-one
/// constraint instead of the pairwise encoding.
const PAIRWISE_LIMIT: usize = 8;

/// Exact bound: a cycle visits at most every state once.
pub fn default_bound(class: &ClassDef) -> usize {
    state_universe(class).len()
}

/// True when some state has a `do` referer naming an action it defines.
/// Such a clause never moves the machine, so the cycle search treats it as
/// a dead end; whether the action itself misbehaves is out of scope here.
pub fn class_uses_do_referers(class: &ClassDef) -> bool {
    class.states.iter().any(|state| {
        state.whens.iter().any(
            |w| matches!(&w.referer, Referer::DoAction { action, .. } if state.action(action).is_some()),
        )
    })
}

/// When clauses that can actually fire: a `do` referer whose action the
/// state does not define is dropped entirely (it neither fires nor blocks
/// lower clauses). `Some(target)` moves, `None` is a defined `do` referer
/// that ends the when phase.
fn effective_whens(state: &StateClause) -> Vec<(&Guard, Option<&str>)> {
    state
        .whens
        .iter()
        .filter_map(|w| match &w.referer {
            Referer::MoveTo { target, .. } => Some((&w.guard, Some(target.as_str()))),
            Referer::DoAction { action, .. } => state
                .action(action)
                .map(|_| (&w.guard, None)),
        })
        .collect()
}

/// A conjunction of clauses with constant folding, used to build guard
/// formulas without auxiliary variables.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    True,
    False,
    Clauses(Vec<Vec<Lit>>),
}

impl Piece {
    fn and(self, other: Piece) -> Piece {
        match (self, other) {
            (Piece::False, _) | (_, Piece::False) => Piece::False,
            (Piece::True, x) | (x, Piece::True) => x,
            (Piece::Clauses(mut a), Piece::Clauses(b)) => {
                a.extend(b);
                Piece::Clauses(a)
            }
        }
    }

    fn or(self, other: Piece) -> Piece {
        match (self, other) {
            (Piece::True, _) | (_, Piece::True) => Piece::True,
            (Piece::False, x) | (x, Piece::False) => x,
            (Piece::Clauses(a), Piece::Clauses(b)) => {
                let mut out = Vec::with_capacity(a.len() * b.len());
                for ca in &a {
                    for cb in &b {
                        let mut c = ca.clone();
                        c.extend_from_slice(cb);
                        out.push(c);
                    }
                }
                Piece::Clauses(out)
            }
        }
    }

    fn clause_count(&self) -> u64 {
        match self {
            Piece::True => 0,
            Piece::False => 1,
            Piece::Clauses(cs) => cs.len() as u64,
        }
    }
}

/// Pure arithmetic view of the variable space: process 0 is the parent,
/// processes 1.. are child slots in model order. Variable ids exist before
/// any CNF does, so the same layout drives encoding and size prediction.
struct Layout {
    parent_states: Vec<String>,
    /// Per child slot: class name and state alphabet.
    slots: Vec<(String, Vec<String>)>,
    k: usize,
    offsets: Vec<u32>,
}

impl Layout {
    fn new(class: &ClassDef, model: &ChildModel, k: usize) -> Layout {
        assert!(k >= 1, "the cycle bound must be at least 1");
        let parent_states = state_universe(class);
        let mut slots = Vec::new();
        for spec in &model.specs {
            for _ in 0..spec.count {
                slots.push((spec.name.clone(), spec.states.clone()));
            }
        }
        let mut offsets = vec![0u32];
        let mut base = (parent_states.len() * (k + 1)) as u32;
        for (_, alph) in &slots {
            offsets.push(base);
            base += (alph.len() * (k + 1)) as u32;
        }
        Layout {
            parent_states,
            slots,
            k,
            offsets,
        }
    }

    fn primary_vars(&self) -> u32 {
        let last = self.slots.len();
        if last == 0 {
            (self.parent_states.len() * (self.k + 1)) as u32
        } else {
            self.offsets[last] + (self.slots[last - 1].1.len() * (self.k + 1)) as u32
        }
    }

    fn parent_var(&self, state_idx: usize, step: usize) -> Var {
        (step * self.parent_states.len() + state_idx) as u32
    }

    fn child_var(&self, slot: usize, state_idx: usize, step: usize) -> Var {
        self.offsets[slot + 1] + (step * self.slots[slot].1.len() + state_idx) as u32
    }

    fn selected_slots(&self, selector: &Selector) -> Vec<usize> {
        (0..self.slots.len())
            .filter(|&c| match selector {
                Selector::FwChildren => true,
                Selector::Class(name) => self.slots[c].0 == *name,
            })
            .collect()
    }

    /// Literals asserting slot `c` is inside `states` at `step`, or inside
    /// the complement of `states`. Also reports whether the set covers the
    /// slot's whole alphabet (the assertion is then vacuously true).
    fn member_lits(
        &self,
        slot: usize,
        states: &[String],
        step: usize,
        complement: bool,
    ) -> (Vec<Lit>, bool) {
        let alph = &self.slots[slot].1;
        let mut lits = Vec::new();
        for (t_idx, t) in alph.iter().enumerate() {
            if states.contains(t) != complement {
                lits.push(Lit::pos(self.child_var(slot, t_idx, step)));
            }
        }
        let full = lits.len() == alph.len();
        (lits, full)
    }

    fn atom_piece(
        &self,
        quant: Quant,
        selector: &Selector,
        states: &[String],
        step: usize,
        positive: bool,
    ) -> Piece {
        let slots = self.selected_slots(selector);
        let complement = !positive;
        // ANY and negated ALL are existential (one wide clause); ALL and
        // negated ANY are universal (one clause per slot).
        let existential = matches!(
            (quant, positive),
            (Quant::Any, true) | (Quant::All, false)
        );
        if existential {
            let mut clause = Vec::new();
            for &c in &slots {
                let (lits, full) = self.member_lits(c, states, step, complement);
                if full {
                    return Piece::True;
                }
                clause.extend(lits);
            }
            if clause.is_empty() {
                Piece::False
            } else {
                Piece::Clauses(vec![clause])
            }
        } else {
            let mut clauses = Vec::new();
            for &c in &slots {
                let (lits, full) = self.member_lits(c, states, step, complement);
                if full {
                    continue;
                }
                if lits.is_empty() {
                    return Piece::False;
                }
                clauses.push(lits);
            }
            if clauses.is_empty() {
                Piece::True
            } else {
                Piece::Clauses(clauses)
            }
        }
    }

    fn guard_piece(&self, guard: &Guard, step: usize, positive: bool) -> Piece {
        match guard {
            Guard::Atom {
                pattern, states, ..
            } => self.atom_piece(pattern.quant, &pattern.selector, states, step, positive),
            Guard::And(l, r) => {
                let lp = self.guard_piece(l, step, positive);
                let rp = self.guard_piece(r, step, positive);
                if positive {
                    lp.and(rp)
                } else {
                    lp.or(rp)
                }
            }
            Guard::Or(l, r) => {
                let lp = self.guard_piece(l, step, positive);
                let rp = self.guard_piece(r, step, positive);
                if positive {
                    lp.or(rp)
                } else {
                    lp.and(rp)
                }
            }
        }
    }

    /// CNF piece for "the topmost enabled clause of `s` moves to `target`"
    /// at `step`: some move clause with that target is enabled and every
    /// clause above it is disabled.
    fn move_piece(
        &self,
        effective: &[(&Guard, Option<&str>)],
        target: &str,
        step: usize,
    ) -> Piece {
        let mut alt = Piece::False;
        for (j, (guard, t)) in effective.iter().enumerate() {
            if *t != Some(target) {
                continue;
            }
            let mut conj = self.guard_piece(guard, step, true);
            for (above, _) in &effective[..j] {
                conj = conj.and(self.guard_piece(above, step, false));
            }
            alt = alt.or(conj);
        }
        alt
    }
}

/// Size breakdown of one encoding, by constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EncodeStats {
    pub primary_vars: u64,
    pub aux_vars: u64,
    pub exactly_one_clauses: u64,
    pub frozen_clauses: u64,
    pub transition_clauses: u64,
    pub loop_clauses: u64,
}

impl EncodeStats {
    pub fn total_vars(&self) -> u64 {
        self.primary_vars + self.aux_vars
    }

    pub fn total_clauses(&self) -> u64 {
        self.exactly_one_clauses + self.frozen_clauses + self.transition_clauses + self.loop_clauses
    }
}

fn amo_clauses(m: usize) -> u64 {
    match m {
        0 | 1 => 0,
        _ if m < PAIRWISE_LIMIT => (m * (m - 1) / 2) as u64,
        _ => (3 * m - 4) as u64,
    }
}

fn amo_aux_vars(m: usize) -> u64 {
    if m >= PAIRWISE_LIMIT {
        (m - 1) as u64
    } else {
        0
    }
}

/// Predicts the exact size of [`encode`]'s output without building it.
/// Exactly-one, frozen-child and loop constraints have closed forms; the
/// per-step transition count is measured once on the step-0 guard formulas
/// and multiplied by the number of steps.
pub fn predicted_stats(class: &ClassDef, model: &ChildModel, k: usize) -> EncodeStats {
    let layout = Layout::new(class, model, k);
    let mut stats = EncodeStats {
        primary_vars: layout.primary_vars() as u64,
        ..EncodeStats::default()
    };
    let alphabet_sizes: Vec<usize> = std::iter::once(layout.parent_states.len())
        .chain(layout.slots.iter().map(|(_, a)| a.len()))
        .collect();
    for m in &alphabet_sizes {
        stats.aux_vars += amo_aux_vars(*m) * (k as u64 + 1);
        stats.exactly_one_clauses += (1 + amo_clauses(*m)) * (k as u64 + 1);
    }
    for (_, alph) in &layout.slots {
        stats.frozen_clauses += 2 * alph.len() as u64 * k as u64;
    }
    let effective = effective_by_state(class, &layout.parent_states);
    for (si, _) in layout.parent_states.iter().enumerate() {
        for target in &layout.parent_states {
            let piece = layout.move_piece(&effective[si], target, 0);
            stats.transition_clauses += piece.clause_count() * k as u64;
        }
    }
    stats.loop_clauses = layout.parent_states.len() as u64;
    stats
}

fn effective_by_state<'a>(
    class: &'a ClassDef,
    parent_states: &[String],
) -> Vec<Vec<(&'a Guard, Option<&'a str>)>> {
    parent_states
        .iter()
        .map(|s| class.state(s).map(effective_whens).unwrap_or_default())
        .collect()
}

/// A CNF whose models are k-step when-phase cycles of one class.
pub struct Encoding {
    pub cnf: Cnf,
    layout: Layout,
    stats: EncodeStats,
}

pub fn encode(class: &ClassDef, model: &ChildModel, k: usize) -> Encoding {
    encode_inner(class, model, k, true)
}

/// One transition with no cycle requirement: satisfiable under unit clauses
/// P(s,0) and P(s',1) exactly when some child configuration lets `s` move
/// to `s'`. The reach analysis uses this as its cross-check route.
pub fn encode_step(class: &ClassDef, model: &ChildModel) -> Encoding {
    encode_inner(class, model, 1, false)
}

fn encode_inner(class: &ClassDef, model: &ChildModel, k: usize, with_loop: bool) -> Encoding {
    let layout = Layout::new(class, model, k);
    let mut cnf = Cnf::new();
    for _ in 0..layout.primary_vars() {
        cnf.new_var();
    }
    let mut stats = EncodeStats {
        primary_vars: layout.primary_vars() as u64,
        ..EncodeStats::default()
    };

    // Exactly one state per process per step.
    let exactly_one = |cnf: &mut Cnf, vars: Vec<Var>, stats: &mut EncodeStats| {
        cnf.add(vars.iter().map(|&v| Lit::pos(v)).collect());
        stats.exactly_one_clauses += 1;
        if vars.len() < PAIRWISE_LIMIT {
            for a in 0..vars.len() {
                for b in a + 1..vars.len() {
                    cnf.add(vec![Lit::neg(vars[a]), Lit::neg(vars[b])]);
                    stats.exactly_one_clauses += 1;
                }
            }
        } else {
            // Sequential counter: aux[i] means "one of vars[..=i] is true".
            let aux: Vec<Var> = (0..vars.len() - 1).map(|_| cnf.new_var()).collect();
            stats.aux_vars += aux.len() as u64;
            cnf.add(vec![Lit::neg(vars[0]), Lit::pos(aux[0])]);
            stats.exactly_one_clauses += 1;
            for i in 1..vars.len() - 1 {
                cnf.add(vec![Lit::neg(vars[i]), Lit::pos(aux[i])]);
                cnf.add(vec![Lit::neg(aux[i - 1]), Lit::pos(aux[i])]);
                cnf.add(vec![Lit::neg(vars[i]), Lit::neg(aux[i - 1])]);
                stats.exactly_one_clauses += 3;
            }
            let last = vars.len() - 1;
            cnf.add(vec![Lit::neg(vars[last]), Lit::neg(aux[last - 1])]);
            stats.exactly_one_clauses += 1;
        }
    };
    for step in 0..=k {
        let vars: Vec<Var> = (0..layout.parent_states.len())
            .map(|s| layout.parent_var(s, step))
            .collect();
        exactly_one(&mut cnf, vars, &mut stats);
    }
    for slot in 0..layout.slots.len() {
        for step in 0..=k {
            let vars: Vec<Var> = (0..layout.slots[slot].1.len())
                .map(|s| layout.child_var(slot, s, step))
                .collect();
            exactly_one(&mut cnf, vars, &mut stats);
        }
    }

    // Children are frozen: every later step mirrors step 0.
    for slot in 0..layout.slots.len() {
        for s in 0..layout.slots[slot].1.len() {
            let at0 = layout.child_var(slot, s, 0);
            for step in 1..=k {
                let at = layout.child_var(slot, s, step);
                cnf.add(vec![Lit::neg(at), Lit::pos(at0)]);
                cnf.add(vec![Lit::neg(at0), Lit::pos(at)]);
                stats.frozen_clauses += 2;
            }
        }
    }

    // Every step is a move justified by the topmost enabled clause. Pairs
    // with no justifying clause are forbidden outright, which also rules
    // out silently staying in place.
    let effective = effective_by_state(class, &layout.parent_states);
    for step in 0..k {
        for si in 0..layout.parent_states.len() {
            for (ti, target) in layout.parent_states.iter().enumerate() {
                let head = vec![
                    Lit::neg(layout.parent_var(si, step)),
                    Lit::neg(layout.parent_var(ti, step + 1)),
                ];
                match layout.move_piece(&effective[si], target, step) {
                    Piece::True => {}
                    Piece::False => {
                        cnf.add(head);
                        stats.transition_clauses += 1;
                    }
                    Piece::Clauses(cs) => {
                        for c in cs {
                            let mut clause = head.clone();
                            clause.extend(c);
                            cnf.add(clause);
                            stats.transition_clauses += 1;
                        }
                    }
                }
            }
        }
    }

    // The start state must recur, so the run begins on its cycle.
    if with_loop {
        for si in 0..layout.parent_states.len() {
            let mut clause = vec![Lit::neg(layout.parent_var(si, 0))];
            clause.extend((1..=k).map(|step| Lit::pos(layout.parent_var(si, step))));
            cnf.add(clause);
            stats.loop_clauses += 1;
        }
    }

    Encoding { cnf, layout, stats }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WitnessError {
    #[error("model has {got} values but the encoding uses {want} variables")]
    TooShort { got: usize, want: usize },
    #[error("model assigns {count} states to process {process} at step {step}, expected exactly one")]
    NotExactlyOne {
        process: usize,
        step: usize,
        count: usize,
    },
    #[error("witness path never returns to its start state '{start}'")]
    NoRecurrence { start: String },
    #[error("replay diverges at step {step}: from '{state}' the when phase yields {actual}, the witness claims a move to '{claimed}'")]
    Divergence {
        step: usize,
        state: String,
        claimed: String,
        actual: String,
    },
}

impl Encoding {
    pub fn k(&self) -> usize {
        self.layout.k
    }

    pub fn stats(&self) -> EncodeStats {
        self.stats
    }

    /// The variable asserting the analyzed class is in `state` at `step`,
    /// if `state` belongs to its universe.
    pub fn parent_lit(&self, state: &str, step: usize) -> Option<Lit> {
        self.layout
            .parent_states
            .iter()
            .position(|s| s == state)
            .map(|i| Lit::pos(self.layout.parent_var(i, step)))
    }

    /// Reads the parent's state sequence and the step-0 child configuration
    /// out of a model (ours or an external solver's).
    pub fn decode_path(&self, model: &[bool]) -> Result<(Vec<String>, Vec<Child>), WitnessError> {
        let want = self.layout.primary_vars() as usize;
        if model.len() < want {
            return Err(WitnessError::TooShort {
                got: model.len(),
                want,
            });
        }
        let pick = |process: usize, alph: &[String], var_of: &dyn Fn(usize) -> Var, step: usize| {
            let on: Vec<usize> = (0..alph.len())
                .filter(|&s| model[var_of(s) as usize])
                .collect();
            if on.len() != 1 {
                return Err(WitnessError::NotExactlyOne {
                    process,
                    step,
                    count: on.len(),
                });
            }
            Ok(alph[on[0]].clone())
        };
        let mut path = Vec::with_capacity(self.layout.k + 1);
        for step in 0..=self.layout.k {
            path.push(pick(
                0,
                &self.layout.parent_states,
                &|s| self.layout.parent_var(s, step),
                step,
            )?);
        }
        let mut config = Vec::with_capacity(self.layout.slots.len());
        for (slot, (class_name, alph)) in self.layout.slots.iter().enumerate() {
            let state = pick(slot + 1, alph, &|s| self.layout.child_var(slot, s, 0), 0)?;
            config.push(Child::new(slot as u64 + 1, class_name, &state));
        }
        Ok((path, config))
    }
}

/// Validates a decoded witness against the executable when phase and cuts
/// it down to the cycle: the prefix up to the first return to the start
/// state, which replay confirms really loops under `config`.
pub fn replay_cycle(
    class: &ClassDef,
    path: &[String],
    config: &[Child],
) -> Result<LoopWitness, WitnessError> {
    let start = &path[0];
    let len = path[1..]
        .iter()
        .position(|s| s == start)
        .map(|p| p + 1)
        .ok_or_else(|| WitnessError::NoRecurrence {
            start: start.clone(),
        })?;
    let mut state = start.clone();
    for step in 0..len {
        let claimed = &path[step + 1];
        match when_outcome(class, &state, config) {
            WhenOutcome::Move { target, .. } if target == claimed.as_str() => {
                state = target.to_string();
            }
            other => {
                let actual = match other {
                    WhenOutcome::Settle => "a settle".to_string(),
                    WhenOutcome::Move { target, .. } => format!("a move to '{target}'"),
                    WhenOutcome::RunAction { action, .. } => format!("action '{action}'"),
                };
                return Err(WitnessError::Divergence {
                    step,
                    state,
                    claimed: claimed.clone(),
                    actual,
                });
            }
        }
    }
    Ok(LoopWitness::new(path[..len].to_vec(), config.to_vec()))
}

/// Report of one bounded search run.
#[derive(Debug)]
pub struct SatLoopSearch {
    pub bound: usize,
    /// One witness per distinct child configuration, in discovery order.
    pub witnesses: Vec<LoopWitness>,
    /// True when enumeration ran until unsatisfiable, false when it stopped
    /// at the witness cap.
    pub exhausted: bool,
    pub uses_do_referers: bool,
    pub vars: u32,
    pub clauses: usize,
}

impl SatLoopSearch {
    pub fn has_loop(&self) -> bool {
        !self.witnesses.is_empty()
    }
}

/// Runs the bounded search, enumerating up to `max_witnesses` sustaining
/// child configurations. Each found configuration is blocked and the
/// solver re-run, so two witnesses never share a configuration.
pub fn find_loops_sat(
    class: &ClassDef,
    model: &ChildModel,
    k: usize,
    max_witnesses: usize,
) -> SatLoopSearch {
    let enc = encode(class, model, k);
    let mut solver = Solver::from_cnf(&enc.cnf);
    let mut witnesses = Vec::new();
    let mut exhausted = true;
    while witnesses.len() < max_witnesses {
        if !solver.solve() {
            break;
        }
        let m = solver.model();
        let (path, config) = enc
            .decode_path(&m)
            .expect("own solver models satisfy the exactly-one constraints");
        let witness = match replay_cycle(class, &path, &config) {
            Ok(w) => w,
            Err(e) => panic!("SAT witness failed replay against the executable when phase: {e}"),
        };
        witnesses.push(witness);
        // Block this child configuration.
        let mut block = Vec::new();
        for (slot, (_, alph)) in enc.layout.slots.iter().enumerate() {
            let state_idx = alph
                .iter()
                .position(|s| *s == config[slot].state)
                .expect("decoded state is in the slot alphabet");
            block.push(Lit::neg(enc.layout.child_var(slot, state_idx, 0)));
        }
        if block.is_empty() {
            break; // no children: a single configuration exhausts the space
        }
        solver.add_clause(&block);
    }
    if witnesses.len() == max_witnesses && solver.solve() {
        exhausted = false;
    }
    SatLoopSearch {
        bound: k,
        witnesses,
        exhausted,
        uses_do_referers: class_uses_do_referers(class),
        vars: enc.cnf.n_vars(),
        clauses: enc.cnf.clauses.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kripke::{canonical_config, child_model, KripkeGraph, ModelOptions, ANON_CHILD_CLASS};
    use crate::sat::{parse_dimacs_model, Solution};
    use crate::testutil::fixture_class;
    use std::collections::BTreeMap;
    use std::fmt::Write as _;

    fn anon_model(class: &ClassDef, count: usize) -> ChildModel {
        let opts = ModelOptions {
            counts: [(ANON_CHILD_CLASS.to_string(), count)].into(),
            ..ModelOptions::default()
        };
        child_model(class, &BTreeMap::new(), &opts).unwrap()
    }

    fn witness_keys(ws: &[LoopWitness]) -> Vec<(Vec<String>, Vec<(String, String)>)> {
        let mut keys: Vec<_> = ws
            .iter()
            .map(|w| (w.states.clone(), canonical_config(&w.config)))
            .collect();
        keys.sort();
        keys
    }

    #[test]
    fn ecal_witnesses_match_graph_route() {
        let class = fixture_class("ecal_cooling_dee.sml");
        let model = anon_model(&class, 2);
        let report = find_loops_sat(&class, &model, default_bound(&class), 16);
        assert!(report.has_loop());
        assert!(report.exhausted);
        assert_eq!(report.bound, 3);
        for w in &report.witnesses {
            assert_eq!(w.states, vec!["ERROR", "NO_CONNECTION"]);
        }
        let graph = KripkeGraph::build(&class, model).unwrap();
        assert_eq!(witness_keys(&report.witnesses), witness_keys(&graph.find_loops()));
    }

    #[test]
    fn chamber_has_no_when_cycle() {
        let class = fixture_class("chamber.sml");
        let reg: BTreeMap<String, ClassDef> = ["rpc_hv.sml", "rpc_lv.sml", "rpc_t.sml"]
            .iter()
            .map(|f| {
                let c = fixture_class(f);
                (c.name.clone(), c)
            })
            .collect();
        let model = child_model(&class, &reg, &ModelOptions::default()).unwrap();
        let report = find_loops_sat(&class, &model, default_bound(&class), 16);
        assert!(!report.has_loop());
        assert!(report.exhausted);
        assert!(!report.uses_do_referers);
    }

    #[test]
    fn verdict_is_stable_for_larger_bounds() {
        let class = fixture_class("ecal_cooling_dee.sml");
        let model = anon_model(&class, 2);
        let at_n = find_loops_sat(&class, &model, 3, 16);
        let at_2n = find_loops_sat(&class, &model, 6, 16);
        assert_eq!(at_n.has_loop(), at_2n.has_loop());
        assert_eq!(
            witness_keys(&at_n.witnesses),
            witness_keys(&at_2n.witnesses)
        );

        let chamber = fixture_class("chamber.sml");
        let reg: BTreeMap<String, ClassDef> = ["rpc_hv.sml", "rpc_lv.sml", "rpc_t.sml"]
            .iter()
            .map(|f| {
                let c = fixture_class(f);
                (c.name.clone(), c)
            })
            .collect();
        let model = child_model(&chamber, &reg, &ModelOptions::default()).unwrap();
        assert!(!find_loops_sat(&chamber, &model, 5, 4).has_loop());
        assert!(!find_loops_sat(&chamber, &model, 10, 4).has_loop());
    }

    #[test]
    fn variable_count_matches_formula() {
        let class = fixture_class("chamber.sml");
        let reg: BTreeMap<String, ClassDef> = ["rpc_hv.sml", "rpc_lv.sml", "rpc_t.sml"]
            .iter()
            .map(|f| {
                let c = fixture_class(f);
                (c.name.clone(), c)
            })
            .collect();
        let model = child_model(&class, &reg, &ModelOptions::default()).unwrap();
        let k = default_bound(&class);
        assert_eq!(k, 5);
        let enc = encode(&class, &model, k);
        // One boolean per state per step for each of the four processes:
        // (5 + 5 + 3 + 2) states times 6 steps, no counter variables needed.
        assert_eq!(enc.cnf.n_vars(), 90);
        assert_eq!(enc.stats().total_vars(), 90);
        let predicted = predicted_stats(&class, &model, k);
        assert_eq!(enc.stats(), predicted);
        assert_eq!(enc.cnf.clauses.len() as u64, predicted.total_clauses());
    }

    #[test]
    fn wide_alphabets_use_counter_variables() {
        let source = "\
class: Swing
    state: A
        when ( $ANY$P in_state S0 ) move_to B
    state: B
        when ( $ANY$P in_state S0 ) move_to A
";
        let class = crate::sml::parse(source).unwrap().remove(0);
        let states: Vec<String> = (0..9).map(|i| format!("S{i}")).collect();
        let opts = ModelOptions {
            state_overrides: [("P".to_string(), states)].into(),
            ..ModelOptions::default()
        };
        let model = child_model(&class, &BTreeMap::new(), &opts).unwrap();
        let k = 2;
        let enc = encode(&class, &model, k);
        let predicted = predicted_stats(&class, &model, k);
        // Primary: (2 + 9) * 3. Aux: the 9-state child needs 8 counter
        // variables per step; the 2-state parent stays pairwise.
        assert_eq!(predicted.primary_vars, 33);
        assert_eq!(predicted.aux_vars, 24);
        assert_eq!(enc.stats(), predicted);
        assert_eq!(enc.cnf.n_vars() as u64, predicted.total_vars());
        assert_eq!(enc.cnf.clauses.len() as u64, predicted.total_clauses());

        let report = find_loops_sat(&class, &model, k, 4);
        assert_eq!(report.witnesses.len(), 1);
        assert_eq!(report.witnesses[0].states, vec!["A", "B"]);
        assert_eq!(report.witnesses[0].config[0].state, "S0");
    }

    /// Both routes must agree on fixtures where the verdict flips with the
    /// child count.
    #[test]
    fn agreement_with_graph_route() {
        for (file, count, expect_loop) in [
            ("endcap_like.sml", 1, false),
            ("endcap_like.sml", 2, true),
            ("rpc_monitor.sml", 1, false),
            ("rpc_monitor.sml", 2, false),
        ] {
            let class = fixture_class(file);
            let model = anon_model(&class, count);
            let report = find_loops_sat(&class, &model, default_bound(&class), 64);
            let graph = KripkeGraph::build(&class, model).unwrap();
            assert_eq!(report.has_loop(), expect_loop, "{file} x{count}");
            assert_eq!(graph.has_loop(), expect_loop, "{file} x{count}");
        }
    }

    #[test]
    fn external_model_round_trip() {
        let class = fixture_class("ecal_cooling_dee.sml");
        let model = anon_model(&class, 2);
        let enc = encode(&class, &model, default_bound(&class));
        let mut dimacs = Vec::new();
        enc.cnf.write_dimacs(&mut dimacs).unwrap();
        let header = String::from_utf8(dimacs).unwrap();
        assert!(header.starts_with(&format!(
            "p cnf {} {}\n",
            enc.cnf.n_vars(),
            enc.cnf.clauses.len()
        )));

        // Pretend an external solver produced the model.
        let Solution::Sat(m) = enc.cnf.solve() else {
            panic!("cycle exists");
        };
        let mut text = String::from("s SATISFIABLE\nv");
        for (v, &val) in m.iter().enumerate() {
            let lit = if val { v as i64 + 1 } else { -(v as i64 + 1) };
            write!(text, " {lit}").unwrap();
        }
        text.push_str(" 0\n");
        let parsed = parse_dimacs_model(&text, enc.cnf.n_vars()).unwrap().unwrap();
        let (path, config) = enc.decode_path(&parsed).unwrap();
        let witness = replay_cycle(&class, &path, &config).unwrap();
        assert_eq!(witness.states, vec!["ERROR", "NO_CONNECTION"]);
    }

    #[test]
    fn malformed_models_are_rejected() {
        let class = fixture_class("ecal_cooling_dee.sml");
        let model = anon_model(&class, 2);
        let enc = encode(&class, &model, 3);
        let err = enc.decode_path(&[]).unwrap_err();
        assert!(matches!(err, WitnessError::TooShort { .. }), "{err}");
        let all_false = vec![false; enc.cnf.n_vars() as usize];
        let err = enc.decode_path(&all_false).unwrap_err();
        assert_eq!(
            err,
            WitnessError::NotExactlyOne {
                process: 0,
                step: 0,
                count: 0
            }
        );
    }

    #[test]
    fn divergent_witnesses_are_rejected() {
        let class = fixture_class("ecal_cooling_dee.sml");
        let config = vec![
            Child::new(1, ANON_CHILD_CLASS, "OK"),
            Child::new(2, ANON_CHILD_CLASS, "OK"),
        ];
        // ERROR does move to OK under this configuration, but OK then
        // settles rather than moving back.
        let path: Vec<String> = ["ERROR", "OK", "ERROR", "OK"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let err = replay_cycle(&class, &path, &config).unwrap_err();
        assert_eq!(
            err,
            WitnessError::Divergence {
                step: 1,
                state: "OK".to_string(),
                claimed: "ERROR".to_string(),
                actual: "a settle".to_string(),
            }
        );
        // A path that never returns to its start is not a cycle witness.
        let path: Vec<String> = ["ERROR", "OK", "OK", "OK"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let err = replay_cycle(&class, &path, &config).unwrap_err();
        assert!(matches!(err, WitnessError::NoRecurrence { .. }), "{err}");
    }

    #[test]
    fn slot_order_does_not_change_the_verdict() {
        let source = "\
class: PingPong
    state: S1
        when ( $ANY$A in_state GO_A ) move_to S2
    state: S2
        when ( $ANY$B in_state GO_B ) move_to S1
";
        let class = crate::sml::parse(source).unwrap().remove(0);
        let spec = |name: &str, go: &str| crate::kripke::ChildClassSpec {
            name: name.to_string(),
            states: vec![go.to_string(), "IDLE".to_string()],
            count: 1,
        };
        let forward = ChildModel {
            specs: vec![spec("A", "GO_A"), spec("B", "GO_B")],
        };
        let backward = ChildModel {
            specs: vec![spec("B", "GO_B"), spec("A", "GO_A")],
        };
        let rf = find_loops_sat(&class, &forward, default_bound(&class), 8);
        let rb = find_loops_sat(&class, &backward, default_bound(&class), 8);
        assert_eq!(rf.witnesses.len(), 1);
        assert_eq!(rb.witnesses.len(), 1);
        assert_eq!(rf.witnesses[0].states, rb.witnesses[0].states);
        assert_eq!(
            canonical_config(&rf.witnesses[0].config),
            canonical_config(&rb.witnesses[0].config)
        );
    }

    #[test]
    fn do_referer_flag_is_reported() {
        let source = "\
class: Pulser
    state: IDLE
        when ( $ANY$P in_state HOT ) do VENT
        action: VENT
            do COOL $ALL$P
";
        let class = crate::sml::parse(source).unwrap().remove(0);
        assert!(class_uses_do_referers(&class));
        let opts = ModelOptions {
            state_overrides: [("P".to_string(), vec!["HOT".to_string(), "COLD".to_string()])]
                .into(),
            ..ModelOptions::default()
        };
        let model = child_model(&class, &BTreeMap::new(), &opts).unwrap();
        let report = find_loops_sat(&class, &model, 2, 4);
        // The do referer ends the when phase without moving, so no state
        // cycle exists, but the caveat must surface.
        assert!(!report.has_loop());
        assert!(report.uses_do_referers);
    }
}
