//! Propositional SAT: a CNF container, a small CDCL solver and DIMACS glue.
//!
//! The solver implements the usual conflict-driven loop: two watched
//! literals per clause, first-UIP conflict analysis, activity-ordered
//! decisions with phase saving, and Luby restarts. It keeps every learnt
//! clause, which is fine for the bounded model checking instances this
//! crate produces; anything bigger can be exported as DIMACS and solved
//! externally, with the model read back via [`parse_dimacs_model`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, Write};
use thiserror::Error;

/// Variable index, 0-based. DIMACS numbering is `var + 1`.
pub type Var = u32;

/// A literal: variable plus sign, packed as `var << 1 | negated`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit(u32);

impl Lit {
    pub fn pos(var: Var) -> Lit {
        Lit(var << 1)
    }

    pub fn neg(var: Var) -> Lit {
        Lit(var << 1 | 1)
    }

    pub fn var(self) -> Var {
        self.0 >> 1
    }

    pub fn is_pos(self) -> bool {
        self.0 & 1 == 0
    }

    fn index(self) -> usize {
        self.0 as usize
    }

    pub fn to_dimacs(self) -> i64 {
        let v = (self.var() + 1) as i64;
        if self.is_pos() {
            v
        } else {
            -v
        }
    }
}

impl std::ops::Not for Lit {
    type Output = Lit;
    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

/// A formula under construction: allocate variables, collect clauses,
/// inspect the totals, then hand it to a [`Solver`] or write DIMACS.
#[derive(Debug, Clone, Default)]
pub struct Cnf {
    n_vars: u32,
    pub clauses: Vec<Vec<Lit>>,
}

impl Cnf {
    pub fn new() -> Self {
        Cnf::default()
    }

    pub fn new_var(&mut self) -> Var {
        let v = self.n_vars;
        self.n_vars += 1;
        v
    }

    pub fn n_vars(&self) -> u32 {
        self.n_vars
    }

    pub fn add(&mut self, clause: Vec<Lit>) {
        self.clauses.push(clause);
    }

    pub fn write_dimacs(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "p cnf {} {}", self.n_vars, self.clauses.len())?;
        for clause in &self.clauses {
            for lit in clause {
                write!(w, "{} ", lit.to_dimacs())?;
            }
            writeln!(w, "0")?;
        }
        Ok(())
    }

    pub fn solve(&self) -> Solution {
        let mut solver = Solver::from_cnf(self);
        if solver.solve() {
            Solution::Sat(solver.model())
        } else {
            Solution::Unsat
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Solution {
    /// Satisfying assignment indexed by variable.
    Sat(Vec<bool>),
    Unsat,
}

impl Solution {
    pub fn is_sat(&self) -> bool {
        matches!(self, Solution::Sat(_))
    }
}

const NO_REASON: usize = usize::MAX;

#[derive(PartialEq)]
struct HeapEntry {
    act: f64,
    var: Var,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Activities are never NaN.
        self.act
            .partial_cmp(&other.act)
            .unwrap()
            .then(self.var.cmp(&other.var))
    }
}

/// Incremental CDCL solver. Clauses may be added between `solve` calls
/// (the solver unwinds to decision level 0 first), which is how witness
/// enumeration blocks already-seen models.
pub struct Solver {
    clauses: Vec<Vec<Lit>>,
    watches: Vec<Vec<usize>>,
    /// Per variable: 0 unassigned, 1 true, -1 false.
    assign: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<usize>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    var_inc: f64,
    heap: BinaryHeap<HeapEntry>,
    saved_phase: Vec<bool>,
    unsat: bool,
}

impl Default for Solver {
    fn default() -> Self {
        Self::new()
    }
}

impl Solver {
    pub fn new() -> Self {
        Solver {
            clauses: Vec::new(),
            watches: Vec::new(),
            assign: Vec::new(),
            level: Vec::new(),
            reason: Vec::new(),
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: Vec::new(),
            var_inc: 1.0,
            heap: BinaryHeap::new(),
            saved_phase: Vec::new(),
            unsat: false,
        }
    }

    pub fn from_cnf(cnf: &Cnf) -> Self {
        let mut s = Solver::new();
        while s.n_vars() < cnf.n_vars() {
            s.new_var();
        }
        for clause in &cnf.clauses {
            s.add_clause(clause);
        }
        s
    }

    pub fn new_var(&mut self) -> Var {
        let v = self.assign.len() as Var;
        self.assign.push(0);
        self.level.push(0);
        self.reason.push(NO_REASON);
        self.activity.push(0.0);
        self.saved_phase.push(false);
        self.watches.push(Vec::new());
        self.watches.push(Vec::new());
        self.heap.push(HeapEntry { act: 0.0, var: v });
        v
    }

    pub fn n_vars(&self) -> u32 {
        self.assign.len() as u32
    }

    fn value(&self, lit: Lit) -> i8 {
        let a = self.assign[lit.var() as usize];
        if lit.is_pos() {
            a
        } else {
            -a
        }
    }

    /// Adds a clause; duplicate literals are merged and tautologies dropped.
    pub fn add_clause(&mut self, lits: &[Lit]) {
        if self.unsat {
            return;
        }
        self.cancel_until(0);
        let mut clause: Vec<Lit> = lits.to_vec();
        clause.sort();
        clause.dedup();
        if clause.windows(2).any(|w| w[0].var() == w[1].var()) {
            return; // l and not-l: always true
        }
        clause.retain(|&l| self.value(l) != -1);
        if clause.iter().any(|&l| self.value(l) == 1) {
            return; // already satisfied at level 0
        }
        match clause.len() {
            0 => self.unsat = true,
            1 => {
                self.enqueue(clause[0], NO_REASON);
                if self.propagate().is_some() {
                    self.unsat = true;
                }
            }
            _ => {
                let idx = self.clauses.len();
                self.watches[clause[0].index()].push(idx);
                self.watches[clause[1].index()].push(idx);
                self.clauses.push(clause);
            }
        }
    }

    fn enqueue(&mut self, lit: Lit, reason: usize) {
        debug_assert_eq!(self.value(lit), 0);
        let v = lit.var() as usize;
        self.assign[v] = if lit.is_pos() { 1 } else { -1 };
        self.level[v] = self.trail_lim.len() as u32;
        self.reason[v] = reason;
        self.saved_phase[v] = lit.is_pos();
        self.trail.push(lit);
    }

    /// Propagates until fixpoint; returns a conflicting clause index.
    fn propagate(&mut self) -> Option<usize> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            let false_lit = !p;
            let mut watch_list = std::mem::take(&mut self.watches[false_lit.index()]);
            let mut i = 0;
            while i < watch_list.len() {
                let ci = watch_list[i];
                // Normalize so the false literal sits at position 1.
                if self.clauses[ci][0] == false_lit {
                    self.clauses[ci].swap(0, 1);
                }
                let first = self.clauses[ci][0];
                if self.value(first) == 1 {
                    i += 1;
                    continue;
                }
                // Look for a replacement watch.
                let mut moved = false;
                for k in 2..self.clauses[ci].len() {
                    if self.value(self.clauses[ci][k]) != -1 {
                        self.clauses[ci].swap(1, k);
                        let new_watch = self.clauses[ci][1];
                        self.watches[new_watch.index()].push(ci);
                        watch_list.swap_remove(i);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                if self.value(first) == -1 {
                    // Conflict: restore the remaining watches.
                    self.watches[false_lit.index()].append(&mut watch_list);
                    self.qhead = self.trail.len();
                    return Some(ci);
                }
                self.enqueue(first, ci);
                i += 1;
            }
            self.watches[false_lit.index()] = watch_list;
        }
        None
    }

    fn bump(&mut self, v: Var) {
        self.activity[v as usize] += self.var_inc;
        if self.activity[v as usize] > 1e100 {
            for a in &mut self.activity {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.push(HeapEntry {
            act: self.activity[v as usize],
            var: v,
        });
    }

    /// First-UIP learning. Returns the learnt clause (asserting literal
    /// first) and the level to jump back to.
    fn analyze(&mut self, mut confl: usize) -> (Vec<Lit>, u32) {
        let current = self.trail_lim.len() as u32;
        let mut learnt = vec![Lit::pos(0)]; // slot 0 filled with the UIP below
        let mut seen = vec![false; self.assign.len()];
        let mut counter = 0usize;
        let mut p: Option<Lit> = None;
        let mut idx = self.trail.len();
        loop {
            for j in 0..self.clauses[confl].len() {
                let q = self.clauses[confl][j];
                // A reason clause contains the literal it propagated; that
                // one is being resolved on, not collected.
                if p == Some(q) {
                    continue;
                }
                let v = q.var() as usize;
                if !seen[v] && self.level[v] > 0 {
                    seen[v] = true;
                    self.bump(q.var());
                    if self.level[v] == current {
                        counter += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            // Walk the trail back to the next marked literal.
            loop {
                idx -= 1;
                if seen[self.trail[idx].var() as usize] {
                    break;
                }
            }
            let lit = self.trail[idx];
            seen[lit.var() as usize] = false;
            counter -= 1;
            if counter == 0 {
                learnt[0] = !lit;
                break;
            }
            p = Some(lit);
            confl = self.reason[lit.var() as usize];
            debug_assert_ne!(confl, NO_REASON);
        }
        // Backjump to the second-highest level in the clause and put that
        // literal in the other watch slot.
        let back_level = if learnt.len() == 1 {
            0
        } else {
            let mut best = 1;
            for k in 2..learnt.len() {
                if self.level[learnt[k].var() as usize] > self.level[learnt[best].var() as usize] {
                    best = k;
                }
            }
            learnt.swap(1, best);
            self.level[learnt[1].var() as usize]
        };
        (learnt, back_level)
    }

    fn cancel_until(&mut self, target: u32) {
        while self.trail_lim.len() as u32 > target {
            let lim = self.trail_lim.pop().unwrap();
            while self.trail.len() > lim {
                let lit = self.trail.pop().unwrap();
                let v = lit.var() as usize;
                self.assign[v] = 0;
                self.reason[v] = NO_REASON;
                self.heap.push(HeapEntry {
                    act: self.activity[v],
                    var: lit.var(),
                });
            }
        }
        self.qhead = self.trail.len();
    }

    fn decide(&mut self) -> bool {
        while let Some(entry) = self.heap.pop() {
            let v = entry.var as usize;
            if self.assign[v] == 0 {
                self.trail_lim.push(self.trail.len());
                let lit = if self.saved_phase[v] {
                    Lit::pos(entry.var)
                } else {
                    Lit::neg(entry.var)
                };
                self.enqueue(lit, NO_REASON);
                return true;
            }
        }
        false
    }

    pub fn solve(&mut self) -> bool {
        if self.unsat {
            return false;
        }
        self.cancel_until(0);
        let mut conflicts_left = luby(1) * 128;
        let mut restarts = 1u32;
        loop {
            if let Some(confl) = self.propagate() {
                if self.trail_lim.is_empty() {
                    self.unsat = true;
                    return false;
                }
                let (learnt, back_level) = self.analyze(confl);
                self.cancel_until(back_level);
                let assert_lit = learnt[0];
                if learnt.len() == 1 {
                    self.enqueue(assert_lit, NO_REASON);
                } else {
                    let idx = self.clauses.len();
                    self.watches[learnt[0].index()].push(idx);
                    self.watches[learnt[1].index()].push(idx);
                    self.clauses.push(learnt);
                    self.enqueue(assert_lit, idx);
                }
                self.var_inc /= 0.95;
                conflicts_left -= 1;
                if conflicts_left == 0 {
                    restarts += 1;
                    conflicts_left = luby(restarts) * 128;
                    self.cancel_until(0);
                }
            } else if !self.decide() {
                return true;
            }
        }
    }

    /// Value of `v` in the current model; call after `solve` returned true.
    pub fn model_value(&self, v: Var) -> bool {
        debug_assert_ne!(self.assign[v as usize], 0);
        self.assign[v as usize] == 1
    }

    pub fn model(&self) -> Vec<bool> {
        (0..self.n_vars()).map(|v| self.model_value(v)).collect()
    }
}

/// Luby restart sequence: 1 1 2 1 1 2 4 ...
fn luby(i: u32) -> u64 {
    let mut k = 1;
    while (1u64 << (k + 1)) - 1 <= i as u64 {
        k += 1;
    }
    let mut i = i as u64;
    let mut k = k;
    while i != (1 << k) - 1 {
        i -= (1 << k) - 1;
        while (1u64 << k) - 1 > i {
            k -= 1;
        }
    }
    1 << (k - 1)
}

#[derive(Debug, Error)]
pub enum ModelParseError {
    #[error("model refers to variable {var} but the formula has {n_vars}")]
    VarOutOfRange { var: u64, n_vars: u32 },
    #[error("unrecognized token '{0}' in solver output")]
    BadToken(String),
}

/// Reads a satisfying assignment from typical SAT solver output: `v` lines,
/// a bare literal list, optional `s SATISFIABLE` / `SAT` markers. Returns
/// `None` when the output declares the formula unsatisfiable.
pub fn parse_dimacs_model(text: &str, n_vars: u32) -> Result<Option<Vec<bool>>, ModelParseError> {
    let mut model = vec![false; n_vars as usize];
    let mut saw_lit = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        let rest = line.strip_prefix('v').map(str::trim).unwrap_or(line);
        for tok in rest.split_ascii_whitespace() {
            match tok {
                "s" | "SAT" | "SATISFIABLE" => {}
                "UNSAT" | "UNSATISFIABLE" => return Ok(None),
                "0" => {}
                _ => {
                    let i: i64 = tok
                        .parse()
                        .map_err(|_| ModelParseError::BadToken(tok.to_string()))?;
                    let var = i.unsigned_abs() - 1;
                    if var >= n_vars as u64 {
                        return Err(ModelParseError::VarOutOfRange {
                            var: var + 1,
                            n_vars,
                        });
                    }
                    model[var as usize] = i > 0;
                    saw_lit = true;
                }
            }
        }
    }
    if saw_lit {
        Ok(Some(model))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lit(i: i64) -> Lit {
        let v = (i.unsigned_abs() - 1) as Var;
        if i > 0 {
            Lit::pos(v)
        } else {
            Lit::neg(v)
        }
    }

    fn cnf(n_vars: u32, clauses: &[&[i64]]) -> Cnf {
        let mut f = Cnf::new();
        for _ in 0..n_vars {
            f.new_var();
        }
        for c in clauses {
            f.add(c.iter().map(|&i| lit(i)).collect());
        }
        f
    }

    #[test]
    fn literal_packing() {
        let a = Lit::pos(3);
        assert_eq!(a.var(), 3);
        assert!(a.is_pos());
        assert_eq!((!a).var(), 3);
        assert!(!(!a).is_pos());
        assert_eq!(a.to_dimacs(), 4);
        assert_eq!((!a).to_dimacs(), -4);
    }

    #[test]
    fn trivial_formulas() {
        assert!(cnf(2, &[&[1], &[-2]]).solve().is_sat());
        assert!(!cnf(1, &[&[1], &[-1]]).solve().is_sat());
        assert!(!cnf(2, &[&[1, 2], &[1, -2], &[-1, 2], &[-1, -2]])
            .solve()
            .is_sat());
        // Empty clause.
        assert!(!cnf(1, &[&[]]).solve().is_sat());
        // No clauses at all.
        assert!(cnf(3, &[]).solve().is_sat());
    }

    #[test]
    fn model_satisfies_formula() {
        let f = cnf(
            4,
            &[&[1, 2], &[-1, 3], &[-3, -2, 4], &[-4, 1], &[2, 3, 4]],
        );
        let Solution::Sat(model) = f.solve() else {
            panic!("satisfiable");
        };
        for clause in &f.clauses {
            assert!(clause
                .iter()
                .any(|l| model[l.var() as usize] == l.is_pos()));
        }
    }

    /// Five pigeons, four holes: classic small unsatisfiable instance that
    /// needs real conflict analysis.
    #[test]
    fn pigeonhole_is_unsat() {
        let pigeons = 5;
        let holes = 4;
        let mut f = Cnf::new();
        let var = |p: usize, h: usize| (p * holes + h) as Var;
        for _ in 0..pigeons * holes {
            f.new_var();
        }
        for p in 0..pigeons {
            f.add((0..holes).map(|h| Lit::pos(var(p, h))).collect());
        }
        for h in 0..holes {
            for p1 in 0..pigeons {
                for p2 in p1 + 1..pigeons {
                    f.add(vec![Lit::neg(var(p1, h)), Lit::neg(var(p2, h))]);
                }
            }
        }
        assert!(!f.solve().is_sat());
    }

    #[test]
    fn incremental_blocking_enumerates_models() {
        // x1 xor x2 has exactly two models.
        let f = cnf(2, &[&[1, 2], &[-1, -2]]);
        let mut solver = Solver::from_cnf(&f);
        let mut models = Vec::new();
        while solver.solve() {
            let m = solver.model();
            models.push(m.clone());
            let block: Vec<Lit> = m
                .iter()
                .enumerate()
                .map(|(v, &val)| {
                    if val {
                        Lit::neg(v as Var)
                    } else {
                        Lit::pos(v as Var)
                    }
                })
                .collect();
            solver.add_clause(&block);
        }
        models.sort();
        assert_eq!(models, vec![vec![false, true], vec![true, false]]);
    }

    fn brute_force_sat(n_vars: u32, clauses: &[Vec<Lit>]) -> bool {
        (0..1u32 << n_vars).any(|bits| {
            clauses.iter().all(|c| {
                c.iter()
                    .any(|l| ((bits >> l.var()) & 1 == 1) == l.is_pos())
            })
        })
    }

    #[test]
    fn random_instances_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for round in 0..300 {
            let n_vars = rng.gen_range(3..=12);
            let n_clauses = rng.gen_range(1..=50);
            let mut f = Cnf::new();
            for _ in 0..n_vars {
                f.new_var();
            }
            for _ in 0..n_clauses {
                let width = rng.gen_range(1..=3);
                let clause: Vec<Lit> = (0..width)
                    .map(|_| {
                        let v = rng.gen_range(0..n_vars);
                        if rng.gen_bool(0.5) {
                            Lit::pos(v)
                        } else {
                            Lit::neg(v)
                        }
                    })
                    .collect();
                f.add(clause);
            }
            let expected = brute_force_sat(n_vars, &f.clauses);
            match f.solve() {
                Solution::Sat(model) => {
                    assert!(expected, "round {round}: solver sat, brute force unsat");
                    for clause in &f.clauses {
                        assert!(
                            clause.iter().any(|l| model[l.var() as usize] == l.is_pos()),
                            "round {round}: model violates a clause"
                        );
                    }
                }
                Solution::Unsat => {
                    assert!(!expected, "round {round}: solver unsat, brute force sat");
                }
            }
        }
    }

    #[test]
    fn dimacs_output_shape() {
        let f = cnf(3, &[&[1, -3], &[2]]);
        let mut out = Vec::new();
        f.write_dimacs(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "p cnf 3 2\n1 -3 0\n2 0\n"
        );
    }

    #[test]
    fn reads_external_models() {
        let m = parse_dimacs_model("s SATISFIABLE\nv 1 -2 3 0\n", 3)
            .unwrap()
            .unwrap();
        assert_eq!(m, vec![true, false, true]);
        let m = parse_dimacs_model("SAT\n-1 2 -3 0", 3).unwrap().unwrap();
        assert_eq!(m, vec![false, true, false]);
        assert_eq!(parse_dimacs_model("s UNSATISFIABLE\n", 3).unwrap(), None);
        assert!(parse_dimacs_model("v 9 0", 3).is_err());
        assert!(parse_dimacs_model("v banana 0", 3).is_err());
    }

    #[test]
    fn luby_sequence_prefix() {
        let prefix: Vec<u64> = (1..=15).map(luby).collect();
        assert_eq!(prefix, vec![1, 1, 2, 1, 1, 2, 4, 1, 1, 2, 1, 1, 2, 4, 8]);
    }
}
