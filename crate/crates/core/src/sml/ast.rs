//! Abstract syntax for SML class definitions.
//!
//! Every node keeps the position of its first token. Equality is structural
//! and ignores positions, so trees survive a pretty-print/re-parse round trip
//! unchanged.

use crate::diag::Pos;
use std::fmt;

/// One `class:` definition. A source file may contain several.
#[derive(Debug, Clone, Eq)]
pub struct ClassDef {
    pub name: String,
    pub pos: Pos,
    pub states: Vec<StateClause>,
}

impl ClassDef {
    /// The state clause declared under `name`, if any. States that are only
    /// `move_to` targets have no clause and yield `None`.
    pub fn state(&self, name: &str) -> Option<&StateClause> {
        self.states.iter().find(|s| s.name == name)
    }

    /// Declared state names in source order.
    pub fn declared_states(&self) -> Vec<&str> {
        self.states.iter().map(|s| s.name.as_str()).collect()
    }

    /// The initial state is the first declared one.
    pub fn initial_state(&self) -> Option<&str> {
        self.states.first().map(|s| s.name.as_str())
    }
}

impl PartialEq for ClassDef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.states == other.states
    }
}

/// A `state:` clause: prioritized when clauses plus named action clauses.
/// Either list may be empty.
#[derive(Debug, Clone, Eq)]
pub struct StateClause {
    pub name: String,
    pub pos: Pos,
    pub whens: Vec<WhenClause>,
    pub actions: Vec<ActionClause>,
}

impl StateClause {
    pub fn action(&self, name: &str) -> Option<&ActionClause> {
        self.actions.iter().find(|a| a.name == name)
    }
}

impl PartialEq for StateClause {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.whens == other.whens && self.actions == other.actions
    }
}

/// `when ( guard ) referer`. Priority is list order: lower index wins.
#[derive(Debug, Clone, Eq)]
pub struct WhenClause {
    pub pos: Pos,
    pub guard: Guard,
    pub referer: Referer,
}

impl PartialEq for WhenClause {
    fn eq(&self, other: &Self) -> bool {
        self.guard == other.guard && self.referer == other.referer
    }
}

#[derive(Debug, Clone, Eq)]
pub enum Referer {
    /// `move_to STATE`
    MoveTo { target: String, pos: Pos },
    /// `do ACTION` — runs an action of the current state without a command.
    DoAction { action: String, pos: Pos },
}

impl PartialEq for Referer {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Referer::MoveTo { target: a, .. }, Referer::MoveTo { target: b, .. }) => a == b,
            (Referer::DoAction { action: a, .. }, Referer::DoAction { action: b, .. }) => a == b,
            _ => false,
        }
    }
}

/// Guards are positive boolean combinations of child-state atoms; there is
/// no negation in the language.
#[derive(Debug, Clone, Eq)]
pub enum Guard {
    /// `PATTERN in_state S` or `PATTERN in_state {S1, S2, ...}`.
    /// The state set is nonempty and kept in source order.
    Atom {
        pattern: ChildPattern,
        states: Vec<String>,
        pos: Pos,
    },
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
}

impl Guard {
    /// All atoms of the guard, left to right.
    pub fn atoms(&self) -> Vec<&Guard> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Guard>) {
        match self {
            Guard::Atom { .. } => out.push(self),
            Guard::And(l, r) | Guard::Or(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
        }
    }
}

impl PartialEq for Guard {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                Guard::Atom {
                    pattern: pa,
                    states: sa,
                    ..
                },
                Guard::Atom {
                    pattern: pb,
                    states: sb,
                    ..
                },
            ) => pa == pb && sa == sb,
            (Guard::And(al, ar), Guard::And(bl, br)) => al == bl && ar == br,
            (Guard::Or(al, ar), Guard::Or(bl, br)) => al == bl && ar == br,
            _ => false,
        }
    }
}

/// `$ANY$X` / `$ALL$X` — quantifier over the children selected by `X`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChildPattern {
    pub quant: Quant,
    pub selector: Selector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Quant {
    Any,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Selector {
    /// Children of one named class.
    Class(String),
    /// `FwCHILDREN`: every child, regardless of class.
    FwChildren,
}

impl Selector {
    pub fn class_name(&self) -> Option<&str> {
        match self {
            Selector::Class(n) => Some(n),
            Selector::FwChildren => None,
        }
    }
}

impl fmt::Display for ChildPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let quant = match self.quant {
            Quant::Any => "$ANY$",
            Quant::All => "$ALL$",
        };
        match &self.selector {
            Selector::Class(n) => write!(f, "{quant}{n}"),
            Selector::FwChildren => write!(f, "{quant}FwCHILDREN"),
        }
    }
}

/// `action: NAME` followed by a nonempty statement body.
#[derive(Debug, Clone, Eq)]
pub struct ActionClause {
    pub name: String,
    pub pos: Pos,
    pub body: Vec<Statement>,
}

impl PartialEq for ActionClause {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.body == other.body
    }
}

#[derive(Debug, Clone, Eq)]
pub enum Statement {
    /// `do COMMAND $ALL$X` — queue COMMAND for every child selected by `X`.
    /// The quantifier is always `ALL` here; the parser rejects `$ANY$`.
    Do {
        command: String,
        pattern: ChildPattern,
        pos: Pos,
    },
    /// `move_to STATE` — ends the action.
    MoveTo { target: String, pos: Pos },
    /// `if ( guard ) then ... [else ...] endif`.
    If {
        guard: Guard,
        then_branch: Vec<Statement>,
        else_branch: Vec<Statement>,
        pos: Pos,
    },
}

impl Statement {
    pub fn pos(&self) -> Pos {
        match self {
            Statement::Do { pos, .. } | Statement::MoveTo { pos, .. } | Statement::If { pos, .. } => {
                *pos
            }
        }
    }
}

impl PartialEq for Statement {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                Statement::Do {
                    command: ca,
                    pattern: pa,
                    ..
                },
                Statement::Do {
                    command: cb,
                    pattern: pb,
                    ..
                },
            ) => ca == cb && pa == pb,
            (Statement::MoveTo { target: a, .. }, Statement::MoveTo { target: b, .. }) => a == b,
            (
                Statement::If {
                    guard: ga,
                    then_branch: ta,
                    else_branch: ea,
                    ..
                },
                Statement::If {
                    guard: gb,
                    then_branch: tb,
                    else_branch: eb,
                    ..
                },
            ) => ga == gb && ta == tb && ea == eb,
            _ => false,
        }
    }
}
