//! Cross-reference checks and alphabet extraction.
//!
//! Validation never rejects a parseable class; everything it finds is a
//! warning. Classes routinely reference states of their children and
//! commands of yet-unwritten siblings, so hard errors here would be wrong.

use super::ast::*;
use crate::diag::{Diagnostic, Pos};
use std::collections::{BTreeMap, BTreeSet};

/// Names a class can be observed to use: its own states (declared plus
/// `move_to` targets), the commands it understands or sends, and the child
/// classes its guards and `do` statements select.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    pub states: BTreeSet<String>,
    pub commands: BTreeSet<String>,
    pub child_classes: BTreeSet<String>,
}

pub fn alphabet(class: &ClassDef) -> Alphabet {
    let mut states: BTreeSet<String> = BTreeSet::new();
    let mut commands = BTreeSet::new();
    let mut child_classes = BTreeSet::new();

    let mut selector = |sel: &Selector| {
        if let Selector::Class(name) = sel {
            child_classes.insert(name.clone());
        }
    };

    for state in &class.states {
        states.insert(state.name.clone());
        for when in &state.whens {
            for atom in when.guard.atoms() {
                if let Guard::Atom { pattern, .. } = atom {
                    selector(&pattern.selector);
                }
            }
            if let Referer::MoveTo { target, .. } = &when.referer {
                states.insert(target.clone());
            }
        }
        for action in &state.actions {
            commands.insert(action.name.clone());
            each_statement(&action.body, &mut |stmt| match stmt {
                Statement::Do {
                    command, pattern, ..
                } => {
                    commands.insert(command.clone());
                    selector(&pattern.selector);
                }
                Statement::MoveTo { target, .. } => {
                    states.insert(target.clone());
                }
                Statement::If { guard, .. } => {
                    for atom in guard.atoms() {
                        if let Guard::Atom { pattern, .. } = atom {
                            selector(&pattern.selector);
                        }
                    }
                }
            });
        }
    }

    Alphabet {
        states,
        commands,
        child_classes,
    }
}

/// States mentioned inside when-clause guards. This is the observable
/// alphabet of anonymous `FwCHILDREN` when no named child class is in scope.
pub fn when_guard_states(class: &ClassDef) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for state in &class.states {
        for when in &state.whens {
            for atom in when.guard.atoms() {
                if let Guard::Atom { states, .. } = atom {
                    out.extend(states.iter().cloned());
                }
            }
        }
    }
    out
}

/// Warns about dangling references: `move_to` targets without a state
/// clause, `do` referers naming an action no state defines, and selectors
/// naming classes outside `known_classes`. Each offending name is reported
/// once, at its first occurrence.
pub fn validate(class: &ClassDef, known_classes: &BTreeSet<String>, file: &str) -> Vec<Diagnostic> {
    let declared: BTreeSet<&str> = class.states.iter().map(|s| s.name.as_str()).collect();
    let all_actions: BTreeSet<&str> = class
        .states
        .iter()
        .flat_map(|s| s.actions.iter().map(|a| a.name.as_str()))
        .collect();

    // name -> first position, kept separately per check
    let mut missing_states: BTreeMap<String, Pos> = BTreeMap::new();
    let mut missing_actions: BTreeMap<String, Pos> = BTreeMap::new();
    let mut unknown_classes: BTreeMap<String, Pos> = BTreeMap::new();

    let check_target = |missing_states: &mut BTreeMap<String, Pos>, target: &str, pos: Pos| {
        if !declared.contains(target) {
            missing_states.entry(target.to_string()).or_insert(pos);
        }
    };

    let check_guard = |unknown_classes: &mut BTreeMap<String, Pos>, guard: &Guard| {
        for atom in guard.atoms() {
            if let Guard::Atom { pattern, pos, .. } = atom {
                if let Selector::Class(name) = &pattern.selector {
                    if !known_classes.contains(name) {
                        unknown_classes.entry(name.clone()).or_insert(*pos);
                    }
                }
            }
        }
    };

    for state in &class.states {
        for when in &state.whens {
            check_guard(&mut unknown_classes, &when.guard);
            match &when.referer {
                Referer::MoveTo { target, pos } => {
                    check_target(&mut missing_states, target, *pos);
                }
                Referer::DoAction { action, pos } => {
                    if !all_actions.contains(action.as_str()) {
                        missing_actions.entry(action.clone()).or_insert(*pos);
                    }
                }
            }
        }
        for action in &state.actions {
            each_statement(&action.body, &mut |stmt| match stmt {
                Statement::Do { pattern, pos, .. } => {
                    if let Selector::Class(name) = &pattern.selector {
                        if !known_classes.contains(name) {
                            unknown_classes.entry(name.clone()).or_insert(*pos);
                        }
                    }
                }
                Statement::MoveTo { target, pos } => {
                    check_target(&mut missing_states, target, *pos);
                }
                Statement::If { guard, .. } => {
                    check_guard(&mut unknown_classes, guard);
                }
            });
        }
    }

    let mut diags = Vec::new();
    for (name, pos) in missing_states {
        diags.push(Diagnostic::warning(
            file,
            pos,
            format!(
                "move_to target '{name}' is not a declared state of class '{}'",
                class.name
            ),
        ));
    }
    for (name, pos) in missing_actions {
        diags.push(Diagnostic::warning(
            file,
            pos,
            format!(
                "do referer names action '{name}' which no state of class '{}' defines",
                class.name
            ),
        ));
    }
    for (name, pos) in unknown_classes {
        diags.push(Diagnostic::warning(
            file,
            pos,
            format!("child class '{name}' is not defined by any known class"),
        ));
    }
    diags.sort_by_key(|d| d.pos);
    diags
}

/// Depth-first walk over a statement list, entering both if branches.
pub fn each_statement<'a>(body: &'a [Statement], f: &mut impl FnMut(&'a Statement)) {
    for stmt in body {
        f(stmt);
        if let Statement::If {
            then_branch,
            else_branch,
            ..
        } = stmt
        {
            each_statement(then_branch, f);
            each_statement(else_branch, f);
        }
    }
}
